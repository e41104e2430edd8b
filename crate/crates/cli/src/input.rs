use std::path::Path;

use crate::{CliError, CliResult};

pub(crate) fn parse_override(s: &str) -> Result<(usize, f64), String> {
    let (pos, alpha) = s
        .split_once('=')
        .ok_or_else(|| format!("expected position=alpha, got `{s}`"))?;
    let pos = pos.trim().parse().map_err(|e| format!("position `{pos}`: {e}"))?;
    let alpha = alpha.trim().parse().map_err(|e| format!("alpha `{alpha}`: {e}"))?;
    Ok((pos, alpha))
}

/// Accepts `[1, 2, 3]` or `1 2 3` (commas also work as separators).
pub fn parse_tokens(text: &str) -> CliResult<Vec<u32>> {
    let text = text.trim();
    let tokens: Vec<u32> = if text.starts_with('[') {
        serde_json::from_str(text)
            .map_err(|e| CliError::usage("InvalidTokens", format!("token array: {e}")))?
    } else {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::usage("InvalidTokens", format!("`{s}` is not a token id")))
            })
            .collect::<CliResult<_>>()?
    };
    if tokens.is_empty() {
        return Err(CliError::usage("InvalidTokens", "no token ids given"));
    }
    Ok(tokens)
}

/// One JSON array of token ids per non-blank line.
pub fn parse_probe(text: &str) -> CliResult<Vec<Vec<u32>>> {
    let mut probe = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq: Vec<u32> = serde_json::from_str(line)
            .map_err(|e| CliError::usage("InvalidProbe", format!("line {}: {e}", n + 1)))?;
        if seq.is_empty() {
            return Err(CliError::usage("InvalidProbe", format!("line {} is an empty sequence", n + 1)));
        }
        probe.push(seq);
    }
    if probe.is_empty() {
        return Err(CliError::usage("InvalidProbe", "probe file has no sequences"));
    }
    Ok(probe)
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        CliError::Core(layersplice::Error::Io { path: path.to_path_buf(), source })
    })
}
