use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::interp::ParameterVector;

pub const EMBED_TOKENS: &str = "model.embed_tokens.weight";
pub const FINAL_NORM: &str = "model.norm.weight";
pub const OUTPUT_HEAD: &str = "lm_head.weight";

/// Tensors every LLaMA-style block carries.
pub const LLAMA_BLOCK_SUFFIXES: [&str; 9] = [
    "input_layernorm.weight",
    "mlp.down_proj.weight",
    "mlp.gate_proj.weight",
    "mlp.up_proj.weight",
    "post_attention_layernorm.weight",
    "self_attn.k_proj.weight",
    "self_attn.o_proj.weight",
    "self_attn.q_proj.weight",
    "self_attn.v_proj.weight",
];

const PLACEHOLDER: &str = "{i}";

/// Block naming scheme, e.g. `model.layers.{i}.` followed by a suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNameTemplate {
    before: String,
    after: String,
    expected_suffixes: Vec<String>,
}

impl Default for LayerNameTemplate {
    fn default() -> Self {
        Self::new("model.layers.{i}.", LLAMA_BLOCK_SUFFIXES).expect("default template is valid")
    }
}

impl LayerNameTemplate {
    pub fn new<S: Into<String>>(
        pattern: &str,
        expected_suffixes: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let (before, after) = pattern.split_once(PLACEHOLDER).ok_or_else(|| {
            Error::InvalidConfig(format!("layer pattern `{pattern}` lacks `{PLACEHOLDER}`"))
        })?;
        if after.contains(PLACEHOLDER) {
            return Err(Error::InvalidConfig(format!(
                "layer pattern `{pattern}` has more than one `{PLACEHOLDER}`"
            )));
        }
        let mut expected_suffixes: Vec<String> =
            expected_suffixes.into_iter().map(Into::into).collect();
        expected_suffixes.sort();
        expected_suffixes.dedup();
        Ok(Self { before: before.to_string(), after: after.to_string(), expected_suffixes })
    }

    /// Same suffix expectations, different prefix pattern.
    pub fn with_pattern(&self, pattern: &str) -> Result<Self> {
        Self::new(pattern, self.expected_suffixes.iter().cloned())
    }

    pub fn pattern(&self) -> String {
        format!("{}{PLACEHOLDER}{}", self.before, self.after)
    }

    pub fn expected_suffixes(&self) -> &[String] {
        &self.expected_suffixes
    }

    /// Splits a block tensor name into `(index, suffix)`. Indices are
    /// canonical decimal (no sign, no leading zeros) so that
    /// `render(parse(name)) == name`.
    pub fn parse(&self, name: &str) -> Option<(usize, String)> {
        let rest = name.strip_prefix(self.before.as_str())?;
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 || (digits > 1 && rest.starts_with('0')) {
            return None;
        }
        let index = rest[..digits].parse().ok()?;
        let suffix = rest[digits..].strip_prefix(self.after.as_str())?;
        if suffix.is_empty() {
            return None;
        }
        Some((index, suffix.to_string()))
    }

    pub fn render(&self, index: usize, suffix: &str) -> String {
        format!("{}{index}{}{suffix}", self.before, self.after)
    }
}

pub fn parse_layer_index(name: &str, template: &LayerNameTemplate) -> Option<(usize, String)> {
    template.parse(name)
}

/// All tensors of one block, decoded to `f64` and keyed by suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBundle {
    pub index: usize,
    pub tensors: BTreeMap<String, ParameterVector>,
}

impl LayerBundle {
    pub fn suffixes(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

pub fn extract_layer_bundle(
    ckpt: &Checkpoint,
    index: usize,
    template: &LayerNameTemplate,
) -> Result<LayerBundle> {
    let mut tensors = BTreeMap::new();
    for (name, tensor) in &ckpt.tensors {
        if let Some((i, suffix)) = template.parse(name) {
            if i == index {
                let vector = tensor.to_parameter_vector(name)?;
                tensors.insert(suffix, vector);
            }
        }
    }
    if tensors.is_empty() {
        return Err(Error::MissingLayer(index));
    }
    let missing: Vec<String> = template
        .expected_suffixes()
        .iter()
        .filter(|s| !tensors.contains_key(*s))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteBlock { index, missing });
    }
    Ok(LayerBundle { index, tensors })
}
