//! Layer-to-layer drift of hidden-state statistics.
//!
//! Each block's output (pooled over every probe sequence and position) is
//! summarised by a normal distribution, and consecutive blocks are compared
//! with the closed-form Gaussian KL divergence.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, LayerNameTemplate};
use crate::error::{Error, Result};
use crate::toy::{Matrix, ToyModel};

/// Floor applied to fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl FittedNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSigma(sigma));
        }
        if !mu.is_finite() {
            return Err(Error::NonFiniteInput("mean".into()));
        }
        Ok(Self { mu, sigma })
    }
}

/// Mean and population standard deviation of `values`, two-pass.
pub fn fit_values(values: &[f64]) -> Result<FittedNormal> {
    if values.is_empty() {
        return Err(Error::EmptyInput("hidden states".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("hidden states".into()));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok(FittedNormal { mu, sigma: var.sqrt().max(SIGMA_FLOOR) })
}

/// One normal over all elements of `hidden`.
pub fn fit_normal(hidden: &Matrix) -> Result<FittedNormal> {
    fit_values(&hidden.data)
}

/// `KL(a || b)` for univariate normals.
pub fn kl_divergence(a: &FittedNormal, b: &FittedNormal) -> Result<f64> {
    for s in [a.sigma, b.sigma] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidSigma(s));
        }
    }
    let kl = (b.sigma / a.sigma).ln() + (a.sigma.powi(2) + (a.mu - b.mu).powi(2)) / (2.0 * b.sigma.powi(2))
        - 0.5;
    // cancellation can leave a tiny negative residue for equal inputs
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// A single normal over every element of the pooled hidden states.
    #[default]
    Scalar,
    /// One normal per hidden dimension; the pair KL is the sum over
    /// dimensions.
    PerDimension,
}

impl FitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMode::Scalar => "scalar",
            FitMode::PerDimension => "per-dimension",
        }
    }
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(FitMode::Scalar),
            "per-dimension" => Ok(FitMode::PerDimension),
            other => Err(Error::InvalidConfig(format!("unknown fit mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInfo {
    pub sequences: usize,
    pub tokens: usize,
    /// SHA-256 of the token ids, used to check two reports share a probe.
    pub digest: String,
}

impl ProbeInfo {
    pub fn describe(probe: &[Vec<u32>]) -> Self {
        let mut hasher = Sha256::new();
        for seq in probe {
            hasher.update((seq.len() as u64).to_le_bytes());
            for tok in seq {
                hasher.update(tok.to_le_bytes());
            }
        }
        Self {
            sequences: probe.len(),
            tokens: probe.iter().map(Vec::len).sum(),
            digest: hex::encode(hasher.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPairKl {
    pub lower: usize,
    pub upper: usize,
    /// One entry in scalar mode, one per hidden dimension otherwise.
    pub lower_fit: Vec<FittedNormal>,
    pub upper_fit: Vec<FittedNormal>,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub model: String,
    pub probe: ProbeInfo,
    pub mode: FitMode,
    pub blocks: usize,
    pub pairs: Vec<LayerPairKl>,
}

impl KlReport {
    /// KL between the second-to-last and last block.
    pub fn last_pair_kl(&self) -> Option<f64> {
        self.pairs.last().map(|p| p.kl)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}  blocks: {}  mode: {}", self.model, self.blocks, self.mode);
        let _ = writeln!(
            s,
            "probe: {} sequences, {} tokens, digest {}",
            self.probe.sequences,
            self.probe.tokens,
            &self.probe.digest[..16]
        );
        let _ = writeln!(s, "{:>5} {:>5} {:>14} {:>14} {:>14}", "lower", "upper", "mu_upper", "sigma_upper", "kl");
        for p in &self.pairs {
            let (mu, sigma) = match p.upper_fit.as_slice() {
                [only] => (format!("{:.6}", only.mu), format!("{:.6}", only.sigma)),
                _ => ("-".to_string(), "-".to_string()),
            };
            let marker = if Some(p) == self.pairs.last() { "  <- last pair" } else { "" };
            let _ = writeln!(s, "{:>5} {:>5} {:>14} {:>14} {:>14.6e}{marker}", p.lower, p.upper, mu, sigma, p.kl);
        }
        s
    }
}

fn pool_block(traces: &[Vec<Matrix>], block: usize) -> Matrix {
    let cols = traces[0][block].cols;
    let mut data = Vec::new();
    let mut rows = 0;
    for t in traces {
        data.extend_from_slice(&t[block].data);
        rows += t[block].rows;
    }
    Matrix { rows, cols, data }
}

fn fit_block(pooled: &Matrix, mode: FitMode) -> Result<Vec<FittedNormal>> {
    match mode {
        FitMode::Scalar => Ok(vec![fit_normal(pooled)?]),
        FitMode::PerDimension => (0..pooled.cols)
            .map(|c| {
                let column: Vec<f64> = (0..pooled.rows).map(|r| pooled.data[r * pooled.cols + c]).collect();
                fit_values(&column)
            })
            .collect(),
    }
}

pub fn layerwise_kl_report_with(
    model: &ToyModel,
    name: &str,
    probe: &[Vec<u32>],
    mode: FitMode,
) -> Result<KlReport> {
    if probe.is_empty() {
        return Err(Error::EmptyInput("probe".into()));
    }
    let traces = probe
        .iter()
        .map(|seq| model.forward(seq).map(|t| t.hidden))
        .collect::<Result<Vec<_>>>()?;
    let blocks = model.block_count();
    let fits = (1..=blocks)
        .map(|b| fit_block(&pool_block(&traces, b), mode))
        .collect::<Result<Vec<_>>>()?;
    let pairs = fits
        .windows(2)
        .enumerate()
        .map(|(lower, w)| {
            let kl = w[0]
                .iter()
                .zip(&w[1])
                .map(|(a, b)| kl_divergence(a, b))
                .sum::<Result<f64>>()?;
            Ok(LayerPairKl { lower, upper: lower + 1, lower_fit: w[0].clone(), upper_fit: w[1].clone(), kl })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KlReport { model: name.to_string(), probe: ProbeInfo::describe(probe), mode, blocks, pairs })
}

/// Scalar-mode report for a checkpoint with the default block naming.
pub fn layerwise_kl_report(ckpt: &Checkpoint, probe: &[Vec<u32>]) -> Result<KlReport> {
    let model = ToyModel::from_checkpoint(ckpt, &LayerNameTemplate::default())?;
    layerwise_kl_report_with(&model, "model", probe, FitMode::Scalar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportComparison {
    pub base_last_kl: Option<f64>,
    pub spliced_last_kl: Option<f64>,
    /// `spliced - base`, when both reports have at least one pair.
    pub delta: Option<f64>,
    pub base: KlReport,
    pub spliced: KlReport,
}

pub fn compare_reports(base: &KlReport, spliced: &KlReport) -> Result<ReportComparison> {
    if base.probe != spliced.probe || base.mode != spliced.mode {
        return Err(Error::ProbeMismatch);
    }
    let (b, s) = (base.last_pair_kl(), spliced.last_pair_kl());
    Ok(ReportComparison {
        base_last_kl: b,
        spliced_last_kl: s,
        delta: b.zip(s).map(|(b, s)| s - b),
        base: base.clone(),
        spliced: spliced.clone(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

/// One row per comparison with the last-pair values and signed delta.
pub fn comparison_table(rows: &[ReportComparison]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>7} {:>7} {:>14} {:>14} {:>14}",
        "spliced", "base_n", "n", "base_last_kl", "last_kl", "delta"
    );
    for c in rows {
        let delta = c.delta.map_or_else(|| "-".to_string(), |d| format!("{d:+.6e}"));
        let _ = writeln!(
            s,
            "{:<24} {:>7} {:>7} {:>14} {:>14} {:>14}",
            c.spliced.model,
            c.base.blocks,
            c.spliced.blocks,
            opt(c.base_last_kl),
            opt(c.spliced_last_kl),
            delta
        );
    }
    s
}

/// Per-pair tables of both reports, side by side.
pub fn side_by_side(c: &ReportComparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>11} {:>14}   {:>11} {:>14}", "base pair", "kl", "spliced pair", "kl");
    let rows = c.base.pairs.len().max(c.spliced.pairs.len());
    for i in 0..rows {
        let left = c.base.pairs.get(i).map_or_else(
            || format!("{:>11} {:>14}", "", ""),
            |p| format!("{:>11} {:>14.6e}", format!("{}-{}", p.lower, p.upper), p.kl),
        );
        let right = c.spliced.pairs.get(i).map_or_else(
            || format!("{:>11} {:>14}", "", ""),
            |p| format!("{:>11} {:>14.6e}", format!("{}-{}", p.lower, p.upper), p.kl),
        );
        let _ = writeln!(s, "{left}   {right}");
    }
    s
}
