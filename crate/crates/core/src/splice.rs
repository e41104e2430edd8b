//! Inserting interpolated blocks into a checkpoint.
//!
//! A plan lists zero-based positions in the *original* model. The block
//! inserted for position `l` is built from original blocks `l` and `l + 1`
//! and runs right after block `l`. Positions never shift to account for
//! earlier insertions in the same plan.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    extract_layer_bundle, Checkpoint, LayerBundle, LayerNameTemplate, Tensor,
};
use crate::error::{Error, Result};
use crate::interp::{angle_between, InterpolationMethod, ParameterVector};
use crate::schedule::{ScheduleParams, DEFAULT_CENTER, DEFAULT_STEEPNESS};

/// How tensors of a block are grouped before interpolating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Each tensor is interpolated on its own, with its own angle.
    #[default]
    PerTensor,
    /// All tensors of the block are concatenated (suffix order), interpolated
    /// once, and split back into their original shapes.
    PerLayerConcat,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::PerTensor => "per-tensor",
            Scope::PerLayerConcat => "per-layer-concat",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "per-tensor" => Ok(Scope::PerTensor),
            "per-layer-concat" => Ok(Scope::PerLayerConcat),
            other => Err(Error::UnknownScope(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSource {
    Scheduled,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpliceEntry {
    pub position: usize,
    pub method: InterpolationMethod,
    pub alpha: f64,
    pub alpha_source: AlphaSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplicePlan {
    entries: Vec<SpliceEntry>,
    schedule: ScheduleParams,
    scope: Scope,
}

impl SplicePlan {
    pub fn entries(&self) -> &[SpliceEntry] {
        &self.entries
    }

    pub fn schedule(&self) -> &ScheduleParams {
        &self.schedule
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodChoice {
    Uniform(InterpolationMethod),
    /// One method per position, in the order the positions were given.
    PerPosition(Vec<InterpolationMethod>),
}

impl Default for MethodChoice {
    fn default() -> Self {
        MethodChoice::Uniform(InterpolationMethod::Slerp)
    }
}

pub fn build_plan(
    positions: &[usize],
    methods: &MethodChoice,
    overrides: &BTreeMap<usize, f64>,
    schedule: ScheduleParams,
    scope: Scope,
) -> Result<SplicePlan> {
    if positions.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let mut paired: Vec<(usize, InterpolationMethod)> = match methods {
        MethodChoice::Uniform(m) => positions.iter().map(|&p| (p, *m)).collect(),
        MethodChoice::PerPosition(ms) => {
            if ms.len() != positions.len() {
                return Err(Error::MethodCountMismatch {
                    positions: positions.len(),
                    methods: ms.len(),
                });
            }
            positions.iter().copied().zip(ms.iter().copied()).collect()
        }
    };
    paired.sort_by_key(|(p, _)| *p);
    let max = schedule.n - 2;
    for w in paired.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::DuplicatePosition(w[0].0));
        }
    }
    if let Some(&(position, _)) = paired.iter().find(|(p, _)| *p > max) {
        return Err(Error::PositionOutOfRange { position, max });
    }
    if let Some(&unknown) = overrides.keys().find(|k| !paired.iter().any(|(p, _)| p == *k)) {
        return Err(Error::UnknownOverride(unknown));
    }

    let entries = paired
        .into_iter()
        .map(|(position, method)| {
            let (alpha, alpha_source) = match overrides.get(&position) {
                Some(&a) if (0.0..=1.0).contains(&a) => (a, AlphaSource::Override),
                Some(&a) => return Err(Error::InvalidRatio(a)),
                None => (schedule.alpha(position)?, AlphaSource::Scheduled),
            };
            Ok(SpliceEntry { position, method, alpha, alpha_source })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplicePlan { entries, schedule, scope })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodsField {
    Uniform(InterpolationMethod),
    PerPosition(Vec<InterpolationMethod>),
}

/// On-disk plan: `{positions, methods, overrides, k, c, scope}`. Everything
/// except `positions` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<MethodsField>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
}

impl PlanFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("plan file: {e}")))
    }

    pub fn method_choice(&self) -> MethodChoice {
        match &self.methods {
            None => MethodChoice::default(),
            Some(MethodsField::Uniform(m)) => MethodChoice::Uniform(*m),
            Some(MethodsField::PerPosition(ms)) => MethodChoice::PerPosition(ms.clone()),
        }
    }

    /// Builds a plan for an `n`-block model.
    pub fn into_plan(&self, n: usize) -> Result<SplicePlan> {
        let schedule = ScheduleParams::new(
            self.k.unwrap_or(DEFAULT_STEEPNESS),
            self.c.unwrap_or(DEFAULT_CENTER),
            n,
        )?;
        build_plan(
            &self.positions,
            &self.method_choice(),
            &self.overrides,
            schedule,
            self.scope.unwrap_or_default(),
        )
    }
}

/// Angle between the flanking tensors, `None` when either has zero norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorAngle {
    pub suffix: String,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedLayer {
    pub bundle: LayerBundle,
    pub angles: Vec<TensorAngle>,
}

/// Builds the block that goes between `lo` and `hi`. The returned bundle is
/// numbered `lo.index + 1`.
pub fn interpolate_layer(
    lo: &LayerBundle,
    hi: &LayerBundle,
    alpha: f64,
    method: InterpolationMethod,
    scope: Scope,
) -> Result<InterpolatedLayer> {
    if lo.index + 1 != hi.index {
        return Err(Error::SuffixMismatch(format!(
            "blocks {} and {} are not adjacent",
            lo.index, hi.index
        )));
    }
    if !lo.tensors.keys().eq(hi.tensors.keys()) {
        let only_lo: Vec<&str> =
            lo.suffixes().filter(|s| !hi.tensors.contains_key(*s)).collect();
        let only_hi: Vec<&str> =
            hi.suffixes().filter(|s| !lo.tensors.contains_key(*s)).collect();
        return Err(Error::SuffixMismatch(format!(
            "only in block {}: {only_lo:?}; only in block {}: {only_hi:?}",
            lo.index, hi.index
        )));
    }
    for (suffix, a) in &lo.tensors {
        let b = &hi.tensors[suffix];
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch {
                name: suffix.clone(),
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        if a.source_dtype != b.source_dtype {
            return Err(Error::DtypeMismatch(suffix.clone()));
        }
    }

    let (tensors, angles) = match scope {
        Scope::PerTensor => {
            let mut tensors = BTreeMap::new();
            let mut angles = Vec::with_capacity(lo.tensors.len());
            for (suffix, a) in &lo.tensors {
                let b = &hi.tensors[suffix];
                let out = a.interpolate(b, alpha, method)?;
                angles.push(TensorAngle {
                    suffix: suffix.clone(),
                    theta: angle_between(&a.values, &b.values).ok(),
                });
                tensors.insert(suffix.clone(), out);
            }
            (tensors, angles)
        }
        Scope::PerLayerConcat => {
            let flat_lo: Vec<f64> = lo.tensors.values().flat_map(|v| v.values.iter().copied()).collect();
            let flat_hi: Vec<f64> = hi.tensors.values().flat_map(|v| v.values.iter().copied()).collect();
            let joined = method.apply(&flat_lo, &flat_hi, alpha)?;
            let mut tensors = BTreeMap::new();
            let mut offset = 0;
            for (suffix, a) in &lo.tensors {
                let len = a.len();
                let values = joined[offset..offset + len].to_vec();
                offset += len;
                let piece = ParameterVector::new(a.name.clone(), values, a.source_dtype, a.shape.clone())?;
                tensors.insert(suffix.clone(), piece);
            }
            let angles = vec![TensorAngle {
                suffix: "*".to_string(),
                theta: angle_between(&flat_lo, &flat_hi).ok(),
            }];
            (tensors, angles)
        }
    };
    Ok(InterpolatedLayer { bundle: LayerBundle { index: lo.index + 1, tensors }, angles })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertedBlock {
    pub position: usize,
    /// Index of the new block in the spliced model.
    pub new_index: usize,
    pub method: InterpolationMethod,
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub angles: Vec<TensorAngle>,
}

impl InsertedBlock {
    /// `(min, mean, max)` over the defined angles.
    pub fn theta_stats(&self) -> Option<(f64, f64, f64)> {
        let thetas: Vec<f64> = self.angles.iter().filter_map(|a| a.theta).collect();
        if thetas.is_empty() {
            return None;
        }
        let min = thetas.iter().copied().fold(f64::INFINITY, f64::min);
        let max = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        Some((min, mean, max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpliceReport {
    pub original_blocks: usize,
    pub spliced_blocks: usize,
    pub scope: Scope,
    pub inserted: Vec<InsertedBlock>,
}

#[derive(Debug, Clone)]
pub struct SpliceOutcome {
    pub checkpoint: Checkpoint,
    pub report: SpliceReport,
}

/// New index of original block `index` after inserting after every position
/// in `positions` (sorted).
pub fn renumbered_index(index: usize, positions: &[usize]) -> usize {
    index + positions.iter().take_while(|&&p| p < index).count()
}

pub fn splice_checkpoint(
    ckpt: &Checkpoint,
    plan: &SplicePlan,
    template: &LayerNameTemplate,
) -> Result<SpliceOutcome> {
    let n = ckpt.validate_layer_count(template)?;
    if plan.schedule.n != n {
        return Err(Error::PlanMismatch { plan: plan.schedule.n, checkpoint: n });
    }
    let positions: Vec<usize> = plan.entries.iter().map(|e| e.position).collect();

    let mut out = Checkpoint {
        tensors: BTreeMap::new(),
        config: ckpt.config.clone(),
        metadata: ckpt.metadata.clone(),
    };
    for (name, tensor) in &ckpt.tensors {
        let new_name = match template.parse(name) {
            Some((i, suffix)) => template.render(renumbered_index(i, &positions), &suffix),
            None => name.clone(),
        };
        out.tensors.insert(new_name, tensor.clone());
    }

    let mut inserted = Vec::with_capacity(plan.entries.len());
    for entry in &plan.entries {
        let lo = extract_layer_bundle(ckpt, entry.position, template)?;
        let hi = extract_layer_bundle(ckpt, entry.position + 1, template)?;
        let layer = interpolate_layer(&lo, &hi, entry.alpha, entry.method, plan.scope)?;
        let new_index = renumbered_index(entry.position, &positions) + 1;
        for (suffix, vector) in &layer.bundle.tensors {
            out.tensors.insert(template.render(new_index, suffix), Tensor::from_parameter_vector(vector)?);
        }
        log::debug!(
            "inserted block {new_index} from {}/{} ({}, alpha {:.5})",
            entry.position,
            entry.position + 1,
            entry.method,
            entry.alpha
        );
        inserted.push(InsertedBlock {
            position: entry.position,
            new_index,
            method: entry.method,
            alpha: entry.alpha,
            alpha_source: entry.alpha_source,
            angles: layer.angles,
        });
    }

    let spliced_blocks = n + plan.entries.len();
    if let Some(cfg) = out.config.as_mut() {
        cfg.num_hidden_layers = spliced_blocks;
    }
    Ok(SpliceOutcome {
        checkpoint: out,
        report: SpliceReport { original_blocks: n, spliced_blocks, scope: plan.scope, inserted },
    })
}
