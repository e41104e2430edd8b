//! A small LLaMA-style decoder used to execute spliced checkpoints.
//!
//! Blocks are pre-norm: RMS norm, causal multi-head attention with rotary
//! positions, residual add, RMS norm, gated SiLU feed-forward, residual add.
//! The output head is not tied to the embedding. All arithmetic is `f64`.

mod engine;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{
    Checkpoint, Dtype, LayerNameTemplate, ModelConfig, Tensor, EMBED_TOKENS, FINAL_NORM,
    LLAMA_BLOCK_SUFFIXES, OUTPUT_HEAD,
};
use crate::error::{Error, Result};

pub use engine::{early_exit_logits, forward, ForwardTrace, Matrix, ToyModel};

pub const DEFAULT_RMS_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    pub rms_norm_eps: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_size: 32,
            num_heads: 4,
            intermediate_size: 88,
            vocab_size: 64,
            rope_theta: 10_000.0,
            rms_norm_eps: DEFAULT_RMS_NORM_EPS,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "head dimension {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0) {
            return Err(Error::InvalidConfig(format!("rope_theta {} must be positive", self.rope_theta)));
        }
        if !(self.rms_norm_eps.is_finite() && self.rms_norm_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rms_norm_eps {} must be positive",
                self.rms_norm_eps
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            num_hidden_layers: self.num_layers,
            hidden_size: self.hidden_size,
            num_attention_heads: self.num_heads,
            intermediate_size: self.intermediate_size,
            vocab_size: self.vocab_size,
            rope_theta: self.rope_theta,
            rms_norm_eps: Some(self.rms_norm_eps),
            extra: BTreeMap::new(),
        }
    }

    pub fn from_model_config(cfg: &ModelConfig) -> Result<Self> {
        let toy = Self {
            num_layers: cfg.num_hidden_layers,
            hidden_size: cfg.hidden_size,
            num_heads: cfg.num_attention_heads,
            intermediate_size: cfg.intermediate_size,
            vocab_size: cfg.vocab_size,
            rope_theta: cfg.rope_theta,
            rms_norm_eps: cfg.rms_norm_eps.unwrap_or(DEFAULT_RMS_NORM_EPS),
        };
        toy.validate()?;
        Ok(toy)
    }

    /// Expected shape of a block tensor, `[out, in]` for projections.
    pub fn block_tensor_shape(&self, suffix: &str) -> Option<Vec<usize>> {
        let (d, i) = (self.hidden_size, self.intermediate_size);
        Some(match suffix {
            "input_layernorm.weight" | "post_attention_layernorm.weight" => vec![d],
            "self_attn.q_proj.weight"
            | "self_attn.k_proj.weight"
            | "self_attn.v_proj.weight"
            | "self_attn.o_proj.weight" => vec![d, d],
            "mlp.gate_proj.weight" | "mlp.up_proj.weight" => vec![i, d],
            "mlp.down_proj.weight" => vec![d, i],
            _ => return None,
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, center: f64, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| center + rng.random_range(-half_width..half_width)).collect()
}

/// Seeded random checkpoint stored as `f32`.
pub fn generate_toy_checkpoint(cfg: &ToyModelConfig, seed: u64) -> Result<Checkpoint> {
    generate_toy_checkpoint_as(cfg, seed, Dtype::F32)
}

/// Seeded random checkpoint.
///
/// Values come from ChaCha8 seeded with `seed`, drawn in this order:
/// embedding, then each block's tensors in suffix order, then the final norm
/// and output head. Projections are uniform on `+-1/sqrt(fan_in)`, the
/// embedding on `+-1`, and norm weights on `1 +- 0.05`.
pub fn generate_toy_checkpoint_as(cfg: &ToyModelConfig, seed: u64, dtype: Dtype) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = LayerNameTemplate::default();
    let (d, v) = (cfg.hidden_size, cfg.vocab_size);
    let mut ckpt = Checkpoint::new();

    let put = |ckpt: &mut Checkpoint, name: String, shape: Vec<usize>, values: Vec<f64>| -> Result<()> {
        ckpt.insert(name, Tensor::from_f64(dtype, shape, &values)?);
        Ok(())
    };

    let embed = uniform(&mut rng, v * d, 0.0, 1.0);
    put(&mut ckpt, EMBED_TOKENS.into(), vec![v, d], embed)?;
    for layer in 0..cfg.num_layers {
        for suffix in LLAMA_BLOCK_SUFFIXES {
            let shape = cfg.block_tensor_shape(suffix).expect("known suffix");
            let numel = shape.iter().product();
            let values = if shape.len() == 1 {
                uniform(&mut rng, numel, 1.0, 0.05)
            } else {
                uniform(&mut rng, numel, 0.0, 1.0 / (shape[1] as f64).sqrt())
            };
            put(&mut ckpt, template.render(layer, suffix), shape, values)?;
        }
    }
    let norm = uniform(&mut rng, d, 1.0, 0.05);
    put(&mut ckpt, FINAL_NORM.into(), vec![d], norm)?;
    let head = uniform(&mut rng, v * d, 0.0, 1.0 / (d as f64).sqrt());
    put(&mut ckpt, OUTPUT_HEAD.into(), vec![v, d], head)?;

    ckpt.config = Some(cfg.to_model_config());
    Ok(ckpt)
}
