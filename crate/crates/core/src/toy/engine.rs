use serde::Serialize;

use super::ToyModelConfig;
use crate::checkpoint::{
    Checkpoint, LayerNameTemplate, EMBED_TOKENS, FINAL_NORM, OUTPUT_HEAD,
};
use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix. Rows are token positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Hidden states at every block boundary plus the final logits.
///
/// `hidden[0]` is the embedding output and `hidden[b + 1]` the output of
/// block `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn block_count(&self) -> usize {
        self.hidden.len() - 1
    }

    /// Output of block `b`.
    pub fn block_output(&self, b: usize) -> &Matrix {
        &self.hidden[b + 1]
    }
}

struct Block {
    attn_norm: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    o: Vec<f64>,
    mlp_norm: Vec<f64>,
    gate: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
}

/// Decoded weights ready to run. Decoding happens once here, so repeated
/// forwards only pay for arithmetic.
pub struct ToyModel {
    cfg: ToyModelConfig,
    embed: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: Vec<f64>,
    head: Vec<f64>,
    inv_freq: Vec<f64>,
}

fn load(ckpt: &Checkpoint, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = ckpt
        .get(name)
        .ok_or_else(|| Error::IncompleteCheckpoint(format!("missing tensor `{name}`")))?;
    if t.shape() != shape {
        return Err(Error::IncompleteCheckpoint(format!(
            "`{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    let values = t.to_f64();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("tensor `{name}`")));
    }
    Ok(values)
}

/// `out[o] = sum_i w[o, i] * x[i]` with `w` stored `[out, in]`.
fn linear(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn rms_norm(x: &[f64], weight: &[f64], eps: f64, out: &mut [f64]) {
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let scale = 1.0 / (mean_sq + eps).sqrt();
    for ((o, v), w) in out.iter_mut().zip(x).zip(weight) {
        *o = v * scale * w;
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl ToyModel {
    pub fn from_checkpoint(ckpt: &Checkpoint, template: &LayerNameTemplate) -> Result<Self> {
        let model_cfg = ckpt
            .config
            .as_ref()
            .ok_or_else(|| Error::IncompleteCheckpoint("no config sidecar".into()))?;
        let blocks = ckpt.validate_layer_count(template)?;
        let cfg = ToyModelConfig::from_model_config(model_cfg)?;
        let (d, v) = (cfg.hidden_size, cfg.vocab_size);

        let mut decoded = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let get = |suffix: &str| {
                let shape = cfg.block_tensor_shape(suffix).expect("known suffix");
                load(ckpt, &template.render(b, suffix), &shape)
            };
            decoded.push(Block {
                attn_norm: get("input_layernorm.weight")?,
                q: get("self_attn.q_proj.weight")?,
                k: get("self_attn.k_proj.weight")?,
                v: get("self_attn.v_proj.weight")?,
                o: get("self_attn.o_proj.weight")?,
                mlp_norm: get("post_attention_layernorm.weight")?,
                gate: get("mlp.gate_proj.weight")?,
                up: get("mlp.up_proj.weight")?,
                down: get("mlp.down_proj.weight")?,
            });
        }

        let head_dim = cfg.head_dim();
        let inv_freq = (0..head_dim / 2)
            .map(|i| 1.0 / cfg.rope_theta.powf(2.0 * i as f64 / head_dim as f64))
            .collect();
        Ok(Self {
            cfg,
            embed: load(ckpt, EMBED_TOKENS, &[v, d])?,
            blocks: decoded,
            final_norm: load(ckpt, FINAL_NORM, &[d])?,
            head: load(ckpt, OUTPUT_HEAD, &[v, d])?,
            inv_freq,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn embed(&self, tokens: &[u32]) -> Result<Matrix> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence".into()));
        }
        let d = self.cfg.hidden_size;
        let mut h = Matrix::zeros(tokens.len(), d);
        for (t, &tok) in tokens.iter().enumerate() {
            let id = tok as usize;
            if id >= self.cfg.vocab_size {
                return Err(Error::TokenOutOfRange { token: tok, vocab: self.cfg.vocab_size });
            }
            h.row_mut(t).copy_from_slice(&self.embed[id * d..(id + 1) * d]);
        }
        Ok(h)
    }

    fn rotate(&self, x: &mut [f64], position: usize) {
        let half = self.inv_freq.len();
        for head in x.chunks_exact_mut(2 * half) {
            for (i, f) in self.inv_freq.iter().enumerate() {
                let (sin, cos) = (position as f64 * f).sin_cos();
                let (a, b) = (head[i], head[i + half]);
                head[i] = a * cos - b * sin;
                head[i + half] = b * cos + a * sin;
            }
        }
    }

    /// Runs block `b` on `input`, returning its output hidden states.
    pub fn apply_block(&self, b: usize, input: &Matrix) -> Result<Matrix> {
        let block = self.blocks.get(b).ok_or(Error::LayerOutOfRange {
            layer: b,
            blocks: self.blocks.len(),
        })?;
        let cfg = &self.cfg;
        let (seq, d, inter) = (input.rows, cfg.hidden_size, cfg.intermediate_size);
        let (heads, hd) = (cfg.num_heads, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        let mut normed = vec![0.0; d];
        let mut q = Matrix::zeros(seq, d);
        let mut k = Matrix::zeros(seq, d);
        let mut v = Matrix::zeros(seq, d);
        for t in 0..seq {
            rms_norm(input.row(t), &block.attn_norm, cfg.rms_norm_eps, &mut normed);
            linear(&block.q, &normed, q.row_mut(t));
            linear(&block.k, &normed, k.row_mut(t));
            linear(&block.v, &normed, v.row_mut(t));
            self.rotate(q.row_mut(t), t);
            self.rotate(k.row_mut(t), t);
        }

        let mut out = input.clone();
        let mut mixed = vec![0.0; d];
        let mut projected = vec![0.0; d];
        let mut weights = vec![0.0; seq];
        for t in 0..seq {
            for h in 0..heads {
                let span = h * hd..(h + 1) * hd;
                let qh = &q.row(t)[span.clone()];
                let mut max = f64::NEG_INFINITY;
                for (u, w) in weights[..=t].iter_mut().enumerate() {
                    let s: f64 = qh.iter().zip(&k.row(u)[span.clone()]).map(|(a, b)| a * b).sum();
                    *w = s * scale;
                    max = max.max(*w);
                }
                let mut total = 0.0;
                for w in &mut weights[..=t] {
                    *w = (*w - max).exp();
                    total += *w;
                }
                let slot = &mut mixed[span.clone()];
                slot.fill(0.0);
                for (u, w) in weights[..=t].iter().enumerate() {
                    let p = w / total;
                    for (m, x) in slot.iter_mut().zip(&v.row(u)[span.clone()]) {
                        *m += p * x;
                    }
                }
            }
            linear(&block.o, &mixed, &mut projected);
            for (o, p) in out.row_mut(t).iter_mut().zip(&projected) {
                *o += p;
            }
        }

        let mut gate = vec![0.0; inter];
        let mut up = vec![0.0; inter];
        let mut down = vec![0.0; d];
        for t in 0..seq {
            rms_norm(out.row(t), &block.mlp_norm, cfg.rms_norm_eps, &mut normed);
            linear(&block.gate, &normed, &mut gate);
            linear(&block.up, &normed, &mut up);
            for (g, u) in gate.iter_mut().zip(&up) {
                *g = silu(*g) * u;
            }
            linear(&block.down, &gate, &mut down);
            for (o, x) in out.row_mut(t).iter_mut().zip(&down) {
                *o += x;
            }
        }
        Ok(out)
    }

    /// Final norm and output head applied to each row of `hidden`.
    pub fn readout(&self, hidden: &Matrix) -> Matrix {
        let (d, v) = (self.cfg.hidden_size, self.cfg.vocab_size);
        let mut logits = Matrix::zeros(hidden.rows, v);
        let mut normed = vec![0.0; d];
        for t in 0..hidden.rows {
            rms_norm(hidden.row(t), &self.final_norm, self.cfg.rms_norm_eps, &mut normed);
            linear(&self.head, &normed, logits.row_mut(t));
        }
        logits
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardTrace> {
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        hidden.push(self.embed(tokens)?);
        for b in 0..self.blocks.len() {
            let next = self.apply_block(b, hidden.last().unwrap())?;
            hidden.push(next);
        }
        let logits = self.readout(hidden.last().unwrap());
        Ok(ForwardTrace { hidden, logits })
    }

    /// Logits read out from the output of block `layer`, skipping the
    /// blocks above it.
    pub fn early_exit_logits(&self, tokens: &[u32], layer: usize) -> Result<Matrix> {
        if layer >= self.blocks.len() {
            return Err(Error::LayerOutOfRange { layer, blocks: self.blocks.len() });
        }
        let mut h = self.embed(tokens)?;
        for b in 0..=layer {
            h = self.apply_block(b, &h)?;
        }
        Ok(self.readout(&h))
    }
}

/// Loads `ckpt` with the default block naming and runs it on `tokens`.
pub fn forward(ckpt: &Checkpoint, tokens: &[u32]) -> Result<ForwardTrace> {
    ToyModel::from_checkpoint(ckpt, &LayerNameTemplate::default())?.forward(tokens)
}

pub fn early_exit_logits(ckpt: &Checkpoint, tokens: &[u32], layer: usize) -> Result<Matrix> {
    ToyModel::from_checkpoint(ckpt, &LayerNameTemplate::default())?.early_exit_logits(tokens, layer)
}
