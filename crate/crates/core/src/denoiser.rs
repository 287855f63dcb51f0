//! Transformer-encoder denoiser predicting the clean motion.

use fgmdm_tensor::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{condition_tokens, sinusoidal_table, ConditionText, NUM_PARTS};
use crate::error::{ensure, Error, Result};
use crate::params::{Bound, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// `[GL, PT_1..6]`
    PartTokens,
    /// `[GL]` only (ablation).
    GlobalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff: usize,
    pub dropout: f64,
    pub max_frames: usize,
    pub d_flat: usize,
    pub d_text: usize,
    pub mode: ConditioningMode,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            heads: 4,
            d_model: 512,
            ff: 2048,
            dropout: 0.1,
            max_frames: 196,
            d_flat: 71,
            d_text: 256,
            mode: ConditioningMode::PartTokens,
        }
    }
}

impl DenoiserConfig {
    pub fn desk() -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 64,
            ff: 256,
            max_frames: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.layers == 0 {
            return bad("model.layers must be >= 1");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("model.d_model must be divisible by model.heads");
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return bad("model.d_model must be even");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("model.dropout must be in [0, 1)");
        }
        if self.ff == 0 || self.max_frames == 0 || self.d_flat == 0 || self.d_text == 0 {
            return bad("model dimensions must be positive");
        }
        Ok(())
    }

    pub fn condition_len(&self) -> usize {
        match self.mode {
            ConditioningMode::PartTokens => 1 + NUM_PARTS,
            ConditioningMode::GlobalOnly => 1,
        }
    }
}

/// Scalar count implied by the config.
pub fn parameter_count(cfg: &DenoiserConfig) -> usize {
    let (d, f, dt, x) = (cfg.d_model, cfg.ff, cfg.d_text, cfg.d_flat);
    let linear = |i: usize, o: usize| i * o + o;
    let projections = match cfg.mode {
        ConditioningMode::PartTokens => 2,
        ConditioningMode::GlobalOnly => 1,
    };
    let layer = 4 * linear(d, d) + linear(d, f) + linear(f, d) + 4 * d;
    projections * linear(dt, d)
        + d
        + 2 * linear(d, d)
        + linear(x, d)
        + cfg.layers * layer
        + linear(d, x)
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit) as f32)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (cfg.d_model, cfg.ff);
    let mut p = ParamSet::default();
    let zeros = |n: usize| Tensor::<f32>::zeros(&[n]);
    let ones = |n: usize| Tensor::<f32>::full(&[n], 1.0);

    p.push("cond.proj_g.w", xavier(&mut rng, cfg.d_text, d));
    p.push("cond.proj_g.b", zeros(d));
    if cfg.mode == ConditioningMode::PartTokens {
        p.push("cond.proj_p.w", xavier(&mut rng, cfg.d_text, d));
        p.push("cond.proj_p.b", zeros(d));
    }
    p.push("cond.null", zeros(d));
    p.push("time.w1", xavier(&mut rng, d, d));
    p.push("time.b1", zeros(d));
    p.push("time.w2", xavier(&mut rng, d, d));
    p.push("time.b2", zeros(d));
    p.push("in.w", xavier(&mut rng, cfg.d_flat, d));
    p.push("in.b", zeros(d));
    for l in 0..cfg.layers {
        for m in ["q", "k", "v", "o"] {
            p.push(format!("layer{l}.attn.w{m}"), xavier(&mut rng, d, d));
            p.push(format!("layer{l}.attn.b{m}"), zeros(d));
        }
        p.push(format!("layer{l}.ln1.g"), ones(d));
        p.push(format!("layer{l}.ln1.b"), zeros(d));
        p.push(format!("layer{l}.ff.w1"), xavier(&mut rng, d, f));
        p.push(format!("layer{l}.ff.b1"), zeros(f));
        p.push(format!("layer{l}.ff.w2"), xavier(&mut rng, f, d));
        p.push(format!("layer{l}.ff.b2"), zeros(d));
        p.push(format!("layer{l}.ln2.g"), ones(d));
        p.push(format!("layer{l}.ln2.b"), zeros(d));
    }
    p.push("out.w", Tensor::zeros(&[d, cfg.d_flat]));
    p.push("out.b", zeros(cfg.d_flat));
    Ok(p)
}

/// Source of dropout masks; `None` disables dropout.
pub struct DropoutRng<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

fn dropout<F: Real>(tape: &mut Tape<F>, x: Var, drop: &mut Option<DropoutRng<'_>>) -> Result<Var> {
    let Some(d) = drop else { return Ok(x) };
    if d.p == 0.0 {
        return Ok(x);
    }
    let keep = F::lit(1.0 / (1.0 - d.p));
    let shape = tape.shape(x).to_vec();
    let len = shape.iter().product();
    let mask = (0..len)
        .map(|_| {
            if d.rng.random::<f64>() < d.p {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, m)?)
}

fn linear<F: Real>(tape: &mut Tape<F>, x: Var, p: &Bound, w: &str, b: &str) -> Result<Var> {
    let h = tape.matmul(x, p.var(w)?)?;
    Ok(tape.add_row(h, p.var(b)?)?)
}

fn attention<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    p: &Bound,
    l: usize,
    heads: usize,
    d: usize,
) -> Result<Var> {
    let q = linear(
        tape,
        x,
        p,
        &format!("layer{l}.attn.wq"),
        &format!("layer{l}.attn.bq"),
    )?;
    let k = linear(
        tape,
        x,
        p,
        &format!("layer{l}.attn.wk"),
        &format!("layer{l}.attn.bk"),
    )?;
    let v = linear(
        tape,
        x,
        p,
        &format!("layer{l}.attn.wv"),
        &format!("layer{l}.attn.bv"),
    )?;
    let dh = d / heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax(s)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    linear(
        tape,
        cat,
        p,
        &format!("layer{l}.attn.wo"),
        &format!("layer{l}.attn.bo"),
    )
}

/// Records the denoiser on `tape`: `x_t` is `n × d_flat`, the result is the
/// predicted clean motion of the same shape.
#[allow(clippy::too_many_arguments)]
pub fn denoise_on_tape<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &DenoiserConfig,
    x_t: Var,
    t: usize,
    text: &ConditionText,
    dropped: bool,
    mut drop: Option<DropoutRng<'_>>,
) -> Result<Var> {
    let shape = tape.shape(x_t).to_vec();
    ensure!(
        shape.len() == 2 && shape[1] == cfg.d_flat,
        "denoiser input {shape:?}, expected [n, {}]",
        cfg.d_flat
    );
    let n = shape[0];
    ensure!(
        n >= 1 && n <= cfg.max_frames,
        "{n} frames exceeds max_frames {}",
        cfg.max_frames
    );
    let d = cfg.d_model;

    let with_parts = cfg.mode == ConditioningMode::PartTokens;
    let cond = condition_tokens(tape, p, text, t, d, with_parts, dropped)?;
    let k = tape.shape(cond)[0];

    let frames = linear(tape, x_t, p, "in.w", "in.b")?;
    let pos = tape.constant(sinusoidal_table(n, d));
    let frames = tape.add(frames, pos)?;
    let mut h = tape.concat_rows(&[cond, frames])?;
    h = dropout(tape, h, &mut drop)?;

    for l in 0..cfg.layers {
        let a = attention(tape, h, p, l, cfg.heads, d)?;
        let a = dropout(tape, a, &mut drop)?;
        let r = tape.add(h, a)?;
        h = tape.layer_norm(
            r,
            p.var(&format!("layer{l}.ln1.g"))?,
            p.var(&format!("layer{l}.ln1.b"))?,
            F::lit(1e-5),
        )?;
        let f = linear(
            tape,
            h,
            p,
            &format!("layer{l}.ff.w1"),
            &format!("layer{l}.ff.b1"),
        )?;
        let f = tape.gelu(f)?;
        let f = linear(
            tape,
            f,
            p,
            &format!("layer{l}.ff.w2"),
            &format!("layer{l}.ff.b2"),
        )?;
        let f = dropout(tape, f, &mut drop)?;
        let r = tape.add(h, f)?;
        h = tape.layer_norm(
            r,
            p.var(&format!("layer{l}.ln2.g"))?,
            p.var(&format!("layer{l}.ln2.b"))?,
            F::lit(1e-5),
        )?;
    }
    let out = tape.slice_rows(h, k, n)?;
    linear(tape, out, p, "out.w", "out.b")
}

/// Inference forward pass (no dropout).
pub fn denoise<F: Real>(
    params: &ParamSet<F>,
    cfg: &DenoiserConfig,
    x_t: &Tensor<F>,
    t: usize,
    text: &ConditionText,
    dropped: bool,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(x_t.clone());
    let y = denoise_on_tape(&mut tape, &p, cfg, x, t, text, dropped, None)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_defaults() {
        let c = DenoiserConfig::default();
        assert_eq!((c.layers, c.heads, c.d_model, c.dropout), (8, 4, 512, 0.1));
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = DenoiserConfig {
            heads: 3,
            ..DenoiserConfig::desk()
        };
        assert!(matches!(init_params(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic() {
        let c = DenoiserConfig::desk();
        assert_eq!(init_params(&c, 9).unwrap(), init_params(&c, 9).unwrap());
        assert_ne!(init_params(&c, 9).unwrap(), init_params(&c, 10).unwrap());
    }
}
