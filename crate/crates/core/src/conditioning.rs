//! Global and part condition tokens, the timestep embedding and condition
//! dropout.

use fgmdm_tensor::{Real, Tape, Tensor, Var};
use rand::Rng;

use crate::description::{FineGrainedDescription, PartLabel};
use crate::embed::TextEmbedder;
use crate::error::{ensure, Result};
use crate::params::{Bound, ParamSet};

pub const NUM_PARTS: usize = 6;

/// Embedded text of one description: the full paragraph and the six part
/// sentences in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionText {
    pub global: Vec<f32>,
    pub parts: Vec<Vec<f32>>,
}

impl ConditionText {
    pub fn new(embedder: &TextEmbedder, desc: &FineGrainedDescription) -> Self {
        Self {
            global: embedder.embed(&desc.full_text),
            parts: PartLabel::ALL
                .iter()
                .map(|&p| embedder.embed(desc.part(p)))
                .collect(),
        }
    }

    fn global_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::new(
            vec![1, self.global.len()],
            self.global.iter().map(|&v| F::lit(f64::from(v))).collect(),
        )
        .expect("embedding shape")
    }

    fn parts_tensor<F: Real>(&self) -> Tensor<F> {
        let d = self.global.len();
        Tensor::new(
            vec![self.parts.len(), d],
            self.parts
                .iter()
                .flatten()
                .map(|&v| F::lit(f64::from(v)))
                .collect(),
        )
        .expect("embedding shape")
    }
}

/// Sinusoidal features: `sin(x·ω_i)` in the first half, `cos(x·ω_i)` in the
/// second, `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal(x: f64, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let w = 10000f64.powf(-(2.0 * i as f64) / d as f64);
        out[i] = (x * w).sin();
        out[half + i] = (x * w).cos();
    }
    out
}

pub fn sinusoidal_table<F: Real>(rows: usize, d: usize) -> Tensor<F> {
    let data = (0..rows)
        .flat_map(|r| sinusoidal(r as f64, d))
        .map(F::lit)
        .collect();
    Tensor::new(vec![rows, d], data).expect("table shape")
}

/// Learned projection of the sinusoidal timestep features, `[1, d]`.
pub fn time_embedding<F: Real>(tape: &mut Tape<F>, p: &Bound, t: usize, d: usize) -> Result<Var> {
    let feats = Tensor::new(
        vec![1, d],
        sinusoidal(t as f64, d).into_iter().map(F::lit).collect(),
    )?;
    let x = tape.constant(feats);
    let h = tape.matmul(x, p.var("time.w1")?)?;
    let h = tape.add_row(h, p.var("time.b1")?)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, p.var("time.w2")?)?;
    Ok(tape.add_row(h, p.var("time.b2")?)?)
}

/// Condition token rows with the time embedding added to each: `[GL, PT_1..6]`
/// when `with_parts`, `[GL]` otherwise, or the single null token when the
/// condition is dropped.
pub fn condition_tokens<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    text: &ConditionText,
    t: usize,
    d: usize,
    with_parts: bool,
    dropped: bool,
) -> Result<Var> {
    let time = time_embedding(tape, p, t, d)?;
    let time = tape.reshape(time, &[d])?;
    let rows = if dropped {
        let null = p.var("cond.null")?;
        tape.reshape(null, &[1, d])?
    } else {
        let g = tape.constant(text.global_tensor());
        let g = tape.matmul(g, p.var("cond.proj_g.w")?)?;
        let g = tape.add_row(g, p.var("cond.proj_g.b")?)?;
        if with_parts {
            let e = tape.constant(text.parts_tensor());
            let pt = tape.matmul(e, p.var("cond.proj_p.w")?)?;
            let pt = tape.add_row(pt, p.var("cond.proj_p.b")?)?;
            tape.concat_rows(&[g, pt])?
        } else {
            g
        }
    };
    Ok(tape.add_row(rows, time)?)
}

/// Evaluated condition tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    pub gl: Vec<f64>,
    pub pt: Vec<Vec<f64>>,
    pub null_flag: bool,
    /// The null token (plus time embedding) used when `null_flag` is set.
    pub null: Vec<f64>,
}

/// Token values for `desc` at step `t` under the given parameters.
pub fn build_tokens<F: Real>(
    params: &ParamSet<F>,
    text: &ConditionText,
    t: usize,
    steps: usize,
    d: usize,
) -> Result<ConditionTokens> {
    ensure!(
        (1..=steps).contains(&t),
        "timestep {t} outside [1, {steps}]"
    );
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let with_parts = b.try_var("cond.proj_p.w").is_some();
    let rows = condition_tokens(&mut tape, &b, text, t, d, with_parts, false)?;
    let null = condition_tokens(&mut tape, &b, text, t, d, with_parts, true)?;
    let v = tape.value(rows);
    let row = |r: usize| {
        v.row(r)
            .iter()
            .map(|x| x.to_f64().unwrap_or(f64::NAN))
            .collect::<Vec<f64>>()
    };
    let pt = if with_parts {
        (1..=NUM_PARTS).map(row).collect()
    } else {
        Vec::new()
    };
    Ok(ConditionTokens {
        gl: row(0),
        pt,
        null_flag: false,
        null: tape
            .value(null)
            .data()
            .iter()
            .map(|x| x.to_f64().unwrap_or(f64::NAN))
            .collect(),
    })
}

/// Draws one uniform and reports whether the condition is dropped.
pub fn dropout_draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// All-or-nothing replacement of every condition token by the null token.
pub fn condition_dropout<R: Rng + ?Sized>(
    tokens: &ConditionTokens,
    p: f64,
    rng: &mut R,
) -> ConditionTokens {
    let mut out = tokens.clone();
    if dropout_draw(p, rng) {
        out.null_flag = true;
        out.gl = tokens.null.clone();
        out.pt.clear();
    }
    out
}
