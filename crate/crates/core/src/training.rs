//! Reconstruction and geometric losses and the training loop.

use std::io::Write;

use fgmdm_tensor::{AdamConfig, AdamState, Real, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{dropout_draw, ConditionText};
use crate::dataset::DatasetRecord;
use crate::denoiser::{denoise_on_tape, init_params, DenoiserConfig, DropoutRng};
use crate::diffusion::{make_schedule, q_sample, standard_normal, DiffusionConfig, NoiseSchedule};
use crate::embed::TextEmbedder;
use crate::error::{ensure, Error, Result};
use crate::normalize::Normalizer;
use crate::params::ParamSet;
use crate::skeleton::{
    fk_flat, foot_contact_mask, forward_kinematics, FkOp, FootContactMask, Skeleton,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pos: f64,
    pub vel: f64,
    pub foot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pos: 1.0,
            vel: 1.0,
            foot: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub grad_clip: f64,
    pub checkpoint_interval: u64,
    pub weights: LossWeights,
    pub contact_vel: f64,
    pub contact_height: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            steps: 2000,
            lr: 1e-4,
            seed: 0,
            grad_clip: 1.0,
            checkpoint_interval: 0,
            weights: LossWeights::default(),
            contact_vel: 0.01,
            contact_height: 0.05,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch < 1 {
            return bad("training.batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("training.lr must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("training.grad_clip must be positive");
        }
        let w = self.weights;
        if [w.pos, w.vel, w.foot]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("training.weights must be finite and >= 0");
        }
        if !(self.contact_vel > 0.0 && self.contact_height > 0.0) {
            return bad("training contact thresholds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub simple: f64,
    pub pos: f64,
    pub vel: f64,
    pub foot: f64,
}

pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    terms.simple + w.pos * terms.pos + w.vel * terms.vel + w.foot * terms.foot
}

fn frame_diff<F: Real>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let a = tape.slice_rows(x, 1, n - 1)?;
    let b = tape.slice_rows(x, 0, n - 1)?;
    Ok(tape.sub(a, b)?)
}

fn sum_sq_over<F: Real>(tape: &mut Tape<F>, x: Var, denom: usize) -> Result<Var> {
    let s = tape.square(x)?;
    let s = tape.sum(s)?;
    Ok(tape.scale(s, F::lit(1.0 / denom as f64))?)
}

/// `(1/n)·Σ_i ‖x0^i − x̂0^i‖²` for one clip.
pub fn simple_on_tape<F: Real>(tape: &mut Tape<F>, x0: Var, x0_hat: Var) -> Result<Var> {
    ensure!(
        tape.shape(x0) == tape.shape(x0_hat),
        "shape mismatch {:?} vs {:?}",
        tape.shape(x0),
        tape.shape(x0_hat)
    );
    let n = tape.shape(x0)[0];
    let d = tape.sub(x0, x0_hat)?;
    sum_sq_over(tape, d, n)
}

/// Flattened foot-contact gate, `(n−1) × 3·|feet|`.
fn contact_gate<F: Real>(contact: &FootContactMask, n: usize) -> Tensor<F> {
    let feet = contact.mask.first().map_or(0, Vec::len);
    let data = (0..n - 1)
        .flat_map(|i| {
            contact.mask[i]
                .iter()
                .flat_map(|&m| [F::lit(f64::from(m)); 3])
        })
        .collect();
    Tensor::new(vec![n - 1, 3 * feet], data).expect("gate shape")
}

/// `(L_pos, L_vel, L_foot)` for one clip. `fk0` is the ground-truth FK.
pub fn geometric_on_tape<F: Real>(
    tape: &mut Tape<F>,
    fk: &FkOp,
    skeleton: &Skeleton,
    x0: Var,
    fk0: Var,
    x0_hat: Var,
    contact: &FootContactMask,
) -> Result<(Var, Var, Var)> {
    let n = tape.shape(x0)[0];
    ensure!(n >= 2, "geometric losses need at least two frames, got {n}");
    ensure!(
        contact.mask.len() == n,
        "contact mask has {} frames, motion {n}",
        contact.mask.len()
    );
    let p_hat = fk.apply(tape, x0_hat)?;
    let dp = tape.sub(fk0, p_hat)?;
    let l_pos = sum_sq_over(tape, dp, n)?;

    let v0 = frame_diff(tape, x0)?;
    let v_hat = frame_diff(tape, x0_hat)?;
    let dv = tape.sub(v0, v_hat)?;
    let l_vel = sum_sq_over(tape, dv, n - 1)?;

    let pv = frame_diff(tape, p_hat)?;
    let feet: Vec<Var> = skeleton
        .foot_joints()
        .iter()
        .map(|&f| tape.slice_cols(pv, 3 * f, 3))
        .collect::<std::result::Result<_, _>>()?;
    let l_foot = if feet.is_empty() {
        let z = tape.constant(Tensor::scalar(F::zero()));
        tape.scale(z, F::one())?
    } else {
        let fv = if feet.len() == 1 {
            feet[0]
        } else {
            tape.concat_cols(&feet)?
        };
        let gate = tape.constant(contact_gate(contact, n));
        let gated = tape.mul(fv, gate)?;
        sum_sq_over(tape, gated, n - 1)?
    };
    Ok((l_pos, l_vel, l_foot))
}

fn clip_tensor<F: Real>(t: &Tensor<F>) -> Result<Tensor<F>> {
    ensure!(
        t.shape().len() == 2,
        "motion tensors must be 2-D, got {:?}",
        t.shape()
    );
    Ok(t.clone())
}

/// Batch mean of the per-clip reconstruction loss.
pub fn loss_simple<F: Real>(x0: &[Tensor<F>], x0_hat: &[Tensor<F>]) -> Result<f64> {
    ensure!(
        x0.len() == x0_hat.len() && !x0.is_empty(),
        "batch sizes differ or are empty"
    );
    let mut total = 0.0;
    for (a, b) in x0.iter().zip(x0_hat) {
        let mut tape = Tape::new();
        let av = tape.constant(clip_tensor(a)?);
        let bv = tape.constant(clip_tensor(b)?);
        let l = simple_on_tape(&mut tape, av, bv)?;
        total += tape.value(l).item().to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / x0.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricLosses {
    pub pos: f64,
    pub foot: f64,
    pub vel: f64,
}

/// Geometric losses of one clip; `contact` comes from the ground truth.
pub fn geometric_losses<F: Real>(
    skeleton: &Skeleton,
    x0: &Tensor<F>,
    x0_hat: &Tensor<F>,
    contact: &FootContactMask,
) -> Result<GeometricLosses> {
    let fk = FkOp::new(skeleton.clone());
    let mut tape = Tape::new();
    let a = tape.constant(clip_tensor(x0)?);
    let b = tape.constant(clip_tensor(x0_hat)?);
    ensure!(tape.shape(a) == tape.shape(b), "shape mismatch");
    let fk0 = fk.apply(&mut tape, a)?;
    let (p, v, f) = geometric_on_tape(&mut tape, &fk, skeleton, a, fk0, b, contact)?;
    let val = |x: Var| tape.value(x).item().to_f64().unwrap_or(f64::NAN);
    Ok(GeometricLosses {
        pos: val(p),
        foot: val(f),
        vel: val(v),
    })
}

/// A training clip with everything that does not change across steps.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: Tensor<f32>,
    pub fk0: Tensor<f32>,
    pub contact: FootContactMask,
    pub text: ConditionText,
}

pub fn prepare_items(
    skeleton: &Skeleton,
    embedder: &TextEmbedder,
    records: &[&DatasetRecord],
    cfg: &TrainingConfig,
) -> Result<Vec<TrainItem>> {
    records
        .iter()
        .map(|r| {
            let n = r.motion.num_frames();
            let flat: Vec<f32> = r.motion.to_flat().into_iter().map(|v| v as f32).collect();
            let x0 = Tensor::new(vec![n, r.motion.flat_width()], flat)?;
            let mut fk = vec![0f32; n * 3 * skeleton.num_joints()];
            fk_flat(skeleton, x0.data(), &mut fk);
            let fk0 = Tensor::new(vec![n, 3 * skeleton.num_joints()], fk)?;
            let pos = forward_kinematics(skeleton, &r.motion)?;
            let contact = foot_contact_mask(skeleton, &pos, cfg.contact_vel, cfg.contact_height)?;
            Ok(TrainItem {
                x0,
                fk0,
                contact,
                text: ConditionText::new(embedder, &r.parts),
            })
        })
        .collect()
}

/// One row of telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub terms: LossTerms,
    pub total: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
    pub raw_grad_norm: f64,
}

pub const TELEMETRY_HEADER: &str = "step,L_G,L_pos,L_vel,L_foot,total,grad_norm";

impl StepStats {
    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, t.simple, t.pos, t.vel, t.foot, self.total, self.grad_norm
        )
    }
}

/// Everything a resumable run carries between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigBlock {
    pub model: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
    pub embedder: TextEmbedder,
    /// Fitted on the training split; the model works in standardized units.
    #[serde(default)]
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: RunConfigBlock,
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    schedule: NoiseSchedule,
    skeleton: Skeleton,
    fk: FkOp,
}

struct ElementPlan {
    item: usize,
    t: usize,
    noise_seed: u64,
    dropped: bool,
    dropout_seed: u64,
}

impl Trainer {
    pub fn new(config: RunConfigBlock, skeleton: Skeleton) -> Result<Self> {
        config.model.validate()?;
        config.diffusion.validate()?;
        config.training.validate()?;
        config.normalizer.validate(skeleton.flat_width())?;
        ensure!(
            config.model.d_flat == skeleton.flat_width(),
            "model d_flat {} does not match skeleton width {}",
            config.model.d_flat,
            skeleton.flat_width()
        );
        ensure!(
            config.model.d_text == config.embedder.dim,
            "model d_text {} does not match embedder dim {}",
            config.model.d_text,
            config.embedder.dim
        );
        let params = init_params(&config.model, config.training.seed)?;
        let adam = AdamState::new(Self::adam_config(&config.training), params.tensors());
        let rng = ChaCha8Rng::seed_from_u64(config.training.seed);
        Self::assemble(config, skeleton, params, adam, rng, 0)
    }

    fn adam_config(t: &TrainingConfig) -> AdamConfig {
        AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        }
    }

    /// Rebuilds a trainer from saved state.
    pub fn assemble(
        config: RunConfigBlock,
        skeleton: Skeleton,
        params: ParamSet<f32>,
        adam: AdamState<f32>,
        rng: ChaCha8Rng,
        step: u64,
    ) -> Result<Self> {
        let schedule = make_schedule(config.diffusion.steps, config.diffusion.schedule)?;
        let fk = FkOp::new(skeleton.clone());
        Ok(Self {
            config,
            params,
            adam,
            rng,
            step,
            schedule,
            skeleton,
            fk,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    fn element(
        &self,
        items: &[TrainItem],
        plan: &ElementPlan,
    ) -> Result<(LossTerms, f64, Vec<Tensor<f32>>)> {
        let item = &items[plan.item];
        let mut noise_rng = ChaCha8Rng::seed_from_u64(plan.noise_seed);
        let eps: Vec<f32> = standard_normal(&mut noise_rng, item.x0.len());
        let norm = &self.config.normalizer;
        let z0 = norm.normalize(&item.x0);
        let x_t = q_sample(z0.data(), plan.t, &eps, &self.schedule)?;

        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape, true);
        let xt = tape.constant(Tensor::new(item.x0.shape().to_vec(), x_t)?);
        let x0 = tape.constant(item.x0.clone());
        let z0 = tape.constant(z0);
        let fk0 = tape.constant(item.fk0.clone());
        let mut drop_rng = ChaCha8Rng::seed_from_u64(plan.dropout_seed);
        let drop = DropoutRng {
            rng: &mut drop_rng,
            p: self.config.model.dropout,
        };
        let z0_hat = denoise_on_tape(
            &mut tape,
            &bound,
            &self.config.model,
            xt,
            plan.t,
            &item.text,
            plan.dropped,
            Some(drop),
        )?;
        let simple = simple_on_tape(&mut tape, z0, z0_hat)?;
        let x0_hat = norm.denormalize_on_tape(&mut tape, z0_hat)?;
        let (pos, vel, foot) = geometric_on_tape(
            &mut tape,
            &self.fk,
            &self.skeleton,
            x0,
            fk0,
            x0_hat,
            &item.contact,
        )?;
        let w = self.config.training.weights;
        let a = tape.scale(pos, w.pos as f32)?;
        let b = tape.scale(vel, w.vel as f32)?;
        let c = tape.scale(foot, w.foot as f32)?;
        let total = tape.add(simple, a)?;
        let total = tape.add(total, b)?;
        let total = tape.add(total, c)?;

        let val = |v: Var| f64::from(tape.value(v).item());
        let terms = LossTerms {
            simple: val(simple),
            pos: val(pos),
            vel: val(vel),
            foot: val(foot),
        };
        let total_v = val(total);
        let mut grads = tape.backward(total)?;
        let g = self
            .params
            .names()
            .iter()
            .map(|n| bound.var(n).map(|v| grads.take(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok((terms, total_v, g))
    }

    /// One optimizer step on a minibatch drawn from `items`.
    pub fn train_step(&mut self, items: &[TrainItem]) -> Result<StepStats> {
        ensure!(!items.is_empty(), "training split is empty");
        let cfg = &self.config;
        let b = cfg.training.batch;
        let plans: Vec<ElementPlan> = (0..b)
            .map(|_| ElementPlan {
                item: self.rng.random_range(0..items.len()),
                t: self.rng.random_range(1..=cfg.diffusion.steps),
                noise_seed: self.rng.random(),
                dropped: dropout_draw(cfg.diffusion.cond_dropout, &mut self.rng),
                dropout_seed: self.rng.random(),
            })
            .collect();
        let results: Vec<_> = plans.par_iter().map(|p| self.element(items, p)).collect();

        let step = self.step + 1;
        let mut terms = LossTerms::default();
        let mut total = 0.0;
        let mut grads: Vec<Tensor<f32>> = self
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        for r in results {
            let (t, l, g) = r.map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite { op }) => Error::Numeric {
                    step,
                    message: format!("{op} produced a non-finite value"),
                },
                e => e,
            })?;
            terms.simple += t.simple;
            terms.pos += t.pos;
            terms.vel += t.vel;
            terms.foot += t.foot;
            total += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi)?;
            }
        }
        let inv = 1.0 / b as f64;
        terms.simple *= inv;
        terms.pos *= inv;
        terms.vel *= inv;
        terms.foot *= inv;
        total *= inv;
        for g in &mut grads {
            g.scale_inplace(inv as f32);
        }
        let raw_norm = grads
            .iter()
            .map(|g| f64::from(g.sum_squares()))
            .sum::<f64>()
            .sqrt();
        if !total.is_finite() || !raw_norm.is_finite() {
            return Err(Error::Numeric {
                step,
                message: format!("loss {total}, gradient norm {raw_norm}"),
            });
        }
        let clip = cfg.training.grad_clip;
        let grad_norm = if raw_norm > clip {
            let s = (clip / raw_norm) as f32;
            for g in &mut grads {
                g.scale_inplace(s);
            }
            grads
                .iter()
                .map(|g| f64::from(g.sum_squares()))
                .sum::<f64>()
                .sqrt()
        } else {
            raw_norm
        };
        self.adam.step(self.params.tensors_mut(), &grads)?;
        if !self.params.is_finite() {
            return Err(Error::Numeric {
                step,
                message: "parameters became non-finite".into(),
            });
        }
        self.step = step;
        Ok(StepStats {
            step,
            terms,
            total,
            grad_norm,
            raw_grad_norm: raw_norm,
        })
    }

    /// Runs until `config.training.steps`, appending telemetry rows to `log`
    /// and handing the trainer to `on_checkpoint` every checkpoint interval.
    pub fn run(
        &mut self,
        items: &[TrainItem],
        mut log: Option<&mut dyn Write>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<StepStats>> {
        let mut stats = Vec::new();
        let every = self.config.training.checkpoint_interval;
        while self.step < self.config.training.steps {
            let s = self.train_step(items)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", s.csv_row())
                    .map_err(|e| Error::Contract(format!("telemetry write failed: {e}")))?;
            }
            if s.step % 100 == 0 {
                tracing::info!(
                    step = s.step,
                    loss = s.total,
                    grad_norm = s.raw_grad_norm,
                    "train"
                );
            }
            stats.push(s);
            if every > 0 && self.step.is_multiple_of(every) {
                on_checkpoint(self)?;
            }
        }
        Ok(stats)
    }
}

/// Mean of the last `window` values.
pub fn moving_average(values: &[f64], window: usize) -> f64 {
    let w = window.min(values.len()).max(1);
    values[values.len().saturating_sub(w)..].iter().sum::<f64>() / w as f64
}
