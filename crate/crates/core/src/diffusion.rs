//! Noise schedules, forward noising and the x0-predicting reverse process.

use std::fmt;
use std::str::FromStr;

use fgmdm_tensor::Real;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub guidance_scale: f64,
    pub cond_dropout: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            schedule: ScheduleKind::Cosine,
            guidance_scale: 2.5,
            cond_dropout: 0.1,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("diffusion.steps must be >= 1".into()));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::Config(
                "diffusion.guidance_scale must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::Config(
                "diffusion.cond_dropout must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step coefficients; index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    ensure!(steps >= 1, "schedule needs at least one step");
    let beta: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let f = |u: f64| {
                let a = (u / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)
                    * std::f64::consts::FRAC_PI_2;
                a.cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(MAX_BETA))
                .collect()
        }
        ScheduleKind::Linear => {
            // Endpoints are for 1000 steps; shorter chains scale up.
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            (0..steps)
                .map(|i| {
                    let frac = if steps == 1 {
                        0.0
                    } else {
                        i as f64 / (steps - 1) as f64
                    };
                    (lo + (hi - lo) * frac).min(MAX_BETA)
                })
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let beta_tilde = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        ensure!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside [1, {}]",
            self.steps()
        );
        Ok(())
    }

    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// `(coef_x0, coef_xt)` of the posterior mean at step `t`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let i = t - 1;
        let prev = self.alpha_bar_prev(t);
        let denom = 1.0 - self.alpha_bar[i];
        Ok((
            prev.sqrt() * self.beta[i] / denom,
            self.alpha[i].sqrt() * (1.0 - prev) / denom,
        ))
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`
pub fn q_sample<F: Real>(
    x0: &[F],
    t: usize,
    eps: &[F],
    schedule: &NoiseSchedule,
) -> Result<Vec<F>> {
    schedule.check_t(t)?;
    ensure!(
        x0.len() == eps.len(),
        "noise has {} values, x0 has {}",
        eps.len(),
        x0.len()
    );
    let ab = schedule.alpha_bar[t - 1];
    let (a, b) = (F::lit(ab.sqrt()), F::lit((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One reverse step: posterior mean plus `√β̃_t·z`. Step 1 returns `x0_hat`.
pub fn posterior_step<F: Real, R: Rng + ?Sized>(
    x_t: &[F],
    x0_hat: &[F],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<F>> {
    let (c0, ct) = schedule.posterior_coefficients(t)?;
    ensure!(
        x_t.len() == x0_hat.len(),
        "x_t has {} values, x0_hat {}",
        x_t.len(),
        x0_hat.len()
    );
    if t == 1 {
        return Ok(x0_hat.to_vec());
    }
    let sigma = schedule.beta_tilde[t - 1].sqrt();
    let (c0, ct) = (F::lit(c0), F::lit(ct));
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .map(|(&xt, &x0)| {
            let z: f64 = rng.sample(StandardNormal);
            c0 * x0 + ct * xt + F::lit(sigma * z)
        })
        .collect())
}

/// `null + s·(cond − null)`; `s = 1` and `s = 0` return a branch unchanged.
pub fn guided_combine<F: Real>(cond: &[F], null: &[F], scale: f64) -> Vec<F> {
    if scale == 1.0 {
        return cond.to_vec();
    }
    if scale == 0.0 {
        return null.to_vec();
    }
    let s = F::lit(scale);
    cond.iter()
        .zip(null)
        .map(|(&c, &u)| u + s * (c - u))
        .collect()
}

pub fn standard_normal<F: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<F> {
    (0..len)
        .map(|_| F::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Which branch a sampling call asks the denoiser for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Conditional,
    Unconditional,
}

/// Full reverse chain from `x_T ~ N(0, I)`. `denoise(x_t, t, branch)`
/// returns the predicted clean signal; the unconditional branch is only
/// queried when the guidance scale is not 1.
pub fn sample_loop<F, R, D>(
    len: usize,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
    rng: &mut R,
    denoise: D,
) -> Result<Vec<F>>
where
    F: Real,
    R: Rng + ?Sized,
    D: FnMut(&[F], usize, Branch) -> Result<Vec<F>>,
{
    let x = standard_normal::<F, _>(rng, len);
    reverse_chain(x, schedule, guidance_scale, rng, denoise)
}

/// Reverse chain from a given `x_T`.
pub fn reverse_chain<F, R, D>(
    mut x: Vec<F>,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
    rng: &mut R,
    mut denoise: D,
) -> Result<Vec<F>>
where
    F: Real,
    R: Rng + ?Sized,
    D: FnMut(&[F], usize, Branch) -> Result<Vec<F>>,
{
    for t in (1..=schedule.steps()).rev() {
        let cond = denoise(&x, t, Branch::Conditional)?;
        let x0_hat = if guidance_scale == 1.0 {
            cond
        } else {
            let null = denoise(&x, t, Branch::Unconditional)?;
            guided_combine(&cond, &null, guidance_scale)
        };
        if x0_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: t as u64,
                message: "denoiser produced non-finite values while sampling".into(),
            });
        }
        x = posterior_step(&x, &x0_hat, t, schedule, rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_schedule() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(1, kind).unwrap();
            assert_eq!(s.alpha_bar, vec![1.0 - s.beta[0]]);
            assert_eq!(s.beta_tilde, vec![0.0]);
        }
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!(
            "quadratic".parse::<ScheduleKind>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_noise_scales_x0() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let x0 = [1.0f64, -2.0, 0.5];
        let xt = q_sample(&x0, 4, &[0.0; 3], &s).unwrap();
        let a = s.alpha_bar[3].sqrt();
        assert_eq!(xt, vec![a * 1.0, a * -2.0, a * 0.5]);
        assert!(q_sample(&x0, 0, &[0.0; 3], &s).is_err());
        assert!(q_sample(&x0, 11, &[0.0; 3], &s).is_err());
    }

    #[test]
    fn unit_alpha_bar_returns_x0() {
        let s = NoiseSchedule {
            beta: vec![0.0],
            alpha: vec![1.0],
            alpha_bar: vec![1.0],
            beta_tilde: vec![0.0],
        };
        assert_eq!(
            q_sample(&[3.0f64, 4.0], 1, &[7.0, 8.0], &s).unwrap(),
            vec![3.0, 4.0]
        );
    }

    #[test]
    fn first_step_returns_prediction() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = posterior_step(&[5.0f64, 6.0], &[1.0, 2.0], 1, &s, &mut rng).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn guidance_special_scales() {
        let c = [1.0f32, 2.0];
        let u = [0.5f32, -1.0];
        assert_eq!(guided_combine(&c, &u, 1.0), c.to_vec());
        assert_eq!(guided_combine(&c, &u, 0.0), u.to_vec());
        assert_eq!(guided_combine(&c, &u, 2.0), vec![1.5, 5.0]);
    }
}
