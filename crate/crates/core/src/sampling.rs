//! Turning a trained denoiser and a description into motion.

use fgmdm_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::ConditionText;
use crate::denoiser::{denoise, DenoiserConfig};
use crate::diffusion::{sample_loop, Branch, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::normalize::Normalizer;
use crate::params::ParamSet;
use crate::skeleton::Motion;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub frames: usize,
    pub fps: f64,
    pub guidance_scale: f64,
    pub seed: u64,
}

/// Runs the guided reverse chain in standardized units, maps the result
/// back and decodes it, renormalizing quaternions.
pub fn sample_motion(
    params: &ParamSet<f32>,
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    norm: &Normalizer,
    text: &ConditionText,
    opts: &SampleOptions,
) -> Result<Motion> {
    ensure!(opts.frames >= 1, "need at least one frame");
    ensure!(opts.fps > 0.0, "fps must be positive");
    norm.validate(cfg.d_flat)?;
    if !params.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            message: "model parameters are not finite".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shape = vec![opts.frames, cfg.d_flat];
    let flat = sample_loop(
        opts.frames * cfg.d_flat,
        schedule,
        opts.guidance_scale,
        &mut rng,
        |x: &[f32], t, branch| {
            let x = Tensor::new(shape.clone(), x.to_vec())?;
            let y = denoise(params, cfg, &x, t, text, branch == Branch::Unconditional)?;
            Ok(y.into_data())
        },
    )?;
    let flat = norm.denormalize(&Tensor::new(shape, flat)?);
    let flat: Vec<f64> = flat.data().iter().map(|&v| f64::from(v)).collect();
    Motion::from_flat(&flat, (cfg.d_flat - 3) / 4, opts.fps)
}
