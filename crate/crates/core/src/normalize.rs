//! Per-feature standardization of the flat motion representation.

use fgmdm_tensor::{Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::skeleton::Motion;

/// Features whose spread falls below this are scaled by it instead.
pub const STD_FLOOR: f64 = 1e-2;

/// `z = (x − mean) / std` per column. Empty vectors mean identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.is_empty()
    }

    /// Statistics over every frame of every motion.
    pub fn fit<'a>(motions: impl IntoIterator<Item = &'a Motion>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for m in motions {
            let w = m.flat_width();
            if sum.is_empty() {
                sum = vec![0.0; w];
                sq = vec![0.0; w];
            }
            ensure!(
                w == sum.len(),
                "motion width {w} differs from {}",
                sum.len()
            );
            for row in m.to_flat().chunks_exact(w) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += m.num_frames();
        }
        ensure!(count > 0, "cannot fit a normalizer to no frames");
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        ensure!(
            self.mean.len() == self.std.len(),
            "normalizer mean and std lengths differ"
        );
        ensure!(
            self.is_identity() || self.mean.len() == width,
            "normalizer width {} does not match motion width {width}",
            self.mean.len()
        );
        ensure!(
            self.std.iter().all(|s| s.is_finite() && *s > 0.0)
                && self.mean.iter().all(|m| m.is_finite()),
            "normalizer statistics must be finite with positive spread"
        );
        Ok(())
    }

    pub fn normalize<F: Real>(&self, x: &Tensor<F>) -> Tensor<F> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize<F: Real>(&self, z: &Tensor<F>) -> Tensor<F> {
        self.map(z, |v, m, s| v * s + m)
    }

    fn map<F: Real>(&self, x: &Tensor<F>, f: impl Fn(f64, f64, f64) -> f64) -> Tensor<F> {
        if self.is_identity() {
            return x.clone();
        }
        let w = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                F::lit(f(
                    v.to_f64().unwrap_or(f64::NAN),
                    self.mean[i % w],
                    self.std[i % w],
                ))
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    /// `z·std + mean` recorded on the tape for an `n × width` variable.
    pub fn denormalize_on_tape<F: Real>(&self, tape: &mut Tape<F>, z: Var) -> Result<Var> {
        if self.is_identity() {
            return Ok(z);
        }
        let shape = tape.shape(z).to_vec();
        let tile = |v: &[f64]| {
            let data = (0..shape[0])
                .flat_map(|_| v.iter().map(|&x| F::lit(x)))
                .collect();
            Tensor::new(shape.clone(), data)
        };
        let s = tape.constant(tile(&self.std)?);
        let m = tape.constant(tile(&self.mean)?);
        let scaled = tape.mul(z, s)?;
        Ok(tape.add(scaled, m)?)
    }
}
