use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let first: Vec<Tensor<F>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let second = first.clone();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            p.check_same("adam", g)?;
            p.check_same("adam", m)?;
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = F::lit(c.beta1);
        let b2 = F::lit(c.beta2);
        let one = F::one();
        let bc1 = F::lit(1.0 - c.beta1.powi(t));
        let bc2 = F::lit(1.0 - c.beta2.powi(t));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::<f32>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::new(AdamConfig::default(), &params);
        st.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..Default::default()
        };
        let mut params = vec![Tensor::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let mut st = AdamState::new(cfg, &params);
        st.step(
            &mut params,
            &[Tensor::new(vec![2], vec![3.0, -0.5]).unwrap()],
        )
        .unwrap();
        assert!((params[0].data()[0] + 1e-2).abs() < 1e-8);
        assert!((params[0].data()[1] - 1e-2).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        assert!(st.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(st.step, 0);
    }
}
