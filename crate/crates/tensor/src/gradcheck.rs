//! Central finite differences, used to validate analytic gradients.

use crate::tensor::Tensor;

/// Numerical gradient of a scalar function with respect to each input tensor.
pub fn central_difference(
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    h: f64,
) -> Vec<Tensor<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = f(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = f(&work);
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor<f64>, b: &Tensor<f64>, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
