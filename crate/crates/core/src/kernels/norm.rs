//! Per-channel batch normalization over the leading axes of a channels-last tensor.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalization statistics used by one forward pass.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Unbiased variance, for updating running averages.
    pub var_unbiased: Vec<T>,
}

pub fn batch_stats<T: Scalar>(x: &Tensor<T>) -> BnStats<T> {
    let c = *x.shape().last().unwrap();
    let n = x.len() / c;
    let nt = T::from_usize(n).unwrap();
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nt);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let eps = T::of(BN_EPS);
    let inv_std = var.iter().map(|&s| T::one() / (s / nt + eps).sqrt()).collect();
    let denom = if n > 1 { T::from_usize(n - 1).unwrap() } else { T::one() };
    let var_unbiased = var.iter().map(|&s| s / denom).collect();
    BnStats {
        mean,
        inv_std,
        var_unbiased,
    }
}

pub fn running_stats<T: Scalar>(mean: &Tensor<T>, var: &Tensor<T>) -> BnStats<T> {
    let eps = T::of(BN_EPS);
    BnStats {
        mean: mean.data().to_vec(),
        inv_std: var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
        var_unbiased: var.data().to_vec(),
    }
}

pub fn bn_forward<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, s: &BnStats<T>) -> Tensor<T> {
    let c = gamma.len();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for (ch, v) in row.iter_mut().enumerate() {
            *v = gamma.data()[ch] * (*v - s.mean[ch]) * s.inv_std[ch] + beta.data()[ch];
        }
    }
    y
}

/// Backward pass. When `batch_mode` is set the statistics are functions of
/// `x` and the full batch-norm Jacobian applies; otherwise they are constants.
pub fn bn_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    s: &BnStats<T>,
    dy: &Tensor<T>,
    batch_mode: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let n = T::from_usize(x.len() / c).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (xr, gr) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (xr[ch] - s.mean[ch]) * s.inv_std[ch];
            dgamma[ch] += gr[ch] * xhat;
            dbeta[ch] += gr[ch];
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    for ((dr, xr), gr) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(dy.data().chunks_exact(c))
    {
        for ch in 0..c {
            let g = gamma.data()[ch];
            dr[ch] = if batch_mode {
                let xhat = (xr[ch] - s.mean[ch]) * s.inv_std[ch];
                // dgamma = Σ dy·x̂, dbeta = Σ dy
                g * s.inv_std[ch] / n * (n * gr[ch] - dbeta[ch] - xhat * dgamma[ch])
            } else {
                g * s.inv_std[ch] * gr[ch]
            };
        }
    }
    (
        dx,
        Tensor::new(&[c], dgamma).unwrap(),
        Tensor::new(&[c], dbeta).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let x = Tensor::from_fn(&[4, 3, 2], |i| (i as f64).sin() * 3.0 + 1.0);
        let s = batch_stats(&x);
        let y = bn_forward(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &s);
        let s2 = batch_stats(&y);
        for ch in 0..2 {
            assert!(s2.mean[ch].abs() < 1e-12);
            assert!((1.0 / (s2.inv_std[ch] * s2.inv_std[ch]) - 1.0).abs() < 1e-4);
        }
    }
}
