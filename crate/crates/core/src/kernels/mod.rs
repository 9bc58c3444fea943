//! Primitive forward (and backward) kernels on plain tensors.
//!
//! Every kernel here is a pure function of its arguments; the autodiff tape
//! wraps them and owns all mutable state.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;

pub use activation::{relu, sigmoid};
pub use conv::{conv1d, conv2d, ConvGeom, ConvKernel};
pub use linear::{linear_softmax, softmax};
pub use pool::maxpool2d;

use crate::error::{config, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Concatenate channels-last tensors along their last axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| config("nothing to concatenate"))?;
    let lead = &first.shape()[..first.rank() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if &p.shape()[..p.rank() - 1] != lead {
            return Err(config(format!(
                "cannot concatenate {:?} with {:?}",
                first.shape(),
                p.shape()
            )));
        }
        widths.push(*p.shape().last().unwrap());
    }
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(&shape, data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let total = *t.shape().last().unwrap();
    debug_assert_eq!(widths.iter().sum::<usize>(), total);
    let rows = t.len() / total;
    let lead = &t.shape()[..t.rank() - 1];
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                let s = r * total + offset;
                data.extend_from_slice(&t.data()[s..s + w]);
            }
            offset += w;
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::new(&shape, data).unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_fn(&[2, 2, 1], |i| i as f32);
        let b = Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f32);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 2, 4]);
        assert_eq!(&c.data()[..4], &[0.0, 100.0, 101.0, 102.0]);
        let parts = split_channels(&c, &[1, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let bad = Tensor::<f32>::zeros(&[2, 3, 1]);
        assert!(concat_channels(&[&a, &bad]).is_err());
    }
}
