//! Convolution as im2col + GEMM over NHWC batches.
//!
//! Weights are laid out `(kh, kw, c_in, c_out)`, which is already the
//! `(kh·kw·c_in) × c_out` matrix the GEMM wants. The convention is
//! cross-correlation (no kernel flip).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial geometry of a 2-D convolution or pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// "Same-with-stride": `floor(k/2)` zero padding, output `ceil(extent/stride)` for odd k.
    pub fn same(kh: usize, kw: usize, stride: usize) -> Self {
        Self {
            kh,
            kw,
            stride,
            pad_h: kh / 2,
            pad_w: kw / 2,
        }
    }

    pub fn with_padding(kh: usize, kw: usize, stride: usize, pad_h: usize, pad_w: usize) -> Self {
        Self {
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.stride == 0 {
            return Err(config(format!("kernel extents and stride must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn out_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < self.kh || pw < self.kw {
            return Err(domain(format!(
                "window {}x{} larger than padded input {ph}x{pw}",
                self.kh, self.kw
            )));
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

/// Learnable convolution: weights `(kh, kw, c_in, c_out)` (or `(k, c_in, c_out)`
/// for 1-D), a per-output-channel bias, and the window geometry.
#[derive(Clone, Debug)]
pub struct ConvKernel<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvKernel<T> {
    /// Same-padded kernel from weights of rank 4 (2-D) or rank 3 (1-D).
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        let (kh, kw) = match *weights.shape() {
            [kh, kw, _, _] => (kh, kw),
            [k, _, _] => (k, 1),
            _ => return Err(config(format!("bad kernel shape {:?}", weights.shape()))),
        };
        let k = Self {
            weights,
            bias,
            stride,
            padding: (kh / 2, kw / 2),
        };
        k.dims()?;
        Ok(k)
    }

    /// `(kh, kw, c_in, c_out)`, with `kw = 1` for 1-D kernels.
    pub fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        let d = match *self.weights.shape() {
            [kh, kw, ci, co] => (kh, kw, ci, co),
            [k, ci, co] => (k, 1, ci, co),
            _ => return Err(config(format!("bad kernel shape {:?}", self.weights.shape()))),
        };
        if self.bias.shape() != [d.3] {
            return Err(config(format!(
                "bias shape {:?} does not match c_out = {}",
                self.bias.shape(),
                d.3
            )));
        }
        Ok(d)
    }

    pub fn geom(&self) -> Result<ConvGeom> {
        let (kh, kw, _, _) = self.dims()?;
        Ok(ConvGeom::with_padding(
            kh,
            kw,
            self.stride,
            self.padding.0,
            self.padding.1,
        ))
    }
}

/// 2-D convolution of `(H, W, c_in)` or `(B, H, W, c_in)`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let batched = input.rank() == 4;
    let x = reshape_nhwc(input)?;
    let (kh, kw, ci, co) = kernel.dims()?;
    let w = kernel.weights.clone().reshape(&[kh, kw, ci, co])?;
    let y = conv2d_forward(&x, &w, &kernel.bias, kernel.geom()?)?;
    if batched {
        Ok(y)
    } else {
        let s = y.shape().to_vec();
        y.reshape(&s[1..])
    }
}

/// 1-D convolution of `(L, c_in)` or `(B, L, c_in)`, computed as a 2-D
/// convolution over a width-1 map.
pub fn conv1d<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let (b, l, c) = match *input.shape() {
        [l, c] => (None, l, c),
        [b, l, c] => (Some(b), l, c),
        _ => return Err(config(format!("conv1d expects (L, C) input, got {:?}", input.shape()))),
    };
    let (_, kw, _, _) = kernel.dims()?;
    if kw != 1 {
        return Err(config("conv1d needs a rank-3 (k, c_in, c_out) kernel"));
    }
    let x = input.clone().reshape(&[b.unwrap_or(1), l, 1, c])?;
    let y = conv2d(&x, kernel)?;
    let (bo, lo, co) = (y.shape()[0], y.shape()[1], y.shape()[3]);
    match b {
        Some(_) => y.reshape(&[bo, lo, co]),
        None => y.reshape(&[lo, co]),
    }
}

fn reshape_nhwc<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let d = t.as_nhwc_dims()?;
    t.clone().reshape(&d)
}

/// Valid kernel columns `[lo, hi)` for output column `ox`: taps that land
/// inside the input. In NHWC these taps are contiguous in both the input
/// and the column row, so each kernel row moves as one slice.
fn tap_span(ox: usize, g: ConvGeom, w: usize) -> (usize, usize) {
    let left = (ox * g.stride) as isize - g.pad_w as isize;
    let lo = (-left).clamp(0, g.kw as isize) as usize;
    let hi = (w as isize - left).clamp(lo as isize, g.kw as isize) as usize;
    (lo, hi)
}

/// Lowered rows per chunk: about 256 KiB of columns, so the buffer stays
/// in cache and is reused instead of being allocated per call.
fn chunk_rows(k: usize) -> usize {
    ((1usize << 16) / k.max(1)).max(16)
}

/// Output rows `rows` (flattened `(n, oy, ox)`) lowered into `cols`, which
/// holds `rows.len() × k` values and is fully overwritten.
fn im2col<T: Scalar>(
    x: &[T],
    [_, h, w, c]: [usize; 4],
    g: ConvGeom,
    ho: usize,
    wo: usize,
    rows: Range<usize>,
    cols: &mut [T],
) {
    let k = g.kh * g.kw * c;
    cols.fill(T::zero());
    for (r, row) in rows.zip(cols.chunks_exact_mut(k)) {
        let (n, oy, ox) = (r / (ho * wo), r / wo % ho, r % wo);
        let (lo, hi) = tap_span(ox, g, w);
        if lo == hi {
            continue;
        }
        let ix = ox * g.stride + lo - g.pad_w;
        let len = (hi - lo) * c;
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let src = ((n * h + iy as usize) * w + ix) * c;
            let dst = (ky * g.kw + lo) * c;
            row[dst..dst + len].copy_from_slice(&x[src..src + len]);
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add lowered rows back into `x`.
fn col2im<T: Scalar>(
    cols: &[T],
    [_, h, w, c]: [usize; 4],
    g: ConvGeom,
    ho: usize,
    wo: usize,
    rows: Range<usize>,
    x: &mut [T],
) {
    let k = g.kh * g.kw * c;
    for (r, row) in rows.zip(cols.chunks_exact(k)) {
        let (n, oy, ox) = (r / (ho * wo), r / wo % ho, r % wo);
        let (lo, hi) = tap_span(ox, g, w);
        if lo == hi {
            continue;
        }
        let ix = ox * g.stride + lo - g.pad_w;
        let len = (hi - lo) * c;
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let dst = ((n * h + iy as usize) * w + ix) * c;
            let src = (ky * g.kw + lo) * c;
            for (d, &s) in x[dst..dst + len].iter_mut().zip(&row[src..src + len]) {
                *d += s;
            }
        }
    }
}

fn check_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeom) -> Result<([usize; 4], usize, usize, usize)> {
    let dims = match *x.shape() {
        [b, h, w, c] => [b, h, w, c],
        _ => return Err(config(format!("conv input must be NHWC, got {:?}", x.shape()))),
    };
    let (kh, kw, ci, co) = match *w.shape() {
        [kh, kw, ci, co] => (kh, kw, ci, co),
        _ => return Err(config(format!("conv weights must be rank 4, got {:?}", w.shape()))),
    };
    if (kh, kw) != (g.kh, g.kw) {
        return Err(config("kernel extents disagree with geometry"));
    }
    if ci != dims[3] {
        return Err(config(format!(
            "channel mismatch: input has {} channels, kernel expects {ci}",
            dims[3]
        )));
    }
    let (ho, wo) = g.out_extent(dims[1], dims[2])?;
    Ok((dims, ho, wo, co))
}

/// Batched forward pass on an NHWC tensor.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let (dims, ho, wo, co) = check_conv(x, w, g)?;
    bias.expect_shape(&[co])?;
    let rows = dims[0] * ho * wo;
    let k = g.kh * g.kw * dims[3];
    let mut out = Vec::with_capacity(rows * co);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    if g.is_pointwise() {
        T::gemm(
            rows,
            k,
            co,
            T::one(),
            x.data(),
            (k as isize, 1),
            w.data(),
            (co as isize, 1),
            T::one(),
            &mut out,
            (co as isize, 1),
        );
    } else {
        let step = chunk_rows(k);
        let mut cols = vec![T::zero(); step.min(rows) * k];
        for r0 in (0..rows).step_by(step) {
            let r1 = (r0 + step).min(rows);
            let cols = &mut cols[..(r1 - r0) * k];
            im2col(x.data(), dims, g, ho, wo, r0..r1, cols);
            T::gemm(
                r1 - r0,
                k,
                co,
                T::one(),
                cols,
                (k as isize, 1),
                w.data(),
                (co as isize, 1),
                T::one(),
                &mut out[r0 * co..r1 * co],
                (co as isize, 1),
            );
        }
    }
    Tensor::new(&[dims[0], ho, wo, co], out)
}

/// Gradients of a conv: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (dims, ho, wo, co) = check_conv(x, w, g)?;
    dy.expect_shape(&[dims[0], ho, wo, co])?;
    let rows = dims[0] * ho * wo;
    let k = g.kh * g.kw * dims[3];

    let mut db = vec![T::zero(); co];
    for r in dy.data().chunks_exact(co) {
        for (acc, &v) in db.iter_mut().zip(r) {
            *acc += v;
        }
    }

    let mut dw = vec![T::zero(); k * co];
    if g.is_pointwise() {
        // dW = Xᵀ · dY, dX = dY · Wᵀ
        T::gemm(
            k,
            rows,
            co,
            T::one(),
            x.data(),
            (1, k as isize),
            dy.data(),
            (co as isize, 1),
            T::zero(),
            &mut dw,
            (co as isize, 1),
        );
        let mut dx = vec![T::zero(); rows * k];
        T::gemm(
            rows,
            co,
            k,
            T::one(),
            dy.data(),
            (co as isize, 1),
            w.data(),
            (1, co as isize),
            T::zero(),
            &mut dx,
            (k as isize, 1),
        );
        return Ok((
            Tensor::new(&dims, dx)?,
            Tensor::new(w.shape(), dw)?,
            Tensor::new(&[co], db)?,
        ));
    }
    let mut dx = vec![T::zero(); dims.iter().product()];
    let step = chunk_rows(k);
    let mut cols = vec![T::zero(); step.min(rows) * k];
    let mut dcols = vec![T::zero(); step.min(rows) * k];
    for r0 in (0..rows).step_by(step) {
        let r1 = (r0 + step).min(rows);
        let (cols, dcols) = (&mut cols[..(r1 - r0) * k], &mut dcols[..(r1 - r0) * k]);
        let dy = &dy.data()[r0 * co..r1 * co];
        im2col(x.data(), dims, g, ho, wo, r0..r1, cols);
        // dW += colsᵀ · dY
        T::gemm(
            k,
            r1 - r0,
            co,
            T::one(),
            cols,
            (1, k as isize),
            dy,
            (co as isize, 1),
            T::one(),
            &mut dw,
            (co as isize, 1),
        );
        // dCols = dY · Wᵀ
        T::gemm(
            r1 - r0,
            co,
            k,
            T::one(),
            dy,
            (co as isize, 1),
            w.data(),
            (1, co as isize),
            T::zero(),
            dcols,
            (k as isize, 1),
        );
        col2im(dcols, dims, g, ho, wo, r0..r1, &mut dx);
    }
    Ok((
        Tensor::new(&dims, dx)?,
        Tensor::new(w.shape(), dw)?,
        Tensor::new(&[co], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(w: Tensor<f64>, stride: usize) -> ConvKernel<f64> {
        let co = *w.shape().last().unwrap();
        ConvKernel::new(w, Tensor::zeros(&[co]), stride).unwrap()
    }

    #[test]
    fn pointwise_identity() {
        let x = Tensor::from_fn(&[3, 4, 1], |i| i as f64 * 0.5 - 1.0);
        let k = kernel(Tensor::full(&[1, 1, 1, 1], 1.0), 1);
        assert_eq!(conv2d(&x, &k).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[4, 4, 1], 1.0);
        let k = kernel(Tensor::full(&[3, 3, 1, 1], 1.0), 1);
        let y = conv2d(&x, &k).unwrap();
        assert_eq!(y.shape(), &[4, 4, 1]);
        assert_eq!(y.get(&[1, 1, 0]), 9.0);
        assert_eq!(y.get(&[2, 2, 0]), 9.0);
        assert_eq!(y.get(&[0, 0, 0]), 4.0);
        assert_eq!(y.get(&[3, 3, 0]), 4.0);
        assert_eq!(y.get(&[0, 1, 0]), 6.0);
    }

    #[test]
    fn stem_halves_extents() {
        let x = Tensor::<f32>::zeros(&[32, 32, 3]);
        let k = ConvKernel::new(Tensor::zeros(&[7, 7, 3, 64]), Tensor::zeros(&[64]), 2).unwrap();
        assert_eq!(conv2d(&x, &k).unwrap().shape(), &[16, 16, 64]);
    }

    #[test]
    fn conv1d_cases() {
        let x = Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = kernel(Tensor::full(&[3, 1, 1], 1.0), 1);
        assert_eq!(conv1d(&x, &k).unwrap().data(), &[3.0, 6.0, 9.0, 7.0]);

        let k = kernel(Tensor::full(&[1, 1, 1], 1.0), 1);
        assert_eq!(conv1d(&x, &k).unwrap(), x);

        let x = Tensor::<f64>::zeros(&[100, 40]);
        let k = kernel(Tensor::zeros(&[15, 40, 64]), 2);
        assert_eq!(conv1d(&x, &k).unwrap().shape(), &[50, 64]);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros(&[4, 4, 2]);
        let k = kernel(Tensor::zeros(&[3, 3, 3, 1]), 1);
        assert!(matches!(conv2d(&x, &k), Err(crate::Error::Config(_))));
    }

    #[test]
    fn oversized_window_is_domain_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        let w = Tensor::zeros(&[5, 5, 1, 1]);
        let g = ConvGeom::with_padding(5, 5, 1, 0, 0);
        assert!(matches!(
            conv2d_forward(&x, &w, &Tensor::zeros(&[1]), g),
            Err(crate::Error::Domain(_))
        ));
    }
}
