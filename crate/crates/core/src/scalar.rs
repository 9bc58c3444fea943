//! Floating-point element types a [`Tensor`](crate::Tensor) may carry.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type tag stored in the binary tensor header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A real scalar usable in every kernel of the crate.
///
/// Implemented for `f32` (the training default) and `f64` (used for
/// gradient checking). The trait also carries the matrix-multiply entry
/// point so the convolution and linear kernels can stay generic.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a·b + beta * c` for strided row/column-major views.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; each view is described by
    /// its (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Shorthand for constants; panics only if the value is unrepresentable.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

fn view_extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
}

fn check_views(
    m: usize,
    k: usize,
    n: usize,
    a: (usize, (isize, isize)),
    b: (usize, (isize, isize)),
    c: (usize, (isize, isize)),
) {
    assert!(a.1 .0 >= 0 && a.1 .1 >= 0 && b.1 .0 >= 0 && b.1 .1 >= 0);
    assert!(c.1 .0 >= 0 && c.1 .1 >= 0);
    assert!(view_extent(m, k, a.1) <= a.0, "gemm: lhs view out of bounds");
    assert!(view_extent(k, n, b.1) <= b.0, "gemm: rhs view out of bounds");
    assert!(view_extent(m, n, c.1) <= c.0, "gemm: output view out of bounds");
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        a_strides: (isize, isize),
        b: &[f32],
        b_strides: (isize, isize),
        beta: f32,
        c: &mut [f32],
        c_strides: (isize, isize),
    ) {
        check_views(
            m,
            k,
            n,
            (a.len(), a_strides),
            (b.len(), b_strides),
            (c.len(), c_strides),
        );
        // SAFETY: every view was bounds-checked above against its slice.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a_strides.0,
                a_strides.1,
                b.as_ptr(),
                b_strides.0,
                b_strides.1,
                beta,
                c.as_mut_ptr(),
                c_strides.0,
                c_strides.1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        a_strides: (isize, isize),
        b: &[f64],
        b_strides: (isize, isize),
        beta: f64,
        c: &mut [f64],
        c_strides: (isize, isize),
    ) {
        check_views(
            m,
            k,
            n,
            (a.len(), a_strides),
            (b.len(), b_strides),
            (c.len(), c_strides),
        );
        // SAFETY: every view was bounds-checked above against its slice.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a_strides.0,
                a_strides.1,
                b.as_ptr(),
                b_strides.0,
                b_strides.1,
                beta,
                c.as_mut_ptr(),
                c_strides.0,
                c_strides.1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (2, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);

        // transposed lhs view: aᵀ·b = [1 3; 2 4]·b = [26 30; 38 44]
        let mut c = [0.0f32; 4];
        let a32 = a.map(|v| v as f32);
        let b32 = b.map(|v| v as f32);
        f32::gemm(2, 2, 2, 1.0, &a32, (1, 2), &b32, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn gemm_rejects_short_views() {
        let a = [1.0f32; 3];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, &a, (2, 1), &a, (2, 1), 0.0, &mut c, (2, 1));
    }
}
