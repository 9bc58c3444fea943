//! Dense row-major tensors and their on-disk encoding.
//!
//! The binary layout is little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AINT"
//! 4       1     format version (1)
//! 5       1     dtype code (0 = f32, 1 = f64)
//! 6       2     rank (u16)
//! 8       8     element count (u64)
//! 16      8·r   extents (u64 each)
//! ...           elements
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{config, domain, Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"AINT";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}…", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(domain("tensor rank must be at least 1"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(domain(format!("zero extent on axis {axis} of shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(config(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| {
            debug_assert!(i < e);
            acc * e + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(config(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len()).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(config(format!(
                "shape mismatch: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Treats rank-3 `(H, W, C)` as a batch of one; rank-4 passes through.
    pub(crate) fn as_nhwc_dims(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok([1, h, w, c]),
            [b, h, w, c] => Ok([b, h, w, c]),
            _ => Err(config(format!(
                "expected a (H, W, C) or (B, H, W, C) tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| domain("cannot stack an empty list"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            t.expect_shape(first.shape())?;
            data.extend_from_slice(t.data());
        }
        Tensor::new(&shape, data)
    }

    // ---- binary encoding ----

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.rank() + self.len() * T::DTYPE.size()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(self.rank() as u16).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Decode one tensor from the start of `bytes`, returning it and the
    /// number of bytes consumed. Elements stored in the other float width
    /// are converted. `origin` and `base` only label error messages.
    pub fn decode(bytes: &[u8], origin: &Path, base: u64) -> Result<(Self, usize)> {
        let fail = |offset: usize, message: String| Error::Format {
            path: origin.to_path_buf(),
            offset: base + offset as u64,
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), "truncated tensor header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(0, "bad magic, expected \"AINT\"".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(fail(4, format!("unsupported format version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5]).ok_or_else(|| fail(5, format!("bad dtype code {}", bytes[5])))?;
        let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dims_end = HEADER_LEN + 8 * rank;
        if bytes.len() < dims_end {
            return Err(fail(bytes.len(), "truncated extents".into()));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| {
                let at = HEADER_LEN + 8 * i;
                u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
            })
            .collect();
        let expected = check_shape(&shape).map_err(|e| fail(HEADER_LEN, e.to_string()))?;
        if expected != count {
            return Err(fail(8, format!("element count {count} disagrees with shape {shape:?}")));
        }
        let end = dims_end + count * dtype.size();
        if bytes.len() < end {
            return Err(fail(
                bytes.len(),
                format!("expected {} payload bytes", count * dtype.size()),
            ));
        }
        let payload = &bytes[dims_end..end];
        let data: Vec<T> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::read_le(c)).unwrap())
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::read_le(c)).unwrap())
                .collect(),
        };
        Ok((Self { shape, data }, end))
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (t, used) = Self::decode(&bytes, origin, 0)?;
        if used != bytes.len() {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                offset: used as u64,
                message: "trailing bytes after tensor".into(),
            });
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(std::fs::File::open(path)?, path)
    }
}
