use crate::error::{config, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `x (B, F) · w (F, K) + b (K)`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, f) = match *x.shape() {
        [rows, f] => (rows, f),
        _ => return Err(config(format!("linear expects (B, F) input, got {:?}", x.shape()))),
    };
    let k = match *w.shape() {
        [wf, k] if wf == f => k,
        _ => {
            return Err(config(format!(
                "dimension mismatch: input features {f}, weights {:?}",
                w.shape()
            )))
        }
    };
    b.expect_shape(&[k])?;
    let mut out = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    T::gemm(
        rows,
        f,
        k,
        T::one(),
        x.data(),
        (f as isize, 1),
        w.data(),
        (k as isize, 1),
        T::one(),
        &mut out,
        (k as isize, 1),
    );
    Tensor::new(&[rows, k], out)
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (rows, f) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let mut dx = vec![T::zero(); rows * f];
    T::gemm(
        rows,
        k,
        f,
        T::one(),
        dy.data(),
        (k as isize, 1),
        w.data(),
        (1, k as isize),
        T::zero(),
        &mut dx,
        (f as isize, 1),
    );
    let mut dw = vec![T::zero(); f * k];
    T::gemm(
        f,
        rows,
        k,
        T::one(),
        x.data(),
        (1, f as isize),
        dy.data(),
        (k as isize, 1),
        T::zero(),
        &mut dw,
        (k as isize, 1),
    );
    let mut db = vec![T::zero(); k];
    for r in dy.data().chunks_exact(k) {
        for (a, &v) in db.iter_mut().zip(r) {
            *a += v;
        }
    }
    (
        Tensor::new(&[rows, f], dx).unwrap(),
        Tensor::new(&[f, k], dw).unwrap(),
        Tensor::new(&[k], db).unwrap(),
    )
}

/// Numerically stable softmax of one row of logits.
pub fn softmax_row<T: Scalar>(logits: &[T], out: &mut [T]) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Row-wise softmax of a `(B, K)` or `(K)` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().unwrap();
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits.data().chunks_exact(k).zip(out.data_mut().chunks_exact_mut(k)) {
        softmax_row(src, dst);
    }
    out
}

/// Fully connected layer followed by softmax, for a single feature vector.
pub fn linear_softmax<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let f = input.len();
    if input.rank() != 1 {
        return Err(config(format!("expected a feature vector, got {:?}", input.shape())));
    }
    let logits = linear_forward(&input.clone().reshape(&[1, f])?, weights, bias)?;
    let k = logits.shape()[1];
    softmax(&logits).reshape(&[k])
}

/// Summed softmax cross-entropy over a batch of logits, plus the softmax
/// probabilities (kept for the backward pass).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (rows, k) = match *logits.shape() {
        [rows, k] => (rows, k),
        _ => return Err(config(format!("logits must be (B, K), got {:?}", logits.shape()))),
    };
    if labels.len() != rows {
        return Err(config(format!("{} labels for a batch of {rows}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(config(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits);
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - row[label];
    }
    Ok((loss, probs))
}
