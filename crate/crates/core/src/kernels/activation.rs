use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    input
        .zip_map(dy, |x, g| if x > T::zero() { g } else { T::zero() })
        .expect("relu grad shape")
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where it would round to an endpoint.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(below_one)
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Backward through a sigmoid given its output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    output
        .zip_map(dy, |s, g| g * s * (T::one() - s))
        .expect("sigmoid grad shape")
}
