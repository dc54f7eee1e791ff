//! Dense tensors, a reverse-mode tape and a named parameter store.

mod params;
mod tape;
mod tensor;

pub use params::{finite_diff_gradient, ParamStore};
pub use tape::{primitive_forward, Adjoints, OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::matmul_raw;

/// Dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
