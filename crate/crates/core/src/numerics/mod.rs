//! Dense f64 arithmetic with hand-derived reverse passes.
//!
//! Every differentiable block exposes a forward pass that returns whatever
//! intermediate state its backward pass needs, and a backward pass that
//! accumulates parameter gradients and returns the input gradient. The
//! trainer chains these per iteration and drops the state afterwards.

mod adam;
mod gradcheck;
mod linear;
mod mlp;
mod softmax;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::{LinearGrad, LinearLayer};
pub use mlp::{Activation, Mlp, MlpGrad, MlpTrace};
pub use softmax::{masked_softmax, softmax, softmax_backward};
pub use tensor::Tensor;

/// Order-stable sum (pairwise) for reductions that must not depend on how
/// the work was split.
pub fn stable_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    stable_sum(&values[..mid]) + stable_sum(&values[mid..])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}
