//! Dense tensors with a reverse-mode tape.
//!
//! A [`Graph`] records each primitive as it executes. Values are computed
//! eagerly, so the tape order is a topological order of the computation and
//! [`Graph::backward`] needs a single reverse sweep. Any primitive that
//! produces NaN or Inf fails with [`Error::NonFinite`](crate::Error::NonFinite).
//!
//! Broadcasting is limited to trailing-dimension vectors (`add_row`,
//! `rms_norm` gains).

mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::{rope_apply, rope_tables};

/// RMSNorm epsilon used throughout the model.
pub const RMS_EPS: f64 = 1e-6;

use crate::error::Result;
use crate::scalar::Scalar;

/// Softmax of the trailing dimension without recording.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.softmax_lastdim(v)?;
    Ok(g.value(y).clone())
}

pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (xv, gv) = (g.constant(x.clone()), g.constant(gain.clone()));
    let y = g.rms_norm(xv, gv, eps)?;
    Ok(g.value(y).clone())
}

pub fn cross_entropy_mean<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let y = g.cross_entropy_mean(l, targets)?;
    g.value(y).item()
}
