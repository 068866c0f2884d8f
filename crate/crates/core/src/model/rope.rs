//! Rotary position embeddings on plain tensors.

use crate::autodiff::{rope_apply, rope_tables, Tensor};
use crate::error::{ensure, Result};
use crate::scalar::Scalar;

fn rotate<T: Scalar>(x: &Tensor<T>, positions: &[usize], base: f64) -> Result<Tensor<T>> {
    ensure!(x.rank() >= 2, Dimension, "rope needs [.., n, head_dim], got {:?}", x.shape());
    let head_dim = x.last_dim();
    ensure!(head_dim.is_multiple_of(2), Dimension, "rotary head dim {head_dim} is odd");
    let n = x.shape()[x.rank() - 2];
    ensure!(positions.len() == n, Dimension, "{} positions for {} rows", positions.len(), n);
    let (cos, sin) = rope_tables::<T>(positions, head_dim, base);
    let block = n * head_dim;
    let mut out = Vec::with_capacity(x.numel());
    for chunk in x.data().chunks(block) {
        out.extend(rope_apply(chunk, n, head_dim, head_dim, &cos, &sin, false));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Rotates queries and keys shaped `[.., n, head_dim]`: row `r` is rotated
/// by `positions[r]`, and pair `(2i, 2i+1)` by `pos · base^(-2i/head_dim)`.
pub fn apply_rope<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    positions: &[usize],
    rope_base: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((rotate(q, positions, rope_base)?, rotate(k, positions, rope_base)?))
}
