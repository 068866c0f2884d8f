use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// Temperature / nucleus sampling with a repetition fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Trailing history window inspected for repeats.
    pub rep_window: usize,
    /// Occurrences within the window that trigger a redraw.
    pub rep_max: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 0.7, top_p: 1.0, rep_window: 240, rep_max: 10, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            Config,
            "temperature must be positive"
        );
        ensure!(self.top_p > 0.0 && self.top_p <= 1.0, Config, "top_p must lie in (0, 1]");
        ensure!(
            self.rep_window >= self.rep_max && self.rep_max >= 1,
            Config,
            "need rep_window >= rep_max >= 1"
        );
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplerConfig { seed, ..self.clone() }
    }
}

/// Draws a token id from a full logits row (`id == index`). Returns the id
/// and whether the repetition fallback fired.
pub fn sample_next<T: Scalar, R: Rng + ?Sized>(
    logits_row: &[T],
    cfg: &SamplerConfig,
    history: &[u32],
    rng: &mut R,
) -> (u32, bool) {
    let ids: Vec<u32> = (0..logits_row.len() as u32).collect();
    sample_among(logits_row, &ids, cfg, history, rng)
}

/// Same as [`sample_next`] restricted to `allowed` token ids.
pub fn sample_among<T: Scalar, R: Rng + ?Sized>(
    logits_row: &[T],
    allowed: &[u32],
    cfg: &SamplerConfig,
    history: &[u32],
    rng: &mut R,
) -> (u32, bool) {
    assert!(!allowed.is_empty(), "sampling from an empty candidate set");
    let scaled: Vec<f64> = allowed
        .iter()
        .map(|&id| logits_row[id as usize].as_f64() / cfg.temperature)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let nucleus = nucleus(&probs, cfg.top_p);
    let pick = draw(&nucleus, &probs, rng);
    let token = allowed[pick];

    let tail = &history[history.len().saturating_sub(cfg.rep_window)..];
    let repeats = tail.iter().filter(|&&t| t == token).count();
    if repeats >= cfg.rep_max {
        let all: Vec<usize> = (0..probs.len()).collect();
        let redraw = draw(&all, &probs, rng);
        return (allowed[redraw], true);
    }
    (token, false)
}

/// Smallest prefix of indices, by descending probability (ties by index),
/// whose mass reaches `top_p`.
fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    if top_p >= 1.0 {
        return order;
    }
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &i in &order {
        mass += probs[i];
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    order.truncate(keep);
    order
}

fn draw<R: Rng + ?Sized>(indices: &[usize], probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = indices.iter().map(|&i| probs[i]).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &i in indices {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with nonzero mass
    *indices.iter().rev().find(|&&i| probs[i] > 0.0).unwrap_or(&indices[0])
}
