use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{no_hook, StepHook, StepMetrics};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::model::{Model, TokenSeq};
use crate::optim::{adamw_step, lr_at, OptimConfig, OptimState};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 0.3, steps: 200, batch_size: 8, grad_accum: 4 }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.beta > 0.0 && self.beta.is_finite(), Config, "beta must be positive, got {}", self.beta);
        ensure!(self.batch_size >= 1 && self.grad_accum >= 1, Config, "batch_size and grad_accum must be at least 1");
        Ok(())
    }
}

/// A prompt with its preferred and dispreferred continuations. Both
/// continuations are generation-segment tokens ending in EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct DpoPair {
    pub context: TokenSeq,
    pub winner: TokenSeq,
    pub loser: TokenSeq,
}

impl DpoPair {
    fn check(&self) -> Result<()> {
        if self.winner.ids == self.loser.ids {
            return Err(Error::DegeneratePair);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DpoBatchStats {
    pub loss: f64,
    /// Mean log π_θ(y⁺|x) − log π_θ(y⁻|x).
    pub delta_policy: f64,
    /// Mean of the same difference under the reference.
    pub delta_ref: f64,
    /// `delta_policy − delta_ref`.
    pub margin: f64,
    /// Share of pairs whose individual margin is positive.
    pub win_rate: f64,
}

/// −ln σ(β·margin), evaluated without overflow.
pub fn dpo_loss_from_margin(margin: f64, beta: f64) -> f64 {
    let z = beta * margin;
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

fn pair_delta<T: Scalar>(model: &Model<T>, pair: &DpoPair) -> Result<f64> {
    let w = model.sequence_logprob(&pair.context, &pair.winner)?.as_f64();
    let l = model.sequence_logprob(&pair.context, &pair.loser)?.as_f64();
    Ok(w - l)
}

/// Records the batch loss on `g` with the reference differences supplied as
/// constants, so gradients reach only the policy leaves.
fn loss_graph<T: Scalar>(
    policy: &Model<T>,
    g: &mut Graph<T>,
    vars: &[Var],
    batch: &[&DpoPair],
    ref_deltas: &[f64],
    beta: f64,
) -> Result<(Var, Vec<f64>)> {
    ensure!(!batch.is_empty(), Data, "empty DPO batch");
    ensure!(batch.len() == ref_deltas.len(), Dimension, "{} pairs vs {} reference deltas", batch.len(), ref_deltas.len());
    let mut total: Option<Var> = None;
    let mut policy_deltas = Vec::with_capacity(batch.len());
    for (pair, &dref) in batch.iter().zip(ref_deltas) {
        pair.check()?;
        let w = policy.sequence_logprob_graph(g, vars, &pair.context, &pair.winner)?;
        let l = policy.sequence_logprob_graph(g, vars, &pair.context, &pair.loser)?;
        let delta = g.sub(w, l)?;
        policy_deltas.push(g.value(delta).item()?.as_f64());
        let anchor = g.constant(Tensor::scalar(T::lit(dref)));
        let m = g.sub(delta, anchor)?;
        let z = g.scale(m, T::lit(beta))?;
        let ls = g.log_sigmoid(z)?;
        total = Some(match total {
            Some(t) => g.add(t, ls)?,
            None => ls,
        });
    }
    let loss = g.scale(total.expect("non-empty batch"), -T::one() / T::lit(batch.len() as f64))?;
    Ok((loss, policy_deltas))
}

fn batch_stats(loss: f64, policy_deltas: &[f64], ref_deltas: &[f64]) -> DpoBatchStats {
    let n = policy_deltas.len() as f64;
    let delta_policy = policy_deltas.iter().sum::<f64>() / n;
    let delta_ref = ref_deltas.iter().sum::<f64>() / n;
    let wins = policy_deltas.iter().zip(ref_deltas).filter(|(p, r)| *p - *r > 0.0).count();
    DpoBatchStats { loss, delta_policy, delta_ref, margin: delta_policy - delta_ref, win_rate: wins as f64 / n }
}

/// Mean −ln σ(β(Δ_θ − Δ_ref)) over the batch, where Δ is the summed
/// log-probability difference between winner and loser. Value only; use
/// [`dpo_train`] for updates.
pub fn dpo_loss<T: Scalar>(
    policy: &Model<T>,
    reference: &Model<T>,
    batch: &[DpoPair],
    beta: f64,
) -> Result<(Tensor<T>, DpoBatchStats)> {
    ensure!(beta > 0.0, Config, "beta must be positive");
    batch.iter().try_for_each(DpoPair::check)?;
    let ref_deltas = batch.iter().map(|p| pair_delta(reference, p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DpoPair> = batch.iter().collect();
    let mut g = Graph::new();
    let vars = policy.bind(&mut g, false);
    let (loss, policy_deltas) = loss_graph(policy, &mut g, &vars, &refs, &ref_deltas, beta)?;
    let value = g.value(loss).clone();
    let stats = batch_stats(value.item()?.as_f64(), &policy_deltas, &ref_deltas);
    Ok((value, stats))
}

/// Loss, stats, and policy gradients for one micro-batch.
pub fn dpo_loss_and_grads<T: Scalar>(
    policy: &Model<T>,
    batch: &[&DpoPair],
    ref_deltas: &[f64],
    beta: f64,
) -> Result<(DpoBatchStats, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars = policy.bind(&mut g, true);
    let (loss, policy_deltas) = loss_graph(policy, &mut g, &vars, batch, ref_deltas, beta)?;
    g.backward(loss)?;
    let grads = vars.iter().map(|&v| g.grad(v).cloned().expect("leaf grad")).collect();
    let stats = batch_stats(g.value(loss).item()?.as_f64(), &policy_deltas, ref_deltas);
    Ok((stats, grads))
}

/// AdamW on the DPO loss with gradient accumulation. The reference is only
/// read: its log-probability differences are computed once up front.
/// Returns one metrics row per optimizer step, averaged over micro-batches.
pub fn dpo_train<T: Scalar>(
    policy: &mut Model<T>,
    reference: &Model<T>,
    pairs: &[DpoPair],
    cfg: &DpoConfig,
    optim: &OptimConfig,
    seed: u64,
) -> Result<Vec<StepMetrics>> {
    dpo_train_observed(policy, reference, pairs, cfg, optim, seed, no_hook)
}

/// [`dpo_train`] with a per-step hook.
pub fn dpo_train_observed<T: Scalar>(
    policy: &mut Model<T>,
    reference: &Model<T>,
    pairs: &[DpoPair],
    cfg: &DpoConfig,
    optim: &OptimConfig,
    seed: u64,
    mut hook: impl StepHook<T>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    optim.validate()?;
    ensure!(!pairs.is_empty(), Data, "preference dataset is empty");
    ensure!(policy.config() == reference.config(), Config, "policy and reference configurations differ");
    pairs.iter().try_for_each(DpoPair::check)?;
    let ref_deltas = pairs.iter().map(|p| pair_delta(reference, p)).collect::<Result<Vec<_>>>()?;

    let mut state = OptimState::new(policy.params());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut acc: Option<Vec<Tensor<T>>> = None;
        let mut stats = DpoBatchStats::default();
        for micro in 0..cfg.grad_accum {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (step * cfg.grad_accum + micro) as u64));
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..pairs.len())).collect();
            let batch: Vec<&DpoPair> = idx.iter().map(|&i| &pairs[i]).collect();
            let rd: Vec<f64> = idx.iter().map(|&i| ref_deltas[i]).collect();
            let (s, grads) = dpo_loss_and_grads(policy, &batch, &rd, cfg.beta)?;
            stats.loss += s.loss;
            stats.delta_policy += s.delta_policy;
            stats.delta_ref += s.delta_ref;
            stats.margin += s.margin;
            stats.win_rate += s.win_rate;
            acc = Some(match acc {
                None => grads,
                Some(mut a) => {
                    for (t, gr) in a.iter_mut().zip(&grads) {
                        for (x, y) in t.data_mut().iter_mut().zip(gr.data()) {
                            *x = *x + *y;
                        }
                    }
                    a
                }
            });
        }
        let k = cfg.grad_accum as f64;
        let scale = T::lit(1.0 / k);
        let mut grads = acc.expect("grad_accum >= 1");
        for t in &mut grads {
            t.data_mut().iter_mut().for_each(|x| *x = *x * scale);
        }
        let lr = lr_at(step, optim);
        adamw_step(policy.params_mut(), &grads, &mut state, optim, lr)?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite(format!("DPO loss at step {step}")));
        }
        let row = StepMetrics {
            step,
            lr,
            loss: stats.loss / k,
            margin: Some(stats.margin / k),
            win_rate: Some(stats.win_rate / k),
        };
        hook(&row, policy, &state)?;
        log.push(row);
    }
    Ok(log)
}
