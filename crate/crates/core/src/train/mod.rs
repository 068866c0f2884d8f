//! The three training stages: next-token pre-training, voice-cloning SFT,
//! and DPO against a frozen reference.

mod dpo;
mod metrics_log;
mod pretrain;
mod sft;

pub use dpo::{
    dpo_loss, dpo_loss_and_grads, dpo_loss_from_margin, dpo_train, dpo_train_observed, DpoBatchStats, DpoConfig, DpoPair,
};
pub use metrics_log::{write_metrics_csv, StepMetrics};
pub use pretrain::{pretrain, pretrain_examples, pretrain_observed};
pub use sft::{build_sft_triplets, sft, sft_examples, sft_observed, CloningTriplet, SFT_MIN_SIMILARITY};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::model::{Model, Segment, Special, TokenSeq};
use crate::optim::{adamw_step, lr_at, OptimConfig, OptimState};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// One teacher-forced sequence: the loss covers `target` only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub context: TokenSeq,
    pub target: TokenSeq,
    /// PAD tokens appended after the target; never scored.
    pub padding: usize,
}

impl TrainExample {
    /// `phonemes → audio` with the given acoustic prompt. `audio` should
    /// end with EOS.
    pub fn new(model: &crate::model::ModelConfig, phonemes: &[u32], prompt: &[u32], audio: &[u32]) -> Self {
        TrainExample {
            context: TokenSeq::context(&model.vocab(), phonemes, prompt),
            target: TokenSeq::tagged(audio, Segment::Gen),
            padding: 0,
        }
    }

    pub fn with_padding(mut self, n: usize) -> Self {
        self.padding = n;
        self
    }

    fn full(&self, model: &crate::model::ModelConfig) -> Result<TokenSeq> {
        let mut seq = self.context.concat(&self.target)?;
        let pad = model.vocab().special_id(Special::Pad);
        for _ in 0..self.padding {
            seq.push(pad, Segment::Pad);
        }
        Ok(seq)
    }
}

/// Σ log p(target | context) of one example, recorded on `g`.
pub fn example_logprob<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    vars: &[Var],
    ex: &TrainExample,
) -> Result<Var> {
    ensure!(!ex.target.is_empty(), Contract, "example with empty target");
    let full = ex.full(model.config())?;
    let logits = model.forward_graph(g, vars, &full)?;
    let start = ex.context.len() - 1;
    let picks: Vec<(usize, usize)> =
        ex.target.ids.iter().enumerate().map(|(i, &t)| (start + i, t as usize)).collect();
    g.log_prob_sum(logits, &picks)
}

/// Token-averaged cross-entropy over a batch of examples.
pub fn batch_nll<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    vars: &[Var],
    batch: &[&TrainExample],
) -> Result<Var> {
    ensure!(!batch.is_empty(), Data, "empty batch");
    let mut total: Option<Var> = None;
    let mut tokens = 0usize;
    for ex in batch {
        let lp = example_logprob(model, g, vars, ex)?;
        tokens += ex.target.len();
        total = Some(match total {
            Some(t) => g.add(t, lp)?,
            None => lp,
        });
    }
    let total = total.expect("non-empty batch");
    g.scale(total, -T::one() / T::lit(tokens as f64))
}

/// Cross-entropy of a batch without recording gradients.
pub fn eval_nll<T: Scalar>(model: &Model<T>, batch: &[&TrainExample]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let loss = batch_nll(model, &mut g, &vars, batch)?;
    Ok(g.value(loss).item()?.as_f64())
}

/// Loss value and parameter gradients of one batch.
pub fn loss_and_grads<T: Scalar>(model: &Model<T>, batch: &[&TrainExample]) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let loss = batch_nll(model, &mut g, &vars, batch)?;
    g.backward(loss)?;
    let grads = vars.iter().map(|&v| g.grad(v).cloned().expect("leaf grad")).collect();
    Ok((g.value(loss).item()?.as_f64(), grads))
}

/// Called after every optimizer step with that step's metrics, the updated
/// model, and the optimizer moments. An error aborts training.
pub trait StepHook<T>: FnMut(&StepMetrics, &Model<T>, &OptimState<T>) -> Result<()> {}

impl<T, F: FnMut(&StepMetrics, &Model<T>, &OptimState<T>) -> Result<()>> StepHook<T> for F {}

/// A hook that does nothing.
pub fn no_hook<T>(_: &StepMetrics, _: &Model<T>, _: &OptimState<T>) -> Result<()> {
    Ok(())
}

/// Shared supervised loop: uniform seeded minibatches, AdamW on the
/// warmup-cosine schedule. Returns the per-step metrics.
pub(crate) fn supervised_loop<T: Scalar>(
    model: &mut Model<T>,
    examples: &[TrainExample],
    optim: &OptimConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
    mut hook: impl StepHook<T>,
) -> Result<Vec<StepMetrics>> {
    ensure!(batch_size >= 1, Config, "batch_size must be at least 1");
    optim.validate()?;
    if steps == 0 {
        return Ok(Vec::new());
    }
    ensure!(!examples.is_empty(), Data, "no training examples");
    let mut state = OptimState::new(model.params());
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, step as u64));
        let batch: Vec<&TrainExample> =
            (0..batch_size).map(|_| &examples[rng.random_range(0..examples.len())]).collect();
        let (loss, grads) = loss_and_grads(model, &batch)?;
        let lr = lr_at(step, optim);
        adamw_step(model.params_mut(), &grads, &mut state, optim, lr)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        let row = StepMetrics { step, lr, loss, margin: None, win_rate: None };
        hook(&row, model, &state)?;
        log.push(row);
    }
    Ok(log)
}
