use super::{no_hook, supervised_loop, StepHook, StepMetrics, TrainExample};
use crate::error::{ensure, Result};
use crate::model::Model;
use crate::optim::OptimConfig;
use crate::scalar::Scalar;
use crate::world::Utterance;

/// `phonemes → audio` examples with an empty acoustic prompt: the model sees
/// no speaker conditioning during pre-training.
pub fn pretrain_examples<T: Scalar>(model: &Model<T>, corpus: &[Utterance]) -> Vec<TrainExample> {
    corpus
        .iter()
        .map(|u| TrainExample::new(model.config(), &u.phonemes, &[], &u.audio_tokens))
        .collect()
}

/// Next-token cross-entropy on the audio segment. Returns the per-step
/// loss curve; `steps = 0` leaves the model untouched.
pub fn pretrain<T: Scalar>(
    model: &mut Model<T>,
    corpus: &[Utterance],
    optim: &OptimConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<StepMetrics>> {
    pretrain_observed(model, corpus, optim, steps, batch_size, seed, no_hook)
}

/// [`pretrain`] with a per-step hook.
pub fn pretrain_observed<T: Scalar>(
    model: &mut Model<T>,
    corpus: &[Utterance],
    optim: &OptimConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
    hook: impl StepHook<T>,
) -> Result<Vec<StepMetrics>> {
    ensure!(!corpus.is_empty(), Data, "pre-training corpus is empty");
    let examples = pretrain_examples(model, corpus);
    supervised_loop(model, &examples, optim, steps, batch_size, seed, hook)
}
