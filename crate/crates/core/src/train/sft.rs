use serde::{Deserialize, Serialize};

use super::{no_hook, supervised_loop, StepHook, StepMetrics, TrainExample};
use crate::error::{ensure, Result};
use crate::metrics::cosine_similarity;
use crate::model::{Model, Segment, TokenSeq};
use crate::optim::OptimConfig;
use crate::scalar::Scalar;
use crate::world::Utterance;

/// Default similarity gate for same-speaker context/target pairs.
pub const SFT_MIN_SIMILARITY: f64 = 0.6;

/// `(context audio, text, target audio)` from one speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloningTriplet {
    pub context_audio: TokenSeq,
    pub text: TokenSeq,
    pub target_audio: TokenSeq,
    pub speaker_id: usize,
    pub similarity: f64,
}

impl CloningTriplet {
    pub fn example(&self, cfg: &crate::model::ModelConfig) -> TrainExample {
        TrainExample::new(cfg, &self.text.ids, &self.context_audio.ids, &self.target_audio.ids)
    }
}

/// Every ordered same-speaker pair `(u, v)`, `u ≠ v`, whose embeddings have
/// cosine similarity at least `tau` becomes a triplet with `u` as context.
/// The context drops `u`'s trailing EOS.
pub fn build_sft_triplets<F>(corpus: &[Utterance], mut embed: F, tau: f64) -> Result<Vec<CloningTriplet>>
where
    F: FnMut(&Utterance) -> Result<Vec<f64>>,
{
    let embeddings = corpus.iter().map(&mut embed).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, u) in corpus.iter().enumerate() {
        for (j, v) in corpus.iter().enumerate() {
            if i == j || u.speaker_id != v.speaker_id {
                continue;
            }
            let similarity = cosine_similarity(&embeddings[i], &embeddings[j])?;
            if similarity < tau {
                continue;
            }
            let context = match u.audio_tokens.split_last() {
                Some((_, body)) if !body.is_empty() => body,
                _ => &u.audio_tokens[..],
            };
            out.push(CloningTriplet {
                context_audio: TokenSeq::tagged(context, Segment::Prompt),
                text: TokenSeq::tagged(&v.phonemes, Segment::Text),
                target_audio: TokenSeq::tagged(&v.audio_tokens, Segment::Gen),
                speaker_id: u.speaker_id,
                similarity,
            });
        }
    }
    Ok(out)
}

pub fn sft_examples<T: Scalar>(model: &Model<T>, triplets: &[CloningTriplet]) -> Result<Vec<TrainExample>> {
    let cfg = model.config();
    triplets
        .iter()
        .map(|t| {
            let ex = t.example(cfg);
            ex.context.concat(&ex.target)?.positions(cfg)?;
            Ok(ex)
        })
        .collect()
}

/// Cross-entropy on the target audio only, with the context audio in the
/// prompt segment. Oversized triplets are rejected before any update.
pub fn sft<T: Scalar>(
    model: &mut Model<T>,
    triplets: &[CloningTriplet],
    optim: &OptimConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<StepMetrics>> {
    sft_observed(model, triplets, optim, steps, batch_size, seed, no_hook)
}

/// [`sft`] with a per-step hook.
pub fn sft_observed<T: Scalar>(
    model: &mut Model<T>,
    triplets: &[CloningTriplet],
    optim: &OptimConfig,
    steps: usize,
    batch_size: usize,
    seed: u64,
    hook: impl StepHook<T>,
) -> Result<Vec<StepMetrics>> {
    ensure!(!triplets.is_empty(), Data, "no SFT triplets");
    let examples = sft_examples(model, triplets)?;
    supervised_loop(model, &examples, optim, steps, batch_size, seed, hook)
}
