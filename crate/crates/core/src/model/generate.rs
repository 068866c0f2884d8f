use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::{sample_among, SamplerConfig};
use super::seq::{Segment, TokenSeq};
use super::transformer::Model;
use crate::error::{ensure, Result};
use crate::metrics;
use crate::scalar::Scalar;

/// Audio tokens produced per second of speech by the codec.
pub const CODEC_TOKENS_PER_SEC: f64 = 630.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfStats {
    pub gen_tokens_per_sec: f64,
    pub codec_tokens_per_sec: f64,
    pub rtf: f64,
    pub fallback_count: usize,
}

impl PerfStats {
    pub fn from_rates(gen_tokens_per_sec: f64, codec_tokens_per_sec: f64) -> Self {
        let rtf = metrics::rtf(gen_tokens_per_sec, codec_tokens_per_sec).unwrap_or(0.0);
        PerfStats { gen_tokens_per_sec, codec_tokens_per_sec, rtf, fallback_count: 0 }
    }
}

/// Autoregressive audio generation conditioned on phonemes and an acoustic
/// prompt. Emits audio tokens until EOS (included in the output) or until
/// the generation partition is full. Only audio ids and EOS are eligible.
pub fn generate<T: Scalar>(
    model: &Model<T>,
    phonemes: &[u32],
    prompt: &[u32],
    cfg: &SamplerConfig,
) -> Result<(TokenSeq, PerfStats)> {
    cfg.validate()?;
    let mc = model.config();
    let vocab = mc.vocab();
    ensure!(
        phonemes.len() < mc.part_text,
        Capacity,
        "{} phonemes do not fit the text partition of {}",
        phonemes.len(),
        mc.part_text
    );
    ensure!(
        prompt.len() < mc.part_prompt,
        Capacity,
        "prompt of {} does not fit the prompt partition of {}",
        prompt.len(),
        mc.part_prompt
    );
    let mut stats = PerfStats::from_rates(0.0, CODEC_TOKENS_PER_SEC);
    let mut out = TokenSeq::default();
    if mc.part_gen == 0 {
        return Ok((out, stats));
    }
    let budget = mc.part_gen - 1;
    let allowed: Vec<u32> = (0..mc.vocab_audio).map(|a| vocab.audio_id(a)).chain([vocab.eos()]).collect();
    let mut seq = TokenSeq::context(&vocab, phonemes, prompt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    while out.len() < budget {
        let logits = model.forward(&seq)?;
        let last = logits.row(logits.rows() - 1);
        let (tok, fell_back) = sample_among(last, &allowed, cfg, &out.ids, &mut rng);
        stats.fallback_count += usize::from(fell_back);
        out.push(tok, Segment::Gen);
        seq.push(tok, Segment::Gen);
        if tok == vocab.eos() {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > 0.0 && !out.is_empty() {
        let fallbacks = stats.fallback_count;
        stats = PerfStats::from_rates(out.len() as f64 / secs, CODEC_TOKENS_PER_SEC);
        stats.fallback_count = fallbacks;
    }
    Ok((out, stats))
}
