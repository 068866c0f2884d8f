//! Held-out cross-lingual evaluation: one cell per (reference language,
//! generated language) with WER, Sim-O, and Sim-E aggregated as mean ± 95% CI.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{cosine_similarity, mean_ci95, wer, CiSummary};
use crate::model::{generate, SamplerConfig};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::world::{Lang, Utterance, World};
use crate::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub ref_lang: Lang,
    pub gen_lang: Lang,
    pub n: usize,
    pub wer: Option<CiSummary>,
    pub sim_o: Option<CiSummary>,
    pub sim_e: Option<CiSummary>,
}

/// Row-major `n_langs × n_langs` cells; row = reference language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub n_langs: usize,
    pub cells: Vec<EvalCell>,
}

impl EvalMatrix {
    pub fn cell(&self, ref_lang: Lang, gen_lang: Lang) -> &EvalCell {
        &self.cells[ref_lang.0 * self.n_langs + gen_lang.0]
    }

    pub fn row(&self, ref_lang: Lang) -> &[EvalCell] {
        &self.cells[ref_lang.0 * self.n_langs..(ref_lang.0 + 1) * self.n_langs]
    }

    /// Unweighted mean of a metric over the cells of one row that have data.
    pub fn row_mean(&self, ref_lang: Lang, metric: impl Fn(&EvalCell) -> Option<&CiSummary>) -> Option<f64> {
        let vals: Vec<f64> = self.row(ref_lang).iter().filter_map(|c| metric(c).map(|s| s.mean)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Unweighted mean over every populated cell.
    pub fn overall_mean(&self, metric: impl Fn(&EvalCell) -> Option<&CiSummary>) -> Option<f64> {
        let vals: Vec<f64> = self.cells.iter().filter_map(|c| metric(c).map(|s| s.mean)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Per-sample scores of one generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSample {
    pub wer: f64,
    pub sim_o: f64,
    pub sim_e: f64,
}

/// Scores `tokens` as a rendition of `text` in `lang` in the voice of
/// `reference` (its audio tokens). An output with no audio tokens scores
/// similarity 0.
pub fn score_sample(world: &World, lang: Lang, text: &[u32], tokens: &[u32], reference: &[u32]) -> Result<EvalSample> {
    let transcript = world.asr_oracle(lang, tokens)?;
    let wer = wer(text, &transcript)?;
    let (sim_o, sim_e) = match world.speaker_embed(tokens) {
        Ok(e) => {
            let orig = world.speaker_embed(reference)?;
            let recon = world.speaker_embed(&world.codec_reconstruct(reference))?;
            (cosine_similarity(&e, &orig)?, cosine_similarity(&e, &recon)?)
        }
        Err(_) => (0.0, 0.0),
    };
    Ok(EvalSample { wer, sim_o, sim_e })
}

/// Generator under evaluation: text, acoustic prompt, seed → tokens.
pub trait Synthesizer {
    fn synthesize(&self, phonemes: &[u32], prompt: &[u32], seed: u64) -> Result<Vec<u32>>;
}

/// A trained model sampled with a fixed sampler configuration.
pub struct ModelSynth<'a, T> {
    pub model: &'a Model<T>,
    pub sampler: SamplerConfig,
}

impl<T: Scalar> Synthesizer for ModelSynth<'_, T> {
    fn synthesize(&self, phonemes: &[u32], prompt: &[u32], seed: u64) -> Result<Vec<u32>> {
        Ok(generate(self.model, phonemes, prompt, &self.sampler.with_seed(seed))?.0.ids)
    }
}

/// Every cell uses reference utterances of its row language, at most
/// `per_cell` of them. The text is the next test utterance of the same
/// speaker, translated into the column language. Seeds depend only on
/// the cell and sample index, so two models evaluated with the same seed
/// see the same random numbers.
pub fn eval_with(
    synth: &impl Synthesizer,
    world: &World,
    testset: &[Utterance],
    train_speakers: &[usize],
    per_cell: usize,
    seed: u64,
) -> Result<EvalMatrix> {
    let train: BTreeSet<usize> = train_speakers.iter().copied().collect();
    ensure!(
        testset.iter().all(|u| !train.contains(&u.speaker_id)),
        Contract,
        "test set shares speakers with the training split"
    );
    ensure!(per_cell >= 1, Config, "per_cell must be at least 1");
    let mut by_speaker: BTreeMap<usize, Vec<&Utterance>> = BTreeMap::new();
    for u in testset {
        by_speaker.entry(u.speaker_id).or_default().push(u);
    }
    let n_langs = world.n_langs();
    let mut cells = Vec::with_capacity(n_langs * n_langs);
    for r in 0..n_langs {
        let refs: Vec<&Utterance> = testset.iter().filter(|u| u.lang == Lang(r)).take(per_cell).collect();
        for g in 0..n_langs {
            let mut samples = Vec::with_capacity(refs.len());
            for (i, reference) in refs.iter().enumerate() {
                let own = &by_speaker[&reference.speaker_id];
                let pos = own.iter().position(|u| u.id == reference.id).expect("member of its speaker group");
                let source = own[(pos + 1) % own.len()];
                let text = world.translate_text(&source.phonemes, source.lang, Lang(g))?;
                let prompt = match reference.audio_tokens.split_last() {
                    Some((_, body)) if !body.is_empty() => body,
                    _ => &reference.audio_tokens[..],
                };
                let cell_seed = derive_seed(seed, ((r * n_langs + g) * per_cell + i) as u64);
                let tokens = synth.synthesize(&text, prompt, cell_seed)?;
                samples.push(score_sample(world, Lang(g), &text, &tokens, prompt)?);
            }
            let summary = |f: fn(&EvalSample) -> f64| -> Result<Option<CiSummary>> {
                if samples.is_empty() {
                    return Ok(None);
                }
                let v: Vec<f64> = samples.iter().map(f).collect();
                mean_ci95(&v).map(Some)
            };
            cells.push(EvalCell {
                ref_lang: Lang(r),
                gen_lang: Lang(g),
                n: samples.len(),
                wer: summary(|s| s.wer)?,
                sim_o: summary(|s| s.sim_o)?,
                sim_e: summary(|s| s.sim_e)?,
            });
        }
    }
    Ok(EvalMatrix { n_langs, cells })
}

pub fn eval_model<T: Scalar>(
    model: &Model<T>,
    world: &World,
    testset: &[Utterance],
    train_speakers: &[usize],
    sampler: &SamplerConfig,
    per_cell: usize,
) -> Result<EvalMatrix> {
    let synth = ModelSynth { model, sampler: sampler.clone() };
    eval_with(&synth, world, testset, train_speakers, per_cell, sampler.seed)
}
