//! Automatic preference data: sample several candidates per prompt, score
//! them with the world's oracles, drop weak ones, label strict Pareto
//! winners, and balance the pairs across language / duration / F0 buckets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{cosine_similarity, wer};
use crate::model::{generate, ModelConfig, SamplerConfig, Segment, TokenSeq, CODEC_TOKENS_PER_SEC};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, label_salt};
use crate::train::DpoPair;
use crate::world::{Lang, Utterance, World};
use crate::Model;

/// Candidates whose WER exceeds this are discarded.
pub const WER_MAX: f64 = 0.20;
/// Candidates whose speaker similarity falls below this are discarded.
pub const SIM_MIN: f64 = 0.5;
/// Candidates sampled per prompt.
pub const DEFAULT_CANDIDATES: usize = 5;

/// Text to speak in `lang`, voiced like the speaker of `prompt_tokens`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefPrompt {
    pub prompt_id: u64,
    pub lang: Lang,
    pub phonemes: Vec<u32>,
    /// Reference audio without its EOS.
    pub prompt_tokens: Vec<u32>,
    pub speaker_id: usize,
}

impl PrefPrompt {
    pub fn context(&self, cfg: &ModelConfig) -> TokenSeq {
        TokenSeq::context(&cfg.vocab(), &self.phonemes, &self.prompt_tokens)
    }
}

/// Draws `n` prompts from `utterances`: the text of one utterance is
/// translated into a random language and paired with a different
/// utterance of the same speaker as the acoustic prompt. Speakers with a
/// single utterance are skipped.
pub fn build_prompts(world: &World, utterances: &[Utterance], n: usize, seed: u64) -> Result<Vec<PrefPrompt>> {
    let mut by_speaker: BTreeMap<usize, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        by_speaker.entry(u.speaker_id).or_default().push(u);
    }
    let eligible: Vec<&Utterance> =
        utterances.iter().filter(|u| by_speaker[&u.speaker_id].len() >= 2).collect();
    ensure!(n == 0 || !eligible.is_empty(), Data, "no speaker has two utterances to form a prompt");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label_salt("prompts")));
    let mut out = Vec::with_capacity(n);
    for prompt_id in 0..n as u64 {
        let target = eligible[rng.random_range(0..eligible.len())];
        let same: Vec<&&Utterance> =
            by_speaker[&target.speaker_id].iter().filter(|u| u.id != target.id).collect();
        let context = same[rng.random_range(0..same.len())];
        let lang = Lang(rng.random_range(0..world.n_langs()));
        let prompt_tokens = match context.audio_tokens.split_last() {
            Some((_, body)) if !body.is_empty() => body.to_vec(),
            _ => context.audio_tokens.clone(),
        };
        out.push(PrefPrompt {
            prompt_id,
            lang,
            phonemes: world.translate_text(&target.phonemes, target.lang, lang)?,
            prompt_tokens,
            speaker_id: target.speaker_id,
        });
    }
    Ok(out)
}

/// `k` sampled continuations; candidate `i` uses sampler seed `seed + i`.
/// Duplicates are kept.
pub fn generate_candidates<T: Scalar>(
    model: &Model<T>,
    prompt: &PrefPrompt,
    k: usize,
    sampler: &SamplerConfig,
) -> Result<Vec<TokenSeq>> {
    ensure!(k >= 2, Config, "need at least 2 candidates per prompt, got {k}");
    (0..k as u64)
        .map(|i| {
            let cfg = sampler.with_seed(sampler.seed.wrapping_add(i));
            generate(model, &prompt.phonemes, &prompt.prompt_tokens, &cfg).map(|(seq, _)| seq)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub prompt_id: u64,
    pub lang: Lang,
    pub tokens: Vec<u32>,
    pub wer: f64,
    pub sim: f64,
    pub duration_s: f64,
    pub f0_hz: f64,
}

/// WER of the oracle transcript against the reference text, and cosine
/// similarity to the reference speaker's embedding. A candidate with no
/// audio tokens has no voice and scores similarity 0.
pub fn score_candidates(
    cands: &[TokenSeq],
    world: &World,
    prompt: &PrefPrompt,
) -> Result<Vec<CandidateRecord>> {
    let target = world.speaker_embedding(prompt.speaker_id);
    cands
        .iter()
        .map(|c| {
            let transcript = world.asr_oracle(prompt.lang, &c.ids)?;
            let sim = match world.speaker_embed(&c.ids) {
                Ok(e) => cosine_similarity(&e, target)?,
                Err(_) => 0.0,
            };
            Ok(CandidateRecord {
                prompt_id: prompt.prompt_id,
                lang: prompt.lang,
                tokens: c.ids.clone(),
                wer: wer(&prompt.phonemes, &transcript)?,
                sim,
                duration_s: c.len() as f64 / CODEC_TOKENS_PER_SEC,
                f0_hz: world.speaker_f0(prompt.speaker_id),
            })
        })
        .collect()
}

/// Discard conditions are strict, so a record exactly at a threshold stays.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn filter_retained(rec: &CandidateRecord, wer_max: f64, sim_min: f64) -> bool {
    !(rec.wer > wer_max) && !(rec.sim < sim_min)
}

/// `(winner, loser)` when one record is strictly better on both metrics.
pub fn label_pareto<'a>(
    a: &'a CandidateRecord,
    b: &'a CandidateRecord,
) -> Option<(&'a CandidateRecord, &'a CandidateRecord)> {
    if a.sim > b.sim && a.wer < b.wer {
        Some((a, b))
    } else if b.sim > a.sim && b.wer < a.wer {
        Some((b, a))
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub prompt_id: u64,
    pub lang: Lang,
    pub phonemes: Vec<u32>,
    pub prompt_tokens: Vec<u32>,
    pub winner: CandidateRecord,
    pub loser: CandidateRecord,
}

impl PreferencePair {
    pub fn to_dpo(&self, cfg: &ModelConfig) -> DpoPair {
        DpoPair {
            context: TokenSeq::context(&cfg.vocab(), &self.phonemes, &self.prompt_tokens),
            winner: TokenSeq::tagged(&self.winner.tokens, Segment::Gen),
            loser: TokenSeq::tagged(&self.loser.tokens, Segment::Gen),
        }
    }
}

/// Every unordered pair of retained candidates of a prompt that has a
/// strict Pareto label, in candidate order.
pub fn build_pairs(groups: &[(PrefPrompt, Vec<CandidateRecord>)]) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (prompt, records) in groups {
        let kept: Vec<&CandidateRecord> =
            records.iter().filter(|r| filter_retained(r, WER_MAX, SIM_MIN)).collect();
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                if let Some((w, l)) = label_pareto(kept[i], kept[j]) {
                    out.push(PreferencePair {
                        prompt_id: prompt.prompt_id,
                        lang: prompt.lang,
                        phonemes: prompt.phonemes.clone(),
                        prompt_tokens: prompt.prompt_tokens.clone(),
                        winner: w.clone(),
                        loser: l.clone(),
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tercile {
    Low,
    Mid,
    High,
}

impl fmt::Display for Tercile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tercile::Low => "low",
            Tercile::Mid => "mid",
            Tercile::High => "high",
        })
    }
}

/// Cut points at the empirical 1/3 and 2/3 quantiles of `values`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TercileEdges {
    pub lower: f64,
    pub upper: f64,
}

impl TercileEdges {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(TercileEdges { lower: v[n / 3], upper: v[2 * n / 3] })
    }

    pub fn bucket(&self, x: f64) -> Tercile {
        if x < self.lower {
            Tercile::Low
        } else if x < self.upper {
            Tercile::Mid
        } else {
            Tercile::High
        }
    }
}

/// Balancing key from the winner: language, duration tercile (short /
/// medium / long), and F0 tercile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey {
    pub lang: Lang,
    pub duration: Tercile,
    pub f0: Tercile,
}

/// Bucket of every pair, with tercile edges taken from the pairs' winners.
pub fn bucket_keys(pairs: &[PreferencePair]) -> Vec<BucketKey> {
    let durations: Vec<f64> = pairs.iter().map(|p| p.winner.duration_s).collect();
    let f0s: Vec<f64> = pairs.iter().map(|p| p.winner.f0_hz).collect();
    let (Some(de), Some(fe)) = (TercileEdges::from_values(&durations), TercileEdges::from_values(&f0s)) else {
        return Vec::new();
    };
    pairs
        .iter()
        .map(|p| BucketKey { lang: p.lang, duration: de.bucket(p.winner.duration_s), f0: fe.bucket(p.winner.f0_hz) })
        .collect()
}

/// Subsamples every non-empty bucket to the smallest bucket's size with a
/// seeded uniform draw. Survivors keep their input order.
pub fn balance_dataset(pairs: &[PreferencePair], seed: u64) -> Vec<PreferencePair> {
    let keys = bucket_keys(pairs);
    let mut buckets: BTreeMap<BucketKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.into_iter().enumerate() {
        buckets.entry(k).or_default().push(i);
    }
    let Some(target) = buckets.values().map(Vec::len).min() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label_salt("balance")));
    let mut keep = Vec::with_capacity(target * buckets.len());
    for members in buckets.values() {
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), target).into_iter().map(|j| members[j]).collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| pairs[i].clone()).collect()
}

/// Generates, scores, and labels candidates for every prompt, then
/// balances. Each prompt samples from its own derived seed.
pub fn build_preference_dataset<T: Scalar>(
    model: &Model<T>,
    world: &World,
    prompts: &[PrefPrompt],
    k: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<PrefDataset> {
    let mut groups = Vec::with_capacity(prompts.len());
    for p in prompts {
        let cfg = sampler.with_seed(derive_seed(seed, p.prompt_id));
        let cands = generate_candidates(model, p, k, &cfg)?;
        let records = score_candidates(&cands, world, p)?;
        groups.push((p.clone(), records));
    }
    let retained = groups.iter().flat_map(|(_, r)| r).filter(|r| filter_retained(r, WER_MAX, SIM_MIN)).count();
    let all_pairs = build_pairs(&groups);
    let pairs = balance_dataset(&all_pairs, seed);
    log::info!(
        "preferences: {} candidates, {} retained, {} labeled pairs, {} after balancing",
        groups.len() * k,
        retained,
        all_pairs.len(),
        pairs.len()
    );
    Ok(PrefDataset { candidates: groups.len() * k, retained, labeled: all_pairs.len(), pairs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefDataset {
    pub candidates: usize,
    pub retained: usize,
    pub labeled: usize,
    pub pairs: Vec<PreferencePair>,
}

fn ints(v: &[u32]) -> String {
    let body: Vec<String> = v.iter().map(u32::to_string).collect();
    format!("[{}]", body.join(","))
}

/// One JSON object per line, fields in a fixed order, floats with six
/// decimals.
pub fn write_pairs(pairs: &[PreferencePair], w: &mut impl Write) -> Result<()> {
    for p in pairs {
        writeln!(
            w,
            "{{\"prompt_id\":{},\"lang\":\"{}\",\"phonemes\":{},\"prompt_tokens\":{},\"winner\":{},\"loser\":{},\
             \"wer_w\":{:.6},\"wer_l\":{:.6},\"sim_w\":{:.6},\"sim_l\":{:.6},\"duration_w\":{:.6},\"f0_w\":{:.6}}}",
            p.prompt_id,
            p.lang,
            ints(&p.phonemes),
            ints(&p.prompt_tokens),
            ints(&p.winner.tokens),
            ints(&p.loser.tokens),
            p.winner.wer,
            p.loser.wer,
            p.winner.sim,
            p.loser.sim,
            p.winner.duration_s,
            p.winner.f0_hz,
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct PairRow {
    prompt_id: u64,
    lang: Lang,
    phonemes: Vec<u32>,
    prompt_tokens: Vec<u32>,
    winner: Vec<u32>,
    loser: Vec<u32>,
    wer_w: f64,
    wer_l: f64,
    sim_w: f64,
    sim_l: f64,
    duration_w: f64,
    f0_w: f64,
}

/// Reads pairs written by [`write_pairs`]. The file stores no loser
/// duration or F0: the duration is recomputed from its tokens and the F0,
/// a property of the prompt speaker, is shared with the winner.
pub fn read_pairs(r: impl BufRead) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PairRow = serde_json::from_str(&line)?;
        let record = |tokens: Vec<u32>, wer: f64, sim: f64, duration_s: f64| CandidateRecord {
            prompt_id: row.prompt_id,
            lang: row.lang,
            tokens,
            wer,
            sim,
            duration_s,
            f0_hz: row.f0_w,
        };
        let loser_duration = row.loser.len() as f64 / CODEC_TOKENS_PER_SEC;
        out.push(PreferencePair {
            winner: record(row.winner.clone(), row.wer_w, row.sim_w, row.duration_w),
            loser: record(row.loser.clone(), row.wer_l, row.sim_l, loser_duration),
            prompt_id: row.prompt_id,
            lang: row.lang,
            phonemes: row.phonemes,
            prompt_tokens: row.prompt_tokens,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(wer: f64, sim: f64) -> CandidateRecord {
        CandidateRecord { prompt_id: 0, lang: Lang(0), tokens: vec![4, 1], wer, sim, duration_s: 2.0 / 630.0, f0_hz: 120.0 }
    }

    #[test]
    fn retention_boundaries() {
        assert!(!filter_retained(&rec(0.25, 0.9), WER_MAX, SIM_MIN));
        assert!(!filter_retained(&rec(0.10, 0.45), WER_MAX, SIM_MIN));
        assert!(filter_retained(&rec(0.20, 0.50), WER_MAX, SIM_MIN));
    }

    #[test]
    fn pareto_examples() {
        let a = rec(0.05, 0.8);
        let b = rec(0.10, 0.7);
        assert_eq!(label_pareto(&a, &b).map(|(w, _)| w.wer), Some(0.05));
        assert_eq!(label_pareto(&b, &a).map(|(w, _)| w.wer), Some(0.05));
        assert!(label_pareto(&rec(0.05, 0.7), &rec(0.10, 0.8)).is_none());
        assert!(label_pareto(&rec(0.05, 0.8), &rec(0.05, 0.7)).is_none());
        assert!(label_pareto(&a, &a).is_none());
    }

    fn prompt() -> PrefPrompt {
        PrefPrompt { prompt_id: 3, lang: Lang(1), phonemes: vec![1, 2], prompt_tokens: vec![40], speaker_id: 0 }
    }

    #[test]
    fn total_order_gives_all_pairs() {
        let recs: Vec<_> = (0..5).map(|i| rec(0.04 * i as f64, 0.9 - 0.05 * i as f64)).collect();
        assert_eq!(build_pairs(&[(prompt(), recs)]).len(), 10);
        let same = vec![rec(0.1, 0.8); 5];
        assert!(build_pairs(&[(prompt(), same)]).is_empty());
        let one = vec![rec(0.1, 0.8), rec(0.9, 0.1)];
        assert!(build_pairs(&[(prompt(), one)]).is_empty());
    }

    fn pair(lang: usize, duration_s: f64, f0_hz: f64) -> PreferencePair {
        let mut w = rec(0.0, 1.0);
        w.duration_s = duration_s;
        w.f0_hz = f0_hz;
        w.lang = Lang(lang);
        let mut l = rec(0.1, 0.9);
        l.lang = Lang(lang);
        PreferencePair { prompt_id: 0, lang: Lang(lang), phonemes: vec![1], prompt_tokens: vec![], winner: w, loser: l }
    }

    #[test]
    fn balance_to_smallest_bucket() {
        let mut pairs: Vec<_> = (0..10).map(|_| pair(0, 1.0, 100.0)).collect();
        pairs.extend((0..4).map(|_| pair(1, 1.0, 100.0)));
        let out = balance_dataset(&pairs, 1);
        assert_eq!(out.iter().filter(|p| p.lang == Lang(0)).count(), 4);
        assert_eq!(out.iter().filter(|p| p.lang == Lang(1)).count(), 4);
        assert_eq!(balance_dataset(&pairs, 1), out);
        let single: Vec<_> = (0..6).map(|_| pair(2, 1.0, 100.0)).collect();
        assert_eq!(balance_dataset(&single, 9), single);
    }

    #[test]
    fn terciles_partition() {
        let e = TercileEdges::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let got: Vec<_> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|&x| e.bucket(x)).collect();
        use Tercile::*;
        assert_eq!(got, vec![Low, Low, Mid, Mid, High, High]);
    }

    #[test]
    fn jsonl_layout_and_round_trip() {
        let mut p = pair(1, 3.0 / 630.0, 151.25);
        p.winner.tokens = vec![40, 44, 1];
        p.loser.tokens = vec![41, 1];
        p.loser.f0_hz = 151.25;
        p.loser.duration_s = 2.0 / 630.0;
        let mut buf = Vec::new();
        write_pairs(std::slice::from_ref(&p), &mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line,
            "{\"prompt_id\":0,\"lang\":\"en\",\"phonemes\":[1],\"prompt_tokens\":[],\"winner\":[40,44,1],\"loser\":[41,1],\
             \"wer_w\":0.000000,\"wer_l\":0.100000,\"sim_w\":1.000000,\"sim_l\":0.900000,\"duration_w\":0.004762,\"f0_w\":151.250000}\n"
        );
        let back = read_pairs(buf.as_slice()).unwrap();
        assert_eq!(back[0].winner.tokens, p.winner.tokens);
        assert_eq!(back[0].loser, p.loser);
        let mut again = Vec::new();
        write_pairs(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }
}
