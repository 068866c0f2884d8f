use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{lang_code, lang_from_code, World};
use crate::error::{ensure, Result};
use crate::metrics::{QualityMetrics, MIN_PESQ, MIN_SI_SDR_DB, MIN_STOI};
use crate::model::CODEC_TOKENS_PER_SEC;
use crate::seed::derive_seed;

/// Language index; serialized as its short code (`"pt"`, `"en"`, …).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lang(pub usize);

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&lang_code(self.0))
    }
}

impl Serialize for Lang {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&lang_code(self.0))
    }
}

impl<'de> Deserialize<'de> for Lang {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        lang_from_code(&code)
            .map(Lang)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown language code {code:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u64,
    pub lang: Lang,
    pub speaker_id: usize,
    pub phonemes: Vec<u32>,
    pub audio_tokens: Vec<u32>,
    pub duration_s: f64,
    pub f0_hz: f64,
    pub quality: QualityMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub utterances_per_speaker: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Share of rows generated with at least one failing quality metric.
    pub fail_fraction: f64,
    pub quality_seed: u64,
    /// Per-token probability that a recorded token is garbled into the
    /// adjacent code and cluster (see [`World::garble`]).
    pub token_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            utterances_per_speaker: 100,
            len_min: 4,
            len_max: 10,
            fail_fraction: 0.4,
            quality_seed: 0,
            token_noise: 0.15,
        }
    }
}

fn sample_quality(rng: &mut ChaCha8Rng, fail: bool) -> QualityMetrics {
    let mut q = QualityMetrics {
        si_sdr_db: rng.random_range(MIN_SI_SDR_DB..35.0),
        pesq: rng.random_range(MIN_PESQ..=4.5),
        stoi: rng.random_range(MIN_STOI..=1.0),
    };
    if fail {
        match rng.random_range(0..3) {
            0 => q.si_sdr_db = rng.random_range(-5.0..MIN_SI_SDR_DB),
            1 => q.pesq = rng.random_range(1.0..MIN_PESQ),
            _ => q.stoi = rng.random_range(0.4..MIN_STOI),
        }
    }
    q
}

/// Random phoneme strings per speaker. Utterance `k` of speaker `s` is in
/// language `(s + k) mod n_langs`, so every speaker covers every language
/// once `utterances_per_speaker ≥ n_langs`. Each speaker draws from its own
/// derived stream.
pub fn build_corpus(world: &World, cfg: &CorpusConfig) -> Result<Vec<Utterance>> {
    ensure!(cfg.utterances_per_speaker >= 1, Config, "utterances_per_speaker must be at least 1");
    ensure!(cfg.len_min >= 1 && cfg.len_min <= cfg.len_max, Config, "invalid length range");
    ensure!((0.0..=1.0).contains(&cfg.fail_fraction), Config, "fail_fraction must lie in [0, 1]");
    ensure!((0.0..=1.0).contains(&cfg.token_noise), Config, "token_noise must lie in [0, 1]");
    let wc = world.config();
    let mut out = Vec::with_capacity(wc.n_speakers * cfg.utterances_per_speaker);
    for spk in 0..wc.n_speakers {
        let mut text_rng = ChaCha8Rng::seed_from_u64(derive_seed(wc.seed, 1_000 + spk as u64));
        let mut q_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.quality_seed, spk as u64));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(wc.seed, 2_000 + spk as u64));
        for k in 0..cfg.utterances_per_speaker {
            let lang = Lang((spk + k) % wc.n_langs);
            let inventory = world.phonemes(lang)?;
            let len = text_rng.random_range(cfg.len_min..=cfg.len_max);
            let phonemes: Vec<u32> =
                (0..len).map(|_| inventory[text_rng.random_range(0..inventory.len())]).collect();
            let mut audio_tokens = world.encode(lang, spk, &phonemes)?;
            let body = audio_tokens.len() - 1;
            for t in &mut audio_tokens[..body] {
                if noise_rng.random::<f64>() < cfg.token_noise {
                    *t = world.garble(*t);
                }
            }
            let fail = q_rng.random::<f64>() < cfg.fail_fraction;
            out.push(Utterance {
                id: (spk * cfg.utterances_per_speaker + k) as u64,
                lang,
                speaker_id: spk,
                duration_s: audio_tokens.len() as f64 / CODEC_TOKENS_PER_SEC,
                f0_hz: world.speaker_f0(spk),
                quality: sample_quality(&mut q_rng, fail),
                phonemes,
                audio_tokens,
            });
        }
    }
    Ok(out)
}

/// Held-out speakers: the `ceil(test_fraction · n)` speakers with the
/// smallest seeded hash. Returns `(train, test)`, each sorted.
pub fn speaker_split(seed: u64, n_speakers: usize, test_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n_speakers).collect();
    order.sort_by_key(|&s| (derive_seed(seed ^ 0x5_9117, s as u64), s));
    let n_test = ((test_fraction * n_speakers as f64).ceil() as usize).min(n_speakers);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub fn write_corpus(rows: &[Utterance], w: &mut impl Write) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *w, row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(r: impl BufRead) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
