//! Closed synthetic world standing in for G2P, the speech codec, machine
//! translation, ASR and the speaker embedder.
//!
//! Audio token layout is `base_code · S + cluster`: the base code carries
//! *what* is said (one code per phoneme, injective within a language) and
//! the cluster carries *who* says it. Intelligibility is read off with
//! `div S` and speaker identity with `mod S`, so the two axes are orthogonal
//! and a generator can trade one against the other. That independence is
//! what makes Pareto preference labels informative.
//!
//! All tables are a pure function of [`WorldConfig`].

mod corpus;

pub use corpus::{
    build_corpus, read_corpus, speaker_split, write_corpus, CorpusConfig, Lang, Utterance,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::Vocab;
use crate::seed::derive_seed;

/// Marker emitted by the ASR oracle for tokens it cannot map to a phoneme.
pub const UNK: u32 = u32::MAX;

const LANG_CODES: [&str; 6] = ["pt", "en", "fr", "es", "it", "ro"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_langs: usize,
    pub phonemes_per_lang: usize,
    pub n_speakers: usize,
    pub clusters: usize,
    pub embed_dim: usize,
    pub vocab_phoneme: usize,
    pub vocab_audio: usize,
    pub vocab_special: usize,
    /// Fraction of base codes the toy codec reconstructs lossily.
    pub lossy_fraction: f64,
    /// Probability a lossy token keeps its speaker cluster.
    pub rho: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_langs: 6,
            phonemes_per_lang: 8,
            n_speakers: 20,
            clusters: 4,
            embed_dim: 16,
            vocab_phoneme: 32,
            vocab_audio: 64,
            vocab_special: 4,
            lossy_fraction: 0.1,
            rho: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    config: WorldConfig,
    vocab: Vocab,
    /// Base code of every phoneme symbol.
    code_of_phoneme: Vec<usize>,
    /// Per language: concept → phoneme.
    lang_text_map: Vec<Vec<u32>>,
    /// Per language: base code → phoneme, when defined.
    decode_table: Vec<Vec<Option<u32>>>,
    cluster_of_speaker: Vec<usize>,
    speaker_f0: Vec<f64>,
    /// Unit-norm embedding per cluster.
    embed_proj: Vec<Vec<f64>>,
    lossy_codes: Vec<bool>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let c = &config;
        ensure!(
            c.n_langs >= 1 && c.n_speakers >= 1 && c.clusters >= 1 && c.phonemes_per_lang >= 1,
            Config,
            "world counts must be at least 1"
        );
        ensure!(c.embed_dim >= 1, Config, "embed_dim must be at least 1");
        ensure!(
            c.vocab_audio.is_multiple_of(c.clusters),
            Config,
            "vocab_audio {} not divisible by {} clusters",
            c.vocab_audio,
            c.clusters
        );
        ensure!(
            c.vocab_audio >= c.phonemes_per_lang * c.clusters,
            Config,
            "vocab_audio {} cannot hold {} phonemes x {} clusters",
            c.vocab_audio,
            c.phonemes_per_lang,
            c.clusters
        );
        ensure!((0.0..=1.0).contains(&c.lossy_fraction) && (0.0..=1.0).contains(&c.rho), Config, "lossy_fraction and rho must lie in [0, 1]");
        let n_codes = c.vocab_audio / c.clusters;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

        let mut perm: Vec<usize> = (0..c.vocab_phoneme).collect();
        perm.shuffle(&mut rng);
        let mut code_of_phoneme = vec![0; c.vocab_phoneme];
        let mut phonemes_of_code: Vec<Vec<u32>> = vec![Vec::new(); n_codes];
        for (i, &p) in perm.iter().enumerate() {
            code_of_phoneme[p] = i % n_codes;
            phonemes_of_code[i % n_codes].push(p as u32);
        }
        let usable: Vec<usize> = (0..n_codes).filter(|&b| !phonemes_of_code[b].is_empty()).collect();
        ensure!(
            usable.len() >= c.phonemes_per_lang,
            Config,
            "only {} base codes carry phonemes; need {}",
            usable.len(),
            c.phonemes_per_lang
        );

        let mut lang_text_map = Vec::with_capacity(c.n_langs);
        let mut decode_table = Vec::with_capacity(c.n_langs);
        for _ in 0..c.n_langs {
            let mut codes = usable.clone();
            codes.shuffle(&mut rng);
            codes.truncate(c.phonemes_per_lang);
            let mut decode = vec![None; n_codes];
            let map: Vec<u32> = codes
                .iter()
                .map(|&b| {
                    let choices = &phonemes_of_code[b];
                    let p = choices[rng.random_range(0..choices.len())];
                    decode[b] = Some(p);
                    p
                })
                .collect();
            lang_text_map.push(map);
            decode_table.push(decode);
        }

        let mut spk: Vec<usize> = (0..c.n_speakers).collect();
        spk.shuffle(&mut rng);
        let mut cluster_of_speaker = vec![0; c.n_speakers];
        for (i, &s) in spk.iter().enumerate() {
            cluster_of_speaker[s] = i % c.clusters;
        }
        let speaker_f0 = (0..c.n_speakers).map(|_| rng.random_range(80.0..=300.0)).collect();

        let embed_proj = (0..c.clusters)
            .map(|_| {
                let row: Vec<f64> = (0..c.embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.into_iter().map(|x| x / n).collect()
            })
            .collect();

        let n_lossy = (c.lossy_fraction * n_codes as f64).round() as usize;
        let mut codes: Vec<usize> = (0..n_codes).collect();
        codes.shuffle(&mut rng);
        let mut lossy_codes = vec![false; n_codes];
        for &b in codes.iter().take(n_lossy) {
            lossy_codes[b] = true;
        }

        Ok(World {
            vocab: Vocab { phoneme: c.vocab_phoneme, audio: c.vocab_audio, special: c.vocab_special },
            config,
            code_of_phoneme,
            lang_text_map,
            decode_table,
            cluster_of_speaker,
            speaker_f0,
            embed_proj,
            lossy_codes,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn n_langs(&self) -> usize {
        self.config.n_langs
    }

    pub fn n_codes(&self) -> usize {
        self.config.vocab_audio / self.config.clusters
    }

    pub fn lang_code(&self, lang: Lang) -> String {
        lang_code(lang.0)
    }

    pub fn cluster_of(&self, speaker: usize) -> usize {
        self.cluster_of_speaker[speaker]
    }

    pub fn speaker_f0(&self, speaker: usize) -> f64 {
        self.speaker_f0[speaker]
    }

    /// Phoneme inventory of a language, indexed by concept.
    pub fn phonemes(&self, lang: Lang) -> Result<&[u32]> {
        self.check_lang(lang)?;
        Ok(&self.lang_text_map[lang.0])
    }

    pub fn is_lossy_code(&self, code: usize) -> bool {
        self.lossy_codes[code]
    }

    fn check_lang(&self, lang: Lang) -> Result<()> {
        ensure!(lang.0 < self.config.n_langs, Config, "unknown language index {}", lang.0);
        Ok(())
    }

    fn check_speaker(&self, speaker: usize) -> Result<()> {
        ensure!(speaker < self.config.n_speakers, Config, "unknown speaker {speaker}");
        Ok(())
    }

    /// Audio token ids for `phonemes` spoken by `speaker`, EOS appended.
    pub fn encode(&self, lang: Lang, speaker: usize, phonemes: &[u32]) -> Result<Vec<u32>> {
        self.check_lang(lang)?;
        self.check_speaker(speaker)?;
        let s = self.config.clusters;
        let cluster = self.cluster_of_speaker[speaker];
        let decode = &self.decode_table[lang.0];
        let mut out = Vec::with_capacity(phonemes.len() + 1);
        for &p in phonemes {
            let code = self
                .code_of_phoneme
                .get(p as usize)
                .copied()
                .filter(|&b| decode[b] == Some(p))
                .ok_or_else(|| Error::Data(format!("phoneme {p} not in language {}", self.lang_code(lang))))?;
            out.push(self.vocab.audio_id(code * s + cluster));
        }
        out.push(self.vocab.eos());
        Ok(out)
    }

    /// Reads phonemes back from audio tokens; undecodable tokens become
    /// [`UNK`] and EOS is dropped.
    pub fn asr_oracle(&self, lang: Lang, tokens: &[u32]) -> Result<Vec<u32>> {
        self.check_lang(lang)?;
        let decode = &self.decode_table[lang.0];
        let s = self.config.clusters;
        Ok(tokens
            .iter()
            .filter(|&&t| t != self.vocab.eos())
            .map(|&t| match self.vocab.audio_index(t) {
                Some(a) => decode[a / s].unwrap_or(UNK),
                None => UNK,
            })
            .collect())
    }

    /// Unit-norm embedding of one speaker cluster.
    pub fn cluster_embedding(&self, cluster: usize) -> &[f64] {
        &self.embed_proj[cluster]
    }

    pub fn speaker_embedding(&self, speaker: usize) -> &[f64] {
        self.cluster_embedding(self.cluster_of_speaker[speaker])
    }

    /// Cluster histogram of the audio tokens projected through the cluster
    /// embeddings and unit-normalized. Non-audio tokens are ignored.
    pub fn speaker_embed(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let s = self.config.clusters;
        let mut hist = vec![0.0; s];
        let mut count = 0usize;
        for a in tokens.iter().filter_map(|&t| self.vocab.audio_index(t)) {
            hist[a % s] += 1.0;
            count += 1;
        }
        ensure!(count > 0, Contract, "speaker embedding of a sequence without audio tokens");
        let mut emb = vec![0.0; self.config.embed_dim];
        for (c, &h) in hist.iter().enumerate() {
            let w = h / count as f64;
            for (e, &p) in emb.iter_mut().zip(&self.embed_proj[c]) {
                *e += w * p;
            }
        }
        let n = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
        ensure!(n > 0.0, Contract, "cluster mixture cancels to a zero embedding");
        Ok(emb.into_iter().map(|x| x / n).collect())
    }

    /// Lossy codec round trip: a token whose base code is in the lossy set
    /// moves to the next base code and keeps its cluster with probability
    /// `rho` (otherwise shifts to the next cluster). Per-position draws are
    /// seeded from the world seed, so the map is deterministic.
    pub fn codec_reconstruct(&self, tokens: &[u32]) -> Vec<u32> {
        let s = self.config.clusters;
        let n_codes = self.n_codes();
        tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| match self.vocab.audio_index(t) {
                Some(a) if self.lossy_codes[a / s] => {
                    let (code, mut cluster) = (a / s, a % s);
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed ^ 0xC0DEC, i as u64));
                    if rng.random::<f64>() >= self.config.rho {
                        cluster = (cluster + 1) % s;
                    }
                    self.vocab.audio_id(((code + 1) % n_codes) * s + cluster)
                }
                _ => t,
            })
            .collect()
    }

    /// The token a noisy recording produces instead of `token`: next base
    /// code, next cluster. Non-audio tokens pass through.
    pub fn garble(&self, token: u32) -> u32 {
        let s = self.config.clusters;
        match self.vocab.audio_index(token) {
            Some(a) => self.vocab.audio_id(((a / s + 1) % self.n_codes()) * s + (a % s + 1) % s),
            None => token,
        }
    }

    /// Maps each phoneme to its concept in `src` and back out in `tgt`.
    pub fn translate_text(&self, phonemes: &[u32], src: Lang, tgt: Lang) -> Result<Vec<u32>> {
        self.check_lang(src)?;
        self.check_lang(tgt)?;
        let src_map = &self.lang_text_map[src.0];
        let tgt_map = &self.lang_text_map[tgt.0];
        phonemes
            .iter()
            .map(|p| {
                src_map
                    .iter()
                    .position(|q| q == p)
                    .map(|concept| tgt_map[concept])
                    .ok_or_else(|| Error::Data(format!("phoneme {p} not in language {}", self.lang_code(src))))
            })
            .collect()
    }
}

pub fn lang_code(index: usize) -> String {
    LANG_CODES.get(index).map_or_else(|| format!("x{index}"), |c| c.to_string())
}

pub fn lang_from_code(code: &str) -> Option<usize> {
    LANG_CODES
        .iter()
        .position(|&c| c == code)
        .or_else(|| code.strip_prefix('x').and_then(|n| n.parse().ok()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine_similarity;

    fn world() -> World {
        World::new(WorldConfig { seed: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(world(), world());
        let other = World::new(WorldConfig { seed: 4, ..Default::default() }).unwrap();
        assert_ne!(world(), other);
    }

    #[test]
    fn six_languages_by_default() {
        let w = world();
        assert_eq!(w.n_langs(), 6);
        assert_eq!(lang_code(0), "pt");
        assert_eq!(lang_from_code("ro"), Some(5));
        assert_eq!(lang_from_code(&lang_code(9)), Some(9));
    }

    #[test]
    fn capacity_violation_rejected() {
        let cfg = WorldConfig { phonemes_per_lang: 17, ..Default::default() };
        assert!(matches!(World::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_cluster_embeds_identically() {
        let w = World::new(WorldConfig { clusters: 1, ..Default::default() }).unwrap();
        let p = w.phonemes(Lang(0)).unwrap().to_vec();
        let a = w.speaker_embed(&w.encode(Lang(0), 0, &p).unwrap()).unwrap();
        let b = w.speaker_embed(&w.encode(Lang(0), 7, &p[..3]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_round_trips_through_asr() {
        let w = world();
        for l in 0..w.n_langs() {
            let p = w.phonemes(Lang(l)).unwrap().to_vec();
            for spk in 0..w.config().n_speakers {
                let toks = w.encode(Lang(l), spk, &p).unwrap();
                assert_eq!(*toks.last().unwrap(), w.vocab().eos());
                assert_eq!(w.asr_oracle(Lang(l), &toks).unwrap(), p);
            }
        }
    }

    #[test]
    fn empty_phonemes_encode_to_eos() {
        let w = world();
        assert_eq!(w.encode(Lang(1), 2, &[]).unwrap(), vec![w.vocab().eos()]);
    }

    #[test]
    fn unknown_phoneme_is_data_error() {
        let w = world();
        let inventory = w.phonemes(Lang(0)).unwrap();
        let foreign = (0..32).find(|p| !inventory.contains(p)).unwrap();
        assert!(matches!(w.encode(Lang(0), 0, &[foreign]), Err(Error::Data(_))));
    }

    #[test]
    fn same_cluster_speakers_encode_identically() {
        let w = world();
        let (a, b) = (0..20)
            .flat_map(|a| (a + 1..20).map(move |b| (a, b)))
            .find(|&(a, b)| w.cluster_of(a) == w.cluster_of(b))
            .unwrap();
        let p = w.phonemes(Lang(2)).unwrap().to_vec();
        assert_eq!(w.encode(Lang(2), a, &p).unwrap(), w.encode(Lang(2), b, &p).unwrap());
    }

    #[test]
    fn unmapped_codes_decode_to_unk() {
        let w = world();
        let lang = Lang(0);
        let s = w.config().clusters;
        let unused = (0..w.n_codes()).find(|&b| w.decode_table[0][b].is_none()).unwrap();
        let tok = w.vocab().audio_id(unused * s);
        assert_eq!(w.asr_oracle(lang, &[tok]).unwrap(), vec![UNK]);
        assert_eq!(w.asr_oracle(lang, &[3]).unwrap(), vec![UNK]);
    }

    #[test]
    fn one_corrupted_token_changes_at_most_one_symbol() {
        let w = world();
        let lang = Lang(3);
        let p = w.phonemes(lang).unwrap().to_vec();
        let toks = w.encode(lang, 5, &p).unwrap();
        let clean = w.asr_oracle(lang, &toks).unwrap();
        for pos in 0..p.len() {
            for a in 0..w.config().vocab_audio {
                let mut bad = toks.clone();
                bad[pos] = w.vocab().audio_id(a);
                let out = w.asr_oracle(lang, &bad).unwrap();
                let changed = out.iter().zip(&clean).filter(|(x, y)| x != y).count();
                assert!(changed <= 1);
                assert_eq!(out.len(), clean.len());
            }
        }
    }

    #[test]
    fn embedding_matches_cluster_embedding() {
        let w = world();
        let p = w.phonemes(Lang(0)).unwrap().to_vec();
        for spk in 0..20 {
            let e = w.speaker_embed(&w.encode(Lang(0), spk, &p).unwrap()).unwrap();
            let c = cosine_similarity(&e, w.speaker_embedding(spk)).unwrap();
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn even_split_is_equidistant() {
        let w = world();
        let v = w.vocab();
        let toks = [v.audio_id(4), v.audio_id(5), v.audio_id(8), v.audio_id(9)];
        let e = w.speaker_embed(&toks).unwrap();
        let a = cosine_similarity(&e, w.cluster_embedding(0)).unwrap();
        let b = cosine_similarity(&e, w.cluster_embedding(1)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn embedding_is_permutation_invariant() {
        let w = world();
        let v = w.vocab();
        let toks = [v.audio_id(1), v.audio_id(6), v.audio_id(11), v.audio_id(2)];
        let mut rev = toks;
        rev.reverse();
        assert_eq!(w.speaker_embed(&toks).unwrap(), w.speaker_embed(&rev).unwrap());
        assert!(w.speaker_embed(&[v.eos()]).is_err());
    }

    #[test]
    fn lossless_codec_is_identity() {
        let w = World::new(WorldConfig { lossy_fraction: 0.0, rho: 1.0, ..Default::default() }).unwrap();
        let p = w.phonemes(Lang(0)).unwrap().to_vec();
        let toks = w.encode(Lang(0), 1, &p).unwrap();
        assert_eq!(w.codec_reconstruct(&toks), toks);
    }

    #[test]
    fn codec_is_deterministic_and_lossy() {
        let w = world();
        let s = w.config().clusters;
        let lossy = (0..w.n_codes()).find(|&b| w.is_lossy_code(b)).unwrap();
        let toks: Vec<u32> = (0..50).map(|_| w.vocab().audio_id(lossy * s)).collect();
        let a = w.codec_reconstruct(&toks);
        assert_eq!(a, w.codec_reconstruct(&toks));
        assert!(a.iter().all(|&t| (w.vocab().audio_index(t).unwrap() / s) == (lossy + 1) % w.n_codes()));
    }

    #[test]
    fn translation_is_a_bijection_family() {
        let w = world();
        for a in 0..6 {
            let x = w.phonemes(Lang(a)).unwrap().to_vec();
            assert_eq!(w.translate_text(&x, Lang(a), Lang(a)).unwrap(), x);
            for b in 0..6 {
                let y = w.translate_text(&x, Lang(a), Lang(b)).unwrap();
                assert_eq!(w.translate_text(&y, Lang(b), Lang(a)).unwrap(), x);
                for c in 0..6 {
                    let via = w.translate_text(&y, Lang(b), Lang(c)).unwrap();
                    assert_eq!(via, w.translate_text(&x, Lang(a), Lang(c)).unwrap());
                }
            }
        }
        assert!(matches!(w.translate_text(&[0], Lang(0), Lang(9)), Err(Error::Config(_))));
    }

    #[test]
    fn f0_in_range() {
        let w = world();
        assert!((0..20).all(|s| (80.0..=300.0).contains(&w.speaker_f0(s))));
    }
}
