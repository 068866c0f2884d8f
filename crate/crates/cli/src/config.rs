//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default; unknown or repeated keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use lxtts::model::ModelConfig;
use lxtts::optim::OptimConfig;
use lxtts::train::DpoConfig;
use lxtts::world::{CorpusConfig, WorldConfig};
use lxtts::SamplerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}")]
    Value { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Numeric precision of the training and inference passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub precision: Precision,
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub test_fraction: f64,
    /// Architecture; vocabulary sizes are taken from `world`.
    pub model: ModelConfig,
    /// Shared AdamW settings; each stage supplies its own peak and length.
    pub optim: OptimConfig,
    pub lr_min_ratio: f64,
    pub pretrain: StageConfig,
    pub sft: StageConfig,
    pub sft_tau: f64,
    pub prefs_prompts: usize,
    pub prefs_candidates: usize,
    pub dpo: DpoConfig,
    pub dpo_lr: f64,
    pub sampler: SamplerConfig,
    pub eval_per_cell: usize,
    /// Intermediate checkpoint interval in steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            world: WorldConfig::default(),
            corpus: CorpusConfig::default(),
            test_fraction: 0.2,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            lr_min_ratio: 0.1,
            pretrain: StageConfig { steps: 2000, batch_size: 8, lr: 3e-3 },
            sft: StageConfig { steps: 500, batch_size: 8, lr: 1e-3 },
            sft_tau: lxtts::train::SFT_MIN_SIMILARITY,
            prefs_prompts: 800,
            prefs_candidates: lxtts::prefs::DEFAULT_CANDIDATES,
            dpo: DpoConfig::default(),
            dpo_lr: 3e-5,
            sampler: SamplerConfig::default(),
            eval_per_cell: 8,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Option<T> {
    value.parse().ok()
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        const KEYS: &[&str] = &[$($key),*];

        fn set(&mut self, key: &str, value: &str) -> Option<Option<()>> {
            match key {
                $($key => Some(parse(value).map(|v| self.$($field).+ = v)),)*
                _ => None,
            }
        }

        /// Every key with its current value, in declaration order.
        pub fn entries(&self) -> Vec<(&'static str, String)> {
            vec![$(($key, self.$($field).+.to_string())),*]
        }
    };
}

impl RunConfig {
    keys! {
        "seed" => seed;
        "precision" => precision;
        "world.seed" => world.seed;
        "world.n_langs" => world.n_langs;
        "world.phonemes_per_lang" => world.phonemes_per_lang;
        "world.n_speakers" => world.n_speakers;
        "world.clusters" => world.clusters;
        "world.embed_dim" => world.embed_dim;
        "world.vocab_phoneme" => world.vocab_phoneme;
        "world.vocab_audio" => world.vocab_audio;
        "world.lossy_fraction" => world.lossy_fraction;
        "world.rho" => world.rho;
        "corpus.utterances_per_speaker" => corpus.utterances_per_speaker;
        "corpus.len_min" => corpus.len_min;
        "corpus.len_max" => corpus.len_max;
        "corpus.fail_fraction" => corpus.fail_fraction;
        "corpus.quality_seed" => corpus.quality_seed;
        "corpus.token_noise" => corpus.token_noise;
        "split.test_fraction" => test_fraction;
        "model.n_layers" => model.n_layers;
        "model.d_model" => model.d_model;
        "model.n_heads" => model.n_heads;
        "model.d_ffn" => model.d_ffn;
        "model.part_text" => model.part_text;
        "model.part_prompt" => model.part_prompt;
        "model.part_gen" => model.part_gen;
        "model.rope_base" => model.rope_base;
        "optim.beta1" => optim.beta1;
        "optim.beta2" => optim.beta2;
        "optim.weight_decay" => optim.weight_decay;
        "optim.eps" => optim.eps;
        "optim.warmup_steps" => optim.warmup_steps;
        "optim.lr_min_ratio" => lr_min_ratio;
        "pretrain.steps" => pretrain.steps;
        "pretrain.batch_size" => pretrain.batch_size;
        "pretrain.lr" => pretrain.lr;
        "sft.steps" => sft.steps;
        "sft.batch_size" => sft.batch_size;
        "sft.lr" => sft.lr;
        "sft.tau" => sft_tau;
        "prefs.prompts" => prefs_prompts;
        "prefs.candidates" => prefs_candidates;
        "dpo.steps" => dpo.steps;
        "dpo.batch_size" => dpo.batch_size;
        "dpo.grad_accum" => dpo.grad_accum;
        "dpo.beta" => dpo.beta;
        "dpo.lr" => dpo_lr;
        "sampler.temperature" => sampler.temperature;
        "sampler.top_p" => sampler.top_p;
        "sampler.rep_window" => sampler.rep_window;
        "sampler.rep_max" => sampler.rep_max;
        "eval.per_cell" => eval_per_cell;
        "checkpoint.every" => checkpoint_every;
    }

    pub fn keys() -> &'static [&'static str] {
        Self::KEYS
    }

    /// Applies the settings in `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.to_string() });
            }
            match cfg.set(key, value) {
                None => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
                Some(None) => {
                    return Err(ConfigError::Value { line, key: key.to_string(), value: value.to_string() })
                }
                Some(Some(())) => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: lxtts::Error| ConfigError::Invalid(e.to_string());
        lxtts::world::World::new(self.world.clone()).map_err(invalid)?;
        self.model_config().validate().map_err(invalid)?;
        self.stage_optim(self.pretrain.steps, self.pretrain.lr).validate().map_err(invalid)?;
        self.dpo.validate().map_err(invalid)?;
        self.sampler.validate().map_err(invalid)?;
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("split.test_fraction must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return bad("optim.lr_min_ratio must lie in [0, 1]");
        }
        if self.pretrain.batch_size == 0 || self.sft.batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.prefs_candidates < 2 {
            return bad("prefs.candidates must be at least 2");
        }
        if self.eval_per_cell == 0 {
            return bad("eval.per_cell must be at least 1");
        }
        if self.corpus.len_max + 1 > self.model.part_text || self.corpus.len_max + 1 > self.model.part_prompt {
            return bad("corpus.len_max does not fit the text or prompt partition");
        }
        Ok(())
    }

    /// Architecture with the vocabulary taken from the world.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_phoneme: self.world.vocab_phoneme,
            vocab_audio: self.world.vocab_audio,
            vocab_special: self.world.vocab_special,
            ..self.model.clone()
        }
    }

    /// Optimizer for one stage: warmup-cosine from `lr` to `lr · lr_min_ratio`.
    pub fn stage_optim(&self, steps: usize, lr: f64) -> OptimConfig {
        OptimConfig {
            lr_peak: lr,
            lr_min: lr * self.lr_min_ratio,
            total_steps: steps,
            warmup_steps: self.optim.warmup_steps.min(steps),
            ..self.optim.clone()
        }
    }

    /// Canonical text form; parsing it back yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# lxtts run configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn values_and_comments() {
        let cfg = RunConfig::parse("seed = 7  # master\ndpo.beta=0.5\nprecision = f64\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dpo.beta, 0.5);
        assert_eq!(cfg.precision, Precision::F64);
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = RunConfig { dpo_lr: 1.25e-5, ..RunConfig::default() };
        cfg.world.rho = 0.85;
        cfg.checkpoint_every = 100;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.entries().len(), RunConfig::keys().len());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("nonsense.key = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(RunConfig::parse("seed = minus one"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("seed"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("dpo.beta = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("precision = f16"), Err(ConfigError::Value { .. })));
    }
}
