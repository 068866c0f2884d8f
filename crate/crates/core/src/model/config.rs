use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Transformer shape plus the partitioned context window.
///
/// The context is split into three fixed position ranges: phoneme text,
/// acoustic prompt, and generated audio. Token ids live in one unified
/// vocabulary laid out as `[phonemes | audio | specials]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_phoneme: usize,
    pub vocab_audio: usize,
    pub vocab_special: usize,
    pub part_text: usize,
    pub part_prompt: usize,
    pub part_gen: usize,
    pub rope_base: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ffn: 256,
            vocab_phoneme: 32,
            vocab_audio: 64,
            vocab_special: 4,
            part_text: 32,
            part_prompt: 112,
            part_gen: 112,
            rope_base: 10_000.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("vocab_phoneme", self.vocab_phoneme),
            ("vocab_audio", self.vocab_audio),
            ("part_text", self.part_text),
            ("part_prompt", self.part_prompt),
        ];
        for (name, v) in counts {
            ensure!(v >= 1, Config, "{name} must be at least 1");
        }
        ensure!(
            self.vocab_special >= 4,
            Config,
            "need 4 special tokens (BOS, EOS, SEP, PAD), got {}",
            self.vocab_special
        );
        ensure!(
            self.d_model.is_multiple_of(self.n_heads),
            Config,
            "d_model {} not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure!(self.head_dim().is_multiple_of(2), Config, "head dim {} must be even for rotary embeddings", self.head_dim());
        ensure!(self.rope_base > 1.0 && self.rope_base.is_finite(), Config, "rope_base must exceed 1");
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_phoneme + self.vocab_audio + self.vocab_special
    }

    pub fn context_len(&self) -> usize {
        self.part_text + self.part_prompt + self.part_gen
    }

    pub fn vocab(&self) -> Vocab {
        Vocab { phoneme: self.vocab_phoneme, audio: self.vocab_audio, special: self.vocab_special }
    }

    /// Closed-form parameter count of the layout built by `Model::init`.
    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.d_model, self.d_ffn, self.vocab_size());
        let per_layer = 2 * d + 4 * d * d + 3 * d * f;
        v * d + self.n_layers * per_layer + d + d * v
    }
}

/// Unified vocabulary layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub phoneme: usize,
    pub audio: usize,
    pub special: usize,
}

/// Special-token offsets within the special range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Special {
    Bos = 0,
    Eos = 1,
    Sep = 2,
    Pad = 3,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.phoneme + self.audio + self.special
    }

    pub fn phoneme_id(&self, p: usize) -> u32 {
        debug_assert!(p < self.phoneme);
        p as u32
    }

    pub fn audio_id(&self, a: usize) -> u32 {
        debug_assert!(a < self.audio);
        (self.phoneme + a) as u32
    }

    pub fn special_id(&self, s: Special) -> u32 {
        (self.phoneme + self.audio + s as usize) as u32
    }

    pub fn eos(&self) -> u32 {
        self.special_id(Special::Eos)
    }

    pub fn is_phoneme(&self, id: u32) -> bool {
        (id as usize) < self.phoneme
    }

    /// Audio-local index of an audio token id.
    pub fn audio_index(&self, id: u32) -> Option<usize> {
        let id = id as usize;
        (id >= self.phoneme && id < self.phoneme + self.audio).then(|| id - self.phoneme)
    }

    pub fn is_special(&self, id: u32) -> bool {
        let id = id as usize;
        id >= self.phoneme + self.audio && id < self.size()
    }
}
