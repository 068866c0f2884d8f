use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Special, Vocab};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Segment {
    Text,
    Prompt,
    Gen,
    Pad,
}

/// Token ids with a segment tag per token.
///
/// Segments must appear in the order `Text* Prompt* Gen* Pad*`. Each
/// segment owns a fixed range of rotary positions: text starts at 0, the
/// prompt at `part_text`, generation at `part_text + part_prompt`. Unused
/// slots of a segment are reserved positions, not materialized PAD tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub tags: Vec<Segment>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, tags: Vec<Segment>) -> Result<Self> {
        ensure!(ids.len() == tags.len(), Dimension, "{} ids vs {} tags", ids.len(), tags.len());
        let seq = TokenSeq { ids, tags };
        ensure!(
            seq.tags.windows(2).all(|w| w[0] <= w[1]),
            Contract,
            "segments out of order"
        );
        Ok(seq)
    }

    /// A run of tokens all carrying one tag.
    pub fn tagged(ids: &[u32], tag: Segment) -> Self {
        TokenSeq { ids: ids.to_vec(), tags: vec![tag; ids.len()] }
    }

    /// `[BOS phonemes…] [SEP prompt…] [SEP]`: everything the generator
    /// conditions on before emitting its first audio token.
    pub fn context(vocab: &Vocab, phonemes: &[u32], prompt: &[u32]) -> Self {
        let mut ids = Vec::with_capacity(phonemes.len() + prompt.len() + 3);
        let mut tags = Vec::with_capacity(ids.capacity());
        ids.push(vocab.special_id(Special::Bos));
        tags.push(Segment::Text);
        ids.extend_from_slice(phonemes);
        tags.extend(std::iter::repeat_n(Segment::Text, phonemes.len()));
        ids.push(vocab.special_id(Special::Sep));
        tags.push(Segment::Prompt);
        ids.extend_from_slice(prompt);
        tags.extend(std::iter::repeat_n(Segment::Prompt, prompt.len()));
        ids.push(vocab.special_id(Special::Sep));
        tags.push(Segment::Gen);
        TokenSeq { ids, tags }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u32, tag: Segment) {
        self.ids.push(id);
        self.tags.push(tag);
    }

    pub fn concat(&self, other: &TokenSeq) -> Result<TokenSeq> {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        let mut tags = self.tags.clone();
        tags.extend_from_slice(&other.tags);
        TokenSeq::new(ids, tags)
    }

    pub fn count(&self, tag: Segment) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Rotary positions; fails when a segment overflows its partition.
    pub fn positions(&self, cfg: &ModelConfig) -> Result<Vec<usize>> {
        let text = self.count(Segment::Text);
        let prompt = self.count(Segment::Prompt);
        let gen = self.count(Segment::Gen) + self.count(Segment::Pad);
        ensure!(text <= cfg.part_text, Capacity, "text segment {text} exceeds {}", cfg.part_text);
        ensure!(prompt <= cfg.part_prompt, Capacity, "prompt segment {prompt} exceeds {}", cfg.part_prompt);
        ensure!(gen <= cfg.part_gen, Capacity, "generation segment {gen} exceeds {}", cfg.part_gen);
        let mut seen = [0usize; 3];
        let bases = [0, cfg.part_text, cfg.part_text + cfg.part_prompt];
        Ok(self
            .tags
            .iter()
            .map(|tag| {
                let slot = match tag {
                    Segment::Text => 0,
                    Segment::Prompt => 1,
                    Segment::Gen | Segment::Pad => 2,
                };
                seen[slot] += 1;
                bases[slot] + seen[slot] - 1
            })
            .collect())
    }

    pub fn validate_ids(&self, vocab: &Vocab) -> Result<()> {
        let size = vocab.size() as u32;
        for &id in &self.ids {
            ensure!(id < size, Index, "token id {id} outside vocabulary of {size}");
        }
        Ok(())
    }
}
