//! Decoder-only token generator over a partitioned context
//! (phonemes | acoustic prompt | generation), with rotary positions and
//! repetition-aware nucleus sampling.

mod checkpoint;
mod config;
mod generate;
mod rope;
mod sampler;
mod seq;
mod transformer;

pub use checkpoint::{load_model, save_model, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{ModelConfig, Special, Vocab};
pub use generate::{generate, PerfStats, CODEC_TOKENS_PER_SEC};
pub use rope::apply_rope;
pub use sampler::{sample_among, sample_next, SamplerConfig};
pub use seq::{Segment, TokenSeq};
pub use transformer::{param_layout, Model};
