//! Three-stage training of a token-level text-to-speech language model
//! inside a deterministic synthetic world: next-token pre-training,
//! voice-cloning supervised fine-tuning, and Direct Preference Optimization
//! on automatically Pareto-labeled candidate pairs.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training runs,
//! `f64` for gradient checks); the aliases below pin the common choices.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prefs;
pub mod scalar;
pub mod seed;
pub mod train;
pub mod world;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, SamplerConfig, TokenSeq};
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
