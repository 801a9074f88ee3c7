//! Attention-guided unpaired image-to-image translation.
//!
//! Two generators each emit a single-channel attention mask and a
//! three-channel content image; the translated image blends the content into
//! the input only where the mask is on. Vanilla and attention-guided
//! discriminators, cycle/pixel/total-variation losses, a replay pool and a
//! curriculum-weighted alternating trainer complete the system. Everything,
//! including the convolution engine and backpropagation, runs on the CPU.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod ablation;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pool;
pub mod real;
pub mod seed;
pub mod tensor;
pub mod trainer;
pub mod types;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
pub use types::{AttentionMask, ContentMask, Domain, ImageBatch, MaskPair};
