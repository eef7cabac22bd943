//! Global-local pseudo-label denoising over span embeddings.
//!
//! A linear softmax probe trained on labeled source spans assigns soft pseudo
//! labels to target spans. Each epoch, every target pseudo label is nudged
//! toward the classes its embedding supports, judged two ways: against EMA
//! class prototypes (global) and against the labels of its nearest neighbors
//! (local), each compared to per-class dynamic thresholds.
//!
//! The [`synth`] module generates a benchmark with a controllable
//! source-to-target shift, and [`ablation`] compares denoising strategies.

pub mod ablation;
pub mod cli;
pub mod error;
pub mod eval;
pub mod global;
pub mod io;
pub mod local;
pub mod pipeline;
pub mod projection;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod types;
pub mod vecmath;

pub use error::{Error, Result};
pub use types::{Dataset, Embedding, LabelSpace, Record, SoftLabel, Split};
