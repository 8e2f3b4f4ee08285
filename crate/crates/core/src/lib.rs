//! Bidirectional stacked LSTM sequence tagger with gated shortcut
//! connections between layers.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod autodiff;
pub mod cells;
pub mod data;
pub mod features;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod sampling;
pub mod scalar;
pub mod stack;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use autodiff::{NodeId, ParamSet, Tape};
pub use cells::{CellRule, GateKind};
pub use data::{Sentence, TaggedCorpus};
pub use model::{ModelConfig, TaggerModel};
pub use scalar::Scalar;
pub use stack::{Combine, StackConfig, Topology};
pub use train::TrainConfig;

pub type Tagger = TaggerModel<f64>;
pub type Tagger32 = TaggerModel<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Vector64 = linalg::Vector<f64>;

/// The generator used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
