//! Attention-based encoder-decoder translation with context gates.
//!
//! The decoder state update can be a plain `tanh` cell or a GRU, optionally
//! wrapped by a context gate that reweights the source context, the target
//! context, or interpolates between them. A scalar source gate and a fixed
//! `(a, b)` scaling probe are included for comparison. All gradients are
//! derived by hand and checked against finite differences.

pub mod attention;
pub mod cells;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use cells::{CellKind, GateConfig, GateInputs, GateValue, GateVariant, Granularity, ScaleConfig};
pub use corpus::{SequencePair, TokenId, ToyTaskSpec, Vocabulary};
pub use error::{Error, Result};
pub use model::{init_model, load_model, save_model, Model, ModelConfig};
