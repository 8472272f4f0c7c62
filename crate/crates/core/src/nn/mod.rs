//! Desk-scale differentiable backbone.

pub mod augment;
pub mod checkpoint;
mod matrix;
pub mod model;
pub mod optim;
pub mod tape;

pub use augment::{AugmentMode, AugmentSpec};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use matrix::Matrix;
pub use model::{Architecture, Dense, Mlp, ModelGrads, Role, TapedForward};
pub use optim::{OptimState, SgdConfig};
pub use tape::{softmax_in_place, softmax_rows, Tape, Var};
