//! Minimal tensor engine: reverse-mode autodiff, the small CNN backbone,
//! Adam, the plateau schedule and checkpoint I/O.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, TensorEntry, FORMAT as CHECKPOINT_FORMAT};
pub use layers::{CnnConfig, Linear, SmallCnn};
pub use optim::{AdamState, PlateauSchedule, MIN_LR};
pub use params::{glorot, he, uniform, Bound, ParamId, Params};
pub use real::Real;
pub use tape::{RoiBins, Tape, Var};
pub use tensor::Tensor;

