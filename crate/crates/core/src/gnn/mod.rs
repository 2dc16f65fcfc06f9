//! Graph attention model, GCN baseline, training and evaluation.

mod gat;
pub mod gradcheck;
mod metrics;
mod model;
mod sample;
mod split;
mod train;

pub use gat::{ArcIndex, Combine, GatLayer, GatOutput, GcnLayer, LEAKY_SLOPE};
pub use metrics::{Confusion, Metrics};
pub use model::{positive_probs, ForwardOutput, GnnKind, Model, ModelConfig};
pub use sample::{prepare_artboard, GraphSample, InputConfig, VisualInput};
pub use split::{split_by_artboard, Split};
pub use train::{
    evaluate, history_csv, loss_and_probs, model_from_checkpoint, to_checkpoint, train, validate, EpochRecord,
    TrainConfig, TrainOutcome, HISTORY_HEADER,
};
