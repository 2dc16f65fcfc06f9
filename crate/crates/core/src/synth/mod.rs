//! Synthetic labeled artboards and their screenshots.

mod gen;
mod render;

pub use gen::{
    gen_dataset, generate_artboard, ground_truth_groups, DatasetEntry, DatasetIndex, GenConfig, GenSummary, PatternKind,
    ARTBOARD_WIDTH, DATASET_INDEX,
};
pub use render::{color_name, name_color, render};
