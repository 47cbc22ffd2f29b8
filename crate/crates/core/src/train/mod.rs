//! Two-stage optimization: a static warm-up on the middle frame, then
//! joint training of fusion, HexPlane field, mixer and deformation network.

mod ablation;
mod checkpoint;
mod config;
mod densify;
mod eval;
mod model;
mod stages;

pub use ablation::{format_table, run_ablation, AblationRow, Variant};
pub use checkpoint::{
    load_model, model_from_tensors, model_tensors, read_checkpoint, write_checkpoint, NamedTensor,
};
pub use config::{lr_schedule, parse_kv_text, FeatureSource, PointInit, TrainConfig, TRAIN_KEYS};
pub use densify::{densify, densify_count, GradAccumulator};
pub use eval::{deformed_points, evaluate_holdout, render_model};
pub use model::{hexplane_config, FeatureBank, ForwardTrace, Model, ModelGrads, EXTRA_DIM};
pub use stages::{
    build_feature_bank, initial_points, standardize, train, train_dynamic_stage, train_static_stage, LogRow,
    TrainLog, TrainOutcome,
};
