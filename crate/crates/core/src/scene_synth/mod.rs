//! Synthetic deforming scenes, ground-truth multi-view renders and the
//! deterministic patch descriptor used as frame features.

mod dataset;
mod extract;
mod scene;

pub use dataset::{
    default_cameras, holdout_cameras, read_cameras_cfg, read_dataset, render_dataset,
    write_dataset, CameraRig, Dataset,
};
pub use extract::{extract_all_features, extract_features, MIN_FEATURE_DIM};
pub use scene::{generate_scene, MotionFamily, SceneSpec, SyntheticScene};
