//! Synthetic building scenes standing in for real imagery.

pub mod dataset;
pub mod geometry;
pub mod scene;

pub use dataset::{generate_dataset, read_dataset, split_dataset, write_dataset, DatasetConfig, TRAIN_VAL_TEST};
pub use geometry::{Building, Camera};
pub use scene::{
    generate_scene, project_footprint_mask, visibility_filter, SceneConfig, SceneSpec, Visibility,
    DEFAULT_VISIBILITY_THRESHOLD,
};
