//! Learnable Gaussian set, cameras, datasets and their on-disk formats.

mod camera;
mod dataset;
mod image;
mod model;
pub mod ply;
pub mod synthetic;

pub use camera::Camera;
pub use dataset::Dataset;
pub use image::Image;
pub use model::{sigmoid, logit, GaussianModel, SH_C0};
pub use synthetic::{make_synthetic_scene, noisy_copy, perturbed_init, ParamNoise, SceneKind, SceneSpec};
