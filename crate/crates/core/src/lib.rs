//! CPU differentiable 3D Gaussian splatting.
//!
//! The crate renders anisotropic 3D Gaussians with a tile-binned, depth-sorted
//! alpha blender and backpropagates analytically through blending, EWA
//! projection and the covariance parameterization. On top of the usual
//! photometric objective it implements two list-shortening regularizers:
//!
//! * periodic **scale reset** (`s ← ζ·s` for every Gaussian), see [`schedule`];
//! * an **entropy penalty** on the per-ray blending weights `w_i = T_i α_i`,
//!   with an O(N) reverse recurrence for `∂H/∂α`, see [`backward::entropy`].
//!
//! [`telemetry`] turns renders into per-tile list-length and per-pixel
//! entropy heatmaps plus scale/opacity histograms.

pub mod backward;
pub mod error;
pub mod losses;
pub mod projection;
pub mod rasterizer;
pub mod scene;
pub mod schedule;
pub mod telemetry;
pub mod trainer;

pub use error::{Error, Result};
pub use rasterizer::{RenderOutput, RenderSettings, TileBins};
pub use scene::{Camera, Dataset, GaussianModel, Image};
pub use schedule::TrainConfig;
