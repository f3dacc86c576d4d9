//! Closed-form oracles: velocity fields, signed distances and synthetic scenes.

mod flow;
mod scene;
mod sdf;

pub use flow::{rk4, AnalyticFlow};
pub use scene::{AdvectedDensity, AnalyticScene, CameraRig, GaussianBlob, SceneConfig};
pub use sdf::{obstacle_mask, AnalyticSdf, MIN_GRAD_NORM};
