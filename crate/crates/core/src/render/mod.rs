//! Volume rendering: cameras, ray sampling, compositing, image metrics.

mod camera;
mod composite;
mod image;

pub use camera::{Camera, Ray, RaySamples};
pub use composite::{
    composite, composite_backward, density_alpha, density_alpha_grad, depth_order, opacity_backward, sdf_alpha,
    sdf_alpha_grad, Composite,
};
pub use image::{mse, psnr, psnr_from_mse, Image};
