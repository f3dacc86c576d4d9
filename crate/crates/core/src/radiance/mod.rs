//! Scene representation: dynamic radiance field, Lagrangian density head,
//! static geometry and color.

mod fields;
mod model;
mod render;

pub use fields::{
    sigmoid, softplus, DynamicField, DynamicPass, LagrangianHead, LagrangianPass, StaticField, StaticGeometry, StaticGrads,
    StaticPass, StaticSample, SHARPNESS_INIT,
};
pub use model::{SceneGrads, SceneModel, SceneSpec, StaticSpec};
pub use render::{
    image_loss, render_image, render_rays, ImageLossKind, RayQuery, RayRender, RenderMode, RenderSettings, SceneSource,
    SmokeScaled,
};
