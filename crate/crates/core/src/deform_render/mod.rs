//! Deformation MLP heads, splat rendering and training losses.

mod deform;
mod loss;
mod render;

pub use deform::{
    apply_deformation, apply_deformation_backward, deform, deform_backward, quat_mul, Deformation,
    DeformTrace, DEFORM_OUTPUTS,
};
pub use loss::{
    loss_mask, loss_mask_grad, loss_perceptual_proxy, loss_perceptual_proxy_grad, loss_rec,
    loss_rec_grad, total_loss, LossBreakdown, LossWeights, PROXY_FILTERS,
};
pub use render::{
    splat_backward, splat_render, splat_render_trace, PointGrads, RenderTrace, RenderedFrame,
    MIN_RADIUS_PX, NEAR, TRUNCATION,
};
