use crate::camera::Camera;
use crate::deform_render::{splat_render, RenderedFrame};
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::point_field::GaussianPointSet;
use crate::scene_synth::Dataset;

use super::model::{FeatureBank, Model};

/// The model's point set at time step `i`.
pub fn deformed_points(model: &Model, bank: &FeatureBank, dataset: &Dataset, i: usize) -> Result<GaussianPointSet> {
    let trace = model.forward(bank.for_source(model.source), &dataset.cameras, i, dataset.time_norm(i))?;
    Ok(trace.deformed)
}

pub fn render_model(
    model: &Model,
    bank: &FeatureBank,
    dataset: &Dataset,
    i: usize,
    cam: &Camera,
) -> Result<RenderedFrame> {
    Ok(splat_render(&deformed_points(model, bank, dataset, i)?, cam, dataset.background))
}

/// PSNR / SSIM / D-SSIM on every held-out view at every frame.
pub fn evaluate_holdout(model: &Model, bank: &FeatureBank, dataset: &Dataset) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for i in 0..dataset.frames {
        let pts = deformed_points(model, bank, dataset, i)?;
        for (j, cam) in dataset.holdout.iter().enumerate() {
            let r = splat_render(&pts, cam, dataset.background);
            report.push(i, j, &r.rgb, dataset.holdout_image(i, j))?;
        }
    }
    Ok(report)
}
