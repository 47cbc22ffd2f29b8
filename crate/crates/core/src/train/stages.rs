use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::deform_render::{splat_backward, splat_render_trace, total_loss, LossBreakdown, PointGrads};
use crate::dsfd::{decouple_all, select_references, DecoupleOptions};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::image::Image;
use crate::numerics::{adam_step, AdamConfig, AdamState};
use crate::point_field::{init_points, init_random, GaussianPointSet, DEFAULT_JITTER_RADIUS};
use crate::scene_synth::{extract_all_features, Dataset};

use super::config::{lr_schedule, PointInit, TrainConfig};
use super::densify::{densify, GradAccumulator};
use super::model::{FeatureBank, Model, ModelGrads};

const SIGMA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub num_points: usize,
}

/// Training log, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "iter,loss_total,loss_rec,loss_mask,loss_proxy,lr,num_points";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                r.iter, r.loss.total, r.loss.rec, r.loss.mask, r.loss.proxy, r.lr, r.num_points
            );
        }
        s
    }
}

/// Unconstrained point parameters: positions, log-scales, opacity logits
/// and colors. Rotations are not optimized.
#[derive(Clone, Debug, PartialEq)]
struct RawPoints {
    positions: Vec<f64>,
    log_scales: Vec<f64>,
    logits: Vec<f64>,
    colors: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(SIGMA_EPS, 1.0 - SIGMA_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RawPoints {
    fn from_set(p: &GaussianPointSet) -> Self {
        Self {
            positions: p.positions.iter().flatten().copied().collect(),
            log_scales: p.scales.iter().map(|s| s.ln()).collect(),
            logits: p.opacities.iter().map(|&o| logit(o)).collect(),
            colors: p.colors.iter().flatten().copied().collect(),
        }
    }

    fn write_to(&self, p: &mut GaussianPointSet) {
        for k in 0..p.len() {
            p.positions[k] = [self.positions[3 * k], self.positions[3 * k + 1], self.positions[3 * k + 2]];
            p.scales[k] = self.log_scales[k].exp();
            p.opacities[k] = sigmoid(self.logits[k]);
            p.colors[k] = [self.colors[3 * k], self.colors[3 * k + 1], self.colors[3 * k + 2]];
        }
    }
}

/// Adam state for the point attributes.
#[derive(Clone, Debug)]
struct PointOptimizer {
    raw: RawPoints,
    states: [AdamState; 4],
}

impl PointOptimizer {
    fn new(points: &GaussianPointSet) -> Self {
        let n = points.len();
        Self {
            raw: RawPoints::from_set(points),
            states: [
                AdamState::new(3 * n),
                AdamState::new(n),
                AdamState::new(n),
                AdamState::new(3 * n),
            ],
        }
    }

    /// Re-reads attributes after densification; existing moments are kept
    /// and new points start with zero moments.
    fn grow(&mut self, points: &GaussianPointSet) {
        let n = points.len();
        self.raw = RawPoints::from_set(points);
        for (s, len) in self.states.iter_mut().zip([3 * n, n, n, 3 * n]) {
            s.resize(len);
        }
    }

    fn step(
        &mut self,
        points: &mut GaussianPointSet,
        g: &PointGrads,
        pos_lr: f64,
        cfg: &TrainConfig,
        adam: &AdamConfig,
    ) -> Result<()> {
        let g_pos: Vec<f64> = g.positions.iter().flatten().copied().collect();
        let g_scale: Vec<f64> = g.scales.iter().zip(&points.scales).map(|(d, s)| d * s).collect();
        let g_logit: Vec<f64> = g
            .opacities
            .iter()
            .zip(&points.opacities)
            .map(|(d, o)| d * o * (1.0 - o))
            .collect();
        let g_color: Vec<f64> = g.colors.iter().flatten().copied().collect();
        let [s_pos, s_scale, s_op, s_col] = &mut self.states;
        adam_step("positions", &mut self.raw.positions, &g_pos, s_pos, pos_lr, adam)?;
        adam_step("scales", &mut self.raw.log_scales, &g_scale, s_scale, cfg.scale_lr, adam)?;
        adam_step("opacities", &mut self.raw.logits, &g_logit, s_op, cfg.opacity_lr, adam)?;
        adam_step("colors", &mut self.raw.colors, &g_color, s_col, cfg.color_lr, adam)?;
        self.raw.colors.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        self.raw.write_to(points);
        Ok(())
    }
}

/// Adam state for the networks and the field.
#[derive(Clone, Debug)]
struct NetOptimizer {
    field: Vec<AdamState>,
    fusion: Vec<AdamState>,
    mixer: Vec<AdamState>,
    net: Vec<AdamState>,
}

impl NetOptimizer {
    fn new(model: &mut Model) -> Self {
        let states = |ps: Vec<&mut [f64]>| ps.iter().map(|p| AdamState::new(p.len())).collect();
        Self {
            field: states(model.field.params_mut()),
            fusion: states(model.fusion.params_mut()),
            mixer: states(model.mixer.params_mut().into_iter().collect()),
            net: states(model.net.params_mut()),
        }
    }

    fn step(&mut self, model: &mut Model, g: &ModelGrads, lr: f64, grid_lr: f64, adam: &AdamConfig) -> Result<()> {
        for ((p, gr), s) in model.field.params_mut().into_iter().zip(&g.field).zip(&mut self.field) {
            adam_step("hexplane", p, gr, s, grid_lr, adam)?;
        }
        let fusion_grads: Vec<&[f64]> = g.fusion.iter().flat_map(|l| l.slices()).collect();
        for ((p, gr), s) in model.fusion.params_mut().into_iter().zip(fusion_grads).zip(&mut self.fusion) {
            adam_step("fusion", p, gr, s, lr, adam)?;
        }
        for ((p, gr), s) in model.mixer.params_mut().into_iter().zip(g.mixer.slices()).zip(&mut self.mixer) {
            adam_step("mixer", p, gr, s, lr, adam)?;
        }
        for ((p, gr), s) in model.net.params_mut().into_iter().zip(g.net.slices()).zip(&mut self.net) {
            adam_step("deformation", p, gr, s, lr, adam)?;
        }
        Ok(())
    }
}

fn check_finite(iter: usize, loss: &LossBreakdown, detail: impl FnOnce() -> String) -> Result<()> {
    if loss.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iter,
            detail: detail(),
        })
    }
}

/// Renders `points` from every camera and returns the loss breakdown and
/// summed point gradients.
fn render_loss(
    points: &GaussianPointSet,
    cams: &[Camera],
    background: [f64; 3],
    targets: &[(&Image, &Image)],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, PointGrads)> {
    let (frames, traces): (Vec<_>, Vec<_>) =
        cams.iter().map(|c| splat_render_trace(points, c, background)).unzip();
    let (loss, grads) = total_loss(&frames, targets, &cfg.loss_weights())?;
    let mut total = PointGrads::zeros(points.len());
    for (trace, (d_rgb, d_alpha)) in traces.iter().zip(&grads) {
        total.add(&splat_backward(trace, d_rgb, d_alpha)?);
    }
    Ok((loss, total))
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        eps: cfg.adam_eps,
        ..AdamConfig::default()
    }
}

/// Optimizes position, scale, opacity and color against the middle frame
/// of every training view.
pub fn train_static_stage(
    points: &mut GaussianPointSet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<()> {
    let adam = adam_config(cfg);
    let mut opt = PointOptimizer::new(points);
    let mut acc = GradAccumulator::new(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5747_1c00);
    let mid = dataset.middle();
    let targets: Vec<(&Image, &Image)> =
        (0..dataset.views()).map(|j| (dataset.image(mid, j), dataset.mask(mid, j))).collect();
    let total = cfg.warmup_iters;
    for it in 0..total {
        let (loss, grads) = render_loss(points, &dataset.cameras, dataset.background, &targets, cfg)?;
        check_finite(it, &loss, || format!("static stage, middle frame {mid}"))?;
        let lr = lr_schedule(it, total, cfg.position_lr_start, cfg.position_lr_end);
        acc.accumulate(&grads.positions);
        opt.step(points, &grads, lr, cfg, &adam)?;
        if it % cfg.log_every == 0 || it + 1 == total {
            log.rows.push(LogRow {
                iter: it,
                loss,
                lr,
                num_points: points.len(),
            });
        }
        if (it + 1) % cfg.densify_interval == 0 && it + 1 < total {
            densify(points, &mut acc, cfg.densify_fraction, &mut rng);
            opt.grow(points);
        }
    }
    Ok(())
}

/// Trains fusion, field, mixer, deformation network and the canonical
/// points. Each iteration samples `cfg.batch` timestamps and uses every
/// training view of each.
pub fn train_dynamic_stage(
    model: &mut Model,
    dataset: &Dataset,
    bank: &FeatureBank,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<()> {
    let adam = adam_config(cfg);
    let mut popt = PointOptimizer::new(&model.points);
    let mut nopt = NetOptimizer::new(model);
    let mut acc = GradAccumulator::new(model.points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1a0_0000);
    let feats = bank.for_source(model.source);
    let total = cfg.dynamic_iters;
    let base_iter = cfg.warmup_iters;
    for it in 0..total {
        let lr = lr_schedule(it, total, cfg.lr_start, cfg.lr_end);
        let grid_lr = lr_schedule(it, total, cfg.grid_lr_start, cfg.grid_lr_end);
        let pos_lr = lr_schedule(it, total, cfg.position_lr_start, cfg.position_lr_end);
        let mut grads = model.zero_grad();
        let mut point_grads = PointGrads::zeros(model.points.len());
        let mut loss = LossBreakdown::default();
        let scale = 1.0 / cfg.batch as f64;
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..dataset.frames);
            let trace = model.forward(feats, &dataset.cameras, i, dataset.time_norm(i))?;
            let targets: Vec<(&Image, &Image)> =
                (0..dataset.views()).map(|j| (dataset.image(i, j), dataset.mask(i, j))).collect();
            let (l, mut g) = render_loss(&trace.deformed, &dataset.cameras, dataset.background, &targets, cfg)?;
            check_finite(base_iter + it, &l, || format!("dynamic stage, time {i}, all views"))?;
            scale_point_grads(&mut g, scale);
            let canonical = model.backward(&trace, &g, &mut grads)?;
            point_grads.add(&canonical);
            loss.total += l.total * scale;
            loss.rec += l.rec * scale;
            loss.mask += l.mask * scale;
            loss.proxy += l.proxy * scale;
        }
        acc.accumulate(&point_grads.positions);
        nopt.step(model, &grads, lr, grid_lr, &adam)?;
        popt.step(&mut model.points, &point_grads, pos_lr, cfg, &adam)?;
        if it % cfg.log_every == 0 || it + 1 == total {
            log.rows.push(LogRow {
                iter: base_iter + it,
                loss,
                lr,
                num_points: model.points.len(),
            });
        }
        if (it + 1) % cfg.densify_interval == 0 && it + 1 < total {
            densify(&mut model.points, &mut acc, cfg.densify_fraction, &mut rng);
            popt.grow(&model.points);
        }
    }
    Ok(())
}

fn scale_point_grads(g: &mut PointGrads, s: f64) {
    for k in 0..g.scales.len() {
        for c in 0..3 {
            g.positions[k][c] *= s;
            g.colors[k][c] *= s;
        }
        g.scales[k] *= s;
        g.opacities[k] *= s;
    }
}

/// Raw and decoupled features of the training views.
pub fn build_feature_bank(dataset: &Dataset, cfg: &TrainConfig) -> Result<FeatureBank> {
    let raw = extract_all_features(
        &dataset.images,
        dataset.frames,
        dataset.views(),
        cfg.feature_grid,
        cfg.feature_dim,
    )?;
    let refs = select_references(&raw)?;
    let (decoupled, _) = decouple_all(
        &raw,
        &refs,
        DecoupleOptions {
            mode: cfg.decouple_mode,
            ..DecoupleOptions::default()
        },
    )?;
    let (mut raw, mut decoupled) = (raw, decoupled);
    if cfg.feature_norm {
        standardize(&mut raw);
        standardize(&mut decoupled.set);
    }
    Ok(FeatureBank { raw, decoupled })
}

/// Per-channel z-score over every token of every frame. Constant channels
/// become zero.
pub fn standardize(set: &mut FeatureSet) {
    let d = set.dim;
    let n = (set.data.len() / d) as f64;
    for c in 0..d {
        let mean = set.data.iter().skip(c).step_by(d).sum::<f64>() / n;
        let var = set.data.iter().skip(c).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in set.data.iter_mut().skip(c).step_by(d) {
            *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Initial points according to `cfg.point_init`.
pub fn initial_points(dataset: &Dataset, cfg: &TrainConfig) -> Result<GaussianPointSet> {
    match cfg.point_init {
        PointInit::Cloud => init_points(&dataset.gt_points.cloud(), cfg.num_points, DEFAULT_JITTER_RADIUS, cfg.seed),
        PointInit::Random => {
            let b = 0.8 * cfg.field_bound;
            init_random([-b; 3], [b; 3], cfg.num_points, cfg.seed)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub bank: FeatureBank,
}

/// Feature extraction, static warm-up, then dynamic training.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let bank = build_feature_bank(dataset, cfg)?;
    let points = initial_points(dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3e75_0000);
    let mut model = Model::new(cfg, points, bank.width(cfg.feature_source), &mut rng)?;
    let mut log = TrainLog::default();
    train_static_stage(&mut model.points, dataset, cfg, &mut log)?;
    train_dynamic_stage(&mut model, dataset, &bank, cfg, &mut log)?;
    Ok(TrainOutcome { model, log, bank })
}
