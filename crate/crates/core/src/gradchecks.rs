//! Central-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::deform_render::{
    apply_deformation, apply_deformation_backward, deform, deform_backward, splat_backward,
    splat_render_trace, total_loss, LossWeights, DEFORM_OUTPUTS,
};
use crate::error::Result;
use crate::image::Image;
use crate::numerics::{grad_check, softmax, softmax_backward, Activation, LinearLayer, Mlp};
use crate::point_field::{GaussianPointSet, PointFeatures};
use crate::tssf::{
    fuse_gaussian_features, fuse_gaussian_features_backward, FusionMode, HexPlaneConfig,
    HexPlaneField, TssfFusion,
};

pub const EPS: f64 = 1e-6;
/// The composite loss sums hundreds of pixels, so its rounding noise is
/// larger; a wider step keeps the difference quotient above it.
pub const COMPOSITE_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub params: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn outcome(name: &'static str, params: usize, err: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        params,
        max_rel_error: err,
        tolerance,
    }
}

fn weighted_sum(v: &[f64], c: &[f64]) -> f64 {
    v.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn flatten_mlp(net: &Mlp) -> Vec<f64> {
    net.layers.iter().flat_map(|l| [l.weight.data(), &l.bias[..]]).collect::<Vec<_>>().concat()
}

fn load_mlp(net: &mut Mlp, p: &[f64]) {
    let mut o = 0;
    for s in net.params_mut() {
        let n = s.len();
        s.copy_from_slice(&p[o..o + n]);
        o += n;
    }
}

pub fn check_mlp(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Mlp::random(&[5, 7, 6, 3], Activation::Tanh, false, &mut rng)?;
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let params = [flatten_mlp(&base), x.clone()].concat();
    let n_net = params.len() - x.len();
    let r = grad_check(
        |p| {
            let mut net = base.clone();
            load_mlp(&mut net, &p[..n_net]);
            let (y, tr) = net.forward_trace(&p[n_net..])?;
            let mut g = net.zero_grad();
            let gx = net.backward(&tr, &c, &mut g);
            let grad: Vec<f64> = g.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()].concat()).collect();
            Ok((weighted_sum(&y, &c), [grad, gx].concat()))
        },
        &params,
        EPS,
    )?;
    Ok(outcome("mlp", params.len(), r.max_rel_error, 1e-6))
}

/// Cross-entropy of a softmax over 3 logits, through the generic softmax
/// backward.
pub fn check_softmax_ce(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let label = rng.gen_range(0..3);
    let r = grad_check(
        |p| {
            let y = softmax(p)?;
            let mut dy = vec![0.0; 3];
            dy[label] = -1.0 / y[label];
            Ok((-y[label].ln(), softmax_backward(&y, &dy)))
        },
        &x,
        EPS,
    )?;
    Ok(outcome("softmax-ce", x.len(), r.max_rel_error, 1e-6))
}

fn check_camera(size: usize) -> Result<Camera> {
    Camera::new([0.3, 0.4, 3.5], [0.0; 3], [0.0, 1.0, 0.0], 0.8, size, size)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> GaussianPointSet {
    let mut pts = GaussianPointSet::empty();
    for _ in 0..n {
        pts.push(
            [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
            rng.gen_range(0.18..0.3),
            [1.0, 0.0, 0.0, 0.0],
            rng.gen_range(0.4..0.9),
            [rng.gen(), rng.gen(), rng.gen()],
        );
    }
    pts
}

fn random_image(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Image {
    let data = (0..size * size * channels).map(|_| rng.gen()).collect();
    Image::from_vec(size, size, channels, data).expect("sizes agree")
}

pub fn check_renderer(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 16;
    let cam = check_camera(size)?;
    let base = random_points(&mut rng, 4);
    let rgb = random_image(&mut rng, size, 3);
    let mask = random_image(&mut rng, size, 1);
    let weights = LossWeights::default();
    let mut x0 = Vec::new();
    for k in 0..base.len() {
        x0.extend_from_slice(&base.positions[k]);
        x0.push(base.scales[k]);
        x0.push(base.opacities[k]);
        x0.extend_from_slice(&base.colors[k]);
    }
    let r = grad_check(
        |p| {
            let mut s = base.clone();
            for k in 0..s.len() {
                let q = &p[8 * k..8 * k + 8];
                s.positions[k] = [q[0], q[1], q[2]];
                s.scales[k] = q[3];
                s.opacities[k] = q[4];
                s.colors[k] = [q[5], q[6], q[7]];
            }
            let (img, tr) = splat_render_trace(&s, &cam, [0.1, 0.2, 0.3]);
            let (loss, grads) = total_loss(std::slice::from_ref(&img), &[(&rgb, &mask)], &weights)?;
            let g = splat_backward(&tr, &grads[0].0, &grads[0].1)?;
            let mut out = Vec::new();
            for k in 0..s.len() {
                out.extend_from_slice(&g.positions[k]);
                out.push(g.scales[k]);
                out.push(g.opacities[k]);
                out.extend_from_slice(&g.colors[k]);
            }
            Ok((loss.total, out))
        },
        &x0,
        EPS,
    )?;
    Ok(outcome("render+loss", x0.len(), r.max_rel_error, 1e-4))
}

fn random_point_features(rng: &mut ChaCha8Rng, views: usize, points: usize, width: usize) -> PointFeatures {
    let mut valid = vec![true; views * points];
    // one point seen only from the front, to exercise masking
    for j in 1..views {
        valid[j * points] = false;
    }
    PointFeatures {
        time: 0,
        views,
        points,
        width,
        data: (0..views * points * width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        valid,
    }
}

pub fn check_fusion(mode: FusionMode, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pf = random_point_features(&mut rng, 4, 3, 3);
    let base = TssfFusion::new(mode, 3, &mut rng);
    let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n_w = base.scorers[0].weight.len();
    // bias gradients vanish identically under softmax shift invariance
    let params: Vec<f64> = base.scorers.iter().flat_map(|s| s.weight.data().to_vec()).collect();
    let r = grad_check(
        |p| {
            let mut f = base.clone();
            for (k, s) in f.scorers.iter_mut().enumerate() {
                s.weight.data_mut().copy_from_slice(&p[k * n_w..(k + 1) * n_w]);
            }
            let out = f.forward(&pf)?;
            let mut g = f.zero_grad();
            f.backward(&pf, &out, &c, &mut g)?;
            Ok((weighted_sum(&out.features, &c), g.iter().flat_map(|g| g.weight.clone()).collect()))
        },
        &params,
        EPS,
    )?;
    let name = match mode {
        FusionMode::Avg => "fusion-avg",
        FusionMode::Ga => "fusion-ga",
        FusionMode::Da => "fusion-da",
    };
    Ok(outcome(name, params.len(), r.max_rel_error, 1e-6))
}

pub fn check_hexplane(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = HexPlaneConfig {
        base_resolution: 3,
        multipliers: vec![1, 2],
        channels: 2,
        bounds_min: [-1.0; 3],
        bounds_max: [1.0; 3],
    };
    let field = HexPlaneField::new(cfg, seed)?;
    let queries: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            (
                [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)],
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sizes: Vec<usize> = field.grids.iter().map(Vec::len).collect();
    let params = field.grids.concat();
    let r = grad_check(
        |p| {
            let mut f = field.clone();
            let mut o = 0;
            for (g, n) in f.grids.iter_mut().zip(&sizes) {
                g.copy_from_slice(&p[o..o + n]);
                o += n;
            }
            let mut grads = f.zero_grad();
            let mut loss = 0.0;
            for &(x, t) in &queries {
                let (v, tr) = f.query_trace(x, t);
                loss += weighted_sum(&v, &c);
                f.backward(&tr, &c, &mut grads);
            }
            Ok((loss, grads.concat()))
        },
        &params,
        EPS,
    )?;
    Ok(outcome("hexplane", params.len(), r.max_rel_error, 1e-6))
}

pub fn check_mixer(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixer = LinearLayer::random(7, 4, &mut rng);
    let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = grad_check(
        |p| {
            let out = fuse_gaussian_features(&p[..3], &p[3..5], &p[5..], &mixer)?;
            let mut g = mixer.zero_grad();
            let (a, b, e) = fuse_gaussian_features_backward(&p[..3], &p[3..5], &p[5..], &mixer, &c, &mut g);
            Ok((weighted_sum(&out, &c), [a, b, e].concat()))
        },
        &x,
        EPS,
    )?;
    Ok(outcome("mixer", x.len(), r.max_rel_error, 1e-6))
}

/// Fused features and deformation-network weights through deformation,
/// rendering and the total loss, on 4 points at 16×16.
pub fn check_composite(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, width, size) = (4, 8, 16);
    let cam = check_camera(size)?;
    let points = random_points(&mut rng, n);
    let mut net = Mlp::random(&[width, 16, 16, DEFORM_OUTPUTS], Activation::default(), false, &mut rng)?;
    // keep offsets small so points stay in view
    let last = net.layers.len() - 1;
    net.layers[last].weight.data_mut().iter_mut().for_each(|w| *w *= 0.2);
    let fused: Vec<f64> = (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rgb = random_image(&mut rng, size, 3);
    let mask = random_image(&mut rng, size, 1);
    let weights = LossWeights::default();
    let params = [fused, flatten_mlp(&net)].concat();
    let n_f = n * width;
    let r = grad_check(
        |p| {
            let mut m = net.clone();
            load_mlp(&mut m, &p[n_f..]);
            let (d, trace) = deform(&p[..n_f], width, &m)?;
            let deformed = apply_deformation(&points, &d)?;
            let (img, rt) = splat_render_trace(&deformed, &cam, [0.2, 0.2, 0.2]);
            let (loss, grads) = total_loss(std::slice::from_ref(&img), &[(&rgb, &mask)], &weights)?;
            let pg = splat_backward(&rt, &grads[0].0, &grads[0].1)?;
            let (d_dx, d_ds) = apply_deformation_backward(&deformed, &pg.positions, &pg.scales);
            let mut g = m.zero_grad();
            let d_fused = deform_backward(&m, &trace, &d_dx, &d_ds, &mut g);
            let d_net: Vec<f64> = g.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()].concat()).collect();
            Ok((loss.total, [d_fused, d_net].concat()))
        },
        &params,
        COMPOSITE_EPS,
    )?;
    Ok(outcome("composite", params.len(), r.max_rel_error, 1e-4))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_softmax_ce(seed)?,
        check_mlp(seed)?,
        check_mixer(seed)?,
        check_hexplane(seed)?,
        check_fusion(FusionMode::Ga, seed)?,
        check_fusion(FusionMode::Da, seed)?,
        check_renderer(seed)?,
        check_composite(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for seed in [0, 1] {
            for c in run_all(seed).unwrap() {
                assert!(c.passed(), "{} seed {seed}: {:e}", c.name, c.max_rel_error);
            }
        }
    }
}
