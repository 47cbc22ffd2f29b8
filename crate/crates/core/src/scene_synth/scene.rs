use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::point_field::{nearest_neighbor_stats, GaussianPointSet, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionFamily {
    /// The left-most points bob vertically.
    Oscillate,
    /// The right-most points rotate about a pivot like a swinging limb.
    Swing,
    /// A limb in front of a static body sways sideways; the body hides it
    /// from behind.
    Occlusion,
}

impl FromStr for MotionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillate" | "oscillation" => Ok(Self::Oscillate),
            "swing" => Ok(Self::Swing),
            "occlusion" | "partial-occlusion" => Ok(Self::Occlusion),
            other => Err(Error::Config(format!("unknown motion family `{other}`"))),
        }
    }
}

impl MotionFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Oscillate => "oscillate",
            Self::Swing => "swing",
            Self::Occlusion => "occlusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub family: MotionFamily,
    pub num_points: usize,
    pub fraction_static: f64,
    /// World units for translations, radians for the swing.
    pub amplitude: f64,
    pub background: Vec3,
    pub opacity: f64,
}

impl SceneSpec {
    pub fn preset(family: MotionFamily) -> Self {
        let (fraction_static, amplitude) = match family {
            MotionFamily::Oscillate => (0.6, 0.25),
            MotionFamily::Swing => (0.6, 0.6),
            MotionFamily::Occlusion => (0.7, 0.3),
        };
        Self {
            family,
            num_points: 200,
            fraction_static,
            amplitude,
            background: [1.0, 1.0, 1.0],
            opacity: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub family: MotionFamily,
    pub base_positions: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub dynamic: Vec<bool>,
    pub amplitude: f64,
    pub pivot: Vec3,
    pub background: Vec3,
    pub splat_scale: f64,
    pub opacity: f64,
}

fn body_color(p: Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
    let n = |rng: &mut ChaCha8Rng| rng.gen_range(-0.05..0.05);
    [
        (0.5 + 0.4 * (2.1 * p[0] + 0.3).sin() + n(rng)).clamp(0.0, 1.0),
        (0.5 + 0.4 * (1.7 * p[1] + 1.1).sin() + n(rng)).clamp(0.0, 1.0),
        (0.5 + 0.4 * (2.3 * p[2] + 2.0).sin() + n(rng)).clamp(0.0, 1.0),
    ]
}

fn sample_box(rng: &mut ChaCha8Rng, lo: Vec3, hi: Vec3) -> Vec3 {
    [
        rng.gen_range(lo[0]..hi[0]),
        rng.gen_range(lo[1]..hi[1]),
        rng.gen_range(lo[2]..hi[2]),
    ]
}

fn sample_ellipsoid(rng: &mut ChaCha8Rng, radii: Vec3) -> Vec3 {
    loop {
        let p = sample_box(rng, [-1.0; 3], [1.0; 3]);
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return [p[0] * radii[0], p[1] * radii[1], p[2] * radii[2]];
        }
    }
}

/// Indices of the `count` points with the smallest key (ties by index).
fn lowest_by(positions: &[Vec3], count: usize, key: impl Fn(&Vec3) -> f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| key(&positions[a]).total_cmp(&key(&positions[b])).then(a.cmp(&b)));
    let mut mask = vec![false; positions.len()];
    for &k in order.iter().take(count) {
        mask[k] = true;
    }
    mask
}

/// Builds a deterministic synthetic scene for `spec` and `seed`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    if spec.num_points < 1 {
        return Err(Error::Config("scene needs at least one point".into()));
    }
    if !(0.0..=1.0).contains(&spec.fraction_static) {
        return Err(Error::Config("fraction_static must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_points;
    let n_dyn = ((1.0 - spec.fraction_static) * n as f64).round() as usize;
    let (positions, dynamic, pivot) = match spec.family {
        MotionFamily::Oscillate => {
            let pos: Vec<Vec3> = (0..n).map(|_| sample_ellipsoid(&mut rng, [0.75, 0.6, 0.45])).collect();
            let dynamic = lowest_by(&pos, n_dyn, |p| p[0]);
            (pos, dynamic, [0.0; 3])
        }
        MotionFamily::Swing => {
            let pos: Vec<Vec3> = (0..n).map(|_| sample_ellipsoid(&mut rng, [0.75, 0.6, 0.45])).collect();
            let dynamic = lowest_by(&pos, n_dyn, |p| -p[0]);
            let pivot_x = pos
                .iter()
                .zip(&dynamic)
                .filter(|(_, d)| **d)
                .map(|(p, _)| p[0])
                .fold(f64::INFINITY, f64::min);
            let pivot_x = if pivot_x.is_finite() { pivot_x } else { 0.0 };
            (pos, dynamic, [pivot_x, 0.0, 0.0])
        }
        MotionFamily::Occlusion => {
            let mut pos = Vec::with_capacity(n);
            let mut dynamic = Vec::with_capacity(n);
            for _ in 0..n - n_dyn {
                pos.push(sample_box(&mut rng, [-0.6, -0.6, -0.35], [0.6, 0.6, 0.05]));
                dynamic.push(false);
            }
            for _ in 0..n_dyn {
                pos.push(sample_box(&mut rng, [-0.25, -0.3, 0.15], [0.25, 0.3, 0.35]));
                dynamic.push(true);
            }
            (pos, dynamic, [0.0; 3])
        }
    };
    let colors = positions.iter().map(|p| body_color(*p, &mut rng)).collect();
    let moving = spec.amplitude != 0.0;
    let dynamic = dynamic.into_iter().map(|d| d && moving).collect();
    let splat_scale = match nearest_neighbor_stats(&positions) {
        Ok(d) if d > 0.0 => 0.5 * d,
        _ => 0.05,
    }
    .max(0.04);
    Ok(SyntheticScene {
        family: spec.family,
        base_positions: positions,
        colors,
        dynamic,
        amplitude: spec.amplitude,
        pivot,
        background: spec.background,
        splat_scale,
        opacity: spec.opacity,
    })
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.base_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_positions.is_empty()
    }

    /// Position of point `k` at normalised time `t` in [0, 1].
    pub fn position_at(&self, k: usize, t: f64) -> Vec3 {
        let p = self.base_positions[k];
        if !self.dynamic[k] {
            return p;
        }
        let s = (2.0 * PI * t).sin();
        match self.family {
            MotionFamily::Oscillate => [p[0], p[1] + self.amplitude * s, p[2]],
            MotionFamily::Occlusion => [p[0] + self.amplitude * s, p[1], p[2]],
            MotionFamily::Swing => {
                let theta = self.amplitude * s;
                let (c, sn) = (theta.cos(), theta.sin());
                let (dx, dy) = (p[0] - self.pivot[0], p[1] - self.pivot[1]);
                [
                    self.pivot[0] + c * dx - sn * dy,
                    self.pivot[1] + sn * dx + c * dy,
                    p[2],
                ]
            }
        }
    }

    pub fn points_at(&self, t: f64) -> GaussianPointSet {
        let n = self.len();
        GaussianPointSet {
            positions: (0..n).map(|k| self.position_at(k, t)).collect(),
            scales: vec![self.splat_scale; n],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
            opacities: vec![self.opacity; n],
            colors: self.colors.clone(),
        }
    }

    pub fn cloud_at(&self, t: f64) -> PointCloud {
        PointCloud {
            positions: (0..self.len()).map(|k| self.position_at(k, t)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Axis-aligned bounds of all trajectories sampled at `samples` times.
    pub fn bounds(&self, samples: usize) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in 0..samples.max(2) {
            let t = s as f64 / (samples.max(2) - 1) as f64;
            for k in 0..self.len() {
                let p = self.position_at(k, t);
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
        }
        (lo, hi)
    }
}
