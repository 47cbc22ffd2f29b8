use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Vec3;
use crate::error::{Error, Result};

/// Coordinate pairs addressed by the six planes: (x,y) (x,z) (y,z)
/// (x,t) (y,t) (z,t), with x,y,z,t = 0,1,2,3.
pub const PLANE_AXES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneConfig {
    pub base_resolution: usize,
    /// Resolution multiplier per level, strictly increasing.
    pub multipliers: Vec<usize>,
    pub channels: usize,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
}

impl Default for HexPlaneConfig {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            multipliers: vec![1, 2, 4],
            channels: 8,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
        }
    }
}

impl HexPlaneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_resolution < 2 || self.channels == 0 || self.multipliers.is_empty() {
            return Err(Error::Config(
                "hexplane needs resolution >= 2, channels >= 1 and one level".into(),
            ));
        }
        if self.multipliers.windows(2).any(|w| w[1] <= w[0]) || self.multipliers[0] == 0 {
            return Err(Error::Config("hexplane level resolutions must strictly increase".into()));
        }
        if (0..3).any(|a| !(self.bounds_max[a] > self.bounds_min[a])) {
            return Err(Error::Config("hexplane bounds are empty".into()));
        }
        Ok(())
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.base_resolution * self.multipliers[level]
    }

    pub fn output_dim(&self) -> usize {
        self.multipliers.len() * self.channels
    }
}

/// Factorized space-time feature field. Grid `level * 6 + plane` holds
/// `R × R × C` values laid out `(b, a, channel)` where `a`, `b` index the
/// plane's first and second axis.
#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneField {
    pub config: HexPlaneConfig,
    pub grids: Vec<Vec<f64>>,
}

/// Bilinear footprint of one query on one grid.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Footprint {
    cells: [usize; 4],
    weights: [f64; 4],
}

fn footprint(res: usize, a: f64, b: f64) -> Footprint {
    let fa = a * (res - 1) as f64;
    let fb = b * (res - 1) as f64;
    let a0 = (fa.floor() as usize).min(res - 2);
    let b0 = (fb.floor() as usize).min(res - 2);
    let (ta, tb) = (fa - a0 as f64, fb - b0 as f64);
    Footprint {
        cells: [b0 * res + a0, b0 * res + a0 + 1, (b0 + 1) * res + a0, (b0 + 1) * res + a0 + 1],
        weights: [
            (1.0 - ta) * (1.0 - tb),
            ta * (1.0 - tb),
            (1.0 - ta) * tb,
            ta * tb,
        ],
    }
}

/// Everything the backward pass needs from one query.
#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneTrace {
    footprints: Vec<Footprint>,
    /// Sampled C-vector per (level, plane).
    samples: Vec<f64>,
}

impl HexPlaneField {
    /// Spatial planes uniform in [0.1, 0.5], time planes all ones.
    pub fn new(config: HexPlaneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grids = Vec::new();
        for level in 0..config.multipliers.len() {
            let n = config.resolution(level).pow(2) * config.channels;
            for &(_, b) in &PLANE_AXES {
                grids.push(if b == 3 {
                    vec![1.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(0.1..0.5)).collect()
                });
            }
        }
        Ok(Self { config, grids })
    }

    pub fn filled(config: HexPlaneConfig, value: f64) -> Result<Self> {
        config.validate()?;
        let grids = (0..config.multipliers.len() * 6)
            .map(|g| vec![value; config.resolution(g / 6).pow(2) * config.channels])
            .collect();
        Ok(Self { config, grids })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.grids.iter().map(Vec::len).sum()
    }

    pub fn zero_grad(&self) -> Vec<Vec<f64>> {
        self.grids.iter().map(|g| vec![0.0; g.len()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.grids.iter_mut().map(|g| g.as_mut_slice()).collect()
    }

    /// Position and time mapped into [0, 1]^4, clamped.
    pub fn normalize(&self, x: Vec3, t_norm: f64) -> [f64; 4] {
        let c = &self.config;
        let mut q = [0.0; 4];
        for a in 0..3 {
            let v = (x[a] - c.bounds_min[a]) / (c.bounds_max[a] - c.bounds_min[a]);
            q[a] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        q[3] = if t_norm.is_finite() { t_norm.clamp(0.0, 1.0) } else { 0.0 };
        q
    }

    pub fn query(&self, x: Vec3, t_norm: f64) -> Vec<f64> {
        self.query_trace(x, t_norm).0
    }

    pub fn query_trace(&self, x: Vec3, t_norm: f64) -> (Vec<f64>, HexPlaneTrace) {
        let q = self.normalize(x, t_norm);
        let c = self.config.channels;
        let levels = self.config.multipliers.len();
        let mut out = vec![1.0; levels * c];
        let mut footprints = Vec::with_capacity(levels * 6);
        let mut samples = vec![0.0; levels * 6 * c];
        for level in 0..levels {
            let res = self.config.resolution(level);
            for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
                let fp = footprint(res, q[a], q[b]);
                let grid = &self.grids[level * 6 + p];
                let s = &mut samples[(level * 6 + p) * c..(level * 6 + p + 1) * c];
                for (cell, w) in fp.cells.iter().zip(fp.weights) {
                    for (sk, g) in s.iter_mut().zip(&grid[cell * c..(cell + 1) * c]) {
                        *sk += w * g;
                    }
                }
                for (o, sk) in out[level * c..(level + 1) * c].iter_mut().zip(s.iter()) {
                    *o *= sk;
                }
                footprints.push(fp);
            }
        }
        (out, HexPlaneTrace { footprints, samples })
    }

    /// Accumulates d(loss)/d(grid cells) for upstream gradient `g_out`.
    pub fn backward(&self, trace: &HexPlaneTrace, g_out: &[f64], grads: &mut [Vec<f64>]) {
        let c = self.config.channels;
        for level in 0..self.config.multipliers.len() {
            let base = level * 6;
            for p in 0..6 {
                let fp = &trace.footprints[base + p];
                let grad = &mut grads[base + p];
                for ch in 0..c {
                    let mut d = g_out[level * c + ch];
                    for q in (0..6).filter(|&q| q != p) {
                        d *= trace.samples[(base + q) * c + ch];
                    }
                    if d == 0.0 {
                        continue;
                    }
                    for (cell, w) in fp.cells.iter().zip(fp.weights) {
                        grad[cell * c + ch] += w * d;
                    }
                }
            }
        }
    }
}
