use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{length, sub, Vec3};
use crate::error::{shape_err, Error, Result};
use crate::par;

pub const INIT_OPACITY: f64 = 0.8;
pub const DEFAULT_JITTER_RADIUS: f64 = 0.02;

/// Isotropic Gaussian points: position, scale, rotation, opacity, RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPointSet {
    pub positions: Vec<Vec3>,
    pub scales: Vec<f64>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

/// Colored point cloud used to seed a [`GaussianPointSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

impl GaussianPointSet {
    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
            opacities: Vec::new(),
            colors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec3, scale: f64, rotation: [f64; 4], opacity: f64, color: Vec3) {
        self.positions.push(position);
        self.scales.push(scale);
        self.rotations.push(rotation);
        self.opacities.push(opacity);
        self.colors.push(color);
    }

    /// Checks the set invariants: matching lengths, positive scales,
    /// opacities in [0, 1], unit quaternions, finite values.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.scales.len() != n
            || self.rotations.len() != n
            || self.opacities.len() != n
            || self.colors.len() != n
        {
            return Err(shape_err!("point attribute arrays have different lengths"));
        }
        for k in 0..n {
            let q = self.rotations[k];
            let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            let finite = self.positions[k].iter().all(|v| v.is_finite())
                && self.colors[k].iter().all(|v| v.is_finite())
                && self.scales[k].is_finite()
                && self.opacities[k].is_finite();
            if !finite
                || !(self.scales[k] > 0.0)
                || !(0.0..=1.0).contains(&self.opacities[k])
                || (qn - 1.0).abs() > 1e-6
            {
                return Err(Error::Data(format!("point {k} violates the point-set invariants")));
            }
        }
        Ok(())
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud {
            positions: self.positions.clone(),
            colors: self.colors.clone(),
        }
    }
}

/// Median over points of the distance to the nearest other point.
/// Exact brute force, O(N^2).
pub fn nearest_neighbor_stats(positions: &[Vec3]) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::Domain(
            "nearest-neighbour statistics need at least two points".into(),
        ));
    }
    let mut nn = par::map_range(positions.len(), |i| {
        positions
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, p)| length(sub(*p, positions[i])))
            .fold(f64::INFINITY, f64::min)
    });
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    Ok(if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    })
}

fn random_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let p = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let l2: f64 = p.iter().map(|v| v * v).sum();
        if l2 <= 1.0 {
            return [p[0] * radius, p[1] * radius, p[2] * radius];
        }
    }
}

fn scale_for(positions: &[Vec3], fallback: f64) -> f64 {
    match nearest_neighbor_stats(positions) {
        Ok(d) if d > 1e-6 => 0.5 * d,
        _ => fallback,
    }
}

/// Seeds `n` Gaussians from a point cloud.
///
/// Larger clouds are subsampled at evenly spaced indices; smaller ones are
/// padded with copies jittered inside a ball of `jitter_radius`. Scales are
/// half the median nearest-neighbour distance of the result.
pub fn init_points(cloud: &PointCloud, n: usize, jitter_radius: f64, seed: u64) -> Result<GaussianPointSet> {
    if n < 1 {
        return Err(Error::Config("point count must be at least 1".into()));
    }
    if cloud.positions.is_empty() {
        return Err(Error::Data("point cloud is empty".into()));
    }
    if cloud.colors.len() != cloud.positions.len() {
        return Err(shape_err!("cloud positions and colors differ in length"));
    }
    let m = cloud.positions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    if m >= n {
        for k in 0..n {
            let idx = k * m / n;
            positions.push(cloud.positions[idx]);
            colors.push(cloud.colors[idx]);
        }
    } else {
        positions.extend_from_slice(&cloud.positions);
        colors.extend_from_slice(&cloud.colors);
        for k in m..n {
            let src = k % m;
            let j = random_in_ball(&mut rng, jitter_radius);
            let p = cloud.positions[src];
            positions.push([p[0] + j[0], p[1] + j[1], p[2] + j[2]]);
            colors.push(cloud.colors[src]);
        }
    }
    let s = scale_for(&positions, jitter_radius.max(1e-3));
    Ok(GaussianPointSet {
        scales: vec![s; n],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
        opacities: vec![INIT_OPACITY; n],
        colors,
        positions,
    })
}

/// Uniform random points in an axis-aligned box with neutral grey color.
pub fn init_random(lo: Vec3, hi: Vec3, n: usize, seed: u64) -> Result<GaussianPointSet> {
    if n < 1 {
        return Err(Error::Config("point count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec3> = (0..n)
        .map(|_| {
            [
                rng.gen_range(lo[0]..=hi[0]),
                rng.gen_range(lo[1]..=hi[1]),
                rng.gen_range(lo[2]..=hi[2]),
            ]
        })
        .collect();
    let s = scale_for(&positions, 0.05);
    Ok(GaussianPointSet {
        scales: vec![s; n],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
        opacities: vec![INIT_OPACITY; n],
        colors: vec![[0.5; 3]; n],
        positions,
    })
}

/// Writes the text `.pts` format: header `DS4DPTS1 N`, then one line per
/// point `x y z s qw qx qy qz sigma r g b`.
pub fn write_pts(path: &Path, points: &GaussianPointSet) -> Result<()> {
    let mut s = String::with_capacity(64 * points.len() + 16);
    writeln!(s, "DS4DPTS1 {}", points.len()).expect("string write");
    for k in 0..points.len() {
        let p = points.positions[k];
        let q = points.rotations[k];
        let c = points.colors[k];
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            p[0], p[1], p[2], points.scales[k], q[0], q[1], q[2], q[3], points.opacities[k], c[0], c[1], c[2]
        )
        .expect("string write");
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pts(path: &Path) -> Result<GaussianPointSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let mut h = header.split_whitespace();
    if h.next() != Some("DS4DPTS1") {
        return Err(Error::format(path, "missing DS4DPTS1 header"));
    }
    let n: usize = h
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(path, "missing point count"))?;
    let mut set = GaussianPointSet::empty();
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("bad number on point line {k}")))?;
        if v.len() != 12 {
            return Err(Error::format(path, format!("point line {k} has {} fields", v.len())));
        }
        set.push(
            [v[0], v[1], v[2]],
            v[3],
            [v[4], v[5], v[6], v[7]],
            v[8],
            [v[9], v[10], v[11]],
        );
    }
    if set.len() != n {
        return Err(Error::format(path, format!("header says {n} points, found {}", set.len())));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(k: usize) -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in 0..k {
            for y in 0..k {
                for z in 0..k {
                    v.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        v
    }

    #[test]
    fn nn_two_points_and_lattice() {
        assert_eq!(nearest_neighbor_stats(&[[0.0; 3], [0.0, 3.0, 0.0]]).unwrap(), 3.0);
        assert_eq!(nearest_neighbor_stats(&lattice(3)).unwrap(), 1.0);
        assert!(nearest_neighbor_stats(&[[0.0; 3]]).is_err());
    }

    #[test]
    fn nn_random_cloud_matches_second_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..57)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let mut d = Vec::new();
        for i in 0..pts.len() {
            let mut best = f64::MAX;
            for j in 0..pts.len() {
                if i != j {
                    let dd = ((pts[i][0] - pts[j][0]).powi(2)
                        + (pts[i][1] - pts[j][1]).powi(2)
                        + (pts[i][2] - pts[j][2]).powi(2))
                    .sqrt();
                    best = best.min(dd);
                }
            }
            d.push(best);
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(nearest_neighbor_stats(&pts).unwrap(), d[28]);
    }

    #[test]
    fn exact_size_cloud_is_copied() {
        let cloud = PointCloud {
            positions: lattice(2),
            colors: vec![[0.1, 0.2, 0.3]; 8],
        };
        let set = init_points(&cloud, 8, 0.01, 0).unwrap();
        assert_eq!(set.positions, cloud.positions);
        assert_eq!(set.opacities, vec![0.8; 8]);
        assert!(set.rotations.iter().all(|q| *q == [1.0, 0.0, 0.0, 0.0]));
        set.validate().unwrap();
    }

    #[test]
    fn single_point_upsampled_within_jitter() {
        let cloud = PointCloud {
            positions: vec![[1.0, 2.0, 3.0]],
            colors: vec![[1.0, 0.0, 0.0]],
        };
        let set = init_points(&cloud, 4, 0.05, 11).unwrap();
        assert_eq!(set.len(), 4);
        for p in &set.positions {
            assert!(length(sub(*p, [1.0, 2.0, 3.0])) <= 0.05);
        }
        assert!(set.colors.iter().all(|c| *c == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn lattice_scale_is_half() {
        let pos = lattice(3);
        let cloud = PointCloud {
            colors: vec![[0.5; 3]; pos.len()],
            positions: pos,
        };
        let set = init_points(&cloud, 27, 0.01, 0).unwrap();
        assert!(set.scales.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn zero_points_is_config_error() {
        let cloud = PointCloud {
            positions: vec![[0.0; 3]],
            colors: vec![[0.0; 3]],
        };
        assert!(matches!(init_points(&cloud, 0, 0.01, 0), Err(Error::Config(_))));
    }

    #[test]
    fn pts_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = init_random([-1.0; 3], [1.0; 3], 13, 4).unwrap();
        let path = dir.path().join("p.pts");
        write_pts(&path, &set).unwrap();
        assert_eq!(read_pts(&path).unwrap(), set);
    }
}
