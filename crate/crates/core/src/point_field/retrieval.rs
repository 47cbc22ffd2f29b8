use super::GaussianPointSet;
use crate::camera::Camera;
use crate::error::{shape_err, Result};
use crate::features::FeatureSet;
use crate::par;

/// Per-point features sampled from each view at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFeatures {
    pub time: usize,
    pub views: usize,
    pub points: usize,
    pub width: usize,
    /// (view, point, channel), slowest to fastest. Invalid entries are zero.
    pub data: Vec<f64>,
    /// (view, point)
    pub valid: Vec<bool>,
}

impl PointFeatures {
    pub fn feature(&self, view: usize, point: usize) -> &[f64] {
        let o = (view * self.points + point) * self.width;
        &self.data[o..o + self.width]
    }

    pub fn is_valid(&self, view: usize, point: usize) -> bool {
        self.valid[view * self.points + point]
    }
}

/// Bilinear sample of a p×p token grid at continuous token coordinates
/// (`gx`, `gy`), where token `(col, row)` sits at integer `(col, row)`.
/// Coordinates outside the centre hull clamp to the border tokens.
pub fn sample_token_grid(frame: &[f64], grid: usize, dim: usize, gx: f64, gy: f64, out: &mut [f64]) {
    let maxc = (grid - 1) as f64;
    let x = gx.clamp(0.0, maxc);
    let y = gy.clamp(0.0, maxc);
    let x0 = (x.floor() as usize).min(grid.saturating_sub(2));
    let y0 = (y.floor() as usize).min(grid.saturating_sub(2));
    let x1 = (x0 + 1).min(grid - 1);
    let y1 = (y0 + 1).min(grid - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let w = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    let idx = [y0 * grid + x0, y0 * grid + x1, y1 * grid + x0, y1 * grid + x1];
    out.iter_mut().for_each(|v| *v = 0.0);
    for (wk, k) in w.iter().zip(idx) {
        if *wk == 0.0 {
            continue;
        }
        let tok = &frame[k * dim..(k + 1) * dim];
        for (o, t) in out.iter_mut().zip(tok) {
            *o += wk * t;
        }
    }
}

/// Projects every point into every view and samples that view's token grid
/// at the projected pixel. Token `(col, row)` is centred on pixel
/// `((col + 0.5) w / p, (row + 0.5) h / p)`. Points outside the image or
/// behind the camera get zero features and are marked invalid. Occlusion is
/// not tested.
pub fn retrieve_point_features(
    points: &GaussianPointSet,
    features: &FeatureSet,
    cameras: &[Camera],
    time: usize,
) -> Result<PointFeatures> {
    if cameras.len() != features.views {
        return Err(shape_err!(
            "{} cameras for features with {} views",
            cameras.len(),
            features.views
        ));
    }
    if time >= features.frames {
        return Err(shape_err!(
            "time {time} outside feature set with {} frames",
            features.frames
        ));
    }
    let n = points.len();
    let width = features.dim;
    let grid = features.grid;
    let per_view = par::map_range(cameras.len(), |j| {
        let cam = &cameras[j];
        let frame = features.frame(time, j);
        let cam_frame = cam.frame();
        let mut data = vec![0.0; n * width];
        let mut valid = vec![false; n];
        for (k, x) in points.positions.iter().enumerate() {
            let proj = cam_frame.project(cam.position, *x);
            if !cam.in_frustum(&proj) {
                continue;
            }
            let gx = proj.u * grid as f64 / cam.width as f64 - 0.5;
            let gy = proj.v * grid as f64 / cam.height as f64 - 0.5;
            sample_token_grid(frame, grid, width, gx, gy, &mut data[k * width..(k + 1) * width]);
            valid[k] = true;
        }
        (data, valid)
    });
    let mut data = Vec::with_capacity(cameras.len() * n * width);
    let mut valid = Vec::with_capacity(cameras.len() * n);
    for (d, v) in per_view {
        data.extend(d);
        valid.extend(v);
    }
    Ok(PointFeatures {
        time,
        views: cameras.len(),
        points: n,
        width,
        data,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_field::init_random;

    fn grid_frame(grid: usize, dim: usize) -> Vec<f64> {
        (0..grid * grid * dim).map(|k| (k as f64 * 0.731).sin()).collect()
    }

    #[test]
    fn token_centres_are_exact() {
        let f = grid_frame(4, 3);
        let mut out = vec![0.0; 3];
        sample_token_grid(&f, 4, 3, 2.0, 1.0, &mut out);
        assert_eq!(out, f[(4 + 2) * 3..(4 + 3) * 3].to_vec());
        sample_token_grid(&f, 4, 3, 3.0, 3.0, &mut out);
        assert_eq!(out, f[15 * 3..16 * 3].to_vec());
    }

    #[test]
    fn horizontal_midpoint_is_mean() {
        let f = grid_frame(4, 3);
        let mut out = vec![0.0; 3];
        sample_token_grid(&f, 4, 3, 1.5, 2.0, &mut out);
        for c in 0..3 {
            let e = 0.5 * (f[(8 + 1) * 3 + c] + f[(8 + 2) * 3 + c]);
            assert!((out[c] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_along_each_axis() {
        let f = grid_frame(5, 2);
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        let mut m = vec![0.0; 2];
        sample_token_grid(&f, 5, 2, 1.1, 2.3, &mut a);
        sample_token_grid(&f, 5, 2, 1.9, 2.3, &mut b);
        sample_token_grid(&f, 5, 2, 1.5, 2.3, &mut m);
        for c in 0..2 {
            assert!((m[c] - 0.5 * (a[c] + b[c])).abs() < 1e-14);
        }
    }

    #[test]
    fn behind_camera_is_zero_and_invalid() {
        let cam = Camera::new([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.9, 32, 32).unwrap();
        let mut pts = init_random([-0.1; 3], [0.1; 3], 2, 0).unwrap();
        pts.positions[1] = [0.0, 0.0, 5.0];
        let mut fs = FeatureSet::zeros(1, 1, 4, 3);
        fs.data.iter_mut().for_each(|v| *v = 1.0);
        let pf = retrieve_point_features(&pts, &fs, &[cam], 0).unwrap();
        assert!(pf.is_valid(0, 0));
        assert!(!pf.is_valid(0, 1));
        assert_eq!(pf.feature(0, 1), &[0.0; 3]);
        assert_eq!(pf.feature(0, 0), &[1.0; 3]);
    }

    #[test]
    fn camera_count_mismatch() {
        let pts = init_random([-0.1; 3], [0.1; 3], 2, 0).unwrap();
        let fs = FeatureSet::zeros(1, 2, 4, 3);
        let cam = Camera::new([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.9, 32, 32).unwrap();
        assert!(retrieve_point_features(&pts, &fs, &[cam], 0).is_err());
    }
}
