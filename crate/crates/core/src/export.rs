//! Grayscale visualizations of heatmaps and fusion score maps.

use std::path::Path;

use crate::camera::Camera;
use crate::deform_render::MIN_RADIUS_PX;
use crate::error::{shape_err, Result};
use crate::image::{write_pnm, Image};
use crate::point_field::GaussianPointSet;

/// Nearest-neighbour upscale of a p×p grid (row-major) to `width × height`.
pub fn heatmap_image(grid: &[f64], p: usize, width: usize, height: usize) -> Result<Image> {
    if p == 0 || grid.len() != p * p {
        return Err(shape_err!("heatmap has {} values, expected {p}x{p}", grid.len()));
    }
    let mut img = Image::new(width, height, 1);
    for y in 0..height {
        let row = y * p / height;
        for x in 0..width {
            img.data[y * width + x] = grid[row * p + x * p / width].clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

pub fn export_heatmap(grid: &[f64], p: usize, width: usize, height: usize, path: &Path) -> Result<()> {
    write_pnm(path, &heatmap_image(grid, p, width, height)?)
}

/// Splats one weight per point as a disc of the point's footprint radius,
/// keeping the per-pixel maximum, then divides by the image maximum.
pub fn scoremap_image(weights: &[f64], points: &GaussianPointSet, cam: &Camera) -> Result<Image> {
    if weights.len() != points.len() {
        return Err(shape_err!("{} weights for {} points", weights.len(), points.len()));
    }
    cam.validate()?;
    let frame = cam.frame();
    let mut img = Image::new(cam.width, cam.height, 1);
    for (k, &w) in weights.iter().enumerate() {
        let p = frame.project(cam.position, points.positions[k]);
        if !p.valid {
            continue;
        }
        let r = (points.scales[k] * frame.focal / p.depth).max(MIN_RADIUS_PX);
        let x0 = (p.u - r - 0.5).ceil().max(0.0) as usize;
        let y0 = (p.v - r - 0.5).ceil().max(0.0) as usize;
        let x1 = ((p.u + r - 0.5).floor()).min(cam.width as f64 - 1.0);
        let y1 = ((p.v + r - 0.5).floor()).min(cam.height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 + 0.5 - p.u, y as f64 + 0.5 - p.v);
                if dx * dx + dy * dy <= r * r {
                    let v = &mut img.data[y * cam.width + x];
                    *v = v.max(w);
                }
            }
        }
    }
    let max = img.data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        img.data.iter_mut().for_each(|v| *v /= max);
    }
    Ok(img)
}

pub fn export_scoremap(weights: &[f64], points: &GaussianPointSet, cam: &Camera, path: &Path) -> Result<()> {
    write_pnm(path, &scoremap_image(weights, points, cam)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::read_pnm;

    #[test]
    fn heatmap_blocks_and_round_trip() {
        let zero = heatmap_image(&[0.0; 4], 2, 8, 8).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));
        let img = heatmap_image(&[0.0, 1.0, 0.0, 0.0], 2, 8, 6).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(img.data[y * 8 + x], (x >= 4 && y < 3) as u8 as f64);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let grid = [0.1, 0.25, 0.5, 0.9];
        export_heatmap(&grid, 2, 4, 4, &path).unwrap();
        let back = read_pnm(&path).unwrap();
        let expect = heatmap_image(&grid, 2, 4, 4).unwrap();
        for (a, b) in back.data.iter().zip(&expect.data) {
            assert_eq!(*a, (b * 255.0).round() / 255.0);
        }
    }

    #[test]
    fn scoremap_single_point_and_max_reduce() {
        let cam = Camera::orbit([0.0; 3], 3.0, 0.0, 0.0, 0.7, 32, 32);
        let mut pts = GaussianPointSet::empty();
        pts.push([0.0, 0.0, 0.0], 0.1, [1.0, 0.0, 0.0, 0.0], 1.0, [1.0; 3]);
        pts.push([0.5, 0.0, 0.0], 0.1, [1.0, 0.0, 0.0, 0.0], 1.0, [1.0; 3]);
        pts.push([0.52, 0.0, 0.0], 0.1, [1.0, 0.0, 0.0, 0.0], 1.0, [1.0; 3]);
        let img = scoremap_image(&[1.0, 0.0, 0.0], &pts, &cam).unwrap();
        let lit: Vec<usize> = (0..img.data.len()).filter(|&k| img.data[k] > 0.0).collect();
        assert!(!lit.is_empty());
        assert!(lit.iter().all(|&k| (k % 32).abs_diff(16) <= 3 && (k / 32).abs_diff(16) <= 3));

        let w = [0.2, 0.3, 0.6];
        let img = scoremap_image(&w, &pts, &cam).unwrap();
        // brute force: every pixel's max over covering points, normalised
        let frame = cam.frame();
        for y in 0..32 {
            for x in 0..32 {
                let mut m: f64 = 0.0;
                for k in 0..3 {
                    let p = frame.project(cam.position, pts.positions[k]);
                    let r = (pts.scales[k] * frame.focal / p.depth).max(MIN_RADIUS_PX);
                    let (dx, dy) = (x as f64 + 0.5 - p.u, y as f64 + 0.5 - p.v);
                    if dx * dx + dy * dy <= r * r {
                        m = m.max(w[k]);
                    }
                }
                assert!((img.data[y * 32 + x] - m / 0.6).abs() < 1e-12);
            }
        }
        let uni = scoremap_image(&[0.5; 3], &pts, &cam).unwrap();
        assert!(uni.data.iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}
