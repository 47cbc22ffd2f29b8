use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::features::{FeatureSet, FrameFeatures};
use crate::image::Image;
use crate::par;

/// Six handcrafted channels precede the random projection channels.
pub const MIN_FEATURE_DIM: usize = 6;
const PROJECTION_SEED: u64 = 0x0d15_ea5e_f00d;

fn projection_matrix(rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ ((rows as u64) << 32) ^ cols as u64);
    let bound = (3.0 / cols as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Deterministic patch descriptor on a p×p grid.
///
/// Per patch: mean RGB, mean absolute horizontal and vertical luma
/// differences, luma variance, then `dim - 6` channels of a fixed random
/// linear projection of the raw patch pixels.
pub fn extract_features(image: &Image, grid: usize, dim: usize) -> Result<FrameFeatures> {
    if image.channels != 3 {
        return Err(shape_err!("feature extraction expects RGB, got {} channels", image.channels));
    }
    if dim < MIN_FEATURE_DIM {
        return Err(shape_err!("feature width {dim} below minimum {MIN_FEATURE_DIM}"));
    }
    if grid == 0 || !image.width.is_multiple_of(grid) || !image.height.is_multiple_of(grid) {
        return Err(shape_err!(
            "{}x{} image does not divide into a {grid}x{grid} patch grid",
            image.width,
            image.height
        ));
    }
    let (pw, ph) = (image.width / grid, image.height / grid);
    let patch_len = pw * ph * 3;
    let proj = projection_matrix(dim - MIN_FEATURE_DIM, patch_len);
    let luma = image.luma();
    let tokens = par::map_range(grid * grid, |k| {
        let (col, row) = (k % grid, k / grid);
        let (x0, y0) = (col * pw, row * ph);
        let mut out = vec![0.0; dim];
        let mut raw = Vec::with_capacity(patch_len);
        let mut mean_l = 0.0;
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let p = image.pixel(x, y);
                for c in 0..3 {
                    out[c] += p[c];
                }
                raw.extend_from_slice(p);
                mean_l += luma.pixel(x, y)[0];
            }
        }
        let npx = (pw * ph) as f64;
        for c in out.iter_mut().take(3) {
            *c /= npx;
        }
        mean_l /= npx;
        let (mut gh, mut nh, mut gv, mut nv, mut var) = (0.0, 0usize, 0.0, 0usize, 0.0);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let l = luma.pixel(x, y)[0];
                var += (l - mean_l) * (l - mean_l);
                if x + 1 < x0 + pw {
                    gh += (luma.pixel(x + 1, y)[0] - l).abs();
                    nh += 1;
                }
                if y + 1 < y0 + ph {
                    gv += (luma.pixel(x, y + 1)[0] - l).abs();
                    nv += 1;
                }
            }
        }
        out[3] = if nh > 0 { gh / nh as f64 } else { 0.0 };
        out[4] = if nv > 0 { gv / nv as f64 } else { 0.0 };
        out[5] = var / npx;
        for (r, o) in out[MIN_FEATURE_DIM..].iter_mut().enumerate() {
            *o = crate::numerics::dot(&proj[r * patch_len..(r + 1) * patch_len], &raw);
        }
        out
    });
    Ok(FrameFeatures {
        time: 0,
        view: 0,
        grid,
        dim,
        tokens: tokens.concat(),
    })
}

/// Extracts features for every (time, view) image, laid out `i * views + j`.
pub fn extract_all_features(
    images: &[Image],
    frames: usize,
    views: usize,
    grid: usize,
    dim: usize,
) -> Result<FeatureSet> {
    if images.len() != frames * views {
        return Err(shape_err!(
            "{} images for {frames} frames x {views} views",
            images.len()
        ));
    }
    let mut list = Vec::with_capacity(images.len());
    for (k, img) in images.iter().enumerate() {
        let mut f = extract_features(img, grid, dim)?;
        f.time = k / views;
        f.view = k % views;
        list.push(f);
    }
    FeatureSet::from_frames(frames, views, list)
}
