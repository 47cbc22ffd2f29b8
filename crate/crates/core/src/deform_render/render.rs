//! Isotropic Gaussian splat rasterizer with an exact reverse pass.
//!
//! Each point becomes a screen-space disc of radius `rho = s * focal / depth`
//! (at least [`MIN_RADIUS_PX`]). Splats are sorted front to back and
//! composited per pixel centre with
//! `alpha_k = opacity_k * exp(-d^2 / (2 rho_k^2))`, truncated at
//! `TRUNCATION * rho_k`.

use crate::camera::{Camera, CameraFrame, Vec3};
use crate::error::Result;
use crate::image::Image;
use crate::par;
use crate::point_field::GaussianPointSet;

pub const TRUNCATION: f64 = 3.0;
pub const MIN_RADIUS_PX: f64 = 0.5;
/// Splats closer than this to the camera plane are skipped.
pub const NEAR: f64 = 0.01;
const TILE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub rgb: Image,
    pub alpha: Image,
}

#[derive(Clone, Debug)]
struct Splat {
    point: usize,
    u: f64,
    v: f64,
    depth: f64,
    rho: f64,
    clamped: bool,
    opacity: f64,
    color: Vec3,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

#[derive(Clone, Debug, Default)]
struct TileTrace {
    /// `offsets[p]..offsets[p + 1]` indexes `contrib` for local pixel `p`.
    offsets: Vec<u32>,
    /// (position in the tile's splat list, alpha, gaussian falloff)
    contrib: Vec<(u32, f64, f64)>,
}

/// Forward state needed by [`splat_backward`].
#[derive(Clone, Debug)]
pub struct RenderTrace {
    splats: Vec<Splat>,
    tile_lists: Vec<Vec<u32>>,
    tiles: Vec<TileTrace>,
    frame: CameraFrame,
    width: usize,
    height: usize,
    background: Vec3,
    point_count: usize,
}

/// Gradients with respect to every renderable point attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGrads {
    pub positions: Vec<Vec3>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl PointGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            scales: vec![0.0; n],
            opacities: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
        }
    }

    pub fn add(&mut self, other: &PointGrads) {
        for k in 0..self.scales.len() {
            for c in 0..3 {
                self.positions[k][c] += other.positions[k][c];
                self.colors[k][c] += other.colors[k][c];
            }
            self.scales[k] += other.scales[k];
            self.opacities[k] += other.opacities[k];
        }
    }
}

fn pixel_range(center: f64, reach: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - reach - 0.5).ceil();
    let hi = (center + reach - 0.5).floor();
    if hi < 0.0 || lo > (size - 1) as f64 || lo > hi {
        return None;
    }
    Some((lo.max(0.0) as usize, hi.min((size - 1) as f64) as usize))
}

fn build_splats(points: &GaussianPointSet, cam: &Camera, frame: &CameraFrame) -> Vec<Splat> {
    let mut splats: Vec<Splat> = (0..points.len())
        .filter_map(|k| {
            let p = frame.project(cam.position, points.positions[k]);
            if !p.valid || p.depth < NEAR {
                return None;
            }
            let raw = points.scales[k] * frame.focal / p.depth;
            let clamped = raw < MIN_RADIUS_PX;
            let rho = if clamped { MIN_RADIUS_PX } else { raw };
            let reach = TRUNCATION * rho;
            let (x0, x1) = pixel_range(p.u, reach, cam.width)?;
            let (y0, y1) = pixel_range(p.v, reach, cam.height)?;
            Some(Splat {
                point: k,
                u: p.u,
                v: p.v,
                depth: p.depth,
                rho,
                clamped,
                opacity: points.opacities[k],
                color: points.colors[k],
                x0,
                x1,
                y0,
                y1,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.point.cmp(&b.point)));
    splats
}

/// Renders without keeping the reverse-pass state.
pub fn splat_render(points: &GaussianPointSet, cam: &Camera, background: Vec3) -> RenderedFrame {
    splat_render_trace(points, cam, background).0
}

pub fn splat_render_trace(
    points: &GaussianPointSet,
    cam: &Camera,
    background: Vec3,
) -> (RenderedFrame, RenderTrace) {
    let frame = cam.frame();
    let splats = build_splats(points, cam, &frame);
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for (s_idx, s) in splats.iter().enumerate() {
        for ty in s.y0 / TILE..=s.y1 / TILE {
            for tx in s.x0 / TILE..=s.x1 / TILE {
                tile_lists[ty * tiles_x + tx].push(s_idx as u32);
            }
        }
    }

    let tile_out = par::map_range(tile_lists.len(), |t| {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (px0, py0) = (tx * TILE, ty * TILE);
        let (px1, py1) = ((px0 + TILE).min(w), (py0 + TILE).min(h));
        let list = &tile_lists[t];
        let mut trace = TileTrace::default();
        let mut rgb = Vec::with_capacity((px1 - px0) * (py1 - py0) * 3);
        let mut alpha = Vec::with_capacity((px1 - px0) * (py1 - py0));
        trace.offsets.push(0);
        for py in py0..py1 {
            for px in px0..px1 {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut trans = 1.0;
                let mut col = [0.0; 3];
                for (l, &si) in list.iter().enumerate() {
                    let s = &splats[si as usize];
                    if px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1 {
                        continue;
                    }
                    let (dx, dy) = (cx - s.u, cy - s.v);
                    let d2 = dx * dx + dy * dy;
                    let reach = TRUNCATION * s.rho;
                    if d2 > reach * reach {
                        continue;
                    }
                    let g = (-d2 / (2.0 * s.rho * s.rho)).exp();
                    let a = s.opacity * g;
                    for c in 0..3 {
                        col[c] += s.color[c] * a * trans;
                    }
                    trans *= 1.0 - a;
                    trace.contrib.push((l as u32, a, g));
                }
                for c in 0..3 {
                    rgb.push(col[c] + trans * background[c]);
                }
                alpha.push(1.0 - trans);
                trace.offsets.push(trace.contrib.len() as u32);
            }
        }
        (rgb, alpha, trace)
    });

    let mut rgb_img = Image::new(w, h, 3);
    let mut alpha_img = Image::new(w, h, 1);
    let mut tiles = Vec::with_capacity(tile_out.len());
    for (t, (rgb, alpha, trace)) in tile_out.into_iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (px0, py0) = (tx * TILE, ty * TILE);
        let (px1, py1) = ((px0 + TILE).min(w), (py0 + TILE).min(h));
        let mut k = 0;
        for py in py0..py1 {
            for px in px0..px1 {
                rgb_img.pixel_mut(px, py).copy_from_slice(&rgb[3 * k..3 * k + 3]);
                alpha_img.pixel_mut(px, py)[0] = alpha[k];
                k += 1;
            }
        }
        tiles.push(trace);
    }
    let trace = RenderTrace {
        splats,
        tile_lists,
        tiles,
        frame,
        width: w,
        height: h,
        background,
        point_count: points.len(),
    };
    (
        RenderedFrame {
            rgb: rgb_img,
            alpha: alpha_img,
        },
        trace,
    )
}

/// Back-propagates pixel gradients `d_rgb` (3 channels) and `d_alpha`
/// (1 channel) to point attributes.
pub fn splat_backward(trace: &RenderTrace, d_rgb: &Image, d_alpha: &Image) -> Result<PointGrads> {
    let (w, h) = (trace.width, trace.height);
    let expected_rgb = Image::new(w, h, 3);
    let expected_alpha = Image::new(w, h, 1);
    d_rgb.same_dims(&expected_rgb)?;
    d_alpha.same_dims(&expected_alpha)?;
    let tiles_x = w.div_ceil(TILE);
    let bg = trace.background;

    // [du, dv, drho, dopacity, dr, dg, db] per entry of each tile's list
    let per_tile = par::map_range(trace.tiles.len(), |t| {
        let list = &trace.tile_lists[t];
        let tt = &trace.tiles[t];
        let mut acc = vec![[0.0f64; 7]; list.len()];
        if list.is_empty() {
            return acc;
        }
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let (px0, py0) = (tx * TILE, ty * TILE);
        let (px1, py1) = ((px0 + TILE).min(w), (py0 + TILE).min(h));
        let mut prefix = Vec::new();
        let mut local = 0usize;
        for py in py0..py1 {
            for px in px0..px1 {
                let contrib = &tt.contrib[tt.offsets[local] as usize..tt.offsets[local + 1] as usize];
                local += 1;
                if contrib.is_empty() {
                    continue;
                }
                let dc = d_rgb.pixel(px, py);
                let da = d_alpha.pixel(px, py)[0];
                prefix.clear();
                let mut trans = 1.0;
                for &(_, a, _) in contrib {
                    prefix.push(trans);
                    trans *= 1.0 - a;
                }
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut behind = bg;
                let mut suffix = 1.0;
                for (n, &(l, a, g)) in contrib.iter().enumerate().rev() {
                    let s = &trace.splats[list[l as usize] as usize];
                    let tk = prefix[n];
                    let mut g_alpha = da * tk * suffix;
                    for c in 0..3 {
                        g_alpha += dc[c] * tk * (s.color[c] - behind[c]);
                    }
                    let e = &mut acc[l as usize];
                    for c in 0..3 {
                        e[4 + c] += dc[c] * a * tk;
                    }
                    e[3] += g_alpha * g;
                    let dg = g_alpha * s.opacity;
                    let inv_r2 = 1.0 / (s.rho * s.rho);
                    let (dx, dy) = (cx - s.u, cy - s.v);
                    e[0] += dg * g * dx * inv_r2;
                    e[1] += dg * g * dy * inv_r2;
                    if !s.clamped {
                        e[2] += dg * g * (dx * dx + dy * dy) * inv_r2 / s.rho;
                    }
                    for c in 0..3 {
                        behind[c] = s.color[c] * a + (1.0 - a) * behind[c];
                    }
                    suffix *= 1.0 - a;
                }
            }
        }
        acc
    });

    let mut splat_grads = vec![[0.0f64; 7]; trace.splats.len()];
    for (t, acc) in per_tile.into_iter().enumerate() {
        for (l, e) in acc.into_iter().enumerate() {
            let g = &mut splat_grads[trace.tile_lists[t][l] as usize];
            for c in 0..7 {
                g[c] += e[c];
            }
        }
    }

    let mut out = PointGrads::zeros(trace.point_count);
    let f = &trace.frame;
    for (s, g) in trace.splats.iter().zip(&splat_grads) {
        let k = s.point;
        let z = s.depth;
        // camera-space coordinates recovered from the projection
        let xr = (s.u - f.cx) * z / f.focal;
        let yd = (s.v - f.cy) * z / f.focal;
        let (du, dv, drho) = (g[0], g[1], g[2]);
        // d/dz terms of u, v, rho
        let mut dz = -du * f.focal * xr / (z * z) - dv * f.focal * yd / (z * z);
        let dxr = du * f.focal / z;
        let dyd = dv * f.focal / z;
        if !s.clamped {
            // rho = s * focal / z
            dz += -drho * s.rho / z;
            out.scales[k] += drho * f.focal / z;
        }
        for c in 0..3 {
            out.positions[k][c] += dxr * f.right[c] + dyd * f.down[c] + dz * f.forward[c];
            out.colors[k][c] += g[4 + c];
        }
        out.opacities[k] += g[3];
    }
    Ok(out)
}
