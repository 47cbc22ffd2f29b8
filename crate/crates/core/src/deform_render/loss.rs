use std::sync::OnceLock;

use super::RenderedFrame;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::stable_sum;

/// Loss coefficients. `sds`, `alpha1` and `alpha2` are carried for
/// completeness; no score-distillation term is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub sds: f64,
    pub rec: f64,
    pub mask: f64,
    pub proxy: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sds: 0.0,
            rec: 1.0,
            mask: 0.5,
            proxy: 0.1,
            alpha1: 0.0,
            alpha2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sds, self.rec, self.mask, self.proxy, self.alpha1, self.alpha2];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

fn mse_with_grad(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_dims(b)?;
    let n = a.data.len().max(1) as f64;
    let sq: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).collect();
    let value = stable_sum(&sq) / n;
    let grad = want_grad.then(|| {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| 2.0 * (x - y) / n).collect();
        Image::from_vec(a.width, a.height, a.channels, data).expect("same dims")
    });
    Ok((value, grad))
}

/// Mean squared error over all RGB values.
pub fn loss_rec(rendered: &Image, gt: &Image) -> Result<f64> {
    Ok(mse_with_grad(rendered, gt, false)?.0)
}

pub fn loss_rec_grad(rendered: &Image, gt: &Image) -> Result<(f64, Image)> {
    let (v, g) = mse_with_grad(rendered, gt, true)?;
    Ok((v, g.expect("requested")))
}

/// Mean squared error between rendered alpha and a {0, 1} mask.
pub fn loss_mask(alpha: &Image, mask: &Image) -> Result<f64> {
    Ok(mse_with_grad(alpha, mask, false)?.0)
}

pub fn loss_mask_grad(alpha: &Image, mask: &Image) -> Result<(f64, Image)> {
    let (v, g) = mse_with_grad(alpha, mask, true)?;
    Ok((v, g.expect("requested")))
}

// Perceptual proxy: a fixed bank of 5x5 zero-sum filters (two
// difference-of-Gaussians, six oriented derivative-of-Gaussian edges) run on
// luma at full and half resolution. Responses at each location are
// normalised by sqrt(|phi|^2 + eps^2) and compared with squared L2.

pub const PROXY_FILTERS: usize = 8;
const KSIZE: usize = 5;
const PROXY_EPS: f64 = 0.05;

type Kernel = [f64; KSIZE * KSIZE];

fn gaussian_kernel(sigma: f64) -> Kernel {
    let mut k = [0.0; KSIZE * KSIZE];
    let r = (KSIZE / 2) as f64;
    for y in 0..KSIZE {
        for x in 0..KSIZE {
            let (dx, dy) = (x as f64 - r, y as f64 - r);
            k[y * KSIZE + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn finish_kernel(mut k: Kernel) -> Kernel {
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn filter_bank() -> &'static [Kernel; PROXY_FILTERS] {
    static BANK: OnceLock<[Kernel; PROXY_FILTERS]> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut bank = [[0.0; KSIZE * KSIZE]; PROXY_FILTERS];
        for (slot, (s1, s2)) in [(0.7, 1.4), (1.0, 2.0)].into_iter().enumerate() {
            let (a, b) = (gaussian_kernel(s1), gaussian_kernel(s2));
            let mut k = [0.0; KSIZE * KSIZE];
            for i in 0..k.len() {
                k[i] = a[i] - b[i];
            }
            bank[slot] = finish_kernel(k);
        }
        let g = gaussian_kernel(1.0);
        let r = (KSIZE / 2) as f64;
        for o in 0..6 {
            let theta = o as f64 * std::f64::consts::PI / 6.0;
            let (c, s) = (theta.cos(), theta.sin());
            let mut k = [0.0; KSIZE * KSIZE];
            for y in 0..KSIZE {
                for x in 0..KSIZE {
                    let (dx, dy) = (x as f64 - r, y as f64 - r);
                    k[y * KSIZE + x] = -(dx * c + dy * s) * g[y * KSIZE + x];
                }
            }
            bank[2 + o] = finish_kernel(k);
        }
        bank
    })
}

/// Grey plane used by the proxy (luma at one scale).
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

fn luma_plane(img: &Image) -> Plane {
    let l = img.luma();
    Plane {
        w: l.width,
        h: l.height,
        v: l.data,
    }
}

fn downsample(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut v = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x2, y2) = (2 * x, 2 * y);
            v[y * w + x] = 0.25
                * (p.v[y2 * p.w + x2]
                    + p.v[y2 * p.w + x2 + 1]
                    + p.v[(y2 + 1) * p.w + x2]
                    + p.v[(y2 + 1) * p.w + x2 + 1]);
        }
    }
    Plane { w, h, v }
}

fn downsample_backward(src: &Plane, g: &[f64]) -> Vec<f64> {
    let (w, h) = (src.w / 2, src.h / 2);
    let mut out = vec![0.0; src.w * src.h];
    for y in 0..h {
        for x in 0..w {
            let q = 0.25 * g[y * w + x];
            let (x2, y2) = (2 * x, 2 * y);
            out[y2 * src.w + x2] += q;
            out[y2 * src.w + x2 + 1] += q;
            out[(y2 + 1) * src.w + x2] += q;
            out[(y2 + 1) * src.w + x2 + 1] += q;
        }
    }
    out
}

/// Valid-region responses, laid out (location, filter).
fn responses(p: &Plane) -> (usize, usize, Vec<f64>) {
    let (ow, oh) = (p.w + 1 - KSIZE, p.h + 1 - KSIZE);
    let bank = filter_bank();
    let mut out = vec![0.0; ow * oh * PROXY_FILTERS];
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * PROXY_FILTERS;
            for (f, k) in bank.iter().enumerate() {
                let mut acc = 0.0;
                for ky in 0..KSIZE {
                    let row = &p.v[(y + ky) * p.w + x..(y + ky) * p.w + x + KSIZE];
                    for kx in 0..KSIZE {
                        acc += k[ky * KSIZE + kx] * row[kx];
                    }
                }
                out[o + f] = acc;
            }
        }
    }
    (ow, oh, out)
}

fn responses_backward(p: &Plane, ow: usize, oh: usize, g: &[f64]) -> Vec<f64> {
    let bank = filter_bank();
    let mut out = vec![0.0; p.w * p.h];
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * PROXY_FILTERS;
            for (f, k) in bank.iter().enumerate() {
                let gv = g[o + f];
                if gv == 0.0 {
                    continue;
                }
                for ky in 0..KSIZE {
                    for kx in 0..KSIZE {
                        out[(y + ky) * p.w + x + kx] += gv * k[ky * KSIZE + kx];
                    }
                }
            }
        }
    }
    out
}

fn normalize_features(phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut n = vec![0.0; phi.len()];
    let mut q = Vec::with_capacity(phi.len() / PROXY_FILTERS);
    for (src, dst) in phi.chunks_exact(PROXY_FILTERS).zip(n.chunks_exact_mut(PROXY_FILTERS)) {
        let qq = (src.iter().map(|v| v * v).sum::<f64>() + PROXY_EPS * PROXY_EPS).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = s / qq;
        }
        q.push(qq);
    }
    (n, q)
}

fn proxy_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_dims(b)?;
    let mut pa = luma_plane(a);
    let mut pb = luma_plane(b);
    let mut value = 0.0;
    // gradient w.r.t. luma at each scale, pulled back to full resolution below
    let mut scale_grads: Vec<(Plane, Vec<f64>)> = Vec::new();
    let mut planes = Vec::new();
    for _scale in 0..2 {
        if pa.w < KSIZE || pa.h < KSIZE {
            break;
        }
        let (ow, oh, fa) = responses(&pa);
        let (_, _, fb) = responses(&pb);
        let (na, qa) = normalize_features(&fa);
        let (nb, _) = normalize_features(&fb);
        let m = (ow * oh) as f64;
        let per_loc: Vec<f64> = na
            .chunks_exact(PROXY_FILTERS)
            .zip(nb.chunks_exact(PROXY_FILTERS))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect();
        value += stable_sum(&per_loc) / m;
        if want_grad {
            let mut g_phi = vec![0.0; fa.len()];
            for (loc, &qq) in qa.iter().enumerate() {
                let r = loc * PROXY_FILTERS..(loc + 1) * PROXY_FILTERS;
                let gn: Vec<f64> = na[r.clone()]
                    .iter()
                    .zip(&nb[r.clone()])
                    .map(|(x, y)| 2.0 * (x - y) / m)
                    .collect();
                let phi = &fa[r.clone()];
                let proj: f64 = phi.iter().zip(&gn).map(|(p, g)| p * g).sum();
                for (f, dst) in g_phi[r].iter_mut().enumerate() {
                    *dst = gn[f] / qq - phi[f] * proj / (qq * qq * qq);
                }
            }
            let g_plane = responses_backward(&pa, ow, oh, &g_phi);
            scale_grads.push((pa.clone(), g_plane));
        }
        planes.push(pa.clone());
        pa = downsample(&pa);
        pb = downsample(&pb);
    }
    if !want_grad {
        return Ok((value, None));
    }
    // pull the coarse-scale gradient back through the pooling chain
    let mut total = vec![0.0; a.width * a.height];
    for (s, (_, g)) in scale_grads.iter().enumerate() {
        let mut g = g.clone();
        for lvl in (0..s).rev() {
            g = downsample_backward(&planes[lvl], &g);
        }
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    let mut grad = Image::new(a.width, a.height, a.channels);
    let weights: &[f64] = if a.channels == 1 {
        &[1.0]
    } else {
        &[0.299, 0.587, 0.114]
    };
    for (px, g) in total.iter().enumerate() {
        for (c, w) in weights.iter().enumerate() {
            grad.data[px * a.channels + c] = g * w;
        }
    }
    Ok((value, Some(grad)))
}

/// Deterministic structural distance standing in for a learned perceptual
/// metric. Gradients are taken with respect to the first argument.
pub fn loss_perceptual_proxy(rendered: &Image, gt: &Image) -> Result<f64> {
    Ok(proxy_impl(rendered, gt, false)?.0)
}

pub fn loss_perceptual_proxy_grad(rendered: &Image, gt: &Image) -> Result<(f64, Image)> {
    let (v, g) = proxy_impl(rendered, gt, true)?;
    Ok((v, g.expect("requested")))
}

/// Per-term means over the evaluated frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub mask: f64,
    pub proxy: f64,
}

/// Weighted loss averaged over aligned (rendered, target rgb, target mask)
/// triples. Returns the breakdown and per-frame (d_rgb, d_alpha) gradients.
pub fn total_loss(
    rendered: &[RenderedFrame],
    targets: &[(&Image, &Image)],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<(Image, Image)>)> {
    if rendered.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} rendered frames for {} targets",
            rendered.len(),
            targets.len()
        )));
    }
    weights.validate()?;
    let n = rendered.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    let mut grads = Vec::with_capacity(rendered.len());
    for (r, (rgb, mask)) in rendered.iter().zip(targets) {
        let (lr, mut g_rgb) = loss_rec_grad(&r.rgb, rgb)?;
        let (lm, mut g_a) = loss_mask_grad(&r.alpha, mask)?;
        g_rgb.data.iter_mut().for_each(|v| *v *= weights.rec / n);
        g_a.data.iter_mut().for_each(|v| *v *= weights.mask / n);
        let lp = if weights.proxy > 0.0 {
            let (lp, gp) = loss_perceptual_proxy_grad(&r.rgb, rgb)?;
            for (d, s) in g_rgb.data.iter_mut().zip(&gp.data) {
                *d += s * weights.proxy / n;
            }
            lp
        } else {
            loss_perceptual_proxy(&r.rgb, rgb)?
        };
        out.rec += lr / n;
        out.mask += lm / n;
        out.proxy += lp / n;
        grads.push((g_rgb, g_a));
    }
    out.total = weights.rec * out.rec + weights.mask * out.mask + weights.proxy * out.proxy;
    Ok((out, grads))
}
