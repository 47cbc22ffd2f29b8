//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10 log10(peak² / MSE)`; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|k| (-(k as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn gray(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => Ok(img.luma()),
        c => Err(Error::Domain(format!("ssim expects 1 or 3 channels, got {c}"))),
    }
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5) of
/// the luma images, with dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (x, y) = (gray(a)?, gray(b)?);
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (ow, oh) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                for (dx, gx) in g.iter().enumerate() {
                    let w = gy * gx;
                    let p = x.data[(oy + dy) * a.width + ox + dx];
                    let q = y.data[(oy + dy) * a.width + ox + dx];
                    mx += w * p;
                    my += w * q;
                    sxx += w * p * p;
                    syy += w * q * q;
                    sxy += w * p * q;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Structural dissimilarity `(1 − SSIM) / 2`.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricEntry {
    pub time: usize,
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub dssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    fn mean(&self, f: impl Fn(&MetricEntry) -> f64) -> f64 {
        if self.entries.is_empty() {
            return f64::NAN;
        }
        self.entries.iter().map(f).sum::<f64>() / self.entries.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|e| e.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|e| e.ssim)
    }

    pub fn mean_dssim(&self) -> f64 {
        self.mean(|e| e.dssim)
    }

    pub fn push(&mut self, time: usize, view: usize, rendered: &Image, gt: &Image) -> Result<()> {
        let s = ssim(rendered, gt)?;
        self.entries.push(MetricEntry {
            time,
            view,
            psnr: psnr(rendered, gt, 1.0)?,
            ssim: s,
            dssim: (1.0 - s) / 2.0,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = random(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = random(8, 8, 3, 2);
        let m: f64 = a.data.iter().zip(&c.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 192.0;
        assert!((psnr(&a, &c, 1.0).unwrap() + 10.0 * m.log10()).abs() < 1e-12);
        assert!(psnr(&a, &random(8, 7, 3, 1), 1.0).is_err());
    }

    #[test]
    fn ssim_cases() {
        let a = random(16, 16, 3, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(dssim(&a, &a).unwrap().abs() < 1e-12);
        let b = random(16, 16, 3, 4);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let mut bin = Image::new(16, 16, 1);
        for (k, v) in bin.data.iter_mut().enumerate() {
            *v = ((k * 7 + k / 16) % 3 == 0) as u8 as f64;
        }
        let mut inv = bin.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(matches!(ssim(&random(10, 12, 1, 0), &random(10, 12, 1, 1)), Err(Error::Domain(_))));
    }
}
