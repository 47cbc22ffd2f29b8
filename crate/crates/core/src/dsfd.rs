//! Dynamic/static feature decoupling.
//!
//! Every frame token is split into its projection onto a reference token
//! (static) and the orthogonal residual (dynamic). References are the
//! middle frame and the temporal average of each view. The decoupled
//! token is the original token followed by the dynamic part(s).

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{shape_err, Error, Result};
use crate::features::FeatureSet;
use crate::par;

/// References with squared norm below this are treated as zero.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceMode {
    Mid,
    Avg,
    ConcatBoth,
}

impl FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" => Ok(Self::Mid),
            "avg" => Ok(Self::Avg),
            "concat-both" => Ok(Self::ConcatBoth),
            _ => Err(Error::Config(format!(
                "unknown decouple mode `{s}` (expected mid, avg or concat-both)"
            ))),
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mid => "mid",
            Self::Avg => "avg",
            Self::ConcatBoth => "concat-both",
        })
    }
}

/// How two dynamic parts are merged in `ConcatBoth` mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Combine {
    #[default]
    Concat,
    Sum,
}

/// Whether the projection pairs tokens or whole flattened frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Granularity {
    #[default]
    Token,
    Flattened,
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("unknown combine rule `{s}` (expected concat or sum)"))),
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Self::Token),
            "flattened" => Ok(Self::Flattened),
            _ => Err(Error::Config(format!(
                "unknown granularity `{s}` (expected token or flattened)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoupleOptions {
    pub mode: ReferenceMode,
    pub combine: Combine,
    pub granularity: Granularity,
}

impl Default for DecoupleOptions {
    fn default() -> Self {
        Self {
            mode: ReferenceMode::ConcatBoth,
            combine: Combine::Concat,
            granularity: Granularity::Token,
        }
    }
}

impl DecoupleOptions {
    /// Width of a decoupled token for base width `dim`.
    pub fn output_dim(&self, dim: usize) -> usize {
        match (self.mode, self.combine) {
            (ReferenceMode::ConcatBoth, Combine::Concat) => 3 * dim,
            _ => 2 * dim,
        }
    }
}

/// Per-view reference frames, each laid out (token, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFeatures {
    pub middle_index: usize,
    pub views: usize,
    pub grid: usize,
    pub dim: usize,
    pub mid: Vec<f64>,
    pub avg: Vec<f64>,
}

impl ReferenceFeatures {
    fn frame_len(&self) -> usize {
        self.grid * self.grid * self.dim
    }

    pub fn mid(&self, j: usize) -> &[f64] {
        let n = self.frame_len();
        &self.mid[j * n..(j + 1) * n]
    }

    pub fn avg(&self, j: usize) -> &[f64] {
        let n = self.frame_len();
        &self.avg[j * n..(j + 1) * n]
    }
}

/// Decoupled tokens: the first `base_dim` channels are the source token,
/// the rest are dynamic components.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledFeatures {
    pub set: FeatureSet,
    pub base_dim: usize,
    pub options: DecoupleOptions,
}

impl DecoupledFeatures {
    pub fn dynamic(&self, i: usize, j: usize, k: usize) -> &[f64] {
        &self.set.token(i, j, k)[self.base_dim..]
    }
}

/// Middle frame `floor(t / 2)` and per-token temporal mean of every view.
pub fn select_references(features: &FeatureSet) -> Result<ReferenceFeatures> {
    let t = features.frames;
    if t < 2 {
        return Err(Error::Data(format!("need at least two frames, got {t}")));
    }
    let n = features.frame_len();
    if features.data.len() != t * features.views * n {
        return Err(Error::Data("feature volume is missing frames".into()));
    }
    let middle = t / 2;
    let mut mid = Vec::with_capacity(features.views * n);
    let mut avg = vec![0.0; features.views * n];
    for j in 0..features.views {
        mid.extend_from_slice(features.frame(middle, j));
        let acc = &mut avg[j * n..(j + 1) * n];
        for i in 0..t {
            for (a, &f) in acc.iter_mut().zip(features.frame(i, j)) {
                *a += f;
            }
        }
        for a in acc.iter_mut() {
            *a /= t as f64;
        }
    }
    Ok(ReferenceFeatures {
        middle_index: middle,
        views: features.views,
        grid: features.grid,
        dim: features.dim,
        mid,
        avg,
    })
}

/// Projection coefficient of `f` onto `r`; zero for a (near-)zero
/// reference, which makes everything dynamic.
fn projection_coeff(f: &[f64], r: &[f64]) -> f64 {
    let rr: f64 = r.iter().map(|x| x * x).sum();
    if rr.sqrt() < DEGENERATE_NORM {
        return 0.0;
    }
    f.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr
}

/// Writes the static and dynamic parts of `f` relative to `r`.
/// A (near-)zero reference makes everything dynamic.
pub fn decouple_into(f: &[f64], r: &[f64], stat: &mut [f64], dynamic: &mut [f64]) {
    debug_assert!(f.len() == r.len() && stat.len() == f.len() && dynamic.len() == f.len());
    let c = projection_coeff(f, r);
    for k in 0..f.len() {
        stat[k] = c * r[k];
        dynamic[k] = f[k] - stat[k];
    }
}

/// Returns `(f_static, f_dynamic)`.
pub fn decouple(f: &[f64], r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if f.len() != r.len() {
        return Err(shape_err!("token width {} vs reference width {}", f.len(), r.len()));
    }
    let mut s = vec![0.0; f.len()];
    let mut d = vec![0.0; f.len()];
    decouple_into(f, r, &mut s, &mut d);
    Ok((s, d))
}

/// Per-token projection coefficients of a frame onto a reference frame;
/// flattened granularity shares one coefficient across the frame.
fn frame_coeffs(f: &[f64], r: &[f64], dim: usize, gran: Granularity, out: &mut [f64]) {
    match gran {
        Granularity::Token => {
            for ((fk, rk), c) in f.chunks_exact(dim).zip(r.chunks_exact(dim)).zip(out.iter_mut()) {
                *c = projection_coeff(fk, rk);
            }
        }
        Granularity::Flattened => out.fill(projection_coeff(f, r)),
    }
}

/// Decouples every frame against its view's reference(s). Returns the
/// result and the wall-clock time spent.
pub fn decouple_all(
    features: &FeatureSet,
    refs: &ReferenceFeatures,
    options: DecoupleOptions,
) -> Result<(DecoupledFeatures, Duration)> {
    if refs.grid != features.grid || refs.dim != features.dim || refs.views != features.views {
        return Err(shape_err!(
            "references are {} views, P={}, D={}; features are {} views, P={}, D={}",
            refs.views,
            refs.grid * refs.grid,
            refs.dim,
            features.views,
            features.tokens(),
            features.dim
        ));
    }
    let start = Instant::now();
    let d = features.dim;
    let out_dim = options.output_dim(d);
    let tokens = features.tokens();
    let views = features.views;
    let mut out = FeatureSet::zeros(features.frames, views, features.grid, out_dim);
    par::for_each_chunk_mut(&mut out.data, tokens * out_dim, |idx, dst| {
        let (i, j) = (idx / views, idx % views);
        let f = features.frame(i, j);
        let (ra, rb) = match options.mode {
            ReferenceMode::Mid => (refs.mid(j), None),
            ReferenceMode::Avg => (refs.avg(j), None),
            ReferenceMode::ConcatBoth => (refs.mid(j), Some(refs.avg(j))),
        };
        let mut ca = vec![0.0; tokens];
        let mut cb = vec![0.0; tokens];
        frame_coeffs(f, ra, d, options.granularity, &mut ca);
        if let Some(rb) = rb {
            frame_coeffs(f, rb, d, options.granularity, &mut cb);
        }
        for k in 0..tokens {
            let row = &mut dst[k * out_dim..(k + 1) * out_dim];
            let fk = &f[k * d..(k + 1) * d];
            let ak = &ra[k * d..(k + 1) * d];
            row[..d].copy_from_slice(fk);
            let (src, rest) = row.split_at_mut(d);
            match rb {
                None => {
                    for c in 0..d {
                        rest[c] = src[c] - ca[k] * ak[c];
                    }
                }
                Some(rb) => {
                    let bk = &rb[k * d..(k + 1) * d];
                    match options.combine {
                        Combine::Concat => {
                            for c in 0..d {
                                rest[c] = src[c] - ca[k] * ak[c];
                                rest[d + c] = src[c] - cb[k] * bk[c];
                            }
                        }
                        Combine::Sum => {
                            for c in 0..d {
                                rest[c] = (src[c] - ca[k] * ak[c]) + (src[c] - cb[k] * bk[c]);
                            }
                        }
                    }
                }
            }
        }
    });
    let elapsed = start.elapsed();
    Ok((
        DecoupledFeatures {
            set: out,
            base_dim: d,
            options,
        },
        elapsed,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseTiming {
    /// Frame-against-frame decouplings performed, summed over views.
    pub decouplings: usize,
    pub elapsed: Duration,
}

/// Baseline: decouples every frame against every other frame of the same
/// view, token-wise, discarding the outputs.
pub fn decouple_all_pairs(features: &FeatureSet) -> Result<PairwiseTiming> {
    let t = features.frames;
    if t < 2 {
        return Err(Error::Data(format!("need at least two frames, got {t}")));
    }
    let start = Instant::now();
    let d = features.dim;
    let views = features.views;
    let tokens = features.tokens();
    let counts = par::map_range(t * views, |idx| {
        let (a, j) = (idx / views, idx % views);
        let f = features.frame(a, j);
        let mut out = vec![0.0; f.len()];
        let mut coeffs = vec![0.0; tokens];
        let mut n = 0;
        for b in (0..t).filter(|&b| b != a) {
            let r = features.frame(b, j);
            frame_coeffs(f, r, d, Granularity::Token, &mut coeffs);
            for (k, c) in coeffs.iter().enumerate() {
                for x in k * d..(k + 1) * d {
                    out[x] = f[x] - c * r[x];
                }
            }
            black_box(&out);
            n += 1;
        }
        n
    });
    Ok(PairwiseTiming {
        decouplings: counts.iter().sum(),
        elapsed: start.elapsed(),
    })
}

/// Best-of-`repeats` wall-clock times of the reference-based pipeline
/// (default options) and of the all-pairs baseline on the same features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedComparison {
    pub reference: Duration,
    pub all_pairs: Duration,
    /// Frame decouplings per all-pairs run.
    pub pair_decouplings: usize,
}

impl SpeedComparison {
    pub fn speedup(&self) -> f64 {
        self.all_pairs.as_secs_f64() / self.reference.as_secs_f64().max(f64::MIN_POSITIVE)
    }
}

pub fn compare_decoupling(features: &FeatureSet, repeats: usize) -> Result<SpeedComparison> {
    let refs = select_references(features)?;
    let mut best = SpeedComparison {
        reference: Duration::MAX,
        all_pairs: Duration::MAX,
        pair_decouplings: 0,
    };
    for _ in 0..repeats.max(1) {
        let (out, elapsed) = decouple_all(features, &refs, DecoupleOptions::default())?;
        drop(out);
        best.reference = best.reference.min(elapsed);
        let pairs = decouple_all_pairs(features)?;
        best.all_pairs = best.all_pairs.min(pairs.elapsed);
        best.pair_decouplings = pairs.decouplings;
    }
    Ok(best)
}

/// Per-token norm of the dynamic channels, min-max normalized to [0, 1].
/// An all-zero dynamic part gives an all-zero map; a constant non-zero
/// map normalizes to all ones.
pub fn dynamic_heatmap(fd: &DecoupledFeatures, i: usize, j: usize) -> Result<Vec<f64>> {
    if i >= fd.set.frames || j >= fd.set.views {
        return Err(shape_err!(
            "frame ({i}, {j}) outside {}x{}",
            fd.set.frames,
            fd.set.views
        ));
    }
    let norms: Vec<f64> = (0..fd.set.tokens())
        .map(|k| fd.dynamic(i, j, k).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        return Ok(vec![0.0; norms.len()]);
    }
    let range = max - min;
    if range <= max * 1e-12 {
        return Ok(vec![1.0; norms.len()]);
    }
    Ok(norms.iter().map(|n| (n - min) / range).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, views: usize, grid: usize, dim: usize, f: impl Fn(usize) -> f64) -> FeatureSet {
        let mut s = FeatureSet::zeros(frames, views, grid, dim);
        for (k, v) in s.data.iter_mut().enumerate() {
            *v = f(k);
        }
        s
    }

    #[test]
    fn spec_cases() {
        let (s, d) = decouple(&[3.0, 4.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s, vec![3.0, 0.0, 0.0]);
        assert_eq!(d, vec![0.0, 4.0, 0.0]);
        let (_, d) = decouple(&[0.3, -1.2, 5.0], &[0.3, -1.2, 5.0]).unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-15));
        let (s, d) = decouple(&[1.0, 2.0, 2.0], &[2.0, 1.0, -2.0]).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        assert_eq!(d, vec![1.0, 2.0, 2.0]);
        let (s, d) = decouple(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!((s, d), (vec![0.0, 0.0], vec![1.0, 2.0]));
        assert!(decouple(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn references() {
        let f = seq(30, 2, 2, 3, |k| (k % 7) as f64);
        assert_eq!(select_references(&f).unwrap().middle_index, 15);
        let two = seq(2, 1, 1, 2, |k| k as f64);
        let r = select_references(&two).unwrap();
        assert_eq!(r.avg, vec![1.0, 2.0]);
        let constant = seq(4, 2, 2, 3, |k| (k % 12) as f64 + 1.0);
        let r = select_references(&constant).unwrap();
        assert_eq!(r.mid, r.avg);
        assert!(select_references(&seq(1, 1, 1, 1, |_| 1.0)).is_err());
    }

    #[test]
    fn middle_frame_has_no_dynamic_part_in_mid_mode() {
        let f = seq(5, 2, 2, 4, |k| ((k * 37) % 11) as f64 - 5.0);
        let r = select_references(&f).unwrap();
        let opts = DecoupleOptions {
            mode: ReferenceMode::Mid,
            ..Default::default()
        };
        let (fd, _) = decouple_all(&f, &r, opts).unwrap();
        assert_eq!(fd.set.dim, 8);
        for j in 0..2 {
            for k in 0..4 {
                assert!(fd.dynamic(2, j, k).iter().all(|x| x.abs() < 1e-12));
                assert_eq!(&fd.set.token(2, j, k)[..4], f.token(2, j, k));
            }
        }
    }

    #[test]
    fn widths_and_sum_combine() {
        let f = seq(3, 1, 2, 3, |k| (k as f64 * 0.7).sin());
        let r = select_references(&f).unwrap();
        let (cat, _) = decouple_all(&f, &r, DecoupleOptions::default()).unwrap();
        let (sum, _) = decouple_all(
            &f,
            &r,
            DecoupleOptions {
                combine: Combine::Sum,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cat.set.dim, 9);
        assert_eq!(sum.set.dim, 6);
        for k in 0..4 {
            let c = cat.dynamic(1, 0, k);
            let s = sum.dynamic(1, 0, k);
            for ch in 0..3 {
                assert!((c[ch] + c[3 + ch] - s[ch]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn flattened_granularity_is_orthogonal_over_frame() {
        let f = seq(3, 1, 2, 3, |k| (k as f64 * 1.3).cos());
        let r = select_references(&f).unwrap();
        let opts = DecoupleOptions {
            mode: ReferenceMode::Avg,
            granularity: Granularity::Flattened,
            ..Default::default()
        };
        let (fd, _) = decouple_all(&f, &r, opts).unwrap();
        let dynamic: Vec<f64> = (0..4).flat_map(|k| fd.dynamic(0, 0, k).to_vec()).collect();
        let dot: f64 = dynamic.iter().zip(r.avg(0)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn reference_shape_mismatch() {
        let f = seq(3, 1, 2, 3, |k| k as f64);
        let g = seq(3, 1, 2, 4, |k| k as f64);
        let r = select_references(&g).unwrap();
        assert!(matches!(
            decouple_all(&f, &r, DecoupleOptions::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pair_counts() {
        let f = seq(2, 3, 1, 2, |k| k as f64 + 1.0);
        assert_eq!(decouple_all_pairs(&f).unwrap().decouplings, 2 * 3);
        let f = seq(30, 6, 1, 2, |k| k as f64 + 1.0);
        assert_eq!(decouple_all_pairs(&f).unwrap().decouplings, 30 * 29 * 6);
    }

    #[test]
    fn heatmap_cases() {
        let f = seq(3, 1, 2, 2, |k| (k % 8) as f64 + 1.0);
        let r = select_references(&f).unwrap();
        let (fd, _) = decouple_all(&f, &r, DecoupleOptions::default()).unwrap();
        assert_eq!(dynamic_heatmap(&fd, 1, 0).unwrap(), vec![0.0; 4]);

        let mut g = seq(3, 1, 2, 2, |_| 1.0);
        // token 3 of frame 0 gets a component orthogonal to its references
        g.frame_mut(0, 0)[6] = 5.0;
        let r = select_references(&g).unwrap();
        let opts = DecoupleOptions {
            mode: ReferenceMode::Mid,
            ..Default::default()
        };
        let (fd, _) = decouple_all(&g, &r, opts).unwrap();
        assert_eq!(dynamic_heatmap(&fd, 0, 0).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(dynamic_heatmap(&fd, 3, 0).is_err());
    }
}
