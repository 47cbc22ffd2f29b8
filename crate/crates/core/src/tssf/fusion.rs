use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{masked_softmax, softmax_backward, LinearGrad, LinearLayer};
use crate::par;
use crate::point_field::PointFeatures;

/// Cross-view fusion strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Uniform weights over valid views.
    Avg,
    /// One learned score per view, softmax over views.
    Ga,
    /// Two-stage fusion anchored to the front view with distance features.
    Da,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::Avg),
            "ga" => Ok(Self::Ga),
            "da" => Ok(Self::Da),
            _ => Err(Error::Config(format!("unknown fusion `{s}` (expected avg, ga or da)"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Avg => "avg",
            Self::Ga => "ga",
            Self::Da => "da",
        })
    }
}

/// Per-point weights over views; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub points: usize,
    pub views: usize,
    /// (point, view)
    pub weights: Vec<f64>,
}

impl ScoreMap {
    pub fn row(&self, point: usize) -> &[f64] {
        &self.weights[point * self.views..(point + 1) * self.views]
    }
}

/// Softmax-weighted sum of `k` candidate vectors of width `w`.
/// Returns `None` when no candidate is valid.
fn fuse_candidates(
    cands: &[f64],
    w: usize,
    valid: &[bool],
    scorer: Option<&LinearLayer>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = valid.len();
    let weights = match scorer {
        Some(s) => {
            let logits: Vec<f64> = (0..k)
                .map(|j| {
                    let mut o = [0.0];
                    s.forward_into(&cands[j * w..(j + 1) * w], &mut o);
                    o[0]
                })
                .collect();
            masked_softmax(&logits, valid)?
        }
        None => {
            let n = valid.iter().filter(|v| **v).count();
            if n == 0 {
                return None;
            }
            valid
                .iter()
                .map(|&v| if v { 1.0 / n as f64 } else { 0.0 })
                .collect()
        }
    };
    let mut out = vec![0.0; w];
    for (j, &wj) in weights.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(&cands[j * w..(j + 1) * w]) {
            *o += wj * c;
        }
    }
    Some((out, weights))
}

/// Backward of [`fuse_candidates`]. Accumulates scorer gradients and, if
/// asked, candidate gradients.
fn fuse_candidates_backward(
    cands: &[f64],
    w: usize,
    weights: &[f64],
    scorer: Option<&LinearLayer>,
    g_out: &[f64],
    grad: Option<&mut LinearGrad>,
    d_cands: Option<&mut [f64]>,
) {
    let k = weights.len();
    let mut dlogits = vec![0.0; k];
    if let (Some(s), Some(grad)) = (scorer, grad) {
        let dw: Vec<f64> = (0..k)
            .map(|j| {
                cands[j * w..(j + 1) * w]
                    .iter()
                    .zip(g_out)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        dlogits = softmax_backward(weights, &dw);
        for j in 0..k {
            if weights[j] == 0.0 {
                continue;
            }
            s.backward(&cands[j * w..(j + 1) * w], &[dlogits[j]], grad);
        }
    }
    if let Some(dc) = d_cands {
        for j in 0..k {
            let row = &mut dc[j * w..(j + 1) * w];
            for (r, g) in row.iter_mut().zip(g_out) {
                *r += weights[j] * g;
            }
            if let Some(s) = scorer {
                if weights[j] != 0.0 {
                    for (r, a) in row.iter_mut().zip(s.weight.row(0)) {
                        *r += dlogits[j] * a;
                    }
                }
            }
        }
    }
}

/// Intermediate values of one point's fusion.
#[derive(Clone, Debug, PartialEq)]
struct PointTrace {
    w1: Option<Vec<f64>>,
    s1: Vec<f64>,
    w2: Option<Vec<f64>>,
}

/// Result of fusing every point at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub width: usize,
    /// (point, channel)
    pub features: Vec<f64>,
    pub scores: ScoreMap,
    /// Points with no valid view; their feature is zero.
    pub flagged: Vec<bool>,
    traces: Vec<PointTrace>,
}

impl FusionOutput {
    pub fn feature(&self, point: usize) -> &[f64] {
        &self.features[point * self.width..(point + 1) * self.width]
    }
}

/// Learnable fusion: `Avg` has no scorer, `Ga` one `W -> 1` scorer, `Da`
/// two `2W -> 1` scorers (non-front views, then front vs. the rest).
#[derive(Clone, Debug, PartialEq)]
pub struct TssfFusion {
    pub mode: FusionMode,
    pub scorers: Vec<LinearLayer>,
}

impl TssfFusion {
    pub fn new<R: Rng>(mode: FusionMode, width: usize, rng: &mut R) -> Self {
        let scorers = match mode {
            FusionMode::Avg => vec![],
            FusionMode::Ga => vec![LinearLayer::random(width, 1, rng)],
            FusionMode::Da => vec![
                LinearLayer::random(2 * width, 1, rng),
                LinearLayer::random(2 * width, 1, rng),
            ],
        };
        Self { mode, scorers }
    }

    /// Zero scorers. GA then starts as the plain average over valid views,
    /// DA as an even split between the front view and the mean of the rest.
    pub fn uniform(mode: FusionMode, width: usize) -> Self {
        let scorers = match mode {
            FusionMode::Avg => vec![],
            FusionMode::Ga => vec![LinearLayer::zeros(width, 1)],
            FusionMode::Da => vec![LinearLayer::zeros(2 * width, 1), LinearLayer::zeros(2 * width, 1)],
        };
        Self { mode, scorers }
    }

    pub fn zero_grad(&self) -> Vec<LinearGrad> {
        self.scorers.iter().map(LinearLayer::zero_grad).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.scorers.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        let expect = match self.mode {
            FusionMode::Avg => return Ok(()),
            FusionMode::Ga => width,
            FusionMode::Da => 2 * width,
        };
        for s in &self.scorers {
            if s.input_dim() != expect || s.output_dim() != 1 {
                return Err(shape_err!(
                    "{} scorer is {}->{}, features need {expect}->1",
                    self.mode,
                    s.input_dim(),
                    s.output_dim()
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, pf: &PointFeatures) -> Result<FusionOutput> {
        self.check_width(pf.width)?;
        if pf.views == 0 {
            return Err(shape_err!("fusion needs at least one view"));
        }
        let (v, w) = (pf.views, pf.width);
        let per_point = par::map_range(pf.points, |p| match self.mode {
            FusionMode::Avg | FusionMode::Ga => self.one_stage(pf, p),
            FusionMode::Da => self.two_stage(pf, p),
        });
        let mut features = Vec::with_capacity(pf.points * w);
        let mut weights = Vec::with_capacity(pf.points * v);
        let mut flagged = Vec::with_capacity(pf.points);
        let mut traces = Vec::with_capacity(pf.points);
        for (f, sw, flag, tr) in per_point {
            features.extend(f);
            weights.extend(sw);
            flagged.push(flag);
            traces.push(tr);
        }
        Ok(FusionOutput {
            width: w,
            features,
            scores: ScoreMap {
                points: pf.points,
                views: v,
                weights,
            },
            flagged,
            traces,
        })
    }

    fn one_stage(&self, pf: &PointFeatures, p: usize) -> (Vec<f64>, Vec<f64>, bool, PointTrace) {
        let (v, w) = (pf.views, pf.width);
        let mut cands = Vec::with_capacity(v * w);
        let valid: Vec<bool> = (0..v).map(|j| pf.is_valid(j, p)).collect();
        for j in 0..v {
            cands.extend_from_slice(pf.feature(j, p));
        }
        match fuse_candidates(&cands, w, &valid, self.scorers.first()) {
            Some((f, wts)) => (
                f,
                wts.clone(),
                false,
                PointTrace {
                    w1: Some(wts),
                    s1: vec![],
                    w2: None,
                },
            ),
            None => (
                vec![0.0; w],
                vec![1.0 / v as f64; v],
                true,
                PointTrace {
                    w1: None,
                    s1: vec![],
                    w2: None,
                },
            ),
        }
    }

    fn da_stage1_candidates(pf: &PointFeatures, p: usize) -> (Vec<f64>, Vec<bool>) {
        let (v, w) = (pf.views, pf.width);
        let front = pf.feature(0, p);
        let mut cands = Vec::with_capacity((v - 1) * 2 * w);
        for j in 1..v {
            let f = pf.feature(j, p);
            cands.extend_from_slice(f);
            cands.extend(front.iter().zip(f).map(|(a, b)| (a - b).abs()));
        }
        (cands, (1..v).map(|j| pf.is_valid(j, p)).collect())
    }

    fn two_stage(&self, pf: &PointFeatures, p: usize) -> (Vec<f64>, Vec<f64>, bool, PointTrace) {
        let (v, w) = (pf.views, pf.width);
        let front = pf.feature(0, p);
        let front_valid = pf.is_valid(0, p);
        let (cands1, valid1) = Self::da_stage1_candidates(pf, p);
        let stage1 = if v > 1 {
            fuse_candidates(&cands1, 2 * w, &valid1, Some(&self.scorers[0]))
        } else {
            None
        };
        let (s1, w1) = match stage1 {
            Some((s, wt)) => (s, Some(wt)),
            None => (vec![0.0; 2 * w], None),
        };
        let mut cands2 = Vec::with_capacity(4 * w);
        cands2.extend_from_slice(front);
        cands2.extend(std::iter::repeat_n(0.0, w));
        cands2.extend_from_slice(&s1);
        let valid2 = [front_valid, w1.is_some()];
        match fuse_candidates(&cands2, 2 * w, &valid2, Some(&self.scorers[1])) {
            Some((mut f, w2)) => {
                f.truncate(w);
                let mut per_view = vec![0.0; v];
                per_view[0] = w2[0];
                if let Some(w1) = &w1 {
                    for j in 1..v {
                        per_view[j] = w2[1] * w1[j - 1];
                    }
                }
                (
                    f,
                    per_view,
                    false,
                    PointTrace {
                        w1,
                        s1,
                        w2: Some(w2),
                    },
                )
            }
            None => (
                vec![0.0; w],
                vec![1.0 / v as f64; v],
                true,
                PointTrace {
                    w1: None,
                    s1,
                    w2: None,
                },
            ),
        }
    }

    /// Accumulates scorer gradients for upstream gradient `d_features`
    /// (point, channel). Point features are treated as constants.
    pub fn backward(
        &self,
        pf: &PointFeatures,
        out: &FusionOutput,
        d_features: &[f64],
        grads: &mut [LinearGrad],
    ) -> Result<()> {
        if d_features.len() != out.features.len() || grads.len() != self.scorers.len() {
            return Err(shape_err!("fusion backward buffers do not match the forward pass"));
        }
        if self.mode == FusionMode::Avg {
            return Ok(());
        }
        let (v, w) = (pf.views, pf.width);
        let partial = par::map_range(pf.points, |p| {
            let mut local = self.zero_grad();
            let tr = &out.traces[p];
            let g = &d_features[p * w..(p + 1) * w];
            match self.mode {
                FusionMode::Ga => {
                    if let Some(w1) = &tr.w1 {
                        let cands: Vec<f64> = (0..v).flat_map(|j| pf.feature(j, p).to_vec()).collect();
                        fuse_candidates_backward(
                            &cands,
                            w,
                            w1,
                            Some(&self.scorers[0]),
                            g,
                            Some(&mut local[0]),
                            None,
                        );
                    }
                }
                FusionMode::Da => {
                    if let Some(w2) = &tr.w2 {
                        let mut cands2 = pf.feature(0, p).to_vec();
                        cands2.extend(std::iter::repeat_n(0.0, w));
                        cands2.extend_from_slice(&tr.s1);
                        let mut g2 = g.to_vec();
                        g2.resize(2 * w, 0.0);
                        let mut d_c2 = vec![0.0; 4 * w];
                        let (first, rest) = local.split_at_mut(1);
                        fuse_candidates_backward(
                            &cands2,
                            2 * w,
                            w2,
                            Some(&self.scorers[1]),
                            &g2,
                            Some(&mut rest[0]),
                            Some(&mut d_c2),
                        );
                        if let Some(w1) = &tr.w1 {
                            let (cands1, _) = Self::da_stage1_candidates(pf, p);
                            fuse_candidates_backward(
                                &cands1,
                                2 * w,
                                w1,
                                Some(&self.scorers[0]),
                                &d_c2[2 * w..],
                                Some(&mut first[0]),
                                None,
                            );
                        }
                    }
                }
                FusionMode::Avg => {}
            }
            local
        });
        for local in partial {
            for (g, l) in grads.iter_mut().zip(&local) {
                g.add(l);
            }
        }
        Ok(())
    }
}

/// Weighted sum of view features with one learned score per view.
pub fn ga_fuse(pf: &PointFeatures, scorer: &LinearLayer) -> Result<(Vec<f64>, ScoreMap)> {
    let f = TssfFusion {
        mode: FusionMode::Ga,
        scorers: vec![scorer.clone()],
    };
    let out = f.forward(pf)?;
    Ok((out.features, out.scores))
}

/// Two-stage fusion with front view 0. The score map holds the effective
/// per-view weights.
pub fn da_fuse(
    pf: &PointFeatures,
    stage1: &LinearLayer,
    stage2: &LinearLayer,
) -> Result<(Vec<f64>, ScoreMap)> {
    let f = TssfFusion {
        mode: FusionMode::Da,
        scorers: vec![stage1.clone(), stage2.clone()],
    };
    let out = f.forward(pf)?;
    Ok((out.features, out.scores))
}

pub fn avg_fuse(pf: &PointFeatures) -> Result<(Vec<f64>, ScoreMap)> {
    let out = TssfFusion {
        mode: FusionMode::Avg,
        scorers: vec![],
    }
    .forward(pf)?;
    Ok((out.features, out.scores))
}

/// Element-wise absolute difference between the front and another view.
pub fn distance_feature(front: &[f64], other: &[f64]) -> Vec<f64> {
    front.iter().zip(other).map(|(a, b)| (a - b).abs()).collect()
}
