use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scene_synth::Dataset;
use crate::tssf::FusionMode;

use super::config::{FeatureSource, PointInit, TrainConfig};
use super::eval::evaluate_holdout;
use super::stages::train;

/// Cumulative ablation rows; each adds one component to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    PointInit,
    Perceptual,
    FrameFeatures,
    Dsfd,
    TssfAvg,
    TssfGa,
    TssfDa,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::PointInit,
        Variant::Perceptual,
        Variant::FrameFeatures,
        Variant::Dsfd,
        Variant::TssfAvg,
        Variant::TssfGa,
        Variant::TssfDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PointInit => "point-init",
            Variant::Perceptual => "perceptual",
            Variant::FrameFeatures => "frame-features",
            Variant::Dsfd => "dsfd",
            Variant::TssfAvg => "tssf-avg",
            Variant::TssfGa => "tssf-ga",
            Variant::TssfDa => "tssf-da",
        }
    }

    /// `base` with this variant's components switched on or off. The base
    /// proxy weight is used once the perceptual term is enabled.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let rank = Variant::ALL.iter().position(|v| *v == self).unwrap();
        cfg.point_init = if rank >= 1 { PointInit::Cloud } else { PointInit::Random };
        if rank < 2 {
            cfg.lambda_proxy = 0.0;
        }
        cfg.feature_source = match self {
            Variant::Baseline | Variant::PointInit | Variant::Perceptual => FeatureSource::None,
            Variant::FrameFeatures => FeatureSource::Frame,
            Variant::Dsfd => FeatureSource::Decoupled,
            _ => FeatureSource::Fused,
        };
        cfg.fusion_mode = match self {
            Variant::TssfAvg => FusionMode::Avg,
            Variant::TssfDa => FusionMode::Da,
            _ => FusionMode::Ga,
        };
        cfg
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches('+');
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub psnr: f64,
    pub ssim: f64,
    pub dssim: f64,
}

/// Trains every variant from the same base config and evaluates on the
/// held-out views.
pub fn run_ablation(dataset: &Dataset, base: &TrainConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let cfg = v.configure(base);
            let out = train(dataset, &cfg)?;
            let report = evaluate_holdout(&out.model, &out.bank, dataset)?;
            Ok(AblationRow {
                variant: v,
                psnr: report.mean_psnr(),
                ssim: report.mean_ssim(),
                dssim: report.mean_dssim(),
            })
        })
        .collect()
}

/// Fixed-width text table of ablation rows.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<16}{:>10}{:>10}{:>10}\n", "variant", "psnr", "ssim", "dssim");
    for r in rows {
        s.push_str(&format!(
            "{:<16}{:>10.4}{:>10.4}{:>10.4}\n",
            r.variant.name(),
            r.psnr,
            r.ssim,
            r.dssim
        ));
    }
    s
}
