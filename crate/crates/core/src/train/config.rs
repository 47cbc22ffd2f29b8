use std::fmt::Write as _;
use std::str::FromStr;

use crate::deform_render::LossWeights;
use crate::dsfd::ReferenceMode;
use crate::error::{Error, Result};
use crate::tssf::FusionMode;

/// Which per-point image features feed the mixer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    /// HexPlane features only.
    None,
    /// Raw front-view features.
    Frame,
    /// Decoupled front-view features.
    Decoupled,
    /// Decoupled features of all views, fused across views.
    Fused,
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "frame" => Ok(Self::Frame),
            "decoupled" => Ok(Self::Decoupled),
            "fused" => Ok(Self::Fused),
            _ => Err(Error::Config(format!(
                "unknown feature source `{s}` (expected none, frame, decoupled or fused)"
            ))),
        }
    }
}

impl std::fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Frame => "frame",
            Self::Decoupled => "decoupled",
            Self::Fused => "fused",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointInit {
    /// Subsample the dataset's middle-frame point cloud.
    Cloud,
    /// Uniform random points in the field bounds.
    Random,
}

impl FromStr for PointInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cloud" => Ok(Self::Cloud),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown point init `{s}` (expected cloud or random)"))),
        }
    }
}

impl std::fmt::Display for PointInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cloud => "cloud",
            Self::Random => "random",
        })
    }
}

/// Every training knob. Serialized as flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub warmup_iters: usize,
    pub dynamic_iters: usize,
    /// Fusion scorers, mixer and deformation network.
    pub lr_start: f64,
    pub lr_end: f64,
    pub grid_lr_start: f64,
    pub grid_lr_end: f64,
    pub position_lr_start: f64,
    pub position_lr_end: f64,
    pub scale_lr: f64,
    pub opacity_lr: f64,
    pub color_lr: f64,
    pub adam_eps: f64,
    pub densify_interval: usize,
    pub densify_fraction: f64,
    /// Timestamps per iteration; each contributes every training view.
    pub batch: usize,
    pub num_points: usize,
    pub point_init: PointInit,
    pub feature_source: FeatureSource,
    pub fusion_mode: FusionMode,
    pub decouple_mode: ReferenceMode,
    pub feature_grid: usize,
    pub feature_dim: usize,
    /// Standardize every feature channel to zero mean, unit variance over
    /// the whole sequence before retrieval.
    pub feature_norm: bool,
    pub hexplane_resolution: usize,
    pub hexplane_levels: usize,
    pub hexplane_channels: usize,
    pub field_bound: f64,
    pub mixer_width: usize,
    pub hidden_width: usize,
    pub lambda_sds: f64,
    pub lambda_rec: f64,
    pub lambda_mask: f64,
    pub lambda_proxy: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup_iters: 500,
            dynamic_iters: 1500,
            lr_start: 1.6e-3,
            lr_end: 1.6e-5,
            grid_lr_start: 1.6e-2,
            grid_lr_end: 1.6e-4,
            position_lr_start: 2e-3,
            position_lr_end: 2e-5,
            scale_lr: 5e-3,
            opacity_lr: 5e-2,
            color_lr: 1e-2,
            adam_eps: 1e-15,
            densify_interval: 100,
            densify_fraction: 0.025,
            batch: 1,
            num_points: 200,
            point_init: PointInit::Cloud,
            feature_source: FeatureSource::Fused,
            fusion_mode: FusionMode::Ga,
            decouple_mode: ReferenceMode::ConcatBoth,
            feature_grid: 8,
            feature_dim: 64,
            feature_norm: true,
            hexplane_resolution: 16,
            hexplane_levels: 3,
            hexplane_channels: 8,
            field_bound: 1.2,
            mixer_width: 32,
            hidden_width: 64,
            lambda_sds: 0.0,
            lambda_rec: 1.0,
            lambda_mask: 0.5,
            lambda_proxy: 0.1,
            log_every: 10,
        }
    }
}

/// Exponential decay from `lr_start` at step 0 to `lr_end` at `total`.
pub fn lr_schedule(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let r = step.min(total) as f64 / total as f64;
    lr_start * (lr_end / lr_start).powf(r)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        /// Keys accepted by [`TrainConfig::set`], in serialization order.
        pub const TRAIN_KEYS: &[&str] = &[$(stringify!($key)),*];

        impl TrainConfig {
            /// Sets one key from its text form. Unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($key) => self.$key = parse(stringify!($key), value)?,)*
                    other => return Err(Error::Config(format!("unknown config key `{other}`"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", stringify!($key), self.$key);)*
                s
            }
        }
    };
}

config_keys!(
    seed,
    warmup_iters,
    dynamic_iters,
    lr_start,
    lr_end,
    grid_lr_start,
    grid_lr_end,
    position_lr_start,
    position_lr_end,
    scale_lr,
    opacity_lr,
    color_lr,
    adam_eps,
    densify_interval,
    densify_fraction,
    batch,
    num_points,
    point_init,
    feature_source,
    fusion_mode,
    decouple_mode,
    feature_grid,
    feature_dim,
    feature_norm,
    hexplane_resolution,
    hexplane_levels,
    hexplane_channels,
    field_bound,
    mixer_width,
    hidden_width,
    lambda_sds,
    lambda_rec,
    lambda_mask,
    lambda_proxy,
    log_every,
);

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv_text(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            sds: self.lambda_sds,
            rec: self.lambda_rec,
            mask: self.lambda_mask,
            proxy: self.lambda_proxy,
            ..LossWeights::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return bad("need lr_start >= lr_end > 0");
        }
        if !(self.grid_lr_start >= self.grid_lr_end && self.grid_lr_end > 0.0) {
            return bad("need grid_lr_start >= grid_lr_end > 0");
        }
        if !(self.position_lr_start >= self.position_lr_end && self.position_lr_end > 0.0) {
            return bad("need position_lr_start >= position_lr_end > 0");
        }
        if !(self.densify_fraction > 0.0 && self.densify_fraction <= 0.5) {
            return bad("densify_fraction must lie in (0, 0.5]");
        }
        if [self.scale_lr, self.opacity_lr, self.color_lr, self.adam_eps]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return bad("learning rates and adam_eps must be finite and nonnegative");
        }
        if self.batch == 0 || self.num_points == 0 || self.log_every == 0 {
            return bad("batch, num_points and log_every must be positive");
        }
        if self.feature_grid == 0 || self.feature_dim < crate::scene_synth::MIN_FEATURE_DIM {
            return bad("feature_grid must be positive and feature_dim at least 6");
        }
        if self.hexplane_levels == 0 || self.hexplane_resolution < 2 || self.hexplane_channels == 0 {
            return bad("hexplane needs levels >= 1, resolution >= 2, channels >= 1");
        }
        if !(self.field_bound > 0.0) || self.mixer_width == 0 || self.hidden_width == 0 {
            return bad("field_bound, mixer_width and hidden_width must be positive");
        }
        self.loss_weights().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert!((lr_schedule(0, 1000, 1.6e-4, 1.6e-6) - 1.6e-4).abs() < 1e-18);
        assert!((lr_schedule(1000, 1000, 1.6e-4, 1.6e-6) - 1.6e-6).abs() < 1e-18);
        assert!((lr_schedule(500, 1000, 1.6e-4, 1.6e-6) - 1.6e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(3, 0, 0.1, 0.01), 0.1);
        let mut prev = f64::INFINITY;
        for s in 0..=50 {
            let lr = lr_schedule(s, 50, 1.0, 0.01);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("fusion_mode", "da").unwrap();
        cfg.set("lr_start", "0.01").unwrap();
        cfg.set("decouple_mode", "avg").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.to_text().lines().count(), TRAIN_KEYS.len());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(TrainConfig::from_text("nope = 1"), Err(Error::Config(_))));
        assert!(TrainConfig::from_text("lr_start = x").is_err());
        assert!(TrainConfig::from_text("lr_end = 1.0").is_err());
        assert!(TrainConfig::from_text("densify_fraction = 0.6").is_err());
        assert!(TrainConfig::from_text("# comment only\n\nseed = 3 # trailing\n").is_ok());
    }
}
