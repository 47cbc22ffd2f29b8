//! Training configuration assembled from defaults, a config file and
//! command-line overrides, in increasing precedence.

use std::path::Path;

use ds4d::train::{parse_kv_text, TrainConfig};

use crate::CliError;

fn usage(e: ds4d::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn split_override(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))
}

pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {}: {e}", path.display())))?;
        for (k, v) in parse_kv_text(&text).map_err(usage)? {
            cfg.set(&k, &v).map_err(usage)?;
        }
    }
    for o in overrides {
        let (k, v) = split_override(o)?;
        cfg.set(k, v).map_err(usage)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}
