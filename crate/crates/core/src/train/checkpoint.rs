use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Activation, LinearLayer, Mlp, Tensor};
use crate::point_field::GaussianPointSet;
use crate::tssf::{HexPlaneField, TssfFusion};

use super::config::TrainConfig;
use super::model::{hexplane_config, Model};

const MAGIC: &[u8; 9] = b"DS4DCKPT1";

/// A named tensor as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn tensor(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        shape: shape.to_vec(),
        data,
    }
}

fn linear_tensors(prefix: &str, l: &LinearLayer, out: &mut Vec<NamedTensor>) {
    out.push(tensor(format!("{prefix}.weight"), l.weight.shape(), l.weight.data().to_vec()));
    out.push(tensor(format!("{prefix}.bias"), &[l.bias.len()], l.bias.clone()));
}

/// Every parameter of the model, in a fixed order.
pub fn model_tensors(model: &Model) -> Vec<NamedTensor> {
    let p = &model.points;
    let n = p.len();
    let mut out = vec![
        tensor("points.positions", &[n, 3], p.positions.iter().flatten().copied().collect()),
        tensor("points.scales", &[n], p.scales.clone()),
        tensor("points.rotations", &[n, 4], p.rotations.iter().flatten().copied().collect()),
        tensor("points.opacities", &[n], p.opacities.clone()),
        tensor("points.colors", &[n, 3], p.colors.iter().flatten().copied().collect()),
    ];
    let c = model.field.config.channels;
    for (g, grid) in model.field.grids.iter().enumerate() {
        let r = model.field.config.resolution(g / 6);
        out.push(tensor(format!("hexplane.{}.{}", g / 6, g % 6), &[r, r, c], grid.clone()));
    }
    for (k, s) in model.fusion.scorers.iter().enumerate() {
        linear_tensors(&format!("scorer.{k}"), s, &mut out);
    }
    linear_tensors("mixer", &model.mixer, &mut out);
    for (k, l) in model.net.layers.iter().enumerate() {
        linear_tensors(&format!("deform.{k}"), l, &mut out);
    }
    out
}

/// Writes magic, u32 config length, config text, u32 tensor count, then
/// per tensor: u32 name length, name, u32 rank, u32 dims, f32 values. All
/// integers and floats little-endian.
pub fn write_checkpoint(path: &Path, cfg: &TrainConfig, model: &Model) -> Result<()> {
    let text = cfg.to_text();
    let tensors = model_tensors(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let u32le = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    u32le(&mut buf, tensors.len());
    for t in &tensors {
        u32le(&mut buf, t.name.len());
        buf.extend_from_slice(t.name.as_bytes());
        u32le(&mut buf, t.shape.len());
        for &d in &t.shape {
            u32le(&mut buf, d);
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(path, "text is not UTF-8"))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<(TrainConfig, Vec<NamedTensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(MAGIC) {
        return Err(Error::format(path, "missing DS4DCKPT1 header"));
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: MAGIC.len(),
        path,
    };
    let cfg = TrainConfig::from_text(&r.string()?)?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }
    Ok((cfg, tensors))
}

fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))
}

fn linear(tensors: &[NamedTensor], prefix: &str) -> Result<LinearLayer> {
    let w = find(tensors, &format!("{prefix}.weight"))?;
    let b = find(tensors, &format!("{prefix}.bias"))?;
    LinearLayer::new(Tensor::from_vec(&w.shape, w.data.clone())?, b.data.clone())
}

fn triples<const K: usize>(data: &[f64]) -> Vec<[f64; K]> {
    data.chunks_exact(K).map(|c| c.try_into().unwrap()).collect()
}

/// Rebuilds a model from checkpoint tensors.
pub fn model_from_tensors(cfg: &TrainConfig, tensors: &[NamedTensor]) -> Result<Model> {
    let points = GaussianPointSet {
        positions: triples::<3>(&find(tensors, "points.positions")?.data),
        scales: find(tensors, "points.scales")?.data.clone(),
        rotations: triples::<4>(&find(tensors, "points.rotations")?.data),
        opacities: find(tensors, "points.opacities")?.data.clone(),
        colors: triples::<3>(&find(tensors, "points.colors")?.data),
    };
    points.validate()?;
    let hcfg = hexplane_config(cfg);
    let mut grids = Vec::new();
    for level in 0..hcfg.multipliers.len() {
        for p in 0..6 {
            let t = find(tensors, &format!("hexplane.{level}.{p}"))?;
            let r = hcfg.resolution(level);
            if t.shape != [r, r, hcfg.channels] {
                return Err(Error::Data(format!("hexplane grid {level}.{p} has shape {:?}", t.shape)));
            }
            grids.push(t.data.clone());
        }
    }
    let mut scorers = Vec::new();
    while tensors.iter().any(|t| t.name == format!("scorer.{}.weight", scorers.len())) {
        scorers.push(linear(tensors, &format!("scorer.{}", scorers.len()))?);
    }
    let mut layers = Vec::new();
    while tensors.iter().any(|t| t.name == format!("deform.{}.weight", layers.len())) {
        layers.push(linear(tensors, &format!("deform.{}", layers.len()))?);
    }
    Ok(Model {
        points,
        field: HexPlaneField { config: hcfg, grids },
        fusion: TssfFusion {
            mode: cfg.fusion_mode,
            scorers,
        },
        mixer: linear(tensors, "mixer")?,
        net: Mlp::new(layers, Activation::default())?,
        source: cfg.feature_source,
    })
}

pub fn load_model(path: &Path) -> Result<(TrainConfig, Model)> {
    let (cfg, tensors) = read_checkpoint(path)?;
    let model = model_from_tensors(&cfg, &tensors)?;
    Ok((cfg, model))
}
