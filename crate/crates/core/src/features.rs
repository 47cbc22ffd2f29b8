//! Token-grid feature volumes indexed by (time, view, token, channel) and
//! the `.ftr` binary format.

use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};

/// Features of one frame: a p×p grid of `dim`-vectors, token index
/// `row * p + col`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub time: usize,
    pub view: usize,
    pub grid: usize,
    pub dim: usize,
    pub tokens: Vec<f64>,
}

impl FrameFeatures {
    pub fn token_count(&self) -> usize {
        self.grid * self.grid
    }

    pub fn token(&self, k: usize) -> &[f64] {
        &self.tokens[k * self.dim..(k + 1) * self.dim]
    }
}

/// Features for every (time, view) pair of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub frames: usize,
    pub views: usize,
    pub grid: usize,
    pub dim: usize,
    /// (i, j, token, channel), slowest to fastest.
    pub data: Vec<f64>,
}

impl FeatureSet {
    pub fn zeros(frames: usize, views: usize, grid: usize, dim: usize) -> Self {
        Self {
            frames,
            views,
            grid,
            dim,
            data: vec![0.0; frames * views * grid * grid * dim],
        }
    }

    pub fn from_frames(frames: usize, views: usize, list: Vec<FrameFeatures>) -> Result<Self> {
        let first = list
            .first()
            .ok_or_else(|| Error::Data("no frame features".into()))?;
        let (grid, dim) = (first.grid, first.dim);
        let mut set = Self::zeros(frames, views, grid, dim);
        let mut seen = vec![false; frames * views];
        for f in list {
            if f.grid != grid || f.dim != dim {
                return Err(shape_err!(
                    "frame ({}, {}) has grid {} dim {}, expected {} / {}",
                    f.time,
                    f.view,
                    f.grid,
                    f.dim,
                    grid,
                    dim
                ));
            }
            if f.time >= frames || f.view >= views {
                return Err(Error::Data(format!(
                    "frame ({}, {}) outside {}x{}",
                    f.time, f.view, frames, views
                )));
            }
            seen[f.time * views + f.view] = true;
            set.frame_mut(f.time, f.view).copy_from_slice(&f.tokens);
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "missing frame features for time {} view {}",
                k / views,
                k % views
            )));
        }
        Ok(set)
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn frame_len(&self) -> usize {
        self.tokens() * self.dim
    }

    pub fn frame(&self, i: usize, j: usize) -> &[f64] {
        let n = self.frame_len();
        let o = (i * self.views + j) * n;
        &self.data[o..o + n]
    }

    pub fn frame_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let n = self.frame_len();
        let o = (i * self.views + j) * n;
        &mut self.data[o..o + n]
    }

    pub fn token(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let f = self.frame(i, j);
        &f[k * self.dim..(k + 1) * self.dim]
    }

    pub fn frame_features(&self, i: usize, j: usize) -> FrameFeatures {
        FrameFeatures {
            time: i,
            view: j,
            grid: self.grid,
            dim: self.dim,
            tokens: self.frame(i, j).to_vec(),
        }
    }
}

const FTR_MAGIC: &[u8; 8] = b"DS4DFTR1";

/// Writes `.ftr`: magic, little-endian u32 `t, v, P, D`, then f32 values.
pub fn write_ftr(path: &Path, set: &FeatureSet) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 4 * set.data.len());
    buf.extend_from_slice(FTR_MAGIC);
    for v in [set.frames, set.views, set.tokens(), set.dim] {
        let v = u32::try_from(v).map_err(|_| shape_err!("dimension {v} exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &x in &set.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ftr(path: &Path) -> Result<FeatureSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != FTR_MAGIC {
        return Err(Error::format(path, "missing DS4DFTR1 header"));
    }
    let u = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (t, v, p2, d) = (u(0), u(1), u(2), u(3));
    let grid = (p2 as f64).sqrt().round() as usize;
    if grid * grid != p2 {
        return Err(Error::format(path, format!("token count {p2} is not a square grid")));
    }
    let n = t * v * p2 * d;
    if bytes.len() != 24 + 4 * n {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 24),
        ));
    }
    let data = bytes[24..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureSet {
        frames: t,
        views: v,
        grid,
        dim: d,
        data,
    })
}
