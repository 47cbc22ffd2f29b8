use crate::camera::Vec3;
use crate::error::{shape_err, Result};
use crate::numerics::{Mlp, MlpGrad, MlpTrace};
use crate::par;
use crate::point_field::GaussianPointSet;

/// Output width of the deformation network: 3 position, 1 log-scale,
/// 4 quaternion-increment channels.
pub const DEFORM_OUTPUTS: usize = 8;

/// Per-point offsets. `dq` is the quaternion increment applied on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct Deformation {
    pub dx: Vec<Vec3>,
    pub ds: Vec<f64>,
    pub dq: Vec<[f64; 4]>,
}

#[derive(Clone, Debug)]
pub struct DeformTrace {
    traces: Vec<MlpTrace>,
}

impl Deformation {
    pub fn identity(n: usize) -> Self {
        Self {
            dx: vec![[0.0; 3]; n],
            ds: vec![0.0; n],
            dq: vec![[1.0, 0.0, 0.0, 0.0]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    /// Deformation that undoes `self` when applied after it.
    pub fn inverse(&self) -> Self {
        Self {
            dx: self.dx.iter().map(|d| [-d[0], -d[1], -d[2]]).collect(),
            ds: self.ds.iter().map(|s| -s).collect(),
            dq: self.dq.iter().map(|q| [q[0], -q[1], -q[2], -q[3]]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.dx.iter().all(|d| *d == [0.0; 3])
            && self.ds.iter().all(|&s| s == 0.0)
            && self.dq.iter().all(|q| *q == [1.0, 0.0, 0.0, 0.0])
    }
}

/// Hamilton product `a ⊗ b` of `(w, x, y, z)` quaternions.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Runs the deformation network on each row of `fused` (`n × width`).
/// The quaternion head is offset by the identity so an all-zero network
/// output is the identity deformation.
pub fn deform(fused: &[f64], width: usize, net: &Mlp) -> Result<(Deformation, DeformTrace)> {
    if net.output_dim() != DEFORM_OUTPUTS {
        return Err(shape_err!(
            "deformation network must output {DEFORM_OUTPUTS} values, has {}",
            net.output_dim()
        ));
    }
    if width != net.input_dim() || !fused.len().is_multiple_of(width.max(1)) {
        return Err(shape_err!(
            "fused features of width {width} do not match network input {}",
            net.input_dim()
        ));
    }
    let n = fused.len() / width;
    let outs = par::map_range(n, |k| net.forward_trace(&fused[k * width..(k + 1) * width]));
    let mut d = Deformation::identity(n);
    let mut traces = Vec::with_capacity(n);
    for (k, r) in outs.into_iter().enumerate() {
        let (y, t) = r?;
        d.dx[k] = [y[0], y[1], y[2]];
        d.ds[k] = y[3];
        d.dq[k] = [1.0 + y[4], y[5], y[6], y[7]];
        traces.push(t);
    }
    Ok((d, DeformTrace { traces }))
}

/// Back-propagates position/log-scale offset gradients through the network.
/// Returns dL/d(fused) and accumulates parameter gradients into `grad`.
/// Rotation offsets receive no gradient because rendering is isotropic.
pub fn deform_backward(
    net: &Mlp,
    trace: &DeformTrace,
    d_dx: &[Vec3],
    d_ds: &[f64],
    grad: &mut MlpGrad,
) -> Vec<f64> {
    let width = net.input_dim();
    let per_point = par::map_range(trace.traces.len(), |k| {
        let mut g = [0.0; DEFORM_OUTPUTS];
        g[..3].copy_from_slice(&d_dx[k]);
        g[3] = d_ds[k];
        let mut local = net.zero_grad();
        let gx = net.backward(&trace.traces[k], &g, &mut local);
        (gx, local)
    });
    let mut d_fused = Vec::with_capacity(per_point.len() * width);
    for (gx, local) in per_point {
        grad.add(&local);
        d_fused.extend(gx);
    }
    d_fused
}

/// `X += dX`, `s *= exp(ds)`, `q = normalize(dq ⊗ q)`.
pub fn apply_deformation(points: &GaussianPointSet, d: &Deformation) -> Result<GaussianPointSet> {
    if d.len() != points.len() {
        return Err(shape_err!(
            "deformation for {} points applied to {}",
            d.len(),
            points.len()
        ));
    }
    let mut out = points.clone();
    for k in 0..points.len() {
        for c in 0..3 {
            out.positions[k][c] += d.dx[k][c];
        }
        out.scales[k] = (points.scales[k] * d.ds[k].exp()).max(f64::MIN_POSITIVE);
        let q = quat_mul(d.dq[k], points.rotations[k]);
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 0.0 && n.is_finite() {
            out.rotations[k] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    }
    Ok(out)
}

/// Given gradients with respect to the deformed positions and scales,
/// returns gradients with respect to `(dX, ds)`.
pub fn apply_deformation_backward(
    deformed: &GaussianPointSet,
    d_positions: &[Vec3],
    d_scales: &[f64],
) -> (Vec<Vec3>, Vec<f64>) {
    let d_ds = d_scales
        .iter()
        .zip(&deformed.scales)
        .map(|(g, s)| g * s)
        .collect();
    (d_positions.to_vec(), d_ds)
}
