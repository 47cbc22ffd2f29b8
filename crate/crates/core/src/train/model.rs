use rand::Rng;

use crate::camera::Camera;
use crate::deform_render::{
    apply_deformation, apply_deformation_backward, deform, deform_backward, DeformTrace,
    Deformation, PointGrads, DEFORM_OUTPUTS,
};
use crate::dsfd::DecoupledFeatures;
use crate::error::{shape_err, Result};
use crate::features::FeatureSet;
use crate::numerics::{Activation, LinearGrad, LinearLayer, Mlp, MlpGrad};
use crate::par;
use crate::point_field::{retrieve_point_features, GaussianPointSet, PointFeatures};
use crate::tssf::{
    fuse_gaussian_features_backward, FusionOutput, HexPlaneConfig, HexPlaneField, HexPlaneTrace,
    TssfFusion,
};

use super::config::{FeatureSource, TrainConfig};

/// Point attributes appended to the mixer input: `ln s`, rotation (4), opacity.
pub const EXTRA_DIM: usize = 6;

/// Image features of the training views.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    pub raw: FeatureSet,
    pub decoupled: DecoupledFeatures,
}

impl FeatureBank {
    pub fn for_source(&self, source: FeatureSource) -> Option<&FeatureSet> {
        match source {
            FeatureSource::None => None,
            FeatureSource::Frame => Some(&self.raw),
            FeatureSource::Decoupled | FeatureSource::Fused => Some(&self.decoupled.set),
        }
    }

    pub fn width(&self, source: FeatureSource) -> usize {
        self.for_source(source).map_or(0, |s| s.dim)
    }
}

/// Canonical points plus every network that deforms them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub points: GaussianPointSet,
    pub field: HexPlaneField,
    pub fusion: TssfFusion,
    pub mixer: LinearLayer,
    pub net: Mlp,
    pub source: FeatureSource,
}

pub fn hexplane_config(cfg: &TrainConfig) -> HexPlaneConfig {
    HexPlaneConfig {
        base_resolution: cfg.hexplane_resolution,
        multipliers: (0..cfg.hexplane_levels).map(|l| 1 << l).collect(),
        channels: cfg.hexplane_channels,
        bounds_min: [-cfg.field_bound; 3],
        bounds_max: [cfg.field_bound; 3],
    }
}

impl Model {
    pub fn new<R: Rng>(
        cfg: &TrainConfig,
        points: GaussianPointSet,
        feature_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let field = HexPlaneField::new(hexplane_config(cfg), rng.gen())?;
        let fusion_width = if cfg.feature_source == FeatureSource::Fused {
            feature_width
        } else {
            0
        };
        let fusion = if fusion_width > 0 {
            TssfFusion::uniform(cfg.fusion_mode, fusion_width)
        } else {
            TssfFusion {
                mode: cfg.fusion_mode,
                scorers: vec![],
            }
        };
        let mixer_in = field.output_dim() + feature_width + EXTRA_DIM;
        let mixer = LinearLayer::random(mixer_in, cfg.mixer_width, rng);
        let net = Mlp::random(
            &[cfg.mixer_width, cfg.hidden_width, cfg.hidden_width, DEFORM_OUTPUTS],
            Activation::default(),
            true,
            rng,
        )?;
        Ok(Self {
            points,
            field,
            fusion,
            mixer,
            net,
            source: cfg.feature_source,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.mixer.input_dim() - self.field.output_dim() - EXTRA_DIM
    }

    pub fn zero_grad(&self) -> ModelGrads {
        ModelGrads {
            field: self.field.zero_grad(),
            fusion: self.fusion.zero_grad(),
            mixer: self.mixer.zero_grad(),
            net: self.net.zero_grad(),
        }
    }

    /// Per-point features for time `i`: `(features n × w, retrieval,
    /// fusion state)`.
    fn point_features(
        &self,
        bank: Option<&FeatureSet>,
        cams: &[Camera],
        i: usize,
    ) -> Result<(Vec<f64>, Option<(PointFeatures, FusionOutput)>)> {
        let w = self.feature_width();
        let n = self.points.len();
        let set = match (self.source, bank) {
            (FeatureSource::None, _) => return Ok((Vec::new(), None)),
            (_, Some(set)) => set,
            (_, None) => return Err(shape_err!("model expects {} features, none supplied", self.source)),
        };
        if set.dim != w {
            return Err(shape_err!("feature width {} does not match the model's {w}", set.dim));
        }
        let pf = retrieve_point_features(&self.points, set, cams, i)?;
        if self.source == FeatureSource::Fused {
            let out = self.fusion.forward(&pf)?;
            Ok((out.features.clone(), Some((pf, out))))
        } else {
            Ok((pf.data[..n * w].to_vec(), None))
        }
    }

    /// Deforms the canonical points to time step `i`.
    pub fn forward(
        &self,
        bank: Option<&FeatureSet>,
        cams: &[Camera],
        i: usize,
        t_norm: f64,
    ) -> Result<ForwardTrace> {
        let n = self.points.len();
        let (fa, fusion) = self.point_features(bank, cams, i)?;
        let w = self.feature_width();
        let hg = self.field.output_dim();
        let per_point = par::map_range(n, |k| {
            let (fhg, trace) = self.field.query_trace(self.points.positions[k], t_norm);
            let mut x = Vec::with_capacity(self.mixer.input_dim());
            x.extend_from_slice(&fhg);
            x.extend_from_slice(&fa[k * w..(k + 1) * w]);
            x.push(self.points.scales[k].ln());
            x.extend_from_slice(&self.points.rotations[k]);
            x.push(self.points.opacities[k]);
            let mut out = vec![0.0; self.mixer.output_dim()];
            self.mixer.forward_into(&x, &mut out);
            (x, trace, out)
        });
        let mut inputs = Vec::with_capacity(n * self.mixer.input_dim());
        let mut hex = Vec::with_capacity(n);
        let mut fused = Vec::with_capacity(n * self.mixer.output_dim());
        for (x, t, o) in per_point {
            inputs.extend(x);
            hex.push(t);
            fused.extend(o);
        }
        let (deformation, dtrace) = deform(&fused, self.mixer.output_dim(), &self.net)?;
        let deformed = apply_deformation(&self.points, &deformation)?;
        debug_assert_eq!(inputs.len(), n * (hg + w + EXTRA_DIM));
        Ok(ForwardTrace {
            fusion,
            inputs,
            hex,
            dtrace,
            deformation,
            deformed,
        })
    }

    /// Back-propagates gradients on the deformed points. Accumulates network
    /// gradients into `grads` and returns gradients on the canonical points.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_deformed: &PointGrads,
        grads: &mut ModelGrads,
    ) -> Result<PointGrads> {
        let n = self.points.len();
        let (d_dx, d_ds) =
            apply_deformation_backward(&trace.deformed, &d_deformed.positions, &d_deformed.scales);
        let d_fused = deform_backward(&self.net, &trace.dtrace, &d_dx, &d_ds, &mut grads.net);
        let m = self.mixer.output_dim();
        let xin = self.mixer.input_dim();
        let hg = self.field.output_dim();
        let w = self.feature_width();
        let per_point = par::map_range(n, |k| {
            let mut local = self.mixer.zero_grad();
            let x = &trace.inputs[k * xin..(k + 1) * xin];
            let (d_hg, d_a, _) = fuse_gaussian_features_backward(
                &x[..hg],
                &x[hg..hg + w],
                &x[hg + w..],
                &self.mixer,
                &d_fused[k * m..(k + 1) * m],
                &mut local,
            );
            (local, d_hg, d_a)
        });
        let mut d_fa = Vec::with_capacity(n * w);
        for (k, (local, d_hg, d_a)) in per_point.into_iter().enumerate() {
            grads.mixer.add(&local);
            self.field.backward(&trace.hex[k], &d_hg, &mut grads.field);
            d_fa.extend(d_a);
        }
        if let Some((pf, out)) = &trace.fusion {
            self.fusion.backward(pf, out, &d_fa, &mut grads.fusion)?;
        }
        let mut canonical = d_deformed.clone();
        for k in 0..n {
            canonical.scales[k] = d_deformed.scales[k] * trace.deformation.ds[k].exp();
        }
        Ok(canonical)
    }
}

/// Forward state of one time step.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    fusion: Option<(PointFeatures, FusionOutput)>,
    /// Mixer inputs, point-major.
    inputs: Vec<f64>,
    hex: Vec<HexPlaneTrace>,
    dtrace: DeformTrace,
    pub deformation: Deformation,
    pub deformed: GaussianPointSet,
}

impl ForwardTrace {
    pub fn fusion_output(&self) -> Option<&FusionOutput> {
        self.fusion.as_ref().map(|(_, o)| o)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub field: Vec<Vec<f64>>,
    pub fusion: Vec<LinearGrad>,
    pub mixer: LinearGrad,
    pub net: MlpGrad,
}

impl ModelGrads {
    pub fn scale(&mut self, s: f64) {
        let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= s);
        self.field.iter_mut().for_each(scale);
        for g in &mut self.fusion {
            scale(&mut g.weight);
            scale(&mut g.bias);
        }
        scale(&mut self.mixer.weight);
        scale(&mut self.mixer.bias);
        for g in &mut self.net.layers {
            scale(&mut g.weight);
            scale(&mut g.bias);
        }
    }
}
