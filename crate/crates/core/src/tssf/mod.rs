//! Cross-view fusion of per-point features, the HexPlane field, and the
//! linear mixer that combines them into the deformation network's input.

mod fusion;
mod hexplane;

pub use fusion::{
    avg_fuse, da_fuse, distance_feature, ga_fuse, FusionMode, FusionOutput, ScoreMap, TssfFusion,
};
pub use hexplane::{HexPlaneConfig, HexPlaneField, HexPlaneTrace, PLANE_AXES};

use crate::error::{shape_err, Result};
use crate::numerics::{LinearGrad, LinearLayer};

/// Linear map of `[f_hg; f_a; extras]`.
pub fn fuse_gaussian_features(
    f_hg: &[f64],
    f_a: &[f64],
    extras: &[f64],
    mixer: &LinearLayer,
) -> Result<Vec<f64>> {
    let n = f_hg.len() + f_a.len() + extras.len();
    if n != mixer.input_dim() {
        return Err(shape_err!("mixer takes {} inputs, got {n}", mixer.input_dim()));
    }
    let x = [f_hg, f_a, extras].concat();
    let mut out = vec![0.0; mixer.output_dim()];
    mixer.forward_into(&x, &mut out);
    Ok(out)
}

/// Returns the gradients for `(f_hg, f_a, extras)` and accumulates the
/// mixer's.
pub fn fuse_gaussian_features_backward(
    f_hg: &[f64],
    f_a: &[f64],
    extras: &[f64],
    mixer: &LinearLayer,
    g_out: &[f64],
    grad: &mut LinearGrad,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = [f_hg, f_a, extras].concat();
    let gx = mixer.backward(&x, g_out, grad);
    let (a, rest) = gx.split_at(f_hg.len());
    let (b, c) = rest.split_at(f_a.len());
    (a.to_vec(), b.to_vec(), c.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tensor};
    use crate::point_field::PointFeatures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pf(rng: &mut ChaCha8Rng, views: usize, points: usize, width: usize) -> PointFeatures {
        let data = (0..views * points * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PointFeatures {
            time: 0,
            views,
            points,
            width,
            data,
            valid: vec![true; views * points],
        }
    }

    #[test]
    fn ga_softmax_arithmetic() {
        let pf = PointFeatures {
            time: 0,
            views: 2,
            points: 1,
            width: 2,
            data: vec![1.0, 0.0, 0.0, 1.0],
            valid: vec![true, true],
        };
        // logits (0, ln 3) from a scorer reading the second channel
        let scorer = LinearLayer::new(Tensor::from_vec(&[1, 2], vec![0.0, 3f64.ln()]).unwrap(), vec![0.0]).unwrap();
        let (f, s) = ga_fuse(&pf, &scorer).unwrap();
        assert!((f[0] - 0.25).abs() < 1e-15 && (f[1] - 0.75).abs() < 1e-15);
        assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ga_masking_and_flagging() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pf = random_pf(&mut rng, 3, 2, 4);
        let scorer = LinearLayer::random(4, 1, &mut rng);
        // (view, point): point 0 sees views 0 and 2, point 1 sees none
        pf.valid = vec![true, false, false, false, true, false];
        let (f, s) = ga_fuse(&pf, &scorer).unwrap();
        assert_eq!(s.row(0)[1], 0.0);
        // renormalized over the remaining views
        let l0 = scorer.forward(pf.feature(0, 0)).unwrap()[0];
        let l2 = scorer.forward(pf.feature(2, 0)).unwrap()[0];
        let w0 = 1.0 / (1.0 + (l2 - l0).exp());
        assert!((s.row(0)[0] - w0).abs() < 1e-12);
        assert_eq!(&f[4..], &[0.0; 4]);
        assert_eq!(s.row(1), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn da_cases() {
        assert_eq!(distance_feature(&[1.0, 2.0], &[3.0, 1.0]), vec![2.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = LinearLayer::random(6, 1, &mut rng);
        let b = LinearLayer::random(6, 1, &mut rng);
        let front = [0.3, -0.7, 1.1];
        let pf = PointFeatures {
            time: 0,
            views: 4,
            points: 1,
            width: 3,
            data: front.repeat(4),
            valid: vec![true; 4],
        };
        let (f, s) = da_fuse(&pf, &a, &b).unwrap();
        assert_eq!(f, front.to_vec());
        assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = PointFeatures {
            views: 1,
            data: front.to_vec(),
            valid: vec![true],
            ..pf.clone()
        };
        assert_eq!(da_fuse(&single, &a, &b).unwrap().0, front.to_vec());
    }

    #[test]
    fn fusion_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pf = random_pf(&mut rng, 4, 3, 3);
        pf.valid[5] = false;
        let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for mode in [FusionMode::Ga, FusionMode::Da] {
            let base = TssfFusion::new(mode, 3, &mut rng);
            let n_w = base.scorers[0].weight.len();
            // weights only: the bias gradient is identically zero (softmax is shift-invariant)
            let params: Vec<f64> = base.scorers.iter().flat_map(|s| s.weight.data().to_vec()).collect();
            let report = grad_check(
                |p| {
                    let mut f = base.clone();
                    for (k, s) in f.scorers.iter_mut().enumerate() {
                        s.weight.data_mut().copy_from_slice(&p[k * n_w..(k + 1) * n_w]);
                    }
                    let out = f.forward(&pf)?;
                    let loss = out.features.iter().zip(&c).map(|(a, b)| a * b).sum();
                    let mut g = f.zero_grad();
                    f.backward(&pf, &out, &c, &mut g)?;
                    Ok((loss, g.iter().flat_map(|g| g.weight.clone()).collect()))
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{mode}: {}", report.max_rel_error);
        }
    }

    fn small_config() -> HexPlaneConfig {
        HexPlaneConfig {
            base_resolution: 3,
            multipliers: vec![1, 2],
            channels: 2,
            bounds_min: [-1.0, -1.0, -1.0],
            bounds_max: [1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn hexplane_ones_and_nodes() {
        let ones = HexPlaneField::filled(HexPlaneConfig::default(), 1.0).unwrap();
        assert!(ones.query([0.3, -0.2, 0.9], 0.4).iter().all(|v| *v == 1.0));
        let cfg = HexPlaneConfig {
            base_resolution: 9,
            multipliers: vec![1],
            channels: 3,
            bounds_min: [0.0; 3],
            bounds_max: [1.0; 3],
        };
        let field = HexPlaneField::new(cfg, 5).unwrap();
        let (q, t) = ([0.375, 0.5, 0.875], 0.25);
        let idx = [3usize, 4, 7, 2];
        let mut expect = vec![1.0; 3];
        for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
            let cell = idx[b] * 9 + idx[a];
            for c in 0..3 {
                expect[c] *= field.grids[p][cell * 3 + c];
            }
        }
        assert_eq!(field.query(q, t), expect);
    }

    #[test]
    fn hexplane_clamps() {
        let field = HexPlaneField::new(small_config(), 1).unwrap();
        assert_eq!(field.query([5.0, -9.0, 1.0], 3.0), field.query([1.0, -1.0, 1.0], 1.0));
        assert!(field.query([f64::NAN, 0.0, 0.0], 0.5).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hexplane_rejects_bad_levels() {
        let cfg = HexPlaneConfig {
            multipliers: vec![2, 2],
            ..HexPlaneConfig::default()
        };
        assert!(HexPlaneField::new(cfg, 0).is_err());
    }

    #[test]
    fn hexplane_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = HexPlaneField::new(small_config(), 9).unwrap();
        let queries: Vec<([f64; 3], f64)> = (0..4)
            .map(|_| {
                (
                    [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)],
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sizes: Vec<usize> = field.grids.iter().map(Vec::len).collect();
        let params: Vec<f64> = field.grids.concat();
        let report = grad_check(
            |p| {
                let mut f = field.clone();
                let mut o = 0;
                for (g, n) in f.grids.iter_mut().zip(&sizes) {
                    g.copy_from_slice(&p[o..o + n]);
                    o += n;
                }
                let mut grads = f.zero_grad();
                let mut loss = 0.0;
                for &(x, t) in &queries {
                    let (v, tr) = f.query_trace(x, t);
                    loss += v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
                    f.backward(&tr, &c, &mut grads);
                }
                Ok((loss, grads.concat()))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn mixer_cases_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zero = LinearLayer::zeros(5, 3);
        assert_eq!(fuse_gaussian_features(&[1.0, 2.0], &[3.0], &[4.0, 5.0], &zero).unwrap(), vec![0.0; 3]);
        assert!(fuse_gaussian_features(&[1.0], &[], &[], &zero).is_err());
        let mut w = vec![0.0; 3 * 5];
        w[0] = 1.0;
        w[5 + 1] = 1.0;
        let ident = LinearLayer::new(Tensor::from_vec(&[3, 5], w).unwrap(), vec![0.0; 3]).unwrap();
        let out = fuse_gaussian_features(&[0.7, -0.2], &[0.0, 0.0, 0.0], &[], &ident).unwrap();
        assert_eq!(&out[..2], &[0.7, -0.2]);

        let mixer = LinearLayer::random(5, 3, &mut rng);
        let (hg, a, ex) = ([0.4, -0.1], [0.9], [0.2, 0.3]);
        let out = fuse_gaussian_features(&hg, &a, &ex, &mixer).unwrap();
        let x = [0.4, -0.1, 0.9, 0.2, 0.3];
        for r in 0..3 {
            let hand: f64 = (0..5).map(|c| mixer.weight.row(r)[c] * x[c]).sum::<f64>() + mixer.bias[r];
            assert!((out[r] - hand).abs() < 1e-14);
        }
        let g = [0.5, -1.0, 0.25];
        let report = grad_check(
            |p| {
                let out = fuse_gaussian_features(&p[..2], &p[2..3], &p[3..], &mixer)?;
                let loss = out.iter().zip(&g).map(|(a, b)| a * b).sum();
                let mut mg = mixer.zero_grad();
                let (d1, d2, d3) = fuse_gaussian_features_backward(&p[..2], &p[2..3], &p[3..], &mixer, &g, &mut mg);
                Ok((loss, [d1, d2, d3].concat()))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
    }
}
