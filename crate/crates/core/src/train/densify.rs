use rand::Rng;

use crate::camera::Vec3;
use crate::point_field::GaussianPointSet;

/// Running sum of positional-gradient norms per point since the last
/// densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradAccumulator {
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
}

impl GradAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, position_grads: &[Vec3]) {
        for (k, g) in position_grads.iter().enumerate() {
            self.sums[k] += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            self.counts[k] += 1;
        }
    }

    pub fn reset(&mut self, n: usize) {
        self.sums.clear();
        self.sums.resize(n, 0.0);
        self.counts.clear();
        self.counts.resize(n, 0);
    }
}

/// Number of clones for `n` points.
pub fn densify_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Clones the points with the largest accumulated gradient. Each clone is
/// offset by `0.3 s` along a random unit direction and has half the
/// scale; ties go to the lower index. Returns the cloned source indices
/// and resets the accumulator.
pub fn densify<R: Rng>(
    points: &mut GaussianPointSet,
    acc: &mut GradAccumulator,
    fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let n = points.len();
    let k = densify_count(n, fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| acc.sums[b].total_cmp(&acc.sums[a]).then(a.cmp(&b)));
    order.truncate(k);
    for &src in &order {
        let dir = random_unit(rng);
        let s = points.scales[src];
        let p = points.positions[src];
        points.push(
            [p[0] + 0.3 * s * dir[0], p[1] + 0.3 * s * dir[1], p[2] + 0.3 * s * dir[2]],
            0.5 * s,
            points.rotations[src],
            points.opacities[src],
            points.colors[src],
        );
    }
    acc.reset(points.len());
    order
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_field::init_random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_and_ties() {
        assert_eq!(densify_count(40, 0.025), 1);
        assert_eq!(densify_count(200, 0.025), 5);
        let mut pts = init_random([-1.0; 3], [1.0; 3], 40, 1).unwrap();
        let mut acc = GradAccumulator::new(40);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cloned = densify(&mut pts, &mut acc, 0.1, &mut rng);
        assert_eq!(cloned, vec![0, 1, 2, 3]);
        assert_eq!(pts.len(), 44);
        assert_eq!(acc.sums, vec![0.0; 44]);
    }

    #[test]
    fn clones_follow_gradient_and_stay_finite() {
        let mut pts = init_random([-1.0; 3], [1.0; 3], 10, 2).unwrap();
        let before = pts.clone();
        let mut acc = GradAccumulator::new(10);
        let mut g = vec![[0.0; 3]; 10];
        g[7] = [3.0, 0.0, 4.0];
        g[2] = [0.0, 1.0, 0.0];
        acc.accumulate(&g);
        acc.accumulate(&g);
        assert_eq!(acc.sums[7], 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloned = densify(&mut pts, &mut acc, 0.2, &mut rng);
        assert_eq!(cloned, vec![7, 2]);
        assert_eq!(&pts.positions[..10], &before.positions[..]);
        for (c, &src) in cloned.iter().enumerate() {
            let k = 10 + c;
            assert_eq!(pts.scales[k], 0.5 * before.scales[src]);
            let d = crate::camera::length(crate::camera::sub(pts.positions[k], before.positions[src]));
            assert!((d - 0.3 * before.scales[src]).abs() < 1e-12);
        }
        pts.validate().unwrap();
    }
}
