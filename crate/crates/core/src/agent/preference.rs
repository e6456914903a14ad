//! Preference vectors, scalarization, the angle loss and preference interpolators.

use crate::reward::REWARD_DIM;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const PREF_DIM: usize = 4;

/// Cosine clamp used by the training gradient of the angle loss.
pub const COS_CLAMP: f64 = 0.9999;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("preference component {index} is {value}; components must be finite and in [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("preference components sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("interpolation table needs one direction per lattice point ({expected}), got {got}")]
    TableSize { expected: usize, got: usize },
}

/// User weights over (aggressiveness, comfort, speed, efficiency) on the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; PREF_DIM]", into = "[f64; PREF_DIM]")]
pub struct PreferenceVector([f64; PREF_DIM]);

impl TryFrom<[f64; PREF_DIM]> for PreferenceVector {
    type Error = PreferenceError;

    fn try_from(w: [f64; PREF_DIM]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<PreferenceVector> for [f64; PREF_DIM] {
    fn from(p: PreferenceVector) -> Self {
        p.0
    }
}

impl PreferenceVector {
    /// Validates simplex membership with a 1e-9 tolerance on the sum.
    pub fn new(w: [f64; PREF_DIM]) -> Result<Self, PreferenceError> {
        for (index, &value) in w.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(PreferenceError::OutOfRange { index, value });
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(PreferenceError::NotNormalized(sum));
        }
        Ok(Self(w))
    }

    /// Rescales non-negative weights onto the simplex.
    pub fn normalized(w: [f64; PREF_DIM]) -> Result<Self, PreferenceError> {
        for (index, &value) in w.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(PreferenceError::OutOfRange { index, value });
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(PreferenceError::ZeroVector);
        }
        Ok(Self(w.map(|v| v / sum)))
    }

    pub fn one_hot(i: usize) -> Self {
        let mut w = [0.0; PREF_DIM];
        w[i] = 1.0;
        Self(w)
    }

    pub fn uniform() -> Self {
        Self([0.25; PREF_DIM])
    }

    /// Uniform draw from the 3-simplex (flat Dirichlet).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let dirichlet = Dirichlet::new([1.0; PREF_DIM]).expect("flat Dirichlet is valid");
        Self(dirichlet.sample(rng))
    }

    pub fn as_array(&self) -> [f64; PREF_DIM] {
        self.0
    }

    /// Weights over the full reward vector: the core objective keeps a fixed unit weight.
    pub fn augmented(&self) -> [f64; REWARD_DIM] {
        let [a, b, c, d] = self.0;
        [1.0, a, b, c, d]
    }
}

impl std::ops::Index<usize> for PreferenceVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// λ̃ · q with λ̃ = (1, λ).
pub fn scalarize(lambda: &PreferenceVector, q: &[f64; REWARD_DIM]) -> f64 {
    scalarize_weights(&lambda.augmented(), q)
}

pub fn scalarize_weights(w: &[f64; REWARD_DIM], q: &[f64; REWARD_DIM]) -> f64 {
    w.iter().zip(q).map(|(a, b)| a * b).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
fn cosine(a: &[f64], b: &[f64]) -> Result<f64, PreferenceError> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(PreferenceError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Angle in radians between the preference direction and the preference part of Q.
///
/// Evaluated as `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which equals `arccos(cos)` but stays
/// exact for nearly parallel vectors.
pub fn angle_loss(lambda_p: &[f64; PREF_DIM], q_pref: &[f64; PREF_DIM]) -> Result<f64, PreferenceError> {
    let (na, nb) = (norm(lambda_p), norm(q_pref));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(PreferenceError::ZeroVector);
    }
    let a = lambda_p.map(|x| x / na);
    let b = q_pref.map(|x| x / nb);
    let diff: [f64; PREF_DIM] = std::array::from_fn(|i| a[i] - b[i]);
    let sum: [f64; PREF_DIM] = std::array::from_fn(|i| a[i] + b[i]);
    Ok(2.0 * norm(&diff).atan2(norm(&sum)))
}

/// Angle loss and its gradient with respect to `q_pref`, as used during training.
///
/// The cosine is clamped to ±[`COS_CLAMP`] with zero gradient outside so the arccos
/// derivative stays bounded; a zero `q_pref` yields a zero gradient.
pub fn angle_loss_with_grad(lambda_p: &[f64; PREF_DIM], q_pref: &[f64; PREF_DIM]) -> (f64, [f64; PREF_DIM]) {
    let (nl, nq) = (norm(lambda_p), norm(q_pref));
    if nl == 0.0 || nq == 0.0 || !nq.is_finite() {
        return (PI / 2.0, [0.0; PREF_DIM]);
    }
    let dot: f64 = lambda_p.iter().zip(q_pref).map(|(x, y)| x * y).sum();
    let c = dot / (nl * nq);
    if c.abs() >= COS_CLAMP {
        return (c.clamp(-COS_CLAMP, COS_CLAMP).acos(), [0.0; PREF_DIM]);
    }
    let scale = -1.0 / (1.0 - c * c).sqrt();
    let mut g = [0.0; PREF_DIM];
    for i in 0..PREF_DIM {
        let dc = (lambda_p[i] / nl - c * q_pref[i] / nq) / nq;
        g[i] = scale * dc;
    }
    (c.acos(), g)
}

/// All integer compositions `k` of `resolution` into four parts, lexicographic.
pub fn simplex_lattice(resolution: usize) -> Vec<[usize; PREF_DIM]> {
    let mut out = Vec::new();
    for a in 0..=resolution {
        for b in 0..=resolution - a {
            for c in 0..=resolution - a - b {
                out.push([a, b, c, resolution - a - b - c]);
            }
        }
    }
    out
}

/// Anchor-table interpolator on the lattice `{k / K}` with Freudenthal (Kuhn) simplices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInterpolator {
    pub resolution: usize,
    /// Unit direction per lattice point, in [`simplex_lattice`] order.
    pub directions: Vec<[f64; PREF_DIM]>,
}

impl TableInterpolator {
    pub fn new(resolution: usize, directions: Vec<[f64; PREF_DIM]>) -> Result<Self, PreferenceError> {
        let expected = simplex_lattice(resolution).len();
        if resolution == 0 || directions.len() != expected {
            return Err(PreferenceError::TableSize {
                expected,
                got: directions.len(),
            });
        }
        let directions = directions
            .into_iter()
            .map(|d| {
                let n = norm(&d);
                if n == 0.0 || !n.is_finite() {
                    Err(PreferenceError::ZeroVector)
                } else {
                    Ok(d.map(|x| x / n))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { resolution, directions })
    }

    /// The identity table: every anchor maps to its own normalized direction.
    pub fn identity(resolution: usize) -> Self {
        let dirs = simplex_lattice(resolution).into_iter().map(|k| k.map(|v| v as f64)).collect();
        Self::new(resolution, dirs).expect("identity table is well formed")
    }

    fn index_of(&self, k: [usize; PREF_DIM]) -> usize {
        // Position of k in lexicographic order of compositions.
        let n = self.resolution;
        let count2 = |m: usize| m + 1;
        let mut idx = 0;
        for a in 0..k[0] {
            idx += (0..=n - a).map(|b| count2(n - a - b)).sum::<usize>();
        }
        let rest = n - k[0];
        for b in 0..k[1] {
            idx += count2(rest - b);
        }
        idx + k[2]
    }

    pub fn interpolate(&self, lambda: &PreferenceVector) -> Result<[f64; PREF_DIM], PreferenceError> {
        let k = self.resolution as f64;
        let y = lambda.as_array().map(|v| v * k);
        // Cumulative coordinates turn the simplex lattice into a monotone integer grid.
        let z = [y[0], y[0] + y[1], y[0] + y[1] + y[2]];
        let base = z.map(|v| v.floor().min(k));
        let frac = [z[0] - base[0], z[1] - base[1], z[2] - base[2]];
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]));
        let mut vertex = base;
        let mut weights = Vec::with_capacity(4);
        weights.push((vertex, 1.0 - frac[order[0]]));
        for j in 0..3 {
            vertex[order[j]] += 1.0;
            let next = if j + 1 < 3 { frac[order[j + 1]] } else { 0.0 };
            weights.push((vertex, frac[order[j]] - next));
        }
        let mut out = [0.0; PREF_DIM];
        for (v, w) in weights {
            if w <= 0.0 {
                continue;
            }
            let c = [v[0], v[1] - v[0], v[2] - v[1], k - v[2]].map(|x| x.round() as usize);
            let d = self.directions[self.index_of(c)];
            for i in 0..PREF_DIM {
                out[i] += w * d[i];
            }
        }
        let n = norm(&out);
        if n == 0.0 {
            return Err(PreferenceError::ZeroVector);
        }
        Ok(out.map(|x| x / n))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interpolator {
    /// λ_p = λ / ‖λ‖.
    #[default]
    Normalize,
    Table(TableInterpolator),
}

impl Interpolator {
    pub fn interpolate(&self, lambda: &PreferenceVector) -> Result<[f64; PREF_DIM], PreferenceError> {
        match self {
            Interpolator::Normalize => {
                let w = lambda.as_array();
                let n = norm(&w);
                if n == 0.0 {
                    return Err(PreferenceError::ZeroVector);
                }
                Ok(w.map(|x| x / n))
            }
            Interpolator::Table(t) => t.interpolate(lambda),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert!(PreferenceVector::new([0.25; 4]).is_ok());
        assert_eq!(
            PreferenceVector::new([-0.1, 0.5, 0.3, 0.3]),
            Err(PreferenceError::OutOfRange { index: 0, value: -0.1 })
        );
        assert!(matches!(PreferenceVector::new([0.5, 0.5, 0.5, 0.0]), Err(PreferenceError::NotNormalized(_))));
        assert!(PreferenceVector::new([f64::NAN, 0.0, 0.0, 1.0]).is_err());
        assert_eq!(PreferenceVector::normalized([0.0; 4]), Err(PreferenceError::ZeroVector));
        let p = PreferenceVector::normalized([2.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.as_array(), [0.5, 0.5, 0.0, 0.0]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[0.5,0.5,0.0,0.0]");
        assert!(serde_json::from_str::<PreferenceVector>("[0.5,0.6,0.0,0.0]").is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let a: Vec<_> = (0..5).scan(ChaCha8Rng::seed_from_u64(1), |r, _| Some(PreferenceVector::sample(r))).collect();
        let b: Vec<_> = (0..5).scan(ChaCha8Rng::seed_from_u64(1), |r, _| Some(PreferenceVector::sample(r))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn scalarize_examples() {
        let q = [2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(scalarize(&PreferenceVector::one_hot(0), &q), 5.0);
        assert_eq!(scalarize(&PreferenceVector::uniform(), &[0.0, 4.0, 4.0, 4.0, 4.0]), 4.0);
        assert_eq!(scalarize(&PreferenceVector::uniform(), &[0.0; 5]), 0.0);
    }

    #[test]
    fn angle_examples() {
        assert_abs_diff_eq!(angle_loss(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), PI / 2.0);
        assert_eq!(angle_loss(&[0.5, 0.5, 0.0, 0.0], &[2.0, 2.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(angle_loss(&[0.0; 4], &[1.0; 4]), Err(PreferenceError::ZeroVector));
    }

    #[test]
    fn angle_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let l: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let (v, g) = angle_loss_with_grad(&l, &q);
            assert_abs_diff_eq!(v, angle_loss(&l, &q).unwrap(), epsilon = 1e-12);
            for i in 0..4 {
                let h = 1e-6;
                let mut up = q;
                up[i] += h;
                let mut dn = q;
                dn[i] -= h;
                let fd = (angle_loss(&l, &up).unwrap() - angle_loss(&l, &dn).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
            }
        }
        let (_, g) = angle_loss_with_grad(&[1.0, 0.0, 0.0, 0.0], &[3.0, 0.0, 0.0, 0.0]);
        assert_eq!(g, [0.0; 4]);
    }

    #[test]
    fn normalize_interpolator() {
        let i = Interpolator::Normalize;
        assert_eq!(i.interpolate(&PreferenceVector::one_hot(0)).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        let v = i.interpolate(&PreferenceVector::new([0.5, 0.5, 0.0, 0.0]).unwrap()).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(v[0], r, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], r, epsilon = 1e-15);
    }

    #[test]
    fn lattice_counts_and_index() {
        assert_eq!(simplex_lattice(12).len(), 455);
        assert_eq!(simplex_lattice(13).len(), 560);
        let t = TableInterpolator::identity(5);
        for (i, k) in simplex_lattice(5).into_iter().enumerate() {
            assert_eq!(t.index_of(k), i);
        }
    }

    #[test]
    fn table_returns_anchor_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lattice = simplex_lattice(4);
        let dirs: Vec<[f64; 4]> = lattice.iter().map(|_| std::array::from_fn(|_| rng.random_range(0.1..1.0))).collect();
        let t = TableInterpolator::new(4, dirs).unwrap();
        for (k, d) in lattice.iter().zip(&t.directions) {
            let lambda = PreferenceVector::new(k.map(|v| v as f64 / 4.0)).unwrap();
            let got = t.interpolate(&lambda).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(got[i], d[i], epsilon = 1e-12);
            }
        }
        assert!(matches!(TableInterpolator::new(4, vec![[1.0; 4]]), Err(PreferenceError::TableSize { .. })));
    }

    #[test]
    fn identity_table_tracks_normalization() {
        let t = TableInterpolator::identity(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let l = PreferenceVector::sample(&mut rng);
            let v = t.interpolate(&l).unwrap();
            assert_abs_diff_eq!(norm(&v), 1.0, epsilon = 1e-12);
            // Blending unit anchors is not exactly normalization, but stays close to it.
            let n = Interpolator::Normalize.interpolate(&l).unwrap();
            assert!(angle_loss(&v, &n).unwrap() < 0.15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn scalarize_is_linear(a in prop::array::uniform5(-5.0f64..5.0), b in prop::array::uniform5(-5.0f64..5.0),
                               q in prop::array::uniform5(-50.0f64..50.0), alpha in 0.0f64..1.0) {
            let mix: [f64; 5] = std::array::from_fn(|i| alpha * a[i] + (1.0 - alpha) * b[i]);
            let lhs = scalarize_weights(&mix, &q);
            let rhs = alpha * scalarize_weights(&a, &q) + (1.0 - alpha) * scalarize_weights(&b, &q);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn angle_bounds_and_scale_invariance(l in prop::array::uniform4(0.01f64..1.0), q in prop::array::uniform4(-10.0f64..10.0),
                                             s1 in 0.01f64..100.0, s2 in 0.01f64..100.0) {
            prop_assume!(norm(&q) > 1e-6);
            let v = angle_loss(&l, &q).unwrap();
            prop_assert!((0.0..=PI).contains(&v));
            let scaled = angle_loss(&l.map(|x| x * s1), &q.map(|x| x * s2)).unwrap();
            prop_assert!((v - scaled).abs() < 1e-6);
            prop_assert!(angle_loss(&l, &l.map(|x| x * s2)).unwrap() < 1e-6);
        }

        #[test]
        fn angle_zero_only_when_parallel(l in prop::array::uniform4(0.01f64..1.0), q in prop::array::uniform4(-10.0f64..10.0)) {
            prop_assume!(norm(&q) > 1e-6);
            let c = cosine(&l, &q).unwrap();
            let v = angle_loss(&l, &q).unwrap();
            if v == 0.0 {
                prop_assert!((c - 1.0).abs() < 1e-12);
            }
            if (1.0 - c) > 1e-9 {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn samples_lie_on_simplex(seed in any::<u64>()) {
            let p = PreferenceVector::sample(&mut ChaCha8Rng::seed_from_u64(seed));
            let w = p.as_array();
            prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
