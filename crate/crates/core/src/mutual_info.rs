//! Mutual information as the divergence between a joint distribution and
//! the product of its marginals, and its per-class (softmax) specialization.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::features::{class_conditional_moments, kronecker_moments, ClassMoments, FeatureMap};
use crate::linalg::symmetrize;
use crate::spectral::{estimate_from_moments, EstimateReport, GeneralizedSpectrum};

/// Largest product feature dimension handled by the direct path.
pub const PRODUCT_DIM_LIMIT: usize = 4096;

/// Mutual-information estimate from paired samples `(x₁, x₂)`.
pub fn mi_estimate(
    paired: &DMatrix<f64>,
    map1: &FeatureMap,
    map2: &FeatureMap,
    spec: &DivergenceSpec,
    lambda_reg: f64,
    debias: bool,
) -> Result<EstimateReport> {
    let (m1, m2) = (map1.output_dim(), map2.output_dim());
    if m1 * m2 > PRODUCT_DIM_LIMIT {
        return Err(Error::DimensionGuard {
            m1,
            m2,
            limit: PRODUCT_DIM_LIMIT,
        });
    }
    let moments = kronecker_moments(map1, map2, paired, lambda_reg)?;
    estimate_from_moments(&moments, spec, debias)
}

/// Per-class potentials of the conditional model `v(x₁, j)`.
#[derive(Debug, Clone)]
pub struct SoftmaxModel {
    pub m: Vec<DMatrix<f64>>,
    pub n: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub priors: Vec<f64>,
    /// Per-class contributions `F_j`; the estimate is `Σ_j π_j F_j`.
    pub class_values: Vec<f64>,
    pub feature_map: FeatureMap,
    pub divergence: DivergenceSpec,
    pub lambda_reg: f64,
}

impl SoftmaxModel {
    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    /// `Σ_j π_j F_j`.
    pub fn mi_value(&self) -> f64 {
        self.priors
            .iter()
            .zip(&self.class_values)
            .map(|(p, f)| p * f)
            .sum()
    }

    /// `v(x₁, j)` from a feature vector; `j` is 1-based.
    pub fn score_phi(&self, phi: &DVector<f64>, j: usize) -> f64 {
        let idx = j - 1;
        phi.dot(&(&self.m[idx] * phi)) + 2.0 * self.c[idx].dot(phi)
    }

    /// Scores of every class.
    pub fn scores(&self, x1: &[f64]) -> Result<Vec<f64>> {
        let phi = DVector::from_vec(self.feature_map.eval(x1)?);
        Ok((1..=self.num_classes()).map(|j| self.score_phi(&phi, j)).collect())
    }

    /// `argmax_j v(x₁, j) + log π_j` (1-based, lowest index wins ties).
    pub fn predict(&self, x1: &[f64]) -> Result<usize> {
        let scores = self.scores(x1)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (j, s) in scores.iter().enumerate() {
            let total = s + self.priors[j].ln();
            if total > best.1 {
                best = (j, total);
            }
        }
        Ok(best.0 + 1)
    }

    /// Score matrix (`n × k`) for the rows of `x1`.
    pub fn score_matrix(&self, x1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let phi = self.feature_map.feature_matrix(x1)?;
        Ok(self.score_matrix_from_features(&phi))
    }

    /// Score matrix from a precomputed feature matrix.
    pub fn score_matrix_from_features(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.num_classes();
        let mut out = DMatrix::zeros(phi.nrows(), k);
        for j in 0..k {
            let quad = phi * &self.m[j];
            let lin = phi * &self.c[j];
            for i in 0..phi.nrows() {
                out[(i, j)] = phi.row(i).dot(&quad.row(i)) + 2.0 * lin[i];
            }
        }
        out
    }
}

/// Fits the per-class closed-form model on labeled data (labels in `1..=k`).
pub fn softmax_fit(
    x1: &DMatrix<f64>,
    labels: &[usize],
    map1: &FeatureMap,
    k: usize,
    spec: &DivergenceSpec,
    lambda_reg: f64,
) -> Result<SoftmaxModel> {
    if k < 2 {
        return Err(Error::InvalidArgument("softmax needs at least two classes"));
    }
    let moments = class_conditional_moments(map1, x1, labels, k, lambda_reg)?;
    softmax_fit_moments(&moments, map1.clone(), spec)
}

/// Fits the per-class model from class-conditional moments.
///
/// Class `j` uses the pencil `(Σ_j + (λ/π_j) I, Σ + (λ/π_j) I)` and the mean
/// difference `μ_j − μ`, which reproduces the Kronecker route with a one-hot
/// second variable.
pub fn softmax_fit_moments(
    moments: &ClassMoments,
    feature_map: FeatureMap,
    spec: &DivergenceSpec,
) -> Result<SoftmaxModel> {
    let k = moments.num_classes();
    let dim = moments.pooled_mean.len();
    let mut model = SoftmaxModel {
        m: Vec::with_capacity(k),
        n: Vec::with_capacity(k),
        c: Vec::with_capacity(k),
        priors: moments.priors.clone(),
        class_values: Vec::with_capacity(k),
        feature_map,
        divergence: spec.clone(),
        lambda_reg: moments.lambda_reg,
    };
    for j in 0..k {
        let pi = moments.priors[j];
        if pi == 0.0 {
            model.m.push(DMatrix::zeros(dim, dim));
            model.n.push(DMatrix::zeros(dim, dim));
            model.c.push(DVector::zeros(dim));
            model.class_values.push(0.0);
            continue;
        }
        let shift = DMatrix::identity(dim, dim) * (moments.lambda_reg / pi);
        let mut sj = &moments.seconds[j] + &shift;
        let mut s = &moments.pooled_second + &shift;
        symmetrize(&mut sj);
        symmetrize(&mut s);
        let spectrum = GeneralizedSpectrum::decompose(&sj, &s)?;
        let delta = &moments.means[j] - &moments.pooled_mean;
        let (m, n, c) = spectrum.potential_matrices(&delta, spec);
        model.class_values.push(spectrum.value(&delta, spec));
        model.m.push(m);
        model.n.push(n);
        model.c.push(c);
    }
    Ok(model)
}

/// `v(x₁, j)`.
pub fn softmax_score(model: &SoftmaxModel, x1: &[f64], j: usize) -> Result<f64> {
    if j == 0 || j > model.num_classes() {
        return Err(Error::InvalidCategory {
            value: j as f64,
            cardinality: model.num_classes(),
        });
    }
    let phi = DVector::from_vec(model.feature_map.eval(x1)?);
    Ok(model.score_phi(&phi, j))
}

/// Variational MI objective `mean_i v(x_i, y_i) − mean_i log Σ_j π_j e^{v(x_i, j)}`.
///
/// `scores` is `n × k`, `labels` are 1-based.
pub fn mi_objective(scores: &DMatrix<f64>, labels: &[usize], priors: &[f64]) -> f64 {
    let n = scores.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let row = scores.row(i);
        let top = row
            .iter()
            .zip(priors)
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, p)| s + p.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = top
            + row
                .iter()
                .zip(priors)
                .filter(|(_, &p)| p > 0.0)
                .map(|(s, p)| (s + p.ln() - top).exp())
                .sum::<f64>()
                .ln();
        total += row[labels[i] - 1] - lse;
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::Divergence;
    use crate::features::{kronecker_moments_weighted, Basis};
    use crate::spectral::{generalized_eig, potentials_from_spectrum};
    use alloc::vec;
    use core::f64::consts::LN_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(d: Divergence) -> DivergenceSpec {
        DivergenceSpec::new(d).unwrap()
    }

    fn labeled(seed: u64, n: usize, k: usize) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| {
            let u: f64 = rng.random();
            (u + 0.15 * labels[i] as f64).fract()
        });
        (x, labels)
    }

    #[test]
    fn copy_channel_population() {
        let paired = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let (m1, m2) = (FeatureMap::one_hot(2), FeatureMap::one_hot(2));
        let mom = kronecker_moments_weighted(&m1, &m2, &paired, Some(&[0.5, 0.5]), 0.0).unwrap();
        let r = estimate_from_moments(&mom, &spec(Divergence::Kl), false).unwrap();
        assert!((r.value - LN_2).abs() < 1e-10);
    }

    #[test]
    fn independent_population_is_zero() {
        let paired = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        let (m1, m2) = (FeatureMap::one_hot(2), FeatureMap::one_hot(2));
        let w = [0.3 * 0.6, 0.3 * 0.4, 0.7 * 0.6, 0.7 * 0.4];
        let mom = kronecker_moments_weighted(&m1, &m2, &paired, Some(&w), 0.0).unwrap();
        let r = estimate_from_moments(&mom, &spec(Divergence::Kl), false).unwrap();
        assert!(r.value.abs() < 1e-14);
    }

    #[test]
    fn dimension_guard() {
        let paired = DMatrix::from_element(3, 2, 1.0);
        let big = FeatureMap::one_hot(65);
        let err = mi_estimate(&paired, &big, &big, &spec(Divergence::Kl), 0.0, false);
        assert!(matches!(err, Err(Error::DimensionGuard { .. })));
    }

    #[test]
    fn route_equivalence() {
        let map1 = FeatureMap::explicit(Basis::Trigonometric { max_freq: 2 }, 1);
        for (seed, lambda) in [(1u64, 1e-3), (2, 1e-1), (3, 1e-6)] {
            let (x, labels) = labeled(seed, 300, 3);
            let s = spec(Divergence::Kl);
            let model = softmax_fit(&x, &labels, &map1, 3, &s, lambda).unwrap();
            let paired = DMatrix::from_fn(300, 2, |i, j| if j == 0 { x[(i, 0)] } else { labels[i] as f64 });
            let direct = mi_estimate(&paired, &map1, &FeatureMap::one_hot(3), &s, lambda, false).unwrap();
            let rel = (model.mi_value() - direct.value).abs() / direct.value;
            assert!(rel <= 1e-8, "{} vs {}", model.mi_value(), direct.value);

            // Potentials agree block by block with the Kronecker route.
            let mom = kronecker_moments(&map1, &FeatureMap::one_hot(3), &paired, lambda).unwrap();
            let spectrum = generalized_eig(&mom).unwrap();
            let pair = potentials_from_spectrum(&spectrum, &mom, &s);
            let m1 = map1.output_dim();
            for j in 0..3 {
                let block = pair.m.view((j * m1, j * m1), (m1, m1));
                assert!((block - &model.m[j]).amax() < 1e-7);
                let cblock = pair.c.rows(j * m1, m1);
                assert!((cblock - &model.c[j]).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn identical_classes_give_zero() {
        let map1 = FeatureMap::explicit(Basis::Trigonometric { max_freq: 1 }, 1);
        let x = DMatrix::from_fn(20, 1, |i, _| ((i / 2) as f64 * 0.13).fract());
        let labels: Vec<usize> = (0..20).map(|i| i % 2 + 1).collect();
        let model = softmax_fit(&x, &labels, &map1, 2, &spec(Divergence::Kl), 1e-3).unwrap();
        assert!(model.mi_value().abs() < 1e-14);
        for s in model.scores(&[0.4]).unwrap() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn separable_one_hot_prediction() {
        let k = 4;
        let x = DMatrix::from_fn(k, 1, |i, _| (i + 1) as f64);
        let labels: Vec<usize> = (1..=k).collect();
        let model = softmax_fit(&x, &labels, &FeatureMap::one_hot(k), k, &spec(Divergence::Kl), 0.0).unwrap();
        for j in 1..=k {
            assert_eq!(model.predict(&[j as f64]).unwrap(), j);
        }
        assert!((model.mi_value() - (k as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn label_permutation() {
        let map1 = FeatureMap::explicit(Basis::Trigonometric { max_freq: 2 }, 1);
        let (x, labels) = labeled(9, 200, 3);
        let s = spec(Divergence::Kl);
        let model = softmax_fit(&x, &labels, &map1, 3, &s, 1e-3).unwrap();
        let perm = [2usize, 3, 1];
        let permuted: Vec<usize> = labels.iter().map(|&l| perm[l - 1]).collect();
        let other = softmax_fit(&x, &permuted, &map1, 3, &s, 1e-3).unwrap();
        assert!((model.mi_value() - other.mi_value()).abs() <= 1e-14 * model.mi_value());
        for j in 0..3 {
            assert!((&model.m[j] - &other.m[perm[j] - 1]).amax() <= 1e-12);
            assert!((&model.c[j] - &other.c[perm[j] - 1]).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_model_scores() {
        let model = SoftmaxModel {
            m: vec![DMatrix::zeros(2, 2); 2],
            n: vec![DMatrix::zeros(2, 2); 2],
            c: vec![DVector::zeros(2); 2],
            priors: vec![0.5, 0.5],
            class_values: vec![0.0, 0.0],
            feature_map: FeatureMap::explicit(Basis::Linear, 2),
            divergence: spec(Divergence::Kl),
            lambda_reg: 0.0,
        };
        assert_eq!(softmax_score(&model, &[1.0, 2.0], 2).unwrap(), 0.0);
        assert_eq!(model.predict(&[1.0, 2.0]).unwrap(), 1);
    }

    #[test]
    fn nonnegative_and_below_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (a, b) = (3usize, 2usize);
            let mut joint: Vec<f64> = (0..a * b).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = joint.iter().sum();
            joint.iter_mut().for_each(|p| *p /= total);
            let rows: Vec<f64> = (0..a * b)
                .flat_map(|idx| [(idx % a + 1) as f64, (idx / a + 1) as f64])
                .collect();
            let paired = DMatrix::from_row_slice(a * b, 2, &rows);
            let p1: Vec<f64> = (0..a).map(|i| (0..b).map(|j| joint[j * a + i]).sum()).collect();
            let p2: Vec<f64> = (0..b).map(|j| (0..a).map(|i| joint[j * a + i]).sum()).collect();
            let exact: f64 = (0..a * b)
                .map(|idx| joint[idx] * (joint[idx] / (p1[idx % a] * p2[idx / a])).ln())
                .sum();
            // A coarse map on x₁ merges symbols 2 and 3.
            let coarse = FeatureMap::custom(1, 2, |x, out| {
                out[0] = if x[0] == 1.0 { 1.0 } else { 0.0 };
                out[1] = 1.0 - out[0];
            });
            for map1 in [FeatureMap::one_hot(a), coarse] {
                let mom = kronecker_moments_weighted(&map1, &FeatureMap::one_hot(b), &paired, Some(&joint), 0.0).unwrap();
                let v = estimate_from_moments(&mom, &spec(Divergence::Kl), false).unwrap().value;
                assert!(v >= 0.0 && v <= exact + 1e-10, "{v} vs {exact}");
            }
        }
    }

    #[test]
    fn objective_of_zero_scores() {
        let scores = DMatrix::zeros(3, 2);
        assert!(mi_objective(&scores, &[1, 2, 1], &[0.5, 0.5]).abs() < 1e-15);
    }
}
