//! Generalized spectrum of `(Σ_p, Σ_q)`, the spectral divergence value,
//! closed-form potentials and the debiasing correction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::features::{compute_moments, ConstantMode, DatasetPair, FeatureMap, MomentSet};
use crate::linalg::{cholesky, fix_column_signs, sym_eigen_sorted, symmetrize, trace_product};

/// Lower clip applied to generalized eigenvalues.
const EIGEN_FLOOR: f64 = 1e-300;
/// Generalized eigenvalues below this are reported as non-PSD moments.
const NEGATIVE_EIGEN_TOL: f64 = -1e-8;
/// Relative gap under which divided differences become derivatives.
const TIE_TOL: f64 = 1e-6;
/// Relative eigenvalue cutoff defining the support of a singular reference.
const SUPPORT_TOL: f64 = 1e-12;

/// Generalized eigenpairs `Σ_p v_i = λ_i Σ_q v_i` with `v_iᵀ Σ_q v_j = 1_{i=j}`.
///
/// `basis` is `m × r`; `r < m` only for [`GeneralizedSpectrum::on_support`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedSpectrum {
    pub lambdas: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl GeneralizedSpectrum {
    /// Decomposes the pencil by Cholesky whitening of `sigma_q`.
    pub fn decompose(sigma_p: &DMatrix<f64>, sigma_q: &DMatrix<f64>) -> Result<Self> {
        let m = sigma_q.nrows();
        if sigma_p.nrows() != m || sigma_p.ncols() != m || sigma_q.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: sigma_p.nrows(),
            });
        }
        let chol = cholesky(sigma_q).ok_or(Error::SingularReference)?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(sigma_p)
            .ok_or(Error::SingularReference)?;
        let mut a = l
            .solve_lower_triangular(&x.transpose())
            .ok_or(Error::SingularReference)?;
        symmetrize(&mut a);
        let (vals, u) = sym_eigen_sorted(a);
        let mut basis = l
            .transpose()
            .solve_upper_triangular(&u)
            .ok_or(Error::SingularReference)?;
        fix_column_signs(&mut basis);
        Ok(GeneralizedSpectrum {
            lambdas: clip_eigenvalues(vals)?,
            basis,
        })
    }

    /// Decomposition restricted to the range of a possibly singular `sigma_q`
    /// (pseudo-inverse convention).
    pub fn on_support(sigma_p: &DMatrix<f64>, sigma_q: &DMatrix<f64>) -> Result<Self> {
        let m = sigma_q.nrows();
        let mut sq = sigma_q.clone();
        symmetrize(&mut sq);
        let (qvals, qvecs) = sym_eigen_sorted(sq);
        let top = qvals.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::SingularReference);
        }
        let keep: Vec<usize> = (0..m).filter(|&i| qvals[i] > SUPPORT_TOL * top).collect();
        let r = keep.len();
        let w = DMatrix::from_fn(m, r, |i, j| qvecs[(i, keep[j])] / qvals[keep[j]].sqrt());
        let mut a = w.transpose() * sigma_p * &w;
        symmetrize(&mut a);
        let (vals, u) = sym_eigen_sorted(a);
        let mut basis = w * u;
        fix_column_signs(&mut basis);
        Ok(GeneralizedSpectrum {
            lambdas: clip_eigenvalues(vals)?,
            basis,
        })
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coordinates `Vᵀ δ`.
    pub fn project(&self, delta: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(delta)
    }

    /// `Σ_i h(λ_i) (δᵀ v_i)²`.
    pub fn value(&self, delta: &DVector<f64>, spec: &DivergenceSpec) -> f64 {
        let a = self.project(delta);
        self.lambdas
            .iter()
            .zip(a.iter())
            .map(|(&l, &ai)| spec.h_unchecked(l) * ai * ai)
            .sum()
    }

    /// `(M, N, c)` of the quadratic potentials for the mean difference `delta`.
    pub fn potential_matrices(
        &self,
        delta: &DVector<f64>,
        spec: &DivergenceSpec,
    ) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let r = self.rank();
        let a = self.project(delta);
        let h: Vec<f64> = self.lambdas.iter().map(|&l| spec.h_unchecked(l)).collect();
        let g: Vec<f64> = self.lambdas.iter().zip(&h).map(|(&l, &hl)| l * hl).collect();
        let mut kernel_m = DMatrix::zeros(r, r);
        let mut kernel_n = DMatrix::zeros(r, r);
        for i in 0..r {
            let li = self.lambdas[i];
            for j in 0..r {
                let lj = self.lambdas[j];
                let (dh, dg) = if (li - lj).abs() < TIE_TOL * li.max(1.0) {
                    let mid = 0.5 * (li + lj);
                    (spec.h_prime(mid), spec.g_prime(mid))
                } else {
                    ((h[i] - h[j]) / (li - lj), (g[i] - g[j]) / (li - lj))
                };
                let aa = a[i] * a[j];
                kernel_m[(i, j)] = aa * dh;
                kernel_n[(i, j)] = -aa * dg;
            }
        }
        let v = &self.basis;
        let mut m = v * kernel_m * v.transpose();
        let mut n = v * kernel_n * v.transpose();
        symmetrize(&mut m);
        symmetrize(&mut n);
        let ha = DVector::from_iterator(r, a.iter().zip(&h).map(|(ai, hi)| ai * hi));
        let c = v * ha;
        (m, n, c)
    }

    /// `Σ_i h(λ_i) v_iᵀ C v_i`.
    pub fn trace_correction(&self, c_hat: &DMatrix<f64>, spec: &DivergenceSpec) -> f64 {
        let cv = c_hat * &self.basis;
        (0..self.rank())
            .map(|i| spec.h_unchecked(self.lambdas[i]) * self.basis.column(i).dot(&cv.column(i)))
            .sum()
    }
}

fn clip_eigenvalues(mut vals: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(&bad) = vals.iter().find(|&&l| l < NEGATIVE_EIGEN_TOL || l.is_nan()) {
        return Err(Error::NotPsd(bad));
    }
    vals.iter_mut().for_each(|l| *l = l.max(EIGEN_FLOOR));
    Ok(vals)
}

/// Generalized eigendecomposition of the regularized moment pencil.
pub fn generalized_eig(moments: &MomentSet) -> Result<GeneralizedSpectrum> {
    let (sp, sq) = moments.regularized();
    GeneralizedSpectrum::decompose(&sp, &sq)
}

/// Like [`generalized_eig`] but restricted to the range of `Σ_q` when it is singular.
pub fn generalized_eig_on_support(moments: &MomentSet) -> Result<GeneralizedSpectrum> {
    let (sp, sq) = moments.regularized();
    GeneralizedSpectrum::on_support(&sp, &sq)
}

/// Spectral divergence `Σ_i h(λ_i) ((μ_p − μ_q)ᵀ v_i)²`.
pub fn spectral_value(moments: &MomentSet, spec: &DivergenceSpec) -> Result<f64> {
    Ok(generalized_eig(moments)?.value(&moments.delta(), spec))
}

/// Reference value `½ ∫ δᵀ (ρ Σ_p + (1 − ρ) Σ_q)⁻¹ δ dν(ρ)` by quadrature over `ν`.
pub fn quadrature_value(moments: &MomentSet, spec: &DivergenceSpec, nodes: usize) -> Result<f64> {
    let (sp, sq) = moments.regularized();
    let delta = moments.delta();
    let rule = spec.nu().rule(nodes);
    let mut total = 0.0;
    for (&rho, &w) in rule.nodes.iter().zip(&rule.weights) {
        let mix = &sp * rho + &sq * (1.0 - rho);
        let chol = cholesky(&mix).ok_or(Error::SingularReference)?;
        total += w * 0.5 * delta.dot(&chol.solve(&delta));
    }
    Ok(total)
}

/// Reference correction `½ ∫ tr[C (ρ Σ_p + (1 − ρ) Σ_q)⁻¹] dν(ρ)` by quadrature.
pub fn quadrature_correction(
    moments: &MomentSet,
    c_hat: &DMatrix<f64>,
    spec: &DivergenceSpec,
    nodes: usize,
) -> Result<f64> {
    let (sp, sq) = moments.regularized();
    let rule = spec.nu().rule(nodes);
    let mut total = 0.0;
    for (&rho, &w) in rule.nodes.iter().zip(&rule.weights) {
        let mix = &sp * rho + &sq * (1.0 - rho);
        let chol = cholesky(&mix).ok_or(Error::SingularReference)?;
        total += w * 0.5 * chol.solve(c_hat).trace();
    }
    Ok(total)
}

/// Quadratic potentials `v(x) = φᵀMφ + 2cᵀφ`, `w(x) = φᵀNφ − 2cᵀφ`.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub c: DVector<f64>,
    pub divergence: DivergenceSpec,
    pub feature_map: Option<FeatureMap>,
    pub constant_mode: ConstantMode,
}

impl PotentialPair {
    /// `(v, w)` at a feature vector already including any constant feature.
    pub fn eval_phi(&self, phi: &[f64]) -> (f64, f64) {
        let phi = DVector::from_column_slice(phi);
        let lin = 2.0 * self.c.dot(&phi);
        let v = phi.dot(&(&self.m * &phi)) + lin;
        let w = phi.dot(&(&self.n * &phi)) - lin;
        (v, w)
    }

    /// Feature vector of `x` as seen by the potentials.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let map = self
            .feature_map
            .as_ref()
            .ok_or(Error::InvalidArgument("potentials carry no feature map"))?;
        let mut phi = map.eval(x)?;
        if self.constant_mode == ConstantMode::AugmentedUnpenalized {
            phi.push(1.0);
        }
        Ok(phi)
    }

    /// `(v(x), w(x))` for every row of `samples`.
    pub fn eval_rows(&self, samples: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut vs = Vec::with_capacity(samples.nrows());
        let mut ws = Vec::with_capacity(samples.nrows());
        let mut x = vec![0.0; samples.ncols()];
        for i in 0..samples.nrows() {
            for (l, xl) in x.iter_mut().enumerate() {
                *xl = samples[(i, l)];
            }
            let (v, w) = self.eval_phi(&self.features(&x)?);
            vs.push(v);
            ws.push(w);
        }
        Ok((vs, ws))
    }

    /// `tr[M Σ_p] + tr[N Σ_q] + 2cᵀ(μ_p − μ_q)` on regularized moments.
    pub fn value_on_moments(&self, moments: &MomentSet) -> f64 {
        let (sp, sq) = moments.regularized();
        trace_product(&self.m, &sp) + trace_product(&self.n, &sq) + 2.0 * self.c.dot(&moments.delta())
    }

    /// `−f*(v) − w` at a feature vector, or `None` when `v` leaves the domain of `f*`.
    pub fn feasibility_gap(&self, phi: &[f64]) -> Option<f64> {
        let (v, w) = self.eval_phi(phi);
        self.divergence.f_conj(v).map(|fc| -fc - w)
    }

    /// Test-time estimate `mean_p v + mean_q w`.
    pub fn test_value(&self, data: &DatasetPair) -> Result<f64> {
        let (v, _) = self.eval_rows(&data.x)?;
        let (_, w) = self.eval_rows(&data.y)?;
        Ok(mean(&v) + mean(&w))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Closed-form potentials of the spectral problem.
pub fn potentials(moments: &MomentSet, spec: &DivergenceSpec) -> Result<PotentialPair> {
    let spectrum = generalized_eig(moments)?;
    Ok(potentials_from_spectrum(&spectrum, moments, spec))
}

/// Potentials from an already computed spectrum of `moments`.
pub fn potentials_from_spectrum(
    spectrum: &GeneralizedSpectrum,
    moments: &MomentSet,
    spec: &DivergenceSpec,
) -> PotentialPair {
    let (m, n, c) = spectrum.potential_matrices(&moments.delta(), spec);
    PotentialPair {
        m,
        n,
        c,
        divergence: spec.clone(),
        feature_map: None,
        constant_mode: moments.constant_mode,
    }
}

/// `(v(x), w(x))`.
pub fn eval_potentials(pair: &PotentialPair, x: &[f64]) -> Result<(f64, f64)> {
    Ok(pair.eval_phi(&pair.features(x)?))
}

/// Plug-in bias estimate `Σ_i h(λ_i) v_iᵀ Ĉ v_i`.
pub fn debias_correction(moments: &MomentSet, spec: &DivergenceSpec) -> Result<f64> {
    let c_hat = moments.mean_difference_covariance()?;
    Ok(generalized_eig(moments)?.trace_correction(&c_hat, spec))
}

/// Output of an estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub value: f64,
    /// `value − correction`; may be negative and is not clamped.
    pub debiased_value: f64,
    pub correction: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub dim: usize,
    pub divergence: String,
    pub lambda_reg: f64,
}

/// Spectral estimate from precomputed moments.
pub fn estimate_from_moments(
    moments: &MomentSet,
    spec: &DivergenceSpec,
    debias: bool,
) -> Result<EstimateReport> {
    let spectrum = generalized_eig(moments)?;
    report_from_spectrum(&spectrum, moments, spec, debias)
}

/// Report for a given spectrum of `moments`.
pub fn report_from_spectrum(
    spectrum: &GeneralizedSpectrum,
    moments: &MomentSet,
    spec: &DivergenceSpec,
    debias: bool,
) -> Result<EstimateReport> {
    let value = spectrum.value(&moments.delta(), spec);
    let correction = if debias {
        spectrum.trace_correction(&moments.mean_difference_covariance()?, spec)
    } else {
        0.0
    };
    Ok(EstimateReport {
        value,
        debiased_value: value - correction,
        correction,
        lambda_min: spectrum.min_lambda(),
        lambda_max: spectrum.max_lambda(),
        dim: moments.dim(),
        divergence: spec.name(),
        lambda_reg: moments.lambda_reg,
    })
}

/// Moments, spectrum and value in one call.
pub fn estimate(
    data: &DatasetPair,
    map: &FeatureMap,
    spec: &DivergenceSpec,
    lambda_reg: f64,
    constant_mode: ConstantMode,
    debias: bool,
) -> Result<EstimateReport> {
    let moments = compute_moments(map, data, lambda_reg, constant_mode)?;
    estimate_from_moments(&moments, spec, debias)
}

/// Fits potentials on `data` and attaches the feature map for evaluation.
pub fn fit_potentials(
    data: &DatasetPair,
    map: &FeatureMap,
    spec: &DivergenceSpec,
    lambda_reg: f64,
    constant_mode: ConstantMode,
) -> Result<PotentialPair> {
    let moments = compute_moments(map, data, lambda_reg, constant_mode)?;
    let mut pair = potentials(&moments, spec)?;
    pair.feature_map = Some(map.clone());
    Ok(pair)
}
