//! Reference estimators: Newton-optimized variational KL and softmax
//! regression, a kernel density plug-in, and the Pearson closed form.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::divergence::{Divergence, DivergenceSpec};
use crate::error::{Error, Result};
use crate::features::{compute_moments, ConstantMode, DatasetPair, FeatureMap, MomentSet};
use crate::linalg::{cholesky, sym_eigen_sorted, symmetrize};
use crate::spectral::EstimateReport;

const ARMIJO: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-9;
const MAX_NEWTON: usize = 100;
const MAX_HALVINGS: usize = 60;
/// Largest parameter count accepted by the Newton solvers.
pub const NEWTON_DIM_LIMIT: usize = 4096;
/// Density floor of the kernel plug-in.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Outcome of a damped Newton maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalSolution {
    /// Coefficients; for softmax, the `m × k` matrix stacked column by column.
    pub theta: DVector<f64>,
    /// Penalized objective at `theta`.
    pub objective: f64,
    /// Objective without the ridge term.
    pub unpenalized: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub grad_norm: f64,
    /// Set when backtracking failed; `theta` is then the best iterate found.
    pub line_search_failed: bool,
    pub quadratic: bool,
}

/// Damped Newton ascent on a concave objective with Armijo backtracking.
fn newton_maximize<F, G>(dim: usize, lambda: f64, value: F, grad_hess: G) -> Result<VariationalSolution>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    if dim > NEWTON_DIM_LIMIT {
        return Err(Error::DimensionGuard {
            m1: dim,
            m2: 1,
            limit: NEWTON_DIM_LIMIT,
        });
    }
    let mut theta = DVector::zeros(dim);
    let mut current = value(&theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut failed = false;
    while iterations < MAX_NEWTON {
        let (grad, hess) = grad_hess(&theta);
        grad_norm = grad.norm();
        if grad_norm <= GRAD_TOL {
            break;
        }
        let mut neg = -hess;
        symmetrize(&mut neg);
        let dir = match cholesky(&neg) {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &dir * step;
            let v = value(&cand);
            if v.is_finite() && v >= current + ARMIJO * step * slope {
                theta = cand;
                current = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            failed = true;
            break;
        }
    }
    if grad_norm.is_infinite() || iterations == MAX_NEWTON || failed {
        grad_norm = grad_hess(&theta).0.norm();
    }
    let unpenalized = current + 0.5 * lambda * theta.norm_squared();
    Ok(VariationalSolution {
        theta,
        objective: current,
        unpenalized,
        iterations,
        lambda,
        grad_norm,
        line_search_failed: failed,
        quadratic: false,
    })
}

/// Appends the upper triangle (with diagonal) of `φφᵀ` to each row.
pub fn quadratic_lift(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = phi.shape();
    let lifted = m + m * (m + 1) / 2;
    let mut out = DMatrix::zeros(n, lifted);
    for i in 0..n {
        let mut idx = 0;
        for a in 0..m {
            out[(i, idx)] = phi[(i, a)];
            idx += 1;
        }
        for a in 0..m {
            for b in a..m {
                out[(i, idx)] = phi[(i, a)] * phi[(i, b)];
                idx += 1;
            }
        }
    }
    out
}

/// `log mean_j exp(s_j)` and the normalized weights.
fn log_mean_exp(scores: &DVector<f64>) -> (f64, DVector<f64>) {
    let top = scores.max();
    let w = scores.map(|s| (s - top).exp());
    let total = w.sum();
    (top + (total / scores.len() as f64).ln(), w / total)
}

/// Maximizes `mean_p θᵀφ − log mean_q e^{θᵀφ} − (λ/2)‖θ‖²` on feature matrices.
pub fn variational_kl_features(phi_x: &DMatrix<f64>, phi_y: &DMatrix<f64>, lambda: f64) -> Result<VariationalSolution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive"));
    }
    if phi_x.nrows() == 0 || phi_y.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if phi_x.ncols() != phi_y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: phi_x.ncols(),
            got: phi_y.ncols(),
        });
    }
    let m = phi_x.ncols();
    let mean_p = DVector::from_iterator(m, phi_x.column_iter().map(|c| c.mean()));
    let value = |theta: &DVector<f64>| {
        let (lme, _) = log_mean_exp(&(phi_y * theta));
        mean_p.dot(theta) - lme - 0.5 * lambda * theta.norm_squared()
    };
    let grad_hess = |theta: &DVector<f64>| {
        let (_, w) = log_mean_exp(&(phi_y * theta));
        let tilted = phi_y.tr_mul(&w);
        let mut weighted = phi_y.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let second = phi_y.transpose() * &weighted;
        let grad = &mean_p - &tilted - theta * lambda;
        let hess = -(second - &tilted * tilted.transpose()) - DMatrix::identity(m, m) * lambda;
        (grad, hess)
    };
    newton_maximize(m, lambda, value, grad_hess)
}

/// Variational KL on a feature map, optionally with the quadratic lift.
pub fn variational_kl(data: &DatasetPair, map: &FeatureMap, lambda: f64, quadratic: bool) -> Result<VariationalSolution> {
    let mut phi_x = map.feature_matrix(&data.x)?;
    let mut phi_y = map.feature_matrix(&data.y)?;
    if quadratic {
        let m = phi_x.ncols();
        let lifted = m + m * (m + 1) / 2;
        if lifted > NEWTON_DIM_LIMIT {
            return Err(Error::DimensionGuard {
                m1: m,
                m2: m,
                limit: NEWTON_DIM_LIMIT,
            });
        }
        phi_x = quadratic_lift(&phi_x);
        phi_y = quadratic_lift(&phi_y);
    }
    let mut sol = variational_kl_features(&phi_x, &phi_y, lambda)?;
    sol.quadratic = quadratic;
    Ok(sol)
}

impl VariationalSolution {
    /// Log-ratio estimate `θᵀφ − log mean_q e^{θᵀφ}` normalized on `phi_ref`.
    pub fn log_ratio(&self, phi: &DMatrix<f64>, phi_ref: &DMatrix<f64>) -> DVector<f64> {
        let (lme, _) = log_mean_exp(&(phi_ref * &self.theta));
        (phi * &self.theta).add_scalar(-lme)
    }
}

/// Test-time divergence `mean_p ℓ + 1 − mean_q e^ℓ` of a log-ratio estimate.
pub fn log_ratio_test_value(ell_p: &DVector<f64>, ell_q: &DVector<f64>) -> f64 {
    ell_p.mean() + 1.0 - ell_q.map(f64::exp).mean()
}

/// Multinomial logistic regression `v(x, j) = θ_jᵀφ(x)` with prior offsets and ridge `λ`.
///
/// Maximizes `mean_i [v(x_i, y_i) − log Σ_j π_j e^{v(x_i, j)}] − (λ/2)‖Θ‖²`; `labels` are `1..=k`.
pub fn softmax_newton(phi: &DMatrix<f64>, labels: &[usize], k: usize, lambda: f64) -> Result<VariationalSolution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive"));
    }
    let (n, m) = phi.shape();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y == 0 || y > k {
            return Err(Error::InvalidCategory {
                value: y as f64,
                cardinality: k,
            });
        }
        counts[y - 1] += 1;
    }
    let log_priors: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let dim = m * k;
    let nf = n as f64;
    let probs = |theta: &DVector<f64>| -> (f64, DMatrix<f64>) {
        let t = DMatrix::from_column_slice(m, k, theta.as_slice());
        let scores = phi * &t;
        let mut p = DMatrix::zeros(n, k);
        let mut total = 0.0;
        for i in 0..n {
            let mut top = f64::NEG_INFINITY;
            for j in 0..k {
                if counts[j] > 0 {
                    top = top.max(scores[(i, j)] + log_priors[j]);
                }
            }
            let mut z = 0.0;
            for j in 0..k {
                if counts[j] > 0 {
                    let e = (scores[(i, j)] + log_priors[j] - top).exp();
                    p[(i, j)] = e;
                    z += e;
                }
            }
            for j in 0..k {
                p[(i, j)] /= z;
            }
            total += scores[(i, labels[i] - 1)] - top - z.ln();
        }
        (total / nf, p)
    };
    let value = |theta: &DVector<f64>| probs(theta).0 - 0.5 * lambda * theta.norm_squared();
    let grad_hess = |theta: &DVector<f64>| {
        let (_, p) = probs(theta);
        let mut resid = -p.clone();
        for i in 0..n {
            resid[(i, labels[i] - 1)] += 1.0;
        }
        let g = phi.tr_mul(&resid) / nf;
        let grad = DVector::from_column_slice(g.as_slice()) - theta * lambda;
        let mut hess = DMatrix::zeros(dim, dim);
        let mut weighted = phi.clone();
        for j in 0..k {
            for l in j..k {
                for i in 0..n {
                    let w = if j == l { p[(i, j)] * (1.0 - p[(i, j)]) } else { -p[(i, j)] * p[(i, l)] };
                    for a in 0..m {
                        weighted[(i, a)] = phi[(i, a)] * w;
                    }
                }
                let block = -(phi.transpose() * &weighted / nf);
                hess.view_mut((j * m, l * m), (m, m)).copy_from(&block);
                if j != l {
                    hess.view_mut((l * m, j * m), (m, m)).copy_from(&block.transpose());
                }
            }
        }
        for d in 0..dim {
            hess[(d, d)] -= lambda;
        }
        (grad, hess)
    };
    newton_maximize(dim, lambda, value, grad_hess)
}

/// `n × k` scores `θ_jᵀφ(x_i)` of a softmax solution.
pub fn softmax_scores(solution: &VariationalSolution, phi: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let m = phi.ncols();
    phi * DMatrix::from_column_slice(m, k, solution.theta.as_slice())
}

/// Kernel plug-in estimate with the number of floored densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeEstimate {
    pub value: f64,
    pub floored: usize,
}

fn log_kde(samples: &DMatrix<f64>, point: &[f64], bandwidth: f64, buf: &mut [f64]) -> f64 {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut top = f64::NEG_INFINITY;
    for (i, row) in samples.row_iter().enumerate() {
        let mut d2 = 0.0;
        for (a, b) in row.iter().zip(point) {
            d2 += (a - b) * (a - b);
        }
        buf[i] = -d2 * inv;
        top = top.max(buf[i]);
    }
    let total: f64 = buf[..samples.nrows()].iter().map(|v| (v - top).exp()).sum();
    top + (total / samples.nrows() as f64).ln()
}

/// `mean log(p̂/q̂)` over `eval` (default: the `p` samples) with Gaussian kernels.
///
/// The normalizing constant of the kernel cancels in the ratio.
pub fn kde_plugin(data: &DatasetPair, bandwidth: f64, eval: Option<&DMatrix<f64>>) -> Result<KdeEstimate> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive"));
    }
    let points = eval.unwrap_or(&data.x);
    if points.ncols() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: points.ncols(),
        });
    }
    if points.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let floor = DENSITY_FLOOR.ln();
    let mut buf = vec![0.0; data.n_p().max(data.n_q())];
    let mut point = vec![0.0; data.dim()];
    let mut floored = 0;
    let mut total = 0.0;
    for row in points.row_iter() {
        for (dst, src) in point.iter_mut().zip(row.iter()) {
            *dst = *src;
        }
        let mut lp = log_kde(&data.x, &point, bandwidth, &mut buf);
        let mut lq = log_kde(&data.y, &point, bandwidth, &mut buf);
        for l in [&mut lp, &mut lq] {
            if !(*l >= floor) {
                *l = floor;
                floored += 1;
            }
        }
        total += lp - lq;
    }
    Ok(KdeEstimate {
        value: total / points.nrows() as f64,
        floored,
    })
}

/// Pearson coefficients `θ = (Σ_q + λI)⁻¹ δ`; the ratio estimate is `1 + θᵀφ`.
pub fn pearson_coefficients(moments: &MomentSet) -> Result<DVector<f64>> {
    let (_, sq) = moments.regularized();
    let chol = cholesky(&sq).ok_or(Error::SingularReference)?;
    Ok(chol.solve(&moments.delta()))
}

/// `log(max(1 + θᵀφ, 0) + ε)`, the log-ratio implied by the Pearson fit.
pub fn pearson_log_ratio(theta: &DVector<f64>, phi: &DMatrix<f64>, eps: f64) -> DVector<f64> {
    (phi * theta).map(|u| ((1.0 + u).max(0.0) + eps).ln())
}

/// `½ δᵀ(Σ_q + λI)⁻¹δ` by a direct solve, with the debiasing correction `½ tr[Ĉ(Σ_q + λI)⁻¹]`.
pub fn pearson_closed_form(data: &DatasetPair, map: &FeatureMap, lambda: f64, mode: ConstantMode) -> Result<EstimateReport> {
    let moments = compute_moments(map, data, lambda, mode)?;
    pearson_report(&moments)
}

/// [`pearson_closed_form`] on precomputed moments.
pub fn pearson_report(moments: &MomentSet) -> Result<EstimateReport> {
    let (sp, sq) = moments.regularized();
    let chol = cholesky(&sq).ok_or(Error::SingularReference)?;
    let delta = moments.delta();
    let value = 0.5 * delta.dot(&chol.solve(&delta));
    let correction = if moments.n_p > 1 && moments.n_q > 1 {
        let c_hat = moments.mean_difference_covariance()?;
        0.5 * chol.solve(&c_hat).trace()
    } else {
        0.0
    };
    let l_inv = chol.l().try_inverse().ok_or(Error::SingularReference)?;
    let (lams, _) = sym_eigen_sorted(&l_inv * sp * l_inv.transpose());
    Ok(EstimateReport {
        value,
        debiased_value: value - correction,
        correction,
        lambda_min: lams.min(),
        lambda_max: lams.max(),
        dim: moments.dim(),
        divergence: DivergenceSpec::new(Divergence::Pearson)?.name(),
        lambda_reg: moments.lambda_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Basis;
    use crate::spectral::estimate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(seed: u64, n: usize, d: usize, warp: bool) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| {
            let u: f64 = rng.random();
            if warp { u.sqrt() } else { u }
        })
    }

    #[test]
    fn identical_samples_give_zero() {
        let x = uniform(1, 200, 1, false);
        let data = DatasetPair::new(x.clone(), x).unwrap();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 2 }, 1);
        let sol = variational_kl(&data, &map, 1e-3, false).unwrap();
        assert!(sol.theta.amax() <= 1e-12);
        assert!(sol.objective.abs() <= 1e-12);
        assert_eq!(kde_plugin(&data, 0.1, None).unwrap().value, 0.0);
    }

    #[test]
    fn variational_gradient_vanishes_and_hessian_is_nsd() {
        let data = DatasetPair::new(uniform(2, 500, 1, true), uniform(3, 500, 1, false)).unwrap();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 3 }, 1);
        let sol = variational_kl(&data, &map, 1e-4, false).unwrap();
        assert!(sol.grad_norm <= 1e-9);
        assert!(!sol.line_search_failed);
        let phi_y = map.feature_matrix(&data.y).unwrap();
        let (_, w) = log_mean_exp(&(&phi_y * &sol.theta));
        let mut weighted = phi_y.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let tilted = phi_y.tr_mul(&w);
        let m = phi_y.ncols();
        let hess = -(phi_y.tr_mul(&weighted) - &tilted * tilted.transpose()) - DMatrix::identity(m, m) * 1e-4;
        let (vals, _) = sym_eigen_sorted(hess);
        assert!(vals.max() <= 1e-8);
    }

    #[test]
    fn cosine_ratio_is_fit_exactly() {
        // dp/dq ∝ exp(0.5 cos 2πx) with q uniform: representable with one frequency.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40_000;
        let mut xs = Vec::with_capacity(n);
        while xs.len() < n {
            let x: f64 = rng.random();
            let accept: f64 = rng.random();
            if accept < (0.5 * (core::f64::consts::TAU * x).cos() - 0.5).exp() {
                xs.push(x);
            }
        }
        let x = DMatrix::from_column_slice(n, 1, &xs);
        let y = uniform(10, n, 1, false);
        let data = DatasetPair::new(x, y).unwrap();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 4 }, 1);
        let sol = variational_kl(&data, &map, 1e-6, false).unwrap();
        // KL = a I₁(a)/I₀(a) − log I₀(a) for a = 0.5.
        let (i0, i1) = (1.063_483_370_741_323_5, 0.257_894_305_390_896_4);
        let exact = 0.5 * i1 / i0 - f64::ln(i0);
        assert!((sol.unpenalized - exact).abs() <= 0.1 * exact, "{} vs {exact}", sol.unpenalized);
    }

    #[test]
    fn orderings_hold() {
        for seed in 0..5 {
            let data = DatasetPair::new(uniform(20 + seed, 1500, 2, true), uniform(40 + seed, 1500, 2, false)).unwrap();
            let map = FeatureMap::random_relu(2, 3, 1, seed);
            let lin = variational_kl(&data, &map, 1e-6, false).unwrap();
            let quad = variational_kl(&data, &map, 1e-6, true).unwrap();
            assert!(lin.objective <= quad.objective + 1e-12);
            let kl = DivergenceSpec::new(Divergence::Kl).unwrap();
            let spectral = estimate(&data, &map, &kl, 1e-3, ConstantMode::None, false).unwrap();
            assert!(spectral.value <= quad.unpenalized + 1e-8);
        }
    }

    #[test]
    fn softmax_symmetric_classes_have_zero_weights() {
        let x = uniform(5, 200, 1, false);
        let stacked = DMatrix::from_fn(400, 1, |i, _| x[(i % 200, 0)]);
        let labels: Vec<usize> = (0..400).map(|i| if i < 200 { 1 } else { 2 }).collect();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 1 }, 1);
        let phi = map.feature_matrix(&stacked).unwrap();
        let sol = softmax_newton(&phi, &labels, 2, 1e-3).unwrap();
        assert!(sol.theta.amax() <= 1e-8);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| i % 3 + 1).collect();
        let lambda = 0.5;
        // One Newton iteration is enough to land away from zero.
        let sol = softmax_newton(&phi, &labels, 3, lambda).unwrap();
        let objective = |theta: &DVector<f64>| {
            let scores = softmax_scores(
                &VariationalSolution { theta: theta.clone(), ..sol.clone() },
                &phi,
                3,
            );
            let priors = [1.0 / 3.0; 3];
            let mut total = 0.0;
            for i in 0..n {
                let z: f64 = (0..3).map(|j| priors[j] * scores[(i, j)].exp()).sum();
                total += scores[(i, labels[i] - 1)] - z.ln();
            }
            total / n as f64 - 0.5 * lambda * theta.norm_squared()
        };
        let base = sol.theta.map(|t| t + 0.3);
        let h = 1e-6;
        let f0 = objective(&base);
        let grad: Vec<f64> = (0..9)
            .map(|d| {
                let mut tp = base.clone();
                let mut tm = base.clone();
                tp[d] += h;
                tm[d] -= h;
                (objective(&tp) - objective(&tm)) / (2.0 * h)
            })
            .collect();
        assert!(f0.is_finite());
        assert!((objective(&sol.theta) - sol.objective).abs() <= 1e-12);
        // The optimum has zero gradient and the perturbed point an ascent direction towards it.
        let towards: f64 = grad.iter().zip(sol.theta.iter().zip(base.iter())).map(|(g, (a, b))| g * (a - b)).sum();
        assert!(towards > 0.0);
        let mut max_rel: f64 = 0.0;
        for d in 0..9 {
            let mut tp = sol.theta.clone();
            let mut tm = sol.theta.clone();
            tp[d] += h;
            tm[d] -= h;
            let fd = (objective(&tp) - objective(&tm)) / (2.0 * h);
            max_rel = max_rel.max(fd.abs());
        }
        assert!(max_rel <= 1e-5);
    }

    #[test]
    fn kde_gaussian_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let normal = |rng: &mut ChaCha8Rng| -> f64 {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            z
        };
        let x = DMatrix::from_fn(n, 1, |_, _| 0.5 + normal(&mut rng));
        let y = DMatrix::from_fn(n, 1, |_, _| normal(&mut rng));
        let data = DatasetPair::new(x, y).unwrap();
        let exact = 0.125;
        let est = kde_plugin(&data, 0.3, None).unwrap();
        assert!((est.value - exact).abs() <= 0.1 * exact, "{}", est.value);
        let flat = kde_plugin(&data, 1e6, None).unwrap();
        assert!(flat.value.abs() < 1e-6);
    }

    #[test]
    fn pearson_matches_spectral() {
        for seed in 0..5 {
            let data = DatasetPair::new(uniform(60 + seed, 300, 2, true), uniform(80 + seed, 300, 2, false)).unwrap();
            let map = FeatureMap::random_relu(2, 4, 1, seed);
            let direct = pearson_closed_form(&data, &map, 1e-3, ConstantMode::None).unwrap();
            let pearson = DivergenceSpec::new(Divergence::Pearson).unwrap();
            let spectral = estimate(&data, &map, &pearson, 1e-3, ConstantMode::None, true).unwrap();
            assert!((direct.value - spectral.value).abs() <= 1e-10 * spectral.value);
            assert!((direct.correction - spectral.correction).abs() <= 1e-10 * spectral.correction.abs().max(1e-12));
        }
        let x = uniform(1, 50, 2, false);
        let data = DatasetPair::new(x.clone(), x).unwrap();
        let map = FeatureMap::random_relu(2, 4, 1, 3);
        assert!(pearson_closed_form(&data, &map, 1e-3, ConstantMode::None).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn newton_dimension_guard() {
        let phi = DMatrix::zeros(2, 100);
        assert!(matches!(
            variational_kl(&DatasetPair::new(phi.clone(), phi.clone()).unwrap(), &FeatureMap::explicit(Basis::Linear, 100), 1.0, true),
            Err(Error::DimensionGuard { .. })
        ));
    }
}
