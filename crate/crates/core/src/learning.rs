//! Feature learning: maximizing the spectral divergence over reduced or
//! neural feature maps.
//!
//! All learners rely on the tangent bound: at anchor moments the value is
//! `tr[M Σ_p] + tr[N Σ_q] + 2cᵀ(μ_p − μ_q)`, and the same linear form
//! evaluated at any other moments is a lower bound on the value there.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::features::{sample_sphere, ConstantMode, DatasetPair, FeatureMap, FeatureMoments, MomentSet};
use crate::linalg::{cholesky, inv_sqrt_spd, sym_eigen_sorted, symmetrize, trace_product};
use crate::spectral::{report_from_spectrum, EstimateReport, GeneralizedSpectrum, PotentialPair};

/// Condition number above which reduced moments receive a trace jitter.
const MAX_CONDITION: f64 = 1e12;
const JITTER: f64 = 1e-10;
/// `m · r` up to which the tangent system is solved densely.
const DIRECT_SOLVE_LIMIT: usize = 1500;
const PROX_SCALE: f64 = 1e-10;

/// Linearization `(M, N, c)` of the value at anchor moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBound {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub c: DVector<f64>,
    pub anchor_value: f64,
}

impl TangentBound {
    /// Tangent at `moments` (already regularized; `lambda_reg` is applied as usual).
    pub fn at(moments: &MomentSet, spec: &DivergenceSpec) -> Result<Self> {
        let (sp, sq) = moments.regularized();
        let spectrum = GeneralizedSpectrum::decompose(&sp, &sq)?;
        let delta = moments.delta();
        let (m, n, c) = spectrum.potential_matrices(&delta, spec);
        Ok(TangentBound {
            m,
            n,
            c,
            anchor_value: spectrum.value(&delta, spec),
        })
    }

    /// `tr[M Σ_p] + tr[N Σ_q] + 2cᵀ(μ_p − μ_q)` at other (regularized) moments.
    pub fn eval(&self, moments: &MomentSet) -> f64 {
        let (sp, sq) = moments.regularized();
        trace_product(&self.m, &sp) + trace_product(&self.n, &sq) + 2.0 * self.c.dot(&moments.delta())
    }
}

/// Reduced moments `Γᵀμ`, `Γᵀ(Σ + λP)Γ` with the regularization folded in.
pub fn reduce_moments(full: &MomentSet, gamma: &DMatrix<f64>) -> Result<MomentSet> {
    if gamma.nrows() != full.dim() {
        return Err(Error::DimensionMismatch {
            expected: full.dim(),
            got: gamma.nrows(),
        });
    }
    let (sp, sq) = full.regularized();
    let mut rp = gamma.transpose() * sp * gamma;
    let mut rq = gamma.transpose() * sq * gamma;
    symmetrize(&mut rp);
    symmetrize(&mut rq);
    stabilize(&mut rp, &mut rq);
    Ok(MomentSet {
        mu_p: gamma.tr_mul(&full.mu_p),
        mu_q: gamma.tr_mul(&full.mu_q),
        sigma_p: rp,
        sigma_q: rq,
        n_p: full.n_p,
        n_q: full.n_q,
        lambda_reg: 0.0,
        constant_mode: ConstantMode::None,
    })
}

/// Adds a trace jitter to both matrices when `sq` is badly conditioned.
fn stabilize(sp: &mut DMatrix<f64>, sq: &mut DMatrix<f64>) {
    let (vals, _) = sym_eigen_sorted(sq.clone());
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(0.0, f64::max);
    if !(lo * MAX_CONDITION > hi) {
        let jitter = JITTER * sq.trace().max(f64::MIN_POSITIVE);
        for i in 0..sq.nrows() {
            sq[(i, i)] += jitter;
            sp[(i, i)] += jitter;
        }
    }
}

/// Spectral value of the reduced map `Γᵀφ`.
pub fn reduced_value(full: &MomentSet, gamma: &DMatrix<f64>, spec: &DivergenceSpec) -> Result<f64> {
    let reduced = reduce_moments(full, gamma)?;
    let (sp, sq) = reduced.regularized();
    Ok(GeneralizedSpectrum::decompose(&sp, &sq)?.value(&reduced.delta(), spec))
}

/// Tangent of `Γ ↦ F(Γᵀφ)` at `gamma`.
pub fn tangent_at(full: &MomentSet, gamma: &DMatrix<f64>, spec: &DivergenceSpec) -> Result<TangentBound> {
    TangentBound::at(&reduce_moments(full, gamma)?, spec)
}

/// Evaluates a tangent at the reduced moments of another `Γ'`.
pub fn tangent_value(tangent: &TangentBound, full: &MomentSet, gamma: &DMatrix<f64>) -> Result<f64> {
    Ok(tangent.eval(&reduce_moments(full, gamma)?))
}

/// `Γ` with i.i.d. `N(0, 1/m)` entries.
pub fn init_gamma(m: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, r, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// `Γ (Γᵀ S Γ)^{-1/2}`; the spectral value is invariant under this change.
pub fn whiten(gamma: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut g = gamma.transpose() * s * gamma;
    symmetrize(&mut g);
    inv_sqrt_spd(&g).map(|r| gamma * r)
}

/// Maximizes `tr[M XᵀS_pX] + tr[N XᵀS_qX] + 2 tr[Xᵀ R] − ε‖X − X₀‖²` over `X`.
///
/// `M`, `N` must be negative semidefinite; `ε` grows when the system is indefinite.
fn solve_tangent_system(
    sp: &DMatrix<f64>,
    sq: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    x0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a = -m;
    let b = -n;
    let (dim, r) = (sp.nrows(), m.nrows());
    let scale = sp.trace().abs() * a.trace().abs() + sq.trace().abs() * b.trace().abs();
    let mut eps = PROX_SCALE * scale + f64::MIN_POSITIVE;
    for _ in 0..6 {
        let target = rhs + x0 * eps;
        if dim * r <= DIRECT_SOLVE_LIMIT {
            let mut k = a.kronecker(sp) + b.kronecker(sq);
            symmetrize(&mut k);
            for i in 0..dim * r {
                k[(i, i)] += eps;
            }
            if let Some(chol) = cholesky(&k) {
                let vec = DVector::from_column_slice(target.as_slice());
                let sol = chol.solve(&vec);
                return Ok(DMatrix::from_column_slice(dim, r, sol.as_slice()));
            }
        } else if let Some(sol) = conjugate_gradient(sp, sq, &a, &b, eps, &target, x0) {
            return Ok(sol);
        }
        eps = eps * 100.0 + 1e-12 * scale;
    }
    Err(Error::IndefiniteTangent)
}

/// Matrix-free CG for `S_p X A + S_q X B + εX = T` from the warm start `x0`.
fn conjugate_gradient(
    sp: &DMatrix<f64>,
    sq: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    eps: f64,
    target: &DMatrix<f64>,
    x0: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let op = |x: &DMatrix<f64>| sp * x * a + sq * x * b + x * eps;
    let mut x = x0.clone();
    let mut r = target - op(&x);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let tol = 1e-24 * target.norm_squared().max(f64::MIN_POSITIVE);
    for _ in 0..(4 * x.len()).max(50) {
        if rr <= tol {
            break;
        }
        let ap = op(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rr / pap;
        x += &p * alpha;
        r -= &ap * alpha;
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Some(x)
}

/// One minorize–maximize step of the linear reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct MmStep {
    pub gamma: DMatrix<f64>,
    pub value: f64,
    pub previous: f64,
}

/// Maximizes the tangent at `gamma` over `Γ'` and whitens the result.
pub fn mm_linear_step(full: &MomentSet, gamma: &DMatrix<f64>, spec: &DivergenceSpec) -> Result<MmStep> {
    let tangent = tangent_at(full, gamma, spec)?;
    let (sp, sq) = full.regularized();
    let rhs = full.delta() * tangent.c.transpose();
    let next = solve_tangent_system(&sp, &sq, &tangent.m, &tangent.n, &rhs, gamma)?;
    let next = whiten(&next, &sq).unwrap_or(next);
    let value = reduced_value(full, &next, spec)?;
    if !value.is_finite() {
        return Err(Error::DivergedObjective);
    }
    if value < tangent.anchor_value {
        // Round-off only; keep the anchor so the trace stays monotone.
        return Ok(MmStep {
            gamma: gamma.clone(),
            value: tangent.anchor_value,
            previous: tangent.anchor_value,
        });
    }
    Ok(MmStep {
        gamma: next,
        value,
        previous: tangent.anchor_value,
    })
}

/// Result of repeated MM steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLearner {
    pub gamma: DMatrix<f64>,
    /// Objective before the first step and after each step.
    pub trace: Vec<f64>,
}

/// Runs up to `iters` MM steps, stopping when the relative gain drops below `tol`.
pub fn mm_linear_fit(
    full: &MomentSet,
    gamma0: &DMatrix<f64>,
    spec: &DivergenceSpec,
    iters: usize,
    tol: f64,
) -> Result<LinearLearner> {
    let mut gamma = gamma0.clone();
    let mut trace = vec![reduced_value(full, &gamma, spec)?];
    for _ in 0..iters {
        let step = mm_linear_step(full, &gamma, spec)?;
        let gain = step.value - step.previous;
        gamma = step.gamma;
        trace.push(step.value);
        if gain <= tol * step.value.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(LinearLearner { gamma, trace })
}

/// Stochastic-ascent settings shared by the linear and neural learners.
#[derive(Debug, Clone, PartialEq)]
pub struct SgaConfig {
    /// Initial step size `γ`.
    pub step: f64,
    /// Rate of the running-moment averages.
    pub ema_rate: f64,
    /// Steps between tangent refreshes from the running moments.
    pub moment_refresh: usize,
    /// Epochs between exact re-evaluations of the moments.
    pub batch_refresh_epochs: usize,
    /// Step multiplier applied at a plateau.
    pub decay: f64,
    /// Epoch gain under which the objective counts as a plateau.
    pub plateau_tol: f64,
    /// Largest Euclidean norm of a single-pair gradient; longer ones are rescaled.
    pub clip: f64,
    pub seed: u64,
}

impl Default for SgaConfig {
    fn default() -> Self {
        SgaConfig {
            step: 1e-2,
            ema_rate: 1e-2,
            moment_refresh: 10,
            batch_refresh_epochs: 2,
            decay: 0.5,
            plateau_tol: 1e-4,
            clip: 10.0,
            seed: 0,
        }
    }
}

/// Running reduced moments with an exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    pub mu_p: DVector<f64>,
    pub mu_q: DVector<f64>,
    pub sigma_p: DMatrix<f64>,
    pub sigma_q: DMatrix<f64>,
}

impl RunningMoments {
    fn from_features(psi_x: &DMatrix<f64>, psi_y: &DMatrix<f64>) -> Result<Self> {
        let p = FeatureMoments::from_features(psi_x)?;
        let q = FeatureMoments::from_features(psi_y)?;
        Ok(RunningMoments {
            mu_p: p.mean,
            mu_q: q.mean,
            sigma_p: p.second,
            sigma_q: q.second,
        })
    }

    /// `Σ ← (1 − γ)Σ + γψψᵀ` and likewise for the means.
    pub fn update(&mut self, psi_x: &DVector<f64>, psi_y: &DVector<f64>, rate: f64) {
        self.mu_p = &self.mu_p * (1.0 - rate) + psi_x * rate;
        self.mu_q = &self.mu_q * (1.0 - rate) + psi_y * rate;
        self.sigma_p = &self.sigma_p * (1.0 - rate) + psi_x * psi_x.transpose() * rate;
        self.sigma_q = &self.sigma_q * (1.0 - rate) + psi_y * psi_y.transpose() * rate;
    }

    /// Moment set with `reg` added to both second moments.
    fn with_regularizer(&self, reg: &DMatrix<f64>) -> MomentSet {
        let mut sp = &self.sigma_p + reg;
        let mut sq = &self.sigma_q + reg;
        symmetrize(&mut sp);
        symmetrize(&mut sq);
        stabilize(&mut sp, &mut sq);
        MomentSet {
            mu_p: self.mu_p.clone(),
            mu_q: self.mu_q.clone(),
            sigma_p: sp,
            sigma_q: sq,
            n_p: 0,
            n_q: 0,
            lambda_reg: 0.0,
            constant_mode: ConstantMode::None,
        }
    }
}

/// Per-pair surrogate `ψ_xᵀMψ_x + ψ_yᵀNψ_y + 2cᵀ(ψ_x − ψ_y) + λ tr[(M + N)ΓᵀΓ]` for `ψ = Γᵀφ`.
pub fn linear_surrogate(
    tangent: &TangentBound,
    gamma: &DMatrix<f64>,
    phi_x: &DVector<f64>,
    phi_y: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let px = gamma.tr_mul(phi_x);
    let py = gamma.tr_mul(phi_y);
    let reg = lambda * trace_product(&(&tangent.m + &tangent.n), &gamma.tr_mul(gamma));
    px.dot(&(&tangent.m * &px)) + py.dot(&(&tangent.n * &py)) + 2.0 * tangent.c.dot(&(&px - &py)) + reg
}

/// Gradient of [`linear_surrogate`] with respect to `Γ`.
pub fn linear_surrogate_grad(
    tangent: &TangentBound,
    gamma: &DMatrix<f64>,
    phi_x: &DVector<f64>,
    phi_y: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let px = gamma.tr_mul(phi_x);
    let py = gamma.tr_mul(phi_y);
    let gx = (&tangent.m * &px + &tangent.c) * 2.0;
    let gy = (&tangent.n * &py - &tangent.c) * 2.0;
    phi_x * gx.transpose() + phi_y * gy.transpose() + gamma * (&tangent.m + &tangent.n) * (2.0 * lambda)
}

/// State of stochastic ascent on a linear reduction `Γᵀφ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSgaState {
    pub gamma: DMatrix<f64>,
    pub running: RunningMoments,
    pub tangent: TangentBound,
    pub step: f64,
    pub epoch: usize,
    /// Exact objective after each epoch.
    pub objective_trace: Vec<f64>,
    /// Frozen-tangent surrogate averaged over each epoch.
    pub surrogate_trace: Vec<f64>,
    pub skipped_steps: usize,
}

impl LinearSgaState {
    /// Starts from `gamma` with exact moments of the feature matrices.
    pub fn new(
        gamma: DMatrix<f64>,
        phi_x: &DMatrix<f64>,
        phi_y: &DMatrix<f64>,
        spec: &DivergenceSpec,
        lambda: f64,
        config: &SgaConfig,
    ) -> Result<Self> {
        let running = RunningMoments::from_features(&(phi_x * &gamma), &(phi_y * &gamma))?;
        let tangent = TangentBound::at(&running.with_regularizer(&(gamma.tr_mul(&gamma) * lambda)), spec)?;
        Ok(LinearSgaState {
            gamma,
            running,
            tangent,
            step: config.step,
            epoch: 0,
            objective_trace: Vec::new(),
            surrogate_trace: Vec::new(),
            skipped_steps: 0,
        })
    }

    fn refresh_tangent(&mut self, spec: &DivergenceSpec, lambda: f64) -> Result<()> {
        let reg = self.gamma.tr_mul(&self.gamma) * lambda;
        self.tangent = TangentBound::at(&self.running.with_regularizer(&reg), spec)?;
        Ok(())
    }
}

/// Exact spectral value of `Γᵀφ` on feature matrices with `λΓᵀΓ` regularization.
pub fn linear_batch_value(
    gamma: &DMatrix<f64>,
    phi_x: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
    spec: &DivergenceSpec,
    lambda: f64,
) -> Result<f64> {
    let running = RunningMoments::from_features(&(phi_x * gamma), &(phi_y * gamma))?;
    let ms = running.with_regularizer(&(gamma.tr_mul(gamma) * lambda));
    let (sp, sq) = ms.regularized();
    Ok(GeneralizedSpectrum::decompose(&sp, &sq)?.value(&ms.delta(), spec))
}

/// Factor that brings a gradient of squared norm `norm_sq` within `clip`.
fn clip_factor(norm_sq: f64, clip: f64) -> f64 {
    let norm = norm_sq.sqrt();
    if clip > 0.0 && norm > clip {
        clip / norm
    } else {
        1.0
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// One pass of per-pair stochastic ascent on the frozen tangent surrogate.
///
/// Pairs are `(x_i, y_i)` for `i < min(n_p, n_q)` in a seeded random order.
pub fn sga_epoch(
    state: &mut LinearSgaState,
    phi_x: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
    spec: &DivergenceSpec,
    lambda: f64,
    config: &SgaConfig,
) -> Result<()> {
    let pairs = phi_x.nrows().min(phi_y.nrows());
    let order = epoch_order(pairs, config.seed, state.epoch);
    let mut surrogate = 0.0;
    for (t, &i) in order.iter().enumerate() {
        let fx = phi_x.row(i).transpose();
        let fy = phi_y.row(i).transpose();
        surrogate += linear_surrogate(&state.tangent, &state.gamma, &fx, &fy, lambda);
        let grad = linear_surrogate_grad(&state.tangent, &state.gamma, &fx, &fy, lambda);
        if grad.iter().all(|g| g.is_finite()) {
            let factor = clip_factor(grad.norm_squared(), config.clip);
            state.gamma += grad * (state.step * factor);
        } else {
            state.skipped_steps += 1;
        }
        let px = state.gamma.tr_mul(&fx);
        let py = state.gamma.tr_mul(&fy);
        state.running.update(&px, &py, config.ema_rate);
        if (t + 1) % config.moment_refresh.max(1) == 0 {
            state.refresh_tangent(spec, lambda)?;
        }
    }
    state.epoch += 1;
    if state.epoch % config.batch_refresh_epochs.max(1) == 0 {
        let (_, sq) = batch_second_moments(&(phi_x * &state.gamma), &(phi_y * &state.gamma))?;
        let reg = state.gamma.tr_mul(&state.gamma) * lambda;
        if let Some(root) = inv_sqrt_spd(&(sq + reg)) {
            state.gamma = &state.gamma * root;
        }
        state.running = RunningMoments::from_features(&(phi_x * &state.gamma), &(phi_y * &state.gamma))?;
        state.refresh_tangent(spec, lambda)?;
    }
    let value = linear_batch_value(&state.gamma, phi_x, phi_y, spec, lambda)?;
    if !value.is_finite() {
        return Err(Error::DivergedObjective);
    }
    if let Some(&last) = state.objective_trace.last() {
        if value - last < config.plateau_tol {
            state.step *= config.decay;
        }
    }
    state.objective_trace.push(value);
    state.surrogate_trace.push(surrogate / pairs.max(1) as f64);
    Ok(())
}

fn batch_second_moments(psi_x: &DMatrix<f64>, psi_y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = RunningMoments::from_features(psi_x, psi_y)?;
    Ok((r.sigma_p, r.sigma_q))
}

/// Settings of the one-hidden-layer learner.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralConfig {
    /// Hidden units `m`.
    pub hidden: usize,
    /// Reduced dimension `r`.
    pub rank: usize,
    /// Weight decay and moment regularization `λ`.
    pub lambda: f64,
    pub epochs: usize,
    pub sga: SgaConfig,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            hidden: 50,
            rank: 4,
            lambda: 1e-3,
            epochs: 20,
            sga: SgaConfig::default(),
        }
    }
}

/// Parameters and running moments of `Λᵀ relu(Wx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralState {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub reduction: DMatrix<f64>,
    pub running: RunningMoments,
    pub tangent: TangentBound,
    pub step: f64,
    pub epoch: usize,
    /// Penalized objective `F − (λ/2)(‖W‖² + ‖b‖²)` before training and after each epoch.
    pub objective_trace: Vec<f64>,
    pub surrogate_trace: Vec<f64>,
    pub skipped_steps: usize,
}

impl NeuralState {
    /// Rows of `W` uniform on the sphere, `b` uniform in `[−1, 1]`, Gaussian `Λ`.
    pub fn init(data: &DatasetPair, config: &NeuralConfig, spec: &DivergenceSpec) -> Result<Self> {
        let d = data.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.sga.seed);
        let mut weights = DMatrix::zeros(config.hidden, d);
        let mut row = vec![0.0; d];
        for j in 0..config.hidden {
            sample_sphere(&mut rng, &mut row);
            for (l, v) in row.iter().enumerate() {
                weights[(j, l)] = *v;
            }
        }
        let biases = DVector::from_fn(config.hidden, |_, _| rng.random_range(-1.0..=1.0));
        let reduction = init_gamma(config.hidden, config.rank, rng.random());
        let mut state = NeuralState {
            weights,
            biases,
            reduction,
            running: RunningMoments {
                mu_p: DVector::zeros(config.rank),
                mu_q: DVector::zeros(config.rank),
                sigma_p: DMatrix::identity(config.rank, config.rank),
                sigma_q: DMatrix::identity(config.rank, config.rank),
            },
            tangent: TangentBound {
                m: DMatrix::zeros(config.rank, config.rank),
                n: DMatrix::zeros(config.rank, config.rank),
                c: DVector::zeros(config.rank),
                anchor_value: 0.0,
            },
            step: config.sga.step,
            epoch: 0,
            objective_trace: Vec::new(),
            surrogate_trace: Vec::new(),
            skipped_steps: 0,
        };
        state.batch_refresh(data, config.lambda, spec)?;
        Ok(state)
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mut pre = self.biases[j];
            for (l, xl) in x.iter().enumerate() {
                pre += self.weights[(j, l)] * xl;
            }
            *o = pre.max(0.0);
        }
    }

    /// Hidden-layer feature matrix `relu(XWᵀ + b)`.
    pub fn hidden_matrix(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = samples * self.weights.transpose();
        for mut row in pre.row_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.biases[j]).max(0.0);
            }
        }
        pre
    }

    /// The learned map `Λᵀ relu(Wx + b)`.
    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::Neural {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            reduction: Some(self.reduction.clone()),
        }
    }

    /// Full-batch moments of the hidden layer (unregularized, `lambda_reg = λ`).
    pub fn hidden_moments(&self, data: &DatasetPair, lambda: f64) -> Result<MomentSet> {
        let p = FeatureMoments::from_features(&self.hidden_matrix(&data.x))?;
        let q = FeatureMoments::from_features(&self.hidden_matrix(&data.y))?;
        MomentSet::new(p, q, lambda, ConstantMode::None)
    }

    fn penalty(&self, lambda: f64) -> f64 {
        0.5 * lambda * (self.weights.norm_squared() + self.biases.norm_squared())
    }

    /// Unpenalized value with reduced regularization `λΛᵀΛ`.
    pub fn value(&self, data: &DatasetPair, lambda: f64, spec: &DivergenceSpec) -> Result<f64> {
        reduced_value(&self.hidden_moments(data, lambda)?, &self.reduction, spec)
    }

    fn batch_refresh(&mut self, data: &DatasetPair, lambda: f64, spec: &DivergenceSpec) -> Result<()> {
        let hidden = self.hidden_moments(data, lambda)?;
        let (_, sq) = hidden.regularized();
        if let Some(l) = whiten(&self.reduction, &sq) {
            self.reduction = l;
        }
        let reduced = reduce_moments(&hidden, &self.reduction)?;
        let reg = self.reduction.tr_mul(&self.reduction) * lambda;
        self.running = RunningMoments {
            mu_p: reduced.mu_p.clone(),
            mu_q: reduced.mu_q.clone(),
            sigma_p: &reduced.sigma_p - &reg,
            sigma_q: &reduced.sigma_q - &reg,
        };
        self.tangent = TangentBound::at(&reduced, spec)?;
        Ok(())
    }

    fn refresh_tangent(&mut self, lambda: f64, spec: &DivergenceSpec) -> Result<()> {
        let reg = self.reduction.tr_mul(&self.reduction) * lambda;
        self.tangent = TangentBound::at(&self.running.with_regularizer(&reg), spec)?;
        Ok(())
    }
}

/// One stochastic pass over the pairs for the neural map.
///
/// An epoch that lowers the penalized objective, or fails numerically, is
/// rolled back and the step size shrinks.
pub fn neural_epoch(
    state: &mut NeuralState,
    data: &DatasetPair,
    spec: &DivergenceSpec,
    config: &NeuralConfig,
) -> Result<()> {
    let lambda = config.lambda;
    let previous = match state.objective_trace.last() {
        Some(&v) => v,
        None => {
            let v = state.value(data, lambda, spec)? - state.penalty(lambda);
            state.objective_trace.push(v);
            v
        }
    };
    let snapshot = state.clone();
    let surrogate = neural_pass(state, data, spec, config);
    state.epoch += 1;
    let attempted = surrogate.as_ref().ok().copied().filter(|v| v.is_finite());
    let outcome = surrogate.and_then(|sur| {
        if state.epoch % config.sga.batch_refresh_epochs.max(1) == 0 {
            state.batch_refresh(data, lambda, spec)?;
        }
        let value = state.value(data, lambda, spec)? - state.penalty(lambda);
        Ok((sur, value))
    });
    match outcome {
        Ok((sur, value)) if value.is_finite() && value >= previous => {
            if value - previous < config.sga.plateau_tol {
                state.step *= config.sga.decay;
            }
            state.objective_trace.push(value);
            state.surrogate_trace.push(sur);
        }
        _ => {
            let epoch = state.epoch;
            let skipped = state.skipped_steps;
            *state = snapshot;
            state.epoch = epoch;
            state.skipped_steps = skipped;
            state.step *= config.sga.decay;
            let fallback = state.surrogate_trace.last().copied().unwrap_or(0.0);
            state.objective_trace.push(previous);
            state.surrogate_trace.push(attempted.unwrap_or(fallback));
        }
    }
    Ok(())
}

/// Per-pair updates of one epoch; returns the mean surrogate value.
fn neural_pass(state: &mut NeuralState, data: &DatasetPair, spec: &DivergenceSpec, config: &NeuralConfig) -> Result<f64> {
    let lambda = config.lambda;
    let pairs = data.n_p().min(data.n_q());
    let order = epoch_order(pairs, config.sga.seed, state.epoch);
    let (m, d) = (state.weights.nrows(), state.weights.ncols());
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut hx = vec![0.0; m];
    let mut hy = vec![0.0; m];
    let mut surrogate = 0.0;
    for (t, &i) in order.iter().enumerate() {
        for l in 0..d {
            x[l] = data.x[(i, l)];
            y[l] = data.y[(i, l)];
        }
        state.hidden(&x, &mut hx);
        state.hidden(&y, &mut hy);
        let sx = DVector::from_column_slice(&hx);
        let sy = DVector::from_column_slice(&hy);
        let tan = &state.tangent;
        let px = state.reduction.tr_mul(&sx);
        let py = state.reduction.tr_mul(&sy);
        let mn = &tan.m + &tan.n;
        surrogate += px.dot(&(&tan.m * &px)) + py.dot(&(&tan.n * &py)) + 2.0 * tan.c.dot(&(&px - &py))
            + lambda * trace_product(&mn, &state.reduction.tr_mul(&state.reduction))
            - state.penalty(lambda);
        let gx = (&tan.m * &px + &tan.c) * 2.0;
        let gy = (&tan.n * &py - &tan.c) * 2.0;
        let grad_l = &sx * gx.transpose() + &sy * gy.transpose() + &state.reduction * mn * (2.0 * lambda);
        let back_x = &state.reduction * &gx;
        let back_y = &state.reduction * &gy;
        let mut grad_w = &state.weights * (-lambda);
        let mut grad_b = &state.biases * (-lambda);
        for j in 0..m {
            let ax = if hx[j] > 0.0 { back_x[j] } else { 0.0 };
            let ay = if hy[j] > 0.0 { back_y[j] } else { 0.0 };
            if ax != 0.0 || ay != 0.0 {
                for l in 0..d {
                    grad_w[(j, l)] += ax * x[l] + ay * y[l];
                }
                grad_b[j] += ax + ay;
            }
        }
        let norm_sq = grad_l.norm_squared() + grad_w.norm_squared() + grad_b.norm_squared();
        if norm_sq.is_finite() {
            let step = state.step * clip_factor(norm_sq, config.sga.clip);
            state.reduction += grad_l * step;
            state.weights += grad_w * step;
            state.biases += grad_b * step;
        } else {
            state.skipped_steps += 1;
        }
        state.hidden(&x, &mut hx);
        state.hidden(&y, &mut hy);
        let px = state.reduction.tr_mul(&DVector::from_column_slice(&hx));
        let py = state.reduction.tr_mul(&DVector::from_column_slice(&hy));
        state.running.update(&px, &py, config.sga.ema_rate);
        if (t + 1) % config.sga.moment_refresh.max(1) == 0 {
            state.refresh_tangent(lambda, spec)?;
        }
    }
    Ok(surrogate / pairs.max(1) as f64)
}

/// Potentials of the learned map fitted on `data` with `λΛᵀΛ` regularization.
pub fn neural_potentials(state: &NeuralState, data: &DatasetPair, lambda: f64, spec: &DivergenceSpec) -> Result<PotentialPair> {
    let reduced = reduce_moments(&state.hidden_moments(data, lambda)?, &state.reduction)?;
    let (sp, sq) = reduced.regularized();
    let spectrum = GeneralizedSpectrum::decompose(&sp, &sq)?;
    let (m, n, c) = spectrum.potential_matrices(&reduced.delta(), spec);
    Ok(PotentialPair {
        m,
        n,
        c,
        divergence: spec.clone(),
        feature_map: Some(state.feature_map()),
        constant_mode: ConstantMode::None,
    })
}

/// Spectral report of the learned reduced map; `value` is the penalized objective.
pub fn neural_report(
    state: &NeuralState,
    data: &DatasetPair,
    lambda: f64,
    spec: &DivergenceSpec,
    debias: bool,
) -> Result<EstimateReport> {
    let hidden = state.hidden_moments(data, lambda)?;
    let reduced = reduce_moments(&hidden, &state.reduction)?;
    let (sp, sq) = reduced.regularized();
    let spectrum = GeneralizedSpectrum::decompose(&sp, &sq)?;
    let mut report = report_from_spectrum(&spectrum, &reduced, spec, false)?;
    let penalty = state.penalty(lambda);
    report.value -= penalty;
    if debias {
        let c_hat = hidden.mean_difference_covariance()?;
        let reduced_c = state.reduction.transpose() * c_hat * &state.reduction;
        report.correction = spectrum.trace_correction(&reduced_c, spec);
    }
    report.debiased_value = report.value - report.correction;
    report.lambda_reg = lambda;
    Ok(report)
}

/// Trains `Λᵀ relu(Wx + b)` by stochastic ascent with weight decay.
pub fn train_neural(
    data: &DatasetPair,
    config: &NeuralConfig,
    spec: &DivergenceSpec,
) -> Result<(FeatureMap, EstimateReport, NeuralState)> {
    if config.hidden == 0 || config.rank == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument("hidden, rank and epochs must be positive"));
    }
    let mut state = NeuralState::init(data, config, spec)?;
    for _ in 0..config.epochs {
        neural_epoch(&mut state, data, spec, config)?;
    }
    let report = neural_report(&state, data, config.lambda, spec, data.n_p() > 1 && data.n_q() > 1)?;
    Ok((state.feature_map(), report, state))
}

/// Reduced Kronecker moments of `(Γ₂ᵀφ₂) ⊗ (Γ₁ᵀφ₁)` from feature matrices.
pub fn reduced_kronecker_moments(
    phi1: &DMatrix<f64>,
    phi2: &DMatrix<f64>,
    gamma1: &DMatrix<f64>,
    gamma2: &DMatrix<f64>,
    lambda: f64,
) -> Result<MomentSet> {
    let a = phi1 * gamma1;
    let b = phi2 * gamma2;
    let n = a.nrows();
    let (r1, r2) = (a.ncols(), b.ncols());
    let joint = DMatrix::from_fn(n, r1 * r2, |i, idx| b[(i, idx / r1)] * a[(i, idx % r1)]);
    let p = FeatureMoments::from_features(&joint)?;
    let f1 = FeatureMoments::from_features(&a)?;
    let f2 = FeatureMoments::from_features(&b)?;
    let reg = (gamma2.tr_mul(gamma2)).kronecker(&gamma1.tr_mul(gamma1)) * lambda;
    let mut sp = p.second + &reg;
    let mut sq = f2.second.kronecker(&f1.second) + reg;
    symmetrize(&mut sp);
    symmetrize(&mut sq);
    stabilize(&mut sp, &mut sq);
    Ok(MomentSet {
        mu_p: p.mean,
        mu_q: f2.mean.kronecker(&f1.mean),
        sigma_p: sp,
        sigma_q: sq,
        n_p: n,
        n_q: n,
        lambda_reg: 0.0,
        constant_mode: ConstantMode::None,
    })
}

/// Reorders an `(l₂, l₁)`-indexed tangent to `(l₁, l₂)` indexing.
fn swap_tangent(t: &TangentBound, r1: usize, r2: usize) -> TangentBound {
    let perm = |idx: usize| {
        let (l2, l1) = (idx / r1, idx % r1);
        l1 * r2 + l2
    };
    let dim = r1 * r2;
    let mut m = DMatrix::zeros(dim, dim);
    let mut n = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    for i in 0..dim {
        c[perm(i)] = t.c[i];
        for j in 0..dim {
            m[(perm(i), perm(j))] = t.m[(i, j)];
            n[(perm(i), perm(j))] = t.n[(i, j)];
        }
    }
    TangentBound {
        m,
        n,
        c,
        anchor_value: t.anchor_value,
    }
}

/// Maximizes the tangent over the free factor `Γ` with `ψ = a ⊗ (Γᵀφ)`,
/// `a = Γ_fᵀφ_f` fixed; the tangent is indexed `(l_f, l_g)`.
fn mi_block_update(
    tangent: &TangentBound,
    fixed: &DMatrix<f64>,
    fixed_gram: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    let (m, rg) = (phi.ncols(), gamma.ncols());
    let rf = fixed.ncols();
    let z = DMatrix::from_fn(n, rf * m, |i, idx| fixed[(i, idx / m)] * phi[(i, idx % m)]);
    let tp = FeatureMoments::from_features(&z)?;
    let fa = FeatureMoments::from_features(fixed)?;
    let fphi = FeatureMoments::from_features(phi)?;
    let tq = fa.second.kronecker(&fphi.second);
    let mn = &tangent.m + &tangent.n;
    let dim = m * rg;
    let mut h = DMatrix::zeros(dim, dim);
    for lg in 0..rg {
        for lg2 in 0..rg {
            for lf in 0..rf {
                for lf2 in 0..rf {
                    let (row, col) = (lf * rg + lg, lf2 * rg + lg2);
                    let cm = tangent.m[(row, col)];
                    let cn = tangent.n[(row, col)];
                    let creg = lambda * mn[(row, col)] * fixed_gram[(lf, lf2)];
                    for k in 0..m {
                        let hr = lg * m + k;
                        for k2 in 0..m {
                            let (ti, tj) = (lf * m + k, lf2 * m + k2);
                            h[(hr, lg2 * m + k2)] += cm * tp.second[(ti, tj)] + cn * tq[(ti, tj)];
                        }
                        h[(hr, lg2 * m + k)] += creg;
                    }
                }
            }
        }
    }
    symmetrize(&mut h);
    // Linear term L[(k, l_g)] = Σ_{l_f} c[(l_f, l_g)] cov(a_{l_f}, φ_k).
    let mut lin = DMatrix::zeros(m, rg);
    for lg in 0..rg {
        for k in 0..m {
            let mut acc = 0.0;
            for lf in 0..rf {
                let cross = tp.mean[lf * m + k] - fa.mean[lf] * fphi.mean[k];
                acc += tangent.c[lf * rg + lg] * cross;
            }
            lin[(k, lg)] = acc;
        }
    }
    let neg = -h;
    let scale = neg.trace().abs();
    let mut eps = PROX_SCALE * scale + f64::MIN_POSITIVE;
    for _ in 0..6 {
        let mut k = neg.clone();
        for i in 0..dim {
            k[(i, i)] += eps;
        }
        if let Some(chol) = cholesky(&k) {
            let target = &lin + gamma * eps;
            let sol = chol.solve(&DVector::from_column_slice(target.as_slice()));
            return Ok(DMatrix::from_column_slice(m, rg, sol.as_slice()));
        }
        eps = eps * 100.0 + 1e-12 * scale;
    }
    Err(Error::IndefiniteTangent)
}

/// Result of alternating MI feature learning.
#[derive(Debug, Clone, PartialEq)]
pub struct MiLearner {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    /// Objective before the first round and after each round.
    pub trace: Vec<f64>,
    pub report: EstimateReport,
}

/// Alternating closed-form maximization over `Γ₁` and `Γ₂` for the
/// Kronecker map `(Γ₂ᵀφ₂) ⊗ (Γ₁ᵀφ₁)`, with per-factor whitening.
#[allow(clippy::too_many_arguments)]
pub fn mi_feature_learning(
    paired: &DMatrix<f64>,
    map1: &FeatureMap,
    map2: &FeatureMap,
    spec: &DivergenceSpec,
    lambda: f64,
    ranks: (usize, usize),
    iters: usize,
    seed: u64,
) -> Result<MiLearner> {
    let d1 = map1.input_dim();
    if paired.ncols() != d1 + map2.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: d1 + map2.input_dim(),
            got: paired.ncols(),
        });
    }
    let phi1 = map1.feature_matrix(&paired.columns(0, d1).into_owned())?;
    let phi2 = map2.feature_matrix(&paired.columns(d1, paired.ncols() - d1).into_owned())?;
    mi_feature_learning_features(&phi1, &phi2, spec, lambda, ranks, iters, seed)
}

/// [`mi_feature_learning`] on precomputed feature matrices.
pub fn mi_feature_learning_features(
    phi1: &DMatrix<f64>,
    phi2: &DMatrix<f64>,
    spec: &DivergenceSpec,
    lambda: f64,
    ranks: (usize, usize),
    iters: usize,
    seed: u64,
) -> Result<MiLearner> {
    let (r1, r2) = ranks;
    let (m1, m2) = (phi1.ncols(), phi2.ncols());
    if r1 == 0 || r2 == 0 || r1 > m1 || r2 > m2 {
        return Err(Error::InvalidArgument("ranks must be in 1..=m"));
    }
    let g1 = init_gamma(m1, r1, seed);
    let g2 = init_gamma(m2, r2, seed.wrapping_add(1));
    mi_feature_learning_from(phi1, phi2, spec, lambda, (g1, g2), iters)
}

/// Continues the alternating updates from given factors `(Γ₁, Γ₂)`.
pub fn mi_feature_learning_from(
    phi1: &DMatrix<f64>,
    phi2: &DMatrix<f64>,
    spec: &DivergenceSpec,
    lambda: f64,
    start: (DMatrix<f64>, DMatrix<f64>),
    iters: usize,
) -> Result<MiLearner> {
    let (mut g1, mut g2) = start;
    let (m1, m2) = (phi1.ncols(), phi2.ncols());
    if g1.nrows() != m1 || g2.nrows() != m2 {
        return Err(Error::DimensionMismatch {
            expected: m1,
            got: g1.nrows(),
        });
    }
    let (r1, r2) = (g1.ncols(), g2.ncols());
    let s1 = FeatureMoments::from_features(phi1)?.second;
    let s2 = FeatureMoments::from_features(phi2)?.second;
    let reg1 = DMatrix::identity(m1, m1) * lambda;
    let reg2 = DMatrix::identity(m2, m2) * lambda;
    g1 = whiten(&g1, &(&s1 + &reg1)).unwrap_or(g1);
    g2 = whiten(&g2, &(&s2 + &reg2)).unwrap_or(g2);
    let value_of = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Result<f64> {
        let ms = reduced_kronecker_moments(phi1, phi2, a, b, lambda)?;
        let (sp, sq) = ms.regularized();
        Ok(GeneralizedSpectrum::decompose(&sp, &sq)?.value(&ms.delta(), spec))
    };
    let mut current = value_of(&g1, &g2)?;
    let mut trace = vec![current];
    for _ in 0..iters {
        let tangent = TangentBound::at(&reduced_kronecker_moments(phi1, phi2, &g1, &g2, lambda)?, spec)?;
        let fixed = phi2 * &g2;
        let cand1 = mi_block_update(&tangent, &fixed, &g2.tr_mul(&g2), phi1, &g1, lambda)?;
        let cand1 = whiten(&cand1, &(&s1 + &reg1)).unwrap_or(cand1);
        let v1 = value_of(&cand1, &g2)?;
        if v1 >= current {
            g1 = cand1;
            current = v1;
        }
        let tangent = TangentBound::at(&reduced_kronecker_moments(phi1, phi2, &g1, &g2, lambda)?, spec)?;
        let swapped = swap_tangent(&tangent, r1, r2);
        let fixed = phi1 * &g1;
        let cand2 = mi_block_update(&swapped, &fixed, &g1.tr_mul(&g1), phi2, &g2, lambda)?;
        let cand2 = whiten(&cand2, &(&s2 + &reg2)).unwrap_or(cand2);
        let v2 = value_of(&g1, &cand2)?;
        if v2 >= current {
            g2 = cand2;
            current = v2;
        }
        if !current.is_finite() {
            return Err(Error::DivergedObjective);
        }
        trace.push(current);
    }
    let ms = reduced_kronecker_moments(phi1, phi2, &g1, &g2, lambda)?;
    let (sp, sq) = ms.regularized();
    let spectrum = GeneralizedSpectrum::decompose(&sp, &sq)?;
    let mut report = report_from_spectrum(&spectrum, &ms, spec, false)?;
    report.lambda_reg = lambda;
    Ok(MiLearner {
        gamma1: g1,
        gamma2: g2,
        trace,
        report,
    })
}
