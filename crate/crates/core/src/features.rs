//! Feature maps and first/second moment estimation.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
use core::fmt;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{kron_vec, penalty_identity, sym_eigen_sorted, symmetrize};

/// Rows per block in the pairwise moment reduction.
const CHUNK_ROWS: usize = 256;

/// Fixed coordinatewise bases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    /// `x ↦ x`.
    Linear,
    /// `1, cos 2πkx_l, sin 2πkx_l` for `k = 1..=max_freq` and every coordinate.
    Trigonometric { max_freq: usize },
    /// Like `Trigonometric` with harmonics scaled by `√2 / k`, the feature map
    /// of the kernel `1 + Σ_k 2/k² cos 2πk(x − y)`.
    BernoulliKernel { max_freq: usize },
    /// `x_l ↦ (cos 2πx_l, sin 2πx_l)`.
    CircleEmbedding,
}

impl Basis {
    fn output_dim(&self, input_dim: usize) -> usize {
        match *self {
            Basis::Linear => input_dim,
            Basis::Trigonometric { max_freq } | Basis::BernoulliKernel { max_freq } => {
                1 + 2 * max_freq * input_dim
            }
            Basis::CircleEmbedding => 2 * input_dim,
        }
    }
}

/// User-supplied feature function writing `output_dim` values.
pub type CustomFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Evaluatable map `x ∈ R^d ↦ φ(x) ∈ R^m`.
#[derive(Clone)]
pub enum FeatureMap {
    Explicit { basis: Basis, input_dim: usize },
    /// Scalar category in `1..=cardinality` to a unit vector.
    OneHot { cardinality: usize },
    /// `(w_jᵀx + b_j)_+^κ`; `κ = 0` is the step `1[w_jᵀx + b_j > 0]`.
    RandomRelu {
        kappa: u32,
        weights: DMatrix<f64>,
        biases: DVector<f64>,
        seed: u64,
    },
    /// `Γᵀ φ(x)` with `Γ` of shape `m × r`.
    Reduced { inner: Box<FeatureMap>, gamma: DMatrix<f64> },
    /// One hidden ReLU layer `relu(Wx + b)`, optionally followed by `Λᵀ`.
    Neural {
        weights: DMatrix<f64>,
        biases: DVector<f64>,
        reduction: Option<DMatrix<f64>>,
    },
    /// `φ₂(x₂) ⊗ φ₁(x₁)` on the concatenated input `(x₁, x₂)`; index `j₂ m₁ + j₁`.
    Product { first: Box<FeatureMap>, second: Box<FeatureMap> },
    /// `outer(inner(x))`.
    Compose { inner: Box<FeatureMap>, outer: Box<FeatureMap> },
    Custom {
        func: Arc<CustomFn>,
        input_dim: usize,
        output_dim: usize,
    },
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Explicit { basis, input_dim } => f
                .debug_struct("Explicit")
                .field("basis", basis)
                .field("input_dim", input_dim)
                .finish(),
            FeatureMap::OneHot { cardinality } => {
                f.debug_struct("OneHot").field("cardinality", cardinality).finish()
            }
            FeatureMap::RandomRelu {
                kappa, weights, seed, ..
            } => f
                .debug_struct("RandomRelu")
                .field("kappa", kappa)
                .field("m", &weights.nrows())
                .field("d", &weights.ncols())
                .field("seed", seed)
                .finish(),
            FeatureMap::Reduced { inner, gamma } => f
                .debug_struct("Reduced")
                .field("inner", inner)
                .field("r", &gamma.ncols())
                .finish(),
            FeatureMap::Neural {
                weights, reduction, ..
            } => f
                .debug_struct("Neural")
                .field("m", &weights.nrows())
                .field("d", &weights.ncols())
                .field("r", &reduction.as_ref().map(|l| l.ncols()))
                .finish(),
            FeatureMap::Product { first, second } => f
                .debug_struct("Product")
                .field("first", first)
                .field("second", second)
                .finish(),
            FeatureMap::Compose { inner, outer } => f
                .debug_struct("Compose")
                .field("inner", inner)
                .field("outer", outer)
                .finish(),
            FeatureMap::Custom {
                input_dim,
                output_dim,
                ..
            } => f
                .debug_struct("Custom")
                .field("input_dim", input_dim)
                .field("output_dim", output_dim)
                .finish(),
        }
    }
}

impl FeatureMap {
    pub fn explicit(basis: Basis, input_dim: usize) -> Self {
        FeatureMap::Explicit { basis, input_dim }
    }

    pub fn one_hot(cardinality: usize) -> Self {
        FeatureMap::OneHot { cardinality }
    }

    /// `m` random ReLU features of order `kappa` on `R^d`.
    ///
    /// Each `(w_j, b_j)` is `u / √2` for `u` uniform on the unit sphere of
    /// `R^{d+1}`, i.e. the sphere law applied to the augmented input `(x, 1) / √2`.
    pub fn random_relu(input_dim: usize, m: usize, kappa: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = DMatrix::zeros(m, input_dim);
        let mut biases = DVector::zeros(m);
        let mut u = vec![0.0; input_dim + 1];
        for j in 0..m {
            sample_sphere(&mut rng, &mut u);
            for l in 0..input_dim {
                weights[(j, l)] = u[l] / SQRT_2;
            }
            biases[j] = u[input_dim] / SQRT_2;
        }
        FeatureMap::RandomRelu {
            kappa,
            weights,
            biases,
            seed,
        }
    }

    pub fn reduced(inner: FeatureMap, gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != inner.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.output_dim(),
                got: gamma.nrows(),
            });
        }
        Ok(FeatureMap::Reduced {
            inner: Box::new(inner),
            gamma,
        })
    }

    pub fn product(first: FeatureMap, second: FeatureMap) -> Self {
        FeatureMap::Product {
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    pub fn compose(inner: FeatureMap, outer: FeatureMap) -> Result<Self> {
        if outer.input_dim() != inner.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.output_dim(),
                got: outer.input_dim(),
            });
        }
        Ok(FeatureMap::Compose {
            inner: Box::new(inner),
            outer: Box::new(outer),
        })
    }

    pub fn custom<F>(input_dim: usize, output_dim: usize, func: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        FeatureMap::Custom {
            func: Arc::new(func),
            input_dim,
            output_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Explicit { input_dim, .. } => *input_dim,
            FeatureMap::OneHot { .. } => 1,
            FeatureMap::RandomRelu { weights, .. } | FeatureMap::Neural { weights, .. } => {
                weights.ncols()
            }
            FeatureMap::Reduced { inner, .. } | FeatureMap::Compose { inner, .. } => {
                inner.input_dim()
            }
            FeatureMap::Product { first, second } => first.input_dim() + second.input_dim(),
            FeatureMap::Custom { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Explicit { basis, input_dim } => basis.output_dim(*input_dim),
            FeatureMap::OneHot { cardinality } => *cardinality,
            FeatureMap::RandomRelu { weights, .. } => weights.nrows(),
            FeatureMap::Reduced { gamma, .. } => gamma.ncols(),
            FeatureMap::Neural {
                weights, reduction, ..
            } => reduction.as_ref().map_or(weights.nrows(), |l| l.ncols()),
            FeatureMap::Product { first, second } => first.output_dim() * second.output_dim(),
            FeatureMap::Compose { outer, .. } => outer.output_dim(),
            FeatureMap::Custom { output_dim, .. } => *output_dim,
        }
    }

    /// Evaluates `φ(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates `φ(x)` into `out`, which must have length `output_dim()`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if out.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: out.len(),
            });
        }
        match self {
            FeatureMap::Explicit { basis, .. } => eval_basis(*basis, x, out),
            FeatureMap::OneHot { cardinality } => {
                let value = x[0];
                let idx = value as usize;
                if value.fract() != 0.0 || value < 1.0 || idx > *cardinality {
                    return Err(Error::InvalidCategory {
                        value,
                        cardinality: *cardinality,
                    });
                }
                out.fill(0.0);
                out[idx - 1] = 1.0;
            }
            FeatureMap::RandomRelu {
                kappa,
                weights,
                biases,
                ..
            } => {
                for (j, o) in out.iter_mut().enumerate() {
                    let pre = affine_row(weights, biases, j, x);
                    *o = relu_power(pre, *kappa);
                }
            }
            FeatureMap::Reduced { inner, gamma } => {
                let phi = inner.eval(x)?;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = gamma.column(k).iter().zip(&phi).map(|(g, p)| g * p).sum();
                }
            }
            FeatureMap::Neural {
                weights,
                biases,
                reduction,
            } => {
                let hidden: Vec<f64> = (0..weights.nrows())
                    .map(|j| affine_row(weights, biases, j, x).max(0.0))
                    .collect();
                match reduction {
                    Some(lambda) => {
                        for (k, o) in out.iter_mut().enumerate() {
                            *o = lambda.column(k).iter().zip(&hidden).map(|(l, h)| l * h).sum();
                        }
                    }
                    None => out.copy_from_slice(&hidden),
                }
            }
            FeatureMap::Product { first, second } => {
                let d1 = first.input_dim();
                let phi1 = first.eval(&x[..d1])?;
                let phi2 = second.eval(&x[d1..])?;
                kron_vec(&phi2, &phi1, out);
            }
            FeatureMap::Compose { inner, outer } => {
                let mid = inner.eval(x)?;
                outer.eval_into(&mid, out)?;
            }
            FeatureMap::Custom { func, .. } => func(x, out),
        }
        Ok(())
    }

    /// Feature matrix `Φ` (`n × m`) for the rows of `samples` (`n × d`).
    pub fn feature_matrix(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = samples.nrows();
        let m = self.output_dim();
        let mut phi = DMatrix::zeros(n, m);
        let mut x = vec![0.0; samples.ncols()];
        let mut row = vec![0.0; m];
        for i in 0..n {
            for (l, xl) in x.iter_mut().enumerate() {
                *xl = samples[(i, l)];
            }
            self.eval_into(&x, &mut row)?;
            for (j, v) in row.iter().enumerate() {
                phi[(i, j)] = *v;
            }
        }
        Ok(phi)
    }
}

/// Evaluates the basis-feature list for a single input.
pub fn eval_features(map: &FeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    map.eval(x)
}

fn affine_row(weights: &DMatrix<f64>, biases: &DVector<f64>, j: usize, x: &[f64]) -> f64 {
    let mut acc = biases[j];
    for (l, xl) in x.iter().enumerate() {
        acc += weights[(j, l)] * xl;
    }
    acc
}

fn relu_power(pre: f64, kappa: u32) -> f64 {
    if pre > 0.0 {
        if kappa == 0 {
            1.0
        } else {
            pre.powi(kappa as i32)
        }
    } else {
        0.0
    }
}

fn eval_basis(basis: Basis, x: &[f64], out: &mut [f64]) {
    match basis {
        Basis::Linear => out.copy_from_slice(x),
        Basis::CircleEmbedding => {
            for (l, &xl) in x.iter().enumerate() {
                let (s, c) = (2.0 * PI * xl).sin_cos();
                out[2 * l] = c;
                out[2 * l + 1] = s;
            }
        }
        Basis::Trigonometric { max_freq } | Basis::BernoulliKernel { max_freq } => {
            let bernoulli = matches!(basis, Basis::BernoulliKernel { .. });
            out[0] = 1.0;
            let mut idx = 1;
            for &xl in x {
                for k in 1..=max_freq {
                    let scale = if bernoulli { SQRT_2 / k as f64 } else { 1.0 };
                    let (s, c) = (2.0 * PI * k as f64 * xl).sin_cos();
                    out[idx] = scale * c;
                    out[idx + 1] = scale * s;
                    idx += 2;
                }
            }
        }
    }
}

pub(crate) fn sample_sphere(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            norm2 += *v * *v;
        }
        if norm2 > 1e-20 {
            let inv = 1.0 / norm2.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Samples from `p` (rows of `x`) and from `q` (rows of `y`).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl DatasetPair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: y.ncols(),
            });
        }
        Ok(DatasetPair { x, y })
    }

    pub fn n_p(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_q(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Mean and uncentered second moment of one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    pub count: usize,
}

impl FeatureMoments {
    /// Empirical moments of the rows of a feature matrix.
    pub fn from_features(phi: &DMatrix<f64>) -> Result<Self> {
        Self::from_weighted_features(phi, None)
    }

    /// Moments with nonnegative sample weights (normalized to sum to one).
    pub fn from_weighted_features(phi: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<Self> {
        let n = phi.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let total = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: w.len(),
                    });
                }
                if w.iter().any(|&v| !(v >= 0.0)) {
                    return Err(Error::InvalidArgument("weights must be nonnegative"));
                }
                w.iter().sum::<f64>()
            }
            None => n as f64,
        };
        if !(total > 0.0) {
            return Err(Error::EmptyDataset);
        }
        let m = phi.ncols();
        let mut sum_acc = PairwiseSum::new(1, m);
        let mut sq_acc = PairwiseSum::new(m, m);
        let mut start = 0;
        while start < n {
            let len = CHUNK_ROWS.min(n - start);
            let mut chunk = phi.rows(start, len).into_owned();
            let mut weighted = chunk.clone();
            if let Some(w) = weights {
                for i in 0..len {
                    let wi = w[start + i];
                    weighted.row_mut(i).scale_mut(wi);
                    chunk.row_mut(i).scale_mut(wi.sqrt());
                }
            }
            sq_acc.push(chunk.transpose() * &chunk);
            sum_acc.push(DMatrix::from_row_slice(1, m, weighted.row_sum().as_slice()));
            start += len;
        }
        let mean = DVector::from_iterator(m, sum_acc.finish().iter().map(|v| v / total));
        let mut second = sq_acc.finish() / total;
        symmetrize(&mut second);
        Ok(FeatureMoments {
            mean,
            second,
            count: n,
        })
    }

    pub fn from_samples(map: &FeatureMap, samples: &DMatrix<f64>) -> Result<Self> {
        Self::from_features(&map.feature_matrix(samples)?)
    }

    /// Moments of the mixture `rho · a + (1 − rho) · b`.
    pub fn mix(a: &FeatureMoments, b: &FeatureMoments, rho: f64) -> FeatureMoments {
        FeatureMoments {
            mean: &a.mean * rho + &b.mean * (1.0 - rho),
            second: &a.second * rho + &b.second * (1.0 - rho),
            count: a.count + b.count,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moments of `(φ, 1)`.
    pub fn with_constant_feature(&self) -> FeatureMoments {
        let m = self.dim();
        let mut mean = self.mean.clone().resize_vertically(m + 1, 1.0);
        mean[m] = 1.0;
        let mut second = self.second.clone().resize(m + 1, m + 1, 0.0);
        for i in 0..m {
            second[(i, m)] = self.mean[i];
            second[(m, i)] = self.mean[i];
        }
        second[(m, m)] = 1.0;
        FeatureMoments {
            mean,
            second,
            count: self.count,
        }
    }

    /// `Σ − μμᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.second - &self.mean * self.mean.transpose();
        symmetrize(&mut c);
        c
    }
}

/// Binary-counter pairwise summation of equally shaped blocks.
struct PairwiseSum {
    stack: Vec<(u32, DMatrix<f64>)>,
    rows: usize,
    cols: usize,
}

impl PairwiseSum {
    fn new(rows: usize, cols: usize) -> Self {
        PairwiseSum {
            stack: Vec::new(),
            rows,
            cols,
        }
    }

    fn push(&mut self, block: DMatrix<f64>) {
        let mut level = 0;
        let mut acc = block;
        while let Some((top_level, _)) = self.stack.last() {
            if *top_level != level {
                break;
            }
            let (_, top) = self.stack.pop().expect("nonempty");
            acc = top + acc;
            level += 1;
        }
        self.stack.push((level, acc));
    }

    fn finish(mut self) -> DMatrix<f64> {
        let mut acc = match self.stack.pop() {
            Some((_, m)) => m,
            None => return DMatrix::zeros(self.rows, self.cols),
        };
        while let Some((_, m)) = self.stack.pop() {
            acc = m + acc;
        }
        acc
    }
}

/// How the constant function enters the feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantMode {
    #[default]
    None,
    /// A final feature `≡ 1` is appended and excluded from the ridge shift.
    AugmentedUnpenalized,
}

/// First and second feature moments of `p` and `q`.
///
/// `sigma_p` and `sigma_q` are the raw (unregularized) second moments;
/// [`MomentSet::regularized`] applies the `λ` shift.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub mu_p: DVector<f64>,
    pub mu_q: DVector<f64>,
    pub sigma_p: DMatrix<f64>,
    pub sigma_q: DMatrix<f64>,
    pub n_p: usize,
    pub n_q: usize,
    pub lambda_reg: f64,
    pub constant_mode: ConstantMode,
}

impl MomentSet {
    /// Assembles a moment set; with `AugmentedUnpenalized` the constant
    /// feature is appended to both moment pairs here.
    pub fn new(
        p: FeatureMoments,
        q: FeatureMoments,
        lambda_reg: f64,
        constant_mode: ConstantMode,
    ) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                got: q.dim(),
            });
        }
        if !(lambda_reg >= 0.0) {
            return Err(Error::InvalidArgument("lambda_reg must be nonnegative"));
        }
        let (p, q) = match constant_mode {
            ConstantMode::None => (p, q),
            ConstantMode::AugmentedUnpenalized => (p.with_constant_feature(), q.with_constant_feature()),
        };
        let mut sigma_p = p.second;
        let mut sigma_q = q.second;
        symmetrize(&mut sigma_p);
        symmetrize(&mut sigma_q);
        Ok(MomentSet {
            mu_p: p.mean,
            mu_q: q.mean,
            sigma_p,
            sigma_q,
            n_p: p.count,
            n_q: q.count,
            lambda_reg,
            constant_mode,
        })
    }

    /// Moment set from known population moments (counts set to zero).
    pub fn population(
        mu_p: DVector<f64>,
        sigma_p: DMatrix<f64>,
        mu_q: DVector<f64>,
        sigma_q: DMatrix<f64>,
        lambda_reg: f64,
    ) -> Result<Self> {
        let m = mu_p.len();
        for got in [mu_q.len(), sigma_p.nrows(), sigma_p.ncols(), sigma_q.nrows(), sigma_q.ncols()] {
            if got != m {
                return Err(Error::DimensionMismatch { expected: m, got });
            }
        }
        Self::new(
            FeatureMoments {
                mean: mu_p,
                second: sigma_p,
                count: 0,
            },
            FeatureMoments {
                mean: mu_q,
                second: sigma_q,
                count: 0,
            },
            lambda_reg,
            ConstantMode::None,
        )
    }

    pub fn dim(&self) -> usize {
        self.mu_p.len()
    }

    /// `μ_p − μ_q`.
    pub fn delta(&self) -> DVector<f64> {
        &self.mu_p - &self.mu_q
    }

    /// Matrix added (times `λ`) to both second moments.
    pub fn penalty(&self) -> DMatrix<f64> {
        penalty_identity(
            self.dim(),
            self.constant_mode == ConstantMode::AugmentedUnpenalized,
        )
    }

    /// `(Σ_p + λI', Σ_q + λI')` with `I'` the penalty matrix.
    pub fn regularized(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        if self.lambda_reg == 0.0 {
            return (self.sigma_p.clone(), self.sigma_q.clone());
        }
        let shift = self.penalty() * self.lambda_reg;
        (&self.sigma_p + &shift, &self.sigma_q + &shift)
    }

    /// Copy with a different regularization.
    pub fn with_lambda(&self, lambda_reg: f64) -> Self {
        MomentSet {
            lambda_reg,
            ..self.clone()
        }
    }

    /// Checks `Σ ⪰ μμᵀ` for both distributions.
    pub fn check_psd(&self) -> Result<()> {
        for (mu, sigma) in [(&self.mu_p, &self.sigma_p), (&self.mu_q, &self.sigma_q)] {
            let mut cov = sigma - mu * mu.transpose();
            symmetrize(&mut cov);
            let tr = sigma.trace().abs().max(f64::MIN_POSITIVE);
            let (vals, _) = sym_eigen_sorted(cov);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -1e-8 * tr {
                return Err(Error::NotPsd(min));
            }
        }
        Ok(())
    }

    /// `Ĉ = (Σ̂_p − μ̂_pμ̂_pᵀ)/(n_p − 1) + (Σ̂_q − μ̂_qμ̂_qᵀ)/(n_q − 1)`.
    pub fn mean_difference_covariance(&self) -> Result<DMatrix<f64>> {
        if self.n_p < 2 || self.n_q < 2 {
            return Err(Error::TooFewSamples);
        }
        let cp = &self.sigma_p - &self.mu_p * self.mu_p.transpose();
        let cq = &self.sigma_q - &self.mu_q * self.mu_q.transpose();
        let mut c = cp / (self.n_p as f64 - 1.0) + cq / (self.n_q as f64 - 1.0);
        symmetrize(&mut c);
        Ok(c)
    }
}

/// Empirical moments of `φ` on both samples.
pub fn compute_moments(
    map: &FeatureMap,
    data: &DatasetPair,
    lambda_reg: f64,
    constant_mode: ConstantMode,
) -> Result<MomentSet> {
    let p = FeatureMoments::from_samples(map, &data.x)?;
    let q = FeatureMoments::from_samples(map, &data.y)?;
    MomentSet::new(p, q, lambda_reg, constant_mode)
}

/// Joint moments of `φ₂ ⊗ φ₁` against the product of the marginals.
///
/// `paired` holds `x₁` in its first `map1.input_dim()` columns and `x₂` in the rest.
pub fn kronecker_moments(
    map1: &FeatureMap,
    map2: &FeatureMap,
    paired: &DMatrix<f64>,
    lambda_reg: f64,
) -> Result<MomentSet> {
    kronecker_moments_weighted(map1, map2, paired, None, lambda_reg)
}

/// [`kronecker_moments`] with nonnegative sample weights.
pub fn kronecker_moments_weighted(
    map1: &FeatureMap,
    map2: &FeatureMap,
    paired: &DMatrix<f64>,
    weights: Option<&[f64]>,
    lambda_reg: f64,
) -> Result<MomentSet> {
    let d1 = map1.input_dim();
    let d2 = map2.input_dim();
    if paired.ncols() != d1 + d2 {
        return Err(Error::DimensionMismatch {
            expected: d1 + d2,
            got: paired.ncols(),
        });
    }
    let x1 = paired.columns(0, d1).into_owned();
    let x2 = paired.columns(d1, d2).into_owned();
    let phi1 = map1.feature_matrix(&x1)?;
    let phi2 = map2.feature_matrix(&x2)?;
    let n = paired.nrows();
    let (m1, m2) = (phi1.ncols(), phi2.ncols());
    let mut joint = DMatrix::zeros(n, m1 * m2);
    let mut buf = vec![0.0; m1 * m2];
    for i in 0..n {
        let a: Vec<f64> = phi2.row(i).iter().copied().collect();
        let b: Vec<f64> = phi1.row(i).iter().copied().collect();
        kron_vec(&a, &b, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            joint[(i, j)] = *v;
        }
    }
    let p = FeatureMoments::from_weighted_features(&joint, weights)?;
    let f1 = FeatureMoments::from_weighted_features(&phi1, weights)?;
    let f2 = FeatureMoments::from_weighted_features(&phi2, weights)?;
    let q = FeatureMoments {
        mean: f2.mean.kronecker(&f1.mean),
        second: f2.second.kronecker(&f1.second),
        count: n,
    };
    MomentSet::new(p, q, lambda_reg, ConstantMode::None)
}

/// Per-class moments of `φ(x₁)` with class labels in `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub priors: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub seconds: Vec<DMatrix<f64>>,
    pub counts: Vec<usize>,
    /// `Σ_j π_j μ_j`.
    pub pooled_mean: DVector<f64>,
    /// `Σ_j π_j Σ_j`.
    pub pooled_second: DMatrix<f64>,
    pub n: usize,
    pub lambda_reg: f64,
}

impl ClassMoments {
    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    /// Indices of classes without samples.
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&j| self.priors[j] == 0.0)
            .collect()
    }
}

/// Class priors, class-conditional moments and pooled moments.
pub fn class_conditional_moments(
    map1: &FeatureMap,
    x: &DMatrix<f64>,
    labels: &[usize],
    k: usize,
    lambda_reg: f64,
) -> Result<ClassMoments> {
    class_conditional_moments_weighted(map1, x, labels, None, k, lambda_reg)
}

/// [`class_conditional_moments`] with nonnegative sample weights.
pub fn class_conditional_moments_weighted(
    map1: &FeatureMap,
    x: &DMatrix<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
    k: usize,
    lambda_reg: f64,
) -> Result<ClassMoments> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > k) {
        return Err(Error::InvalidCategory {
            value: bad as f64,
            cardinality: k,
        });
    }
    let phi = map1.feature_matrix(x)?;
    let m = phi.ncols();
    let w_all: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let total: f64 = w_all.iter().sum();
    let mut priors = vec![0.0; k];
    let mut means = vec![DVector::zeros(m); k];
    let mut seconds = vec![DMatrix::zeros(m, m); k];
    let mut counts = vec![0usize; k];
    for j in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == j + 1).collect();
        counts[j] = rows.len();
        let mass: f64 = rows.iter().map(|&i| w_all[i]).sum();
        if rows.is_empty() || mass == 0.0 {
            continue;
        }
        let sub = phi.select_rows(rows.iter());
        let sub_w: Vec<f64> = rows.iter().map(|&i| w_all[i]).collect();
        let fm = FeatureMoments::from_weighted_features(&sub, Some(&sub_w))?;
        priors[j] = mass / total;
        means[j] = fm.mean;
        seconds[j] = fm.second;
    }
    let mut pooled_mean = DVector::zeros(m);
    let mut pooled_second = DMatrix::zeros(m, m);
    for j in 0..k {
        pooled_mean += &means[j] * priors[j];
        pooled_second += &seconds[j] * priors[j];
    }
    Ok(ClassMoments {
        priors,
        means,
        seconds,
        counts,
        pooled_mean,
        pooled_second,
        n,
        lambda_reg,
    })
}

/// Principal-component reduction of `map` on `samples`: the top `r`
/// eigenvectors of the centered feature covariance.
pub fn pca_reduction(map: FeatureMap, samples: &DMatrix<f64>, r: usize) -> Result<FeatureMap> {
    let m = map.output_dim();
    if r == 0 || r > m {
        return Err(Error::InvalidArgument("PCA rank must be in 1..=m"));
    }
    let moments = FeatureMoments::from_samples(&map, samples)?;
    let (_, vecs) = sym_eigen_sorted(moments.covariance());
    let gamma = DMatrix::from_fn(m, r, |i, j| vecs[(i, m - 1 - j)]);
    FeatureMap::reduced(map, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cats(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn one_hot_eval() {
        let map = FeatureMap::one_hot(3);
        assert_eq!(map.eval(&[2.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(map.eval(&[4.0]), Err(Error::InvalidCategory { .. })));
        assert!(matches!(map.eval(&[1.5]), Err(Error::InvalidCategory { .. })));
        assert!(matches!(
            map.eval(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relu_eval() {
        let map = FeatureMap::RandomRelu {
            kappa: 1,
            weights: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            biases: DVector::from_element(1, -0.5),
            seed: 0,
        };
        assert_eq!(map.eval(&[2.0, 9.0]).unwrap(), vec![1.5]);
        let step = FeatureMap::RandomRelu {
            kappa: 0,
            weights: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            biases: DVector::from_column_slice(&[0.0, 0.1]),
            seed: 0,
        };
        assert_eq!(step.eval(&[0.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn product_index() {
        let map = FeatureMap::product(FeatureMap::one_hot(2), FeatureMap::one_hot(2));
        // φ₂ ⊗ φ₁ with x₁ = 1, x₂ = 2 puts the one at 1 · 2 + 0.
        assert_eq!(map.eval(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(map.output_dim(), 4);
    }

    #[test]
    fn random_relu_determinism_and_law() {
        let a = FeatureMap::random_relu(3, 16, 1, 7);
        let b = FeatureMap::random_relu(3, 16, 1, 7);
        let x = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        assert_eq!(a.feature_matrix(&x).unwrap(), b.feature_matrix(&x).unwrap());
        if let FeatureMap::RandomRelu { weights, biases, .. } = a {
            for j in 0..16 {
                let norm2 = weights.row(j).norm_squared() + biases[j] * biases[j];
                assert!((norm2 - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_one_hot_moments() {
        let data = DatasetPair::new(cats(&[1.0, 1.0, 1.0]), cats(&[2.0, 2.0])).unwrap();
        let mom = compute_moments(&FeatureMap::one_hot(3), &data, 0.0, ConstantMode::None).unwrap();
        assert_eq!(mom.mu_p.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(mom.mu_q.as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(mom.sigma_p, DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0, 0.0])));
        assert_eq!(mom.sigma_q, DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 1.0, 0.0])));
    }

    #[test]
    fn identical_datasets() {
        let x = DMatrix::from_fn(300, 1, |i, _| (i as f64 * 0.37).fract());
        let data = DatasetPair::new(x.clone(), x).unwrap();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 3 }, 1);
        let mom = compute_moments(&map, &data, 0.0, ConstantMode::None).unwrap();
        assert_eq!(mom.mu_p, mom.mu_q);
        assert_eq!(mom.sigma_p, mom.sigma_q);
    }

    #[test]
    fn trigonometric_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 1 }, 1);
        let phi = map.feature_matrix(&x).unwrap();
        let mom = FeatureMoments::from_features(&phi).unwrap();
        let target = [1.0, 0.5, 0.5];
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { target[i] } else { 0.0 };
                let prod: Vec<f64> = (0..n).map(|r| phi[(r, i)] * phi[(r, j)]).collect();
                let var = prod.iter().map(|v| (v - expected).powi(2)).sum::<f64>() / n as f64;
                let se = (var / n as f64).sqrt().max(1e-15);
                assert!((mom.second[(i, j)] - expected).abs() <= 3.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn constant_mode_exempts_last_feature() {
        let data = DatasetPair::new(cats(&[1.0, 2.0]), cats(&[2.0, 2.0])).unwrap();
        let mom = compute_moments(
            &FeatureMap::one_hot(2),
            &data,
            0.5,
            ConstantMode::AugmentedUnpenalized,
        )
        .unwrap();
        assert_eq!(mom.dim(), 3);
        let (sp, _) = mom.regularized();
        assert_eq!(sp[(2, 2)], 1.0);
        assert_eq!(sp[(0, 0)], 1.0);
        assert_eq!(sp[(0, 2)], 0.5);
    }

    #[test]
    fn kronecker_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let paired = DMatrix::from_fn(n, 2, |_, j| (rng.random_range(0..if j == 0 { 3 } else { 4 }) + 1) as f64);
        let (m1, m2) = (FeatureMap::one_hot(3), FeatureMap::one_hot(4));
        let mom = kronecker_moments(&m1, &m2, &paired, 0.0).unwrap();
        let s1 = FeatureMoments::from_samples(&m1, &paired.columns(0, 1).into_owned()).unwrap();
        let s2 = FeatureMoments::from_samples(&m2, &paired.columns(1, 1).into_owned()).unwrap();
        let expected = s2.second.kronecker(&s1.second);
        assert!((mom.sigma_q - expected).amax() <= 1e-12);
    }

    #[test]
    fn kronecker_single_and_copy() {
        let (m1, m2) = (FeatureMap::one_hot(3), FeatureMap::one_hot(3));
        let one = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let mom = kronecker_moments(&m1, &m2, &one, 0.0).unwrap();
        assert_eq!(mom.sigma_p.sum(), 1.0);
        assert_eq!(mom.sigma_p[(2 * 3 + 1, 2 * 3 + 1)], 1.0);
        let copy = DMatrix::from_fn(30, 2, |i, _| (i % 3 + 1) as f64);
        let mom = kronecker_moments(&m1, &m2, &copy, 0.0).unwrap();
        for idx in 0..9 {
            let diag = idx / 3 == idx % 3;
            assert_eq!(mom.mu_p[idx] != 0.0, diag);
        }
    }

    #[test]
    fn kronecker_independence_rate() {
        let (m1, m2) = (FeatureMap::one_hot(2), FeatureMap::one_hot(2));
        let mut gaps = vec![];
        for &n in &[1_000usize, 16_000, 256_000] {
            let mut total = 0.0;
            for seed in 0..8 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let paired = DMatrix::from_fn(n, 2, |_, _| (rng.random_range(0..2) + 1) as f64);
                let mom = kronecker_moments(&m1, &m2, &paired, 0.0).unwrap();
                total += mom.delta().norm();
            }
            gaps.push(total / 8.0 * (n as f64).sqrt());
        }
        // √n · ‖μ_p − μ_q‖ stays of constant order.
        for g in &gaps {
            assert!(*g > 0.05 && *g < 3.0, "{gaps:?}");
        }
    }

    #[test]
    fn class_moments_trivial() {
        let map = FeatureMap::custom(1, 1, |_, out| out[0] = 1.0);
        let x = DMatrix::from_element(4, 1, 0.3);
        let cm = class_conditional_moments(&map, &x, &[1, 2, 1, 2], 2, 0.0).unwrap();
        assert_eq!(cm.priors, vec![0.5, 0.5]);
        assert_eq!(cm.means[0][0], 1.0);
        assert_eq!(cm.seconds[1][(0, 0)], 1.0);
        let single = class_conditional_moments(&map, &x, &[2, 2, 2, 2], 2, 0.0).unwrap();
        assert_eq!(single.pooled_mean, single.means[1]);
        assert_eq!(single.pooled_second, single.seconds[1]);
        assert_eq!(single.empty_classes(), vec![0]);
    }

    #[test]
    fn pca_keeps_dominant_direction() {
        let x = DMatrix::from_fn(100, 2, |i, j| if j == 0 { i as f64 } else { 0.01 * (i % 2) as f64 });
        let red = pca_reduction(FeatureMap::explicit(Basis::Linear, 2), &x, 1).unwrap();
        if let FeatureMap::Reduced { gamma, .. } = red {
            assert!((gamma[(0, 0)].abs() - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn mixture_consistency(seed in 0u64..1000, rho_idx in 0usize..4) {
            let rho = [0.0, 0.25, 0.5, 1.0][rho_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (np, nq) = (37usize, 53usize);
            let x = DMatrix::from_fn(np, 1, |_, _| rng.random::<f64>());
            let y = DMatrix::from_fn(nq, 1, |_, _| rng.random::<f64>());
            let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 2 }, 1);
            let p = FeatureMoments::from_samples(&map, &x).unwrap();
            let q = FeatureMoments::from_samples(&map, &y).unwrap();
            let all = DMatrix::from_fn(np + nq, 1, |i, _| if i < np { x[(i, 0)] } else { y[(i - np, 0)] });
            let weights: Vec<f64> = (0..np + nq)
                .map(|i| if i < np { rho / np as f64 } else { (1.0 - rho) / nq as f64 })
                .collect();
            let mixed = FeatureMoments::from_weighted_features(&map.feature_matrix(&all).unwrap(), Some(&weights)).unwrap();
            let direct = FeatureMoments::mix(&p, &q, rho);
            prop_assert!((mixed.second - direct.second).amax() < 1e-12);
            prop_assert!((mixed.mean - direct.mean).amax() < 1e-12);
        }

        #[test]
        fn moments_symmetric_and_dominant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(600, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let map = FeatureMap::random_relu(2, 12, 1, seed);
            let fm = FeatureMoments::from_samples(&map, &x).unwrap();
            prop_assert!((&fm.second - fm.second.transpose()).amax() <= 1e-12);
            let mom = MomentSet::new(fm.clone(), fm, 0.0, ConstantMode::None).unwrap();
            prop_assert!(mom.check_psd().is_ok());
        }
    }
}
