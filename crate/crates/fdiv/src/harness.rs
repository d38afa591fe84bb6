//! Experiment driver: seeded cells run in a work pool, long-format results,
//! summaries with power-law fits, and assertion checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use fdiv_core::baselines::{
    kde_plugin, log_ratio_test_value, pearson_coefficients, pearson_log_ratio, softmax_newton, softmax_scores,
    variational_kl_features,
};
use fdiv_core::features::pca_reduction;
use fdiv_core::learning::{neural_potentials, train_neural, NeuralConfig, SgaConfig};
use fdiv_core::mutual_info::softmax_fit_moments;
use fdiv_core::spectral::potentials_from_spectrum;
use fdiv_core::{
    class_conditional_moments, generalized_eig, ConstantMode, DatasetPair, DivergenceSpec, FeatureMap, FeatureMoments,
    MomentSet, PotentialPair,
};
use fdiv_core::{mi_objective, Basis};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, FdivError, Result};
use crate::formats::{format_float, parse_divergence, FeatureSpec};
use crate::generators::{GeneratorSpec, Sample};

/// Experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(rename = "scaling_1d")]
    Scaling1d,
    #[serde(rename = "torus_2d")]
    Torus2d,
    SoftmaxCompare,
    MiCompare,
    NnLatent,
    PotentialsDemo,
}

/// How `λ` is chosen in each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// `λ = scale · n^exponent`, fixed before seeing the data.
    Schedule { scale: f64, exponent: f64 },
    Fixed(f64),
    /// Candidates ranked on the validation split.
    Grid(Vec<f64>),
}

/// Settings of the one-hidden-layer learner in `nn_latent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralSettings {
    pub hidden: usize,
    pub rank: usize,
    pub epochs: usize,
    pub step: f64,
    pub ema_rate: f64,
    pub moment_refresh: usize,
    /// Weight-decay candidates ranked on the validation split.
    pub lambdas: Vec<f64>,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        NeuralSettings {
            hidden: 50,
            rank: 4,
            epochs: 30,
            step: 0.01,
            ema_rate: 0.01,
            moment_refresh: 10,
            lambdas: vec![1e-4, 1e-3, 1e-2],
        }
    }
}

/// Metric compared by assertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `|D̂ − D|`.
    #[default]
    AbsError,
    /// `|1 − D̂/D|`.
    AbsNormError,
    /// `1 − D̂/D`.
    NormError,
    Estimate,
    Seconds,
}

/// Checks evaluated on the summary; any failure makes the run fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Assertion {
    /// Fitted decay exponent of `estimator` lies in `[min, max]`.
    ExponentBand { estimator: String, min: f64, max: f64 },
    /// Mean metric of `better` ≤ that of `worse` at every `n ≥ min_n`.
    Dominates {
        better: String,
        worse: String,
        #[serde(default)]
        min_n: usize,
        #[serde(default)]
        metric: Metric,
    },
    /// Metric of `numerator` averaged over cells ≤ `factor` × that of `denominator`.
    RatioAtMost {
        numerator: String,
        denominator: String,
        factor: f64,
        #[serde(default)]
        metric: Metric,
    },
    /// `|a − b| ≤ tol · |b|` on mean estimates at the largest `n`.
    RelativeGap { a: String, b: String, tol: f64 },
    /// Mean seconds of `slow` ≥ `factor` × those of `fast`.
    Speedup { fast: String, slow: String, factor: f64 },
}

/// Full experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Label written in the `experiment` column; defaults to the kind.
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    pub generator: GeneratorSpec,
    pub features: Option<FeatureSpec>,
    /// Features for the kernel plug-in; raw inputs when absent.
    pub kde_features: Option<FeatureSpec>,
    pub divergence: String,
    pub estimators: Vec<String>,
    pub n: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub seeds: Option<Vec<u64>>,
    pub lambda: LambdaChoice,
    /// `λ` candidates of the variational baselines; defaults to the `lambda` grid.
    pub variational_lambdas: Option<Vec<f64>>,
    pub bandwidths: Vec<f64>,
    pub validation_size: usize,
    pub test_size: usize,
    /// Append an unpenalized constant feature to the spectral and Pearson fits.
    pub constant: bool,
    /// PCA ranks for `softmax_compare`.
    pub ranks: Vec<usize>,
    pub neural: NeuralSettings,
    /// `ε` in the Pearson log-ratio `log(max(1 + u, 0) + ε)`.
    pub pearson_eps: f64,
    /// Record wall-clock seconds (otherwise 0, keeping output bytes reproducible).
    pub timing: bool,
    pub assertions: Vec<Assertion>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            experiment: ExperimentKind::Scaling1d,
            generator: GeneratorSpec::BernoulliKernel1d { beta: 0.5 },
            features: None,
            kde_features: None,
            divergence: "kl".into(),
            estimators: Vec::new(),
            n: vec![32, 64, 128, 256, 512, 1024],
            replications: 16,
            base_seed: 0,
            seeds: None,
            lambda: LambdaChoice::Grid(log_grid(1e-6, 1.0, 7)),
            variational_lambdas: None,
            bandwidths: log_grid(0.01, 1.0, 9),
            validation_size: 1024,
            test_size: 1024,
            constant: true,
            ranks: vec![4, 8, 16, 32, 64],
            neural: NeuralSettings::default(),
            pearson_eps: 1e-3,
            timing: false,
            assertions: Vec::new(),
        }
    }
}

/// Largest sample size kept by [`Profile::Ci`].
pub const CI_MAX_N: usize = 1 << 10;

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Scale presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// At most 16 replications; sample sizes clamped to [`CI_MAX_N`].
    Ci,
    /// The configuration as written.
    Paper,
}

impl ExperimentConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            serde_json::to_value(self.experiment)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        })
    }

    pub fn apply_profile(mut self, profile: Profile) -> Self {
        if profile == Profile::Ci {
            self.replications = self.replications.min(16);
            if let Some(seeds) = self.seeds.as_mut() {
                seeds.truncate(self.replications);
            }
            for n in self.n.iter_mut() {
                *n = (*n).min(CI_MAX_N);
            }
            self.n.dedup();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FdivError::Config(m.into()));
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("n grid must be nonempty and positive");
        }
        if self.n.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n grid must be strictly increasing");
        }
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.replications {
                return bad("seeds list length must equal replications");
            }
        }
        if self.estimators.is_empty() {
            return bad("estimator list is empty");
        }
        self.generator.validate()?;
        parse_divergence(&self.divergence)?;
        Ok(())
    }

    fn seed(&self, rep: usize, n: usize) -> u64 {
        let base = self.seeds.as_ref().map_or(self.base_seed.wrapping_add(rep as u64), |s| s[rep]);
        base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(n as u64)
    }

    fn has(&self, estimator: &str) -> bool {
        self.estimators.iter().any(|e| e == estimator)
    }

    fn lambda_candidates(&self, n: usize) -> Vec<f64> {
        match &self.lambda {
            LambdaChoice::Schedule { scale, exponent } => vec![scale * (n as f64).powf(*exponent)],
            LambdaChoice::Fixed(l) => vec![*l],
            LambdaChoice::Grid(g) => g.clone(),
        }
    }

    fn variational_candidates(&self, n: usize) -> Vec<f64> {
        self.variational_lambdas.clone().unwrap_or_else(|| self.lambda_candidates(n))
    }

    fn constant_mode(&self) -> ConstantMode {
        if self.constant {
            ConstantMode::AugmentedUnpenalized
        } else {
            ConstantMode::None
        }
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub estimator: String,
    pub n: usize,
    pub replication: usize,
    pub lambda: f64,
    pub estimate: f64,
    pub exact: f64,
    pub norm_error: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl Row {
    fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::AbsError => (self.estimate - self.exact).abs(),
            Metric::AbsNormError => self.norm_error.abs(),
            Metric::NormError => self.norm_error,
            Metric::Estimate => self.estimate,
            Metric::Seconds => self.seconds,
        }
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "estimator",
    "n",
    "replication",
    "lambda",
    "estimate",
    "exact",
    "norm_error",
    "seconds",
    "seed",
];

/// `1 − D̂/D`, or `−D̂` when `D = 0`.
pub fn normalized_error(estimate: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        -estimate
    } else {
        1.0 - estimate / exact
    }
}

/// Per-(estimator, n) aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub estimator: String,
    pub n: usize,
    pub count: usize,
    pub mean_estimate: f64,
    pub mean_abs_error: f64,
    pub stderr_abs_error: f64,
    pub mean_norm_error: f64,
    pub stderr_norm_error: f64,
    pub mean_seconds: f64,
    pub mean_lambda: f64,
}

/// Least-squares fit of `log(error)` against `log n`; the decay is `n^{−σ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub sigma: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Non-positive errors left out of the fit.
    pub excluded: usize,
}

/// Fits `error ≈ C n^{−σ}`; needs at least three positive errors.
pub fn fit_power_law(ns: &[f64], errors: &[f64]) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(&n, &e)| (n.ln(), e.ln()))
        .collect();
    let excluded = ns.len() - pts.len();
    if pts.len() < 3 {
        return Err(FdivError::Config(format!("power-law fit needs ≥3 positive errors, got {}", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 { (sse / (k - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(PowerLawFit {
        sigma: -slope,
        stderr,
        intercept,
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        points: pts.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub exact: Option<f64>,
    pub cells: Vec<SummaryCell>,
    /// Decay exponents of the mean absolute error, per estimator.
    pub exponents: BTreeMap<String, PowerLawFit>,
    pub assertions: Vec<AssertionOutcome>,
    pub failures: Vec<CellFailure>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn cell(&self, estimator: &str, n: usize) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.n == n)
    }
}

/// Rows, summary and optional curves of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub summary: Summary,
    /// Named column blocks written as extra `.dat` files.
    pub curves: Vec<(String, Vec<String>, Vec<Vec<f64>>)>,
}

struct CellOutput {
    rows: Vec<Row>,
    curves: Vec<(String, Vec<String>, Vec<Vec<f64>>)>,
}

struct CellCtx<'a> {
    cfg: &'a ExperimentConfig,
    label: String,
    spec: DivergenceSpec,
    n: usize,
    rep: usize,
    seed: u64,
}

impl CellCtx<'_> {
    fn row(&self, estimator: impl Into<String>, lambda: f64, estimate: f64, exact: f64, seconds: f64) -> Row {
        Row {
            experiment: self.label.clone(),
            estimator: estimator.into(),
            n: self.n,
            replication: self.rep,
            lambda,
            estimate,
            exact,
            norm_error: normalized_error(estimate, exact),
            seconds: if self.cfg.timing { seconds } else { 0.0 },
            seed: self.seed,
        }
    }

    fn pair(&self, n: usize, stream: u64) -> Result<DatasetPair> {
        match self.cfg.generator.generate(n, self.seed.wrapping_add(stream))? {
            Sample::Pair(d) => Ok(d),
            _ => Err(FdivError::Config("experiment needs a two-sample generator".into())),
        }
    }

    fn feature_map(&self, input_dim: usize, default: FeatureSpec) -> Result<FeatureMap> {
        let spec = self.cfg.features.clone().unwrap_or(default);
        reseeded(&spec, self.seed).build(input_dim)
    }
}

/// Replaces random-feature seeds by `seed`-derived ones so replications use independent features.
fn reseeded(spec: &FeatureSpec, seed: u64) -> FeatureSpec {
    match spec {
        FeatureSpec::RandomRelu { kappa, m, seed: s } => FeatureSpec::RandomRelu {
            kappa: *kappa,
            m: *m,
            seed: s.wrapping_add(seed),
        },
        FeatureSpec::Compose { inner, outer } => FeatureSpec::Compose {
            inner: Box::new(reseeded(inner, seed)),
            outer: Box::new(reseeded(outer, seed)),
        },
        FeatureSpec::Product { first, second, split } => FeatureSpec::Product {
            first: Box::new(reseeded(first, seed)),
            second: Box::new(reseeded(second, seed.wrapping_add(1))),
            split: *split,
        },
        other => other.clone(),
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// `(v, w)` of quadratic potentials for each row of a feature matrix.
pub fn potentials_on_features(pair: &PotentialPair, phi: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let phi = with_constant(phi, pair.constant_mode);
    let lin = &phi * &pair.c * 2.0;
    let pm = &phi * &pair.m;
    let pn = &phi * &pair.n;
    let v = DVector::from_fn(phi.nrows(), |i, _| pm.row(i).dot(&phi.row(i)) + lin[i]);
    let w = DVector::from_fn(phi.nrows(), |i, _| pn.row(i).dot(&phi.row(i)) - lin[i]);
    (v, w)
}

fn with_constant(phi: &DMatrix<f64>, mode: ConstantMode) -> DMatrix<f64> {
    match mode {
        ConstantMode::None => phi.clone(),
        ConstantMode::AugmentedUnpenalized => phi.clone().insert_column(phi.ncols(), 1.0),
    }
}

/// Feature matrices of a train/validation/test split.
struct Split {
    train_x: DMatrix<f64>,
    train_y: DMatrix<f64>,
    val_x: DMatrix<f64>,
    val_y: DMatrix<f64>,
    test_x: DMatrix<f64>,
    test_y: DMatrix<f64>,
}

impl Split {
    fn new(map: &FeatureMap, train: &DatasetPair, val: &DatasetPair, test: &DatasetPair) -> Result<Self> {
        let f = |m: &DMatrix<f64>| map.feature_matrix(m);
        Ok(Split {
            train_x: f(&train.x)?,
            train_y: f(&train.y)?,
            val_x: f(&val.x)?,
            val_y: f(&val.y)?,
            test_x: f(&test.x)?,
            test_y: f(&test.y)?,
        })
    }
}

/// Picks the candidate whose validation estimate is closest to `exact` in relative terms.
fn select_by_validation<T>(
    candidates: &[f64],
    exact: f64,
    fit: impl Fn(f64) -> Result<T> + Sync,
    validate: impl Fn(&T) -> f64 + Sync,
) -> Result<(f64, T)>
where
    T: Send,
{
    let fitted: Vec<(f64, Result<T>)> = candidates.par_iter().map(|&c| (c, fit(c))).collect();
    let mut best: Option<(f64, f64, T)> = None;
    let mut last_err = None;
    for (c, res) in fitted {
        match res {
            Ok(model) => {
                let score = normalized_error(validate(&model), exact).abs();
                let score = if score.is_finite() { score } else { f64::INFINITY };
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, c, model));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, c, m)), _) => Ok((c, m)),
        (None, Some(e)) => Err(e),
        (None, None) => Err(FdivError::Config("empty hyperparameter grid".into())),
    }
}

fn moment_set(phi_x: &DMatrix<f64>, phi_y: &DMatrix<f64>, mode: ConstantMode) -> Result<MomentSet> {
    Ok(MomentSet::new(FeatureMoments::from_features(phi_x)?, FeatureMoments::from_features(phi_y)?, 0.0, mode)?)
}

fn spectral_fit(moments: &MomentSet, lambda: f64, spec: &DivergenceSpec) -> Result<PotentialPair> {
    let ms = moments.with_lambda(lambda);
    let spectrum = generalized_eig(&ms)?;
    Ok(potentials_from_spectrum(&spectrum, &ms, spec))
}

fn spectral_star_value(pair: &PotentialPair, phi_x: &DMatrix<f64>, phi_y: &DMatrix<f64>) -> f64 {
    let (v, _) = potentials_on_features(pair, phi_x);
    let (vq, _) = potentials_on_features(pair, phi_y);
    log_ratio_test_value(&v, &vq)
}

fn pearson_fit(moments: &MomentSet, lambda: f64) -> Result<DVector<f64>> {
    Ok(pearson_coefficients(&moments.with_lambda(lambda))?)
}

/// Runs every two-sample estimator requested for a train/validation/test split.
fn two_sample_estimators(
    ctx: &CellCtx,
    split: &Split,
    raw: (&DatasetPair, &DatasetPair, &DatasetPair),
    exact: f64,
    rows: &mut Vec<Row>,
) -> Result<()> {
    let cfg = ctx.cfg;
    let mode = cfg.constant_mode();
    let lambdas = cfg.lambda_candidates(ctx.n);
    let (train_ms, val_ms, test_ms) = (
        moment_set(&split.train_x, &split.train_y, mode)?,
        moment_set(&split.val_x, &split.val_y, mode)?,
        moment_set(&split.test_x, &split.test_y, mode)?,
    );
    if cfg.has("kl") {
        let ((lam, pair), secs) = timed(|| {
            select_by_validation(&lambdas, exact, |l| spectral_fit(&train_ms, l, &ctx.spec), |p| p.value_on_moments(&val_ms))
        })?;
        rows.push(ctx.row("kl", lam, pair.value_on_moments(&test_ms), exact, secs));
    }
    if cfg.has("kl_star") {
        let ((lam, pair), secs) = timed(|| {
            select_by_validation(
                &lambdas,
                exact,
                |l| spectral_fit(&train_ms, l, &ctx.spec),
                |p| spectral_star_value(p, &split.val_x, &split.val_y),
            )
        })?;
        let star = spectral_star_value(&pair, &split.test_x, &split.test_y);
        rows.push(ctx.row("kl_star", lam, star, exact, secs));
    }
    if cfg.has("pearson") {
        let eps = cfg.pearson_eps;
        let value = |theta: &DVector<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>| {
            let (x, y) = (with_constant(x, mode), with_constant(y, mode));
            log_ratio_test_value(&pearson_log_ratio(theta, &x, eps), &pearson_log_ratio(theta, &y, eps))
        };
        let ((lam, theta), secs) = timed(|| {
            select_by_validation(
                &lambdas,
                exact,
                |l| pearson_fit(&train_ms, l),
                |t| value(t, &split.val_x, &split.val_y),
            )
        })?;
        rows.push(ctx.row("pearson", lam, value(&theta, &split.test_x, &split.test_y), exact, secs));
    }
    if cfg.has("variational") {
        let candidates = cfg.variational_candidates(ctx.n);
        let value = |sol: &fdiv_core::VariationalSolution, x: &DMatrix<f64>, y: &DMatrix<f64>| {
            log_ratio_test_value(&sol.log_ratio(x, &split.train_y), &sol.log_ratio(y, &split.train_y))
        };
        let ((lam, sol), secs) = timed(|| {
            select_by_validation(
                &candidates,
                exact,
                |l| Ok(variational_kl_features(&split.train_x, &split.train_y, l)?),
                |s| value(s, &split.val_x, &split.val_y),
            )
        })?;
        rows.push(ctx.row("variational", lam, value(&sol, &split.test_x, &split.test_y), exact, secs));
    }
    if cfg.has("kde") {
        let (train, val, test) = raw;
        let embed = |d: &DatasetPair| -> Result<DatasetPair> {
            match &cfg.kde_features {
                None => Ok(d.clone()),
                Some(spec) => {
                    let map = spec.build(d.dim())?;
                    Ok(DatasetPair::new(map.feature_matrix(&d.x)?, map.feature_matrix(&d.y)?)?)
                }
            }
        };
        let (train, val, test) = (embed(train)?, embed(val)?, embed(test)?);
        let ((bw, _), secs) = timed(|| {
            select_by_validation(
                &cfg.bandwidths,
                exact,
                |h| Ok(kde_plugin(&train, h, Some(&val.x))?.value),
                |v| *v,
            )
        })?;
        let est = kde_plugin(&train, bw, Some(&test.x))?.value;
        rows.push(ctx.row("kde", bw, est, exact, secs));
    }
    Ok(())
}

fn run_scaling(ctx: &CellCtx) -> Result<CellOutput> {
    let exact = ctx.cfg.generator.exact()?;
    let data = ctx.pair(ctx.n, 0)?;
    let map = ctx.feature_map(data.dim(), FeatureSpec::BernoulliKernel { max_freq: 64 })?;
    let lambda = ctx.cfg.lambda_candidates(ctx.n)[0];
    let (report, secs) = timed(|| {
        let ms = fdiv_core::compute_moments(&map, &data, lambda, ctx.cfg.constant_mode())?;
        Ok(fdiv_core::estimate_from_moments(&ms, &ctx.spec, true)?)
    })?;
    let mut rows = Vec::new();
    if ctx.cfg.has("regular") {
        rows.push(ctx.row("regular", lambda, report.value, exact, secs));
    }
    if ctx.cfg.has("debiased") {
        rows.push(ctx.row("debiased", lambda, report.debiased_value, exact, secs));
    }
    Ok(CellOutput { rows, curves: Vec::new() })
}

fn run_two_sample(ctx: &CellCtx, default_features: FeatureSpec) -> Result<CellOutput> {
    let cfg = ctx.cfg;
    let exact = cfg.generator.exact()?;
    let train = ctx.pair(ctx.n, 0)?;
    let val = ctx.pair(cfg.validation_size, 1_000_003)?;
    let test = ctx.pair(cfg.test_size, 2_000_003)?;
    let map = ctx.feature_map(train.dim(), default_features)?;
    let split = Split::new(&map, &train, &val, &test)?;
    let mut rows = Vec::new();
    two_sample_estimators(ctx, &split, (&train, &val, &test), exact, &mut rows)?;
    if cfg.has("kl_nn") {
        let settings = &cfg.neural;
        let fit = |lambda: f64| -> Result<(fdiv_core::learning::NeuralState, PotentialPair)> {
            let config = NeuralConfig {
                hidden: settings.hidden,
                rank: settings.rank,
                lambda,
                epochs: settings.epochs,
                sga: SgaConfig {
                    step: settings.step,
                    ema_rate: settings.ema_rate,
                    moment_refresh: settings.moment_refresh,
                    seed: ctx.seed,
                    ..SgaConfig::default()
                },
            };
            let (_, _, state) = train_neural(&train, &config, &ctx.spec)?;
            let pair = neural_potentials(&state, &train, lambda, &ctx.spec)?;
            Ok((state, pair))
        };
        let test_value = |pair: &PotentialPair, d: &DatasetPair| pair.test_value(d).unwrap_or(f64::NEG_INFINITY);
        let ((lam, (_, pair)), secs) = timed(|| select_by_validation(&settings.lambdas, exact, fit, |m| test_value(&m.1, &val)))?;
        rows.push(ctx.row("kl_nn", lam, test_value(&pair, &test), exact, secs));
    }
    Ok(CellOutput { rows, curves: Vec::new() })
}

fn run_softmax(ctx: &CellCtx) -> Result<CellOutput> {
    let cfg = ctx.cfg;
    let exact = cfg.generator.exact()?;
    let (x, labels, k) = match cfg.generator.generate(ctx.n, ctx.seed)? {
        Sample::Labeled { x, labels, k } => (x, labels, k),
        _ => return Err(FdivError::Config("softmax_compare needs a labeled generator".into())),
    };
    let (tx, tlabels) = match cfg.generator.generate(cfg.test_size, ctx.seed.wrapping_add(2_000_003))? {
        Sample::Labeled { x, labels, .. } => (x, labels),
        _ => unreachable!(),
    };
    let dictionary = ctx.feature_map(
        x.ncols(),
        FeatureSpec::Compose {
            inner: Box::new(FeatureSpec::Circle),
            outer: Box::new(FeatureSpec::RandomRelu { kappa: 1, m: 512, seed: 0 }),
        },
    )?;
    let r_max = *cfg.ranks.iter().max().ok_or_else(|| FdivError::Config("ranks list is empty".into()))?;
    let pca = pca_reduction(dictionary, &x, r_max)?;
    let (phi_all, tphi_all) = (pca.feature_matrix(&x)?, pca.feature_matrix(&tx)?);
    let lambda = cfg.lambda_candidates(ctx.n)[0];
    let mut rows = Vec::new();
    for &r in &cfg.ranks {
        let take = |m: &DMatrix<f64>| m.columns(0, r).into_owned().insert_column(r, 1.0);
        let (phi, tphi) = (take(&phi_all), take(&tphi_all));
        let ident = FeatureMap::explicit(Basis::Linear, r + 1);
        if cfg.has("spectral") {
            let (model, secs) = timed(|| {
                let cm = class_conditional_moments(&ident, &phi, &labels, k, lambda)?;
                Ok(softmax_fit_moments(&cm, ident.clone(), &ctx.spec)?)
            })?;
            let train = mi_objective(&model.score_matrix_from_features(&phi), &labels, &model.priors);
            let test = mi_objective(&model.score_matrix_from_features(&tphi), &tlabels, &model.priors);
            rows.push(ctx.row(format!("spectral_train_r{r}"), lambda, train, exact, secs));
            rows.push(ctx.row(format!("spectral_test_r{r}"), lambda, test, exact, secs));
        }
        if cfg.has("softmax") {
            let (sol, secs) = timed(|| Ok(softmax_newton(&phi, &labels, k, lambda)?))?;
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l - 1] += 1);
            let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();
            let train = mi_objective(&softmax_scores(&sol, &phi, k), &labels, &priors);
            let test = mi_objective(&softmax_scores(&sol, &tphi, k), &tlabels, &priors);
            rows.push(ctx.row(format!("softmax_train_r{r}"), lambda, train, exact, secs));
            rows.push(ctx.row(format!("softmax_test_r{r}"), lambda, test, exact, secs));
        }
    }
    Ok(CellOutput { rows, curves: Vec::new() })
}

/// Rows `φ₂(x₂) ⊗ φ₁(x₁)` of paired feature matrices.
fn kron_rows(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>) -> DMatrix<f64> {
    let m1 = phi1.ncols();
    DMatrix::from_fn(phi1.nrows(), m1 * phi2.ncols(), |i, idx| phi2[(i, idx / m1)] * phi1[(i, idx % m1)])
}

/// Kronecker moment set of paired feature matrices (product-of-marginals for `q`).
fn kron_moment_set(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>, lambda: f64) -> Result<MomentSet> {
    let p = FeatureMoments::from_features(&kron_rows(phi1, phi2))?;
    let f1 = FeatureMoments::from_features(phi1)?;
    let f2 = FeatureMoments::from_features(phi2)?;
    let q = FeatureMoments {
        mean: f2.mean.kronecker(&f1.mean),
        second: f2.second.kronecker(&f1.second),
        count: phi1.nrows(),
    };
    Ok(MomentSet::new(p, q, lambda, ConstantMode::None)?)
}

fn run_mi(ctx: &CellCtx) -> Result<CellOutput> {
    let cfg = ctx.cfg;
    let exact = cfg.generator.exact()?;
    let paired = |n: usize, stream: u64| -> Result<(DMatrix<f64>, usize)> {
        match cfg.generator.generate(n, ctx.seed.wrapping_add(stream))? {
            Sample::Paired { xy, split } => Ok((xy, split)),
            _ => Err(FdivError::Config("mi_compare needs a paired generator".into())),
        }
    };
    let (train, split) = paired(ctx.n, 0)?;
    let (val, _) = paired(cfg.validation_size, 1_000_003)?;
    let (test, _) = paired(cfg.test_size, 2_000_003)?;
    let default = FeatureSpec::Compose {
        inner: Box::new(FeatureSpec::Circle),
        outer: Box::new(FeatureSpec::RandomRelu { kappa: 1, m: 16, seed: 0 }),
    };
    let spec = reseeded(cfg.features.as_ref().unwrap_or(&default), ctx.seed);
    let map1 = spec.build(split)?;
    let map2 = reseeded(&spec, 1).build(train.ncols() - split)?;
    let feats = |xy: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            map1.feature_matrix(&xy.columns(0, split).into_owned())?,
            map2.feature_matrix(&xy.columns(split, xy.ncols() - split).into_owned())?,
        ))
    };
    let (tr1, tr2) = feats(&train)?;
    let (va1, va2) = feats(&val)?;
    let (te1, te2) = feats(&test)?;
    let lambdas = cfg.lambda_candidates(ctx.n);
    let mut rows = Vec::new();
    if cfg.has("spectral") {
        let val_ms = kron_moment_set(&va1, &va2, 0.0)?;
        let test_ms = kron_moment_set(&te1, &te2, 0.0)?;
        let ((lam, pair), secs) = timed(|| {
            select_by_validation(
                &lambdas,
                exact,
                |l| {
                    let ms = kron_moment_set(&tr1, &tr2, l)?;
                    let spectrum = generalized_eig(&ms)?;
                    Ok(potentials_from_spectrum(&spectrum, &ms, &ctx.spec))
                },
                |p| p.value_on_moments(&val_ms),
            )
        })?;
        rows.push(ctx.row("spectral", lam, pair.value_on_moments(&test_ms), exact, secs));
    }
    if cfg.has("variational") {
        // Product-of-marginals draws from cyclic shifts of the second variable.
        let shifted = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
            let n = a.nrows();
            let shifts = [1, 2, 3, 5].iter().map(|s| s % n.max(1)).filter(|&s| s != 0).collect::<Vec<_>>();
            let shifts = if shifts.is_empty() { vec![0] } else { shifts };
            let mut rows_a = DMatrix::zeros(n * shifts.len(), a.ncols());
            let mut rows_b = DMatrix::zeros(n * shifts.len(), b.ncols());
            for (s_idx, &s) in shifts.iter().enumerate() {
                for i in 0..n {
                    rows_a.set_row(s_idx * n + i, &a.row(i));
                    rows_b.set_row(s_idx * n + i, &b.row((i + s) % n));
                }
            }
            kron_rows(&rows_a, &rows_b)
        };
        let (trp, trq) = (kron_rows(&tr1, &tr2), shifted(&tr1, &tr2));
        let (vap, vaq) = (kron_rows(&va1, &va2), shifted(&va1, &va2));
        let (tep, teq) = (kron_rows(&te1, &te2), shifted(&te1, &te2));
        let value = |sol: &fdiv_core::VariationalSolution, p: &DMatrix<f64>, q: &DMatrix<f64>| {
            log_ratio_test_value(&sol.log_ratio(p, &trq), &sol.log_ratio(q, &trq))
        };
        let candidates = cfg.variational_candidates(ctx.n);
        let ((lam, sol), secs) = timed(|| {
            select_by_validation(&candidates, exact, |l| Ok(variational_kl_features(&trp, &trq, l)?), |s| value(s, &vap, &vaq))
        })?;
        rows.push(ctx.row("variational", lam, value(&sol, &tep, &teq), exact, secs));
    }
    Ok(CellOutput { rows, curves: Vec::new() })
}

fn run_potentials_demo(ctx: &CellCtx) -> Result<CellOutput> {
    let cfg = ctx.cfg;
    let exact = cfg.generator.exact()?;
    let train = ctx.pair(ctx.n, 0)?;
    let val = ctx.pair(cfg.validation_size, 1_000_003)?;
    let test = ctx.pair(cfg.test_size, 2_000_003)?;
    if train.dim() != 1 {
        return Err(FdivError::Config("potentials_demo needs a one-dimensional generator".into()));
    }
    let map = ctx.feature_map(1, FeatureSpec::Trigonometric { max_freq: 4 })?;
    let split = Split::new(&map, &train, &val, &test)?;
    let mut rows = Vec::new();
    two_sample_estimators(ctx, &split, (&train, &val, &test), exact, &mut rows)?;
    let mode = cfg.constant_mode();
    let lambda_of = |name: &str| rows.iter().find(|r| r.estimator == name).map(|r| r.lambda);
    let grid = DMatrix::from_fn(200, 1, |i, _| (i as f64 + 0.5) / 200.0);
    let phi = map.feature_matrix(&grid)?;
    let mut header = vec!["x".to_string(), "log_ratio".into(), "w_exact".into()];
    let mut cols: Vec<Vec<f64>> = vec![
        grid.iter().copied().collect(),
        grid.iter().map(|&x| cfg.generator.log_ratio(&[x]).unwrap_or(f64::NAN)).collect(),
        grid.iter().map(|&x| 1.0 - cfg.generator.log_ratio(&[x]).map_or(f64::NAN, f64::exp)).collect(),
    ];
    if let Some(l) = lambda_of("kl") {
        let pair = spectral_fit(&moment_set(&split.train_x, &split.train_y, mode)?, l, &ctx.spec)?;
        let (v, w) = potentials_on_features(&pair, &phi);
        header.extend(["kl_v".into(), "kl_w".into()]);
        cols.push(v.iter().copied().collect());
        cols.push(w.iter().copied().collect());
    }
    if let Some(l) = lambda_of("pearson") {
        let theta = pearson_fit(&moment_set(&split.train_x, &split.train_y, mode)?, l)?;
        header.push("pearson_log_ratio".into());
        cols.push(pearson_log_ratio(&theta, &with_constant(&phi, mode), cfg.pearson_eps).iter().copied().collect());
    }
    if let Some(l) = lambda_of("variational") {
        let sol = variational_kl_features(&split.train_x, &split.train_y, l)?;
        header.push("variational_log_ratio".into());
        cols.push(sol.log_ratio(&phi, &split.train_y).iter().copied().collect());
    }
    let table: Vec<Vec<f64>> = (0..grid.nrows()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let name = format!("{}_curves_n{}_rep{}", ctx.label, ctx.n, ctx.rep);
    Ok(CellOutput {
        rows,
        curves: vec![(name, header, table)],
    })
}

fn run_cell(ctx: &CellCtx) -> Result<CellOutput> {
    match ctx.cfg.experiment {
        ExperimentKind::Scaling1d => run_scaling(ctx),
        ExperimentKind::Torus2d => run_two_sample(
            ctx,
            FeatureSpec::Compose {
                inner: Box::new(FeatureSpec::Circle),
                outer: Box::new(FeatureSpec::RandomRelu { kappa: 1, m: 512, seed: 0 }),
            },
        ),
        ExperimentKind::NnLatent => run_two_sample(ctx, FeatureSpec::RandomRelu { kappa: 1, m: 512, seed: 0 }),
        ExperimentKind::SoftmaxCompare => run_softmax(ctx),
        ExperimentKind::MiCompare => run_mi(ctx),
        ExperimentKind::PotentialsDemo => run_potentials_demo(ctx),
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn summarize(label: &str, exact: Option<f64>, rows: &[Row], failures: Vec<CellFailure>, assertions: &[Assertion]) -> Summary {
    let mut groups: BTreeMap<(String, usize), Vec<&Row>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.estimator.clone(), row.n)).or_default().push(row);
    }
    let cells: Vec<SummaryCell> = groups
        .into_iter()
        .map(|((estimator, n), rs)| {
            let col = |m: Metric| rs.iter().map(|r| r.metric(m)).collect::<Vec<_>>();
            let (mean_abs_error, stderr_abs_error) = mean_and_stderr(&col(Metric::AbsError));
            let (mean_norm_error, stderr_norm_error) = mean_and_stderr(&col(Metric::NormError));
            SummaryCell {
                estimator,
                n,
                count: rs.len(),
                mean_estimate: mean_and_stderr(&col(Metric::Estimate)).0,
                mean_abs_error,
                stderr_abs_error,
                mean_norm_error,
                stderr_norm_error,
                mean_seconds: mean_and_stderr(&col(Metric::Seconds)).0,
                mean_lambda: rs.iter().map(|r| r.lambda).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect();
    let mut exponents = BTreeMap::new();
    let estimators: Vec<String> = {
        let mut e: Vec<String> = cells.iter().map(|c| c.estimator.clone()).collect();
        e.dedup();
        e
    };
    for est in &estimators {
        let pts: Vec<&SummaryCell> = cells.iter().filter(|c| &c.estimator == est).collect();
        let ns: Vec<f64> = pts.iter().map(|c| c.n as f64).collect();
        let errs: Vec<f64> = pts.iter().map(|c| c.mean_abs_error).collect();
        if let Ok(fit) = fit_power_law(&ns, &errs) {
            exponents.insert(est.clone(), fit);
        }
    }
    let mut summary = Summary {
        experiment: label.to_string(),
        exact,
        cells,
        exponents,
        assertions: Vec::new(),
        failures,
    };
    summary.assertions = assertions.iter().map(|a| check_assertion(a, &summary, rows)).collect();
    summary
}

fn mean_metric(rows: &[Row], estimator: &str, metric: Metric, n: Option<usize>) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.estimator == estimator && n.is_none_or(|n| r.n == n))
        .map(|r| r.metric(metric))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn check_assertion(assertion: &Assertion, summary: &Summary, rows: &[Row]) -> AssertionOutcome {
    let (passed, detail) = match assertion {
        Assertion::ExponentBand { estimator, min, max } => match summary.exponents.get(estimator) {
            Some(fit) => (
                fit.sigma >= *min && fit.sigma <= *max,
                format!("sigma = {:.4} ± {:.4}, band [{min}, {max}]", fit.sigma, fit.stderr),
            ),
            None => (false, format!("no power-law fit for {estimator}")),
        },
        Assertion::Dominates {
            better,
            worse,
            min_n,
            metric,
        } => {
            let mut ns: Vec<usize> = rows.iter().filter(|r| r.n >= *min_n).map(|r| r.n).collect();
            ns.sort_unstable();
            ns.dedup();
            let mut ok = !ns.is_empty();
            let mut parts = Vec::new();
            for n in ns {
                match (mean_metric(rows, better, *metric, Some(n)), mean_metric(rows, worse, *metric, Some(n))) {
                    (Some(b), Some(w)) => {
                        ok &= b <= w;
                        parts.push(format!("n={n}: {b:.4e} vs {w:.4e}"));
                    }
                    _ => {
                        ok = false;
                        parts.push(format!("n={n}: missing cells"));
                    }
                }
            }
            (ok, parts.join("; "))
        }
        Assertion::RatioAtMost {
            numerator,
            denominator,
            factor,
            metric,
        } => match (mean_metric(rows, numerator, *metric, None), mean_metric(rows, denominator, *metric, None)) {
            (Some(a), Some(b)) => (a <= factor * b, format!("{a:.4e} vs {factor} × {b:.4e}")),
            _ => (false, "missing cells".into()),
        },
        Assertion::RelativeGap { a, b, tol } => {
            let n = rows.iter().map(|r| r.n).max();
            match (
                n.and_then(|n| mean_metric(rows, a, Metric::Estimate, Some(n))),
                n.and_then(|n| mean_metric(rows, b, Metric::Estimate, Some(n))),
            ) {
                (Some(x), Some(y)) => {
                    let gap = (x - y).abs() / y.abs();
                    (gap <= *tol, format!("{x:.6} vs {y:.6}: relative gap {gap:.4}"))
                }
                _ => (false, "missing cells".into()),
            }
        }
        Assertion::Speedup { fast, slow, factor } => {
            match (mean_metric(rows, fast, Metric::Seconds, None), mean_metric(rows, slow, Metric::Seconds, None)) {
                (Some(f), Some(s)) => (s >= factor * f, format!("{s:.4e} s vs {f:.4e} s: speedup {:.2}", s / f)),
                _ => (false, "missing cells".into()),
            }
        }
    };
    AssertionOutcome {
        assertion: assertion.clone(),
        passed,
        detail,
    }
}

/// Executes every `(n, replication)` cell in parallel and aggregates the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = parse_divergence(&cfg.divergence)?;
    let label = cfg.label();
    let cells: Vec<(usize, usize)> = cfg.n.iter().flat_map(|&n| (0..cfg.replications).map(move |r| (n, r))).collect();
    let outputs: Vec<(usize, usize, u64, Result<CellOutput>)> = cells
        .par_iter()
        .map(|&(n, rep)| {
            let ctx = CellCtx {
                cfg,
                label: label.clone(),
                spec: spec.clone(),
                n,
                rep,
                seed: cfg.seed(rep, n),
            };
            (n, rep, ctx.seed, run_cell(&ctx))
        })
        .collect();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for (n, replication, seed, out) in outputs {
        match out {
            Ok(o) => {
                rows.extend(o.rows);
                curves.extend(o.curves);
            }
            Err(e) => failures.push(CellFailure {
                n,
                replication,
                seed,
                message: e.to_string(),
            }),
        }
    }
    rows.sort_by(|a, b| (&a.estimator, a.n, a.replication).cmp(&(&b.estimator, b.n, b.replication)));
    curves.sort_by(|a, b| a.0.cmp(&b.0));
    let exact = cfg.generator.exact().ok();
    let summary = summarize(&label, exact, &rows, failures, &cfg.assertions);
    Ok(RunOutput { rows, summary, curves })
}

/// Long-format CSV with shortest round-trip floats.
pub fn write_results_csv<W: std::io::Write>(out: W, rows: &[Row]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in rows {
        writer.write_record([
            r.experiment.clone(),
            r.estimator.clone(),
            r.n.to_string(),
            r.replication.to_string(),
            format_float(r.lambda),
            format_float(r.estimate),
            format_float(r.exact),
            format_float(r.norm_error),
            format_float(r.seconds),
            r.seed.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| io_error(Path::new("<csv>"), e))?;
    Ok(())
}

/// Whitespace-separated table with a `#` header line.
pub fn write_dat<W: std::io::Write>(mut out: W, header: &[String], table: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(out, "# {}", header.join(" "))?;
    for row in table {
        let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Per-`n` table of mean estimate, mean absolute error and its standard error for each estimator.
pub fn summary_table(summary: &Summary) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut estimators: Vec<&str> = summary.cells.iter().map(|c| c.estimator.as_str()).collect();
    estimators.sort_unstable();
    estimators.dedup();
    let mut ns: Vec<usize> = summary.cells.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut header = vec!["n".to_string()];
    for e in &estimators {
        header.extend([format!("{e}_mean"), format!("{e}_abs_err"), format!("{e}_abs_err_se"), format!("{e}_norm_err")]);
    }
    let table = ns
        .iter()
        .map(|&n| {
            let mut row = vec![n as f64];
            for e in &estimators {
                match summary.cell(e, n) {
                    Some(c) => row.extend([c.mean_estimate, c.mean_abs_error, c.stderr_abs_error, c.mean_norm_error]),
                    None => row.extend([f64::NAN; 4]),
                }
            }
            row
        })
        .collect();
    (header, table)
}

/// Writes `results.csv`, `summary.json`, `<label>.dat` and any curve files into `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let csv_path = dir.join("results.csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    write_results_csv(file, &output.rows)?;
    crate::formats::write_json(&dir.join("summary.json"), &output.summary)?;
    let (header, table) = summary_table(&output.summary);
    let dat = dir.join(format!("{}.dat", output.summary.experiment));
    let file = fs::File::create(&dat).map_err(|e| io_error(&dat, e))?;
    write_dat(file, &header, &table).map_err(|e| io_error(&dat, e))?;
    for (name, header, table) in &output.curves {
        let path = dir.join(format!("{name}.dat"));
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        write_dat(file, header, table).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}
