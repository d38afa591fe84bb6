use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdiv::formats::{
    parse_divergence, read_json, read_matrix_csv, write_json, write_rows_csv, DenseMatrix, FeatureSpec, LinearCheckpoint,
    MiCheckpoint, NeuralCheckpoint, PotentialsRecord, ReportRecord, SoftmaxRecord,
};
use fdiv::harness::{run_experiment, write_outputs, ExperimentConfig, Profile};
use fdiv::{FdivError, Result};
use fdiv_core::baselines::{kde_plugin, pearson_closed_form, softmax_newton, softmax_scores, variational_kl};
use fdiv_core::learning::{
    init_gamma, mi_feature_learning_from, mm_linear_fit, neural_epoch, neural_report, reduced_value, sga_epoch, whiten,
    LinearSgaState, NeuralState,
};
use fdiv_core::{
    compute_moments, estimate, fit_potentials, mi_estimate, mi_objective, softmax_fit, ConstantMode, DatasetPair,
    FeatureMap, NeuralConfig, SgaConfig,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "fdiv", version, about = "Closed-form spectral f-divergence estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral estimate from two samples.
    Estimate(EstimateArgs),
    /// Fits potentials and evaluates `(v, w)` at the rows of `--eval`.
    Potentials {
        #[command(flatten)]
        base: EstimateArgs,
        #[arg(long)]
        eval: PathBuf,
        /// Also write the fitted potentials as JSON.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Mutual information of paired samples through Kronecker features.
    Mi(MiArgs),
    /// Closed-form per-class model.
    #[command(subcommand)]
    Softmax(SoftmaxCommand),
    /// Feature learning with checkpoints.
    Learn {
        kind: LearnKind,
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Comparison estimators.
    Baseline {
        kind: BaselineKind,
        #[command(flatten)]
        args: BaselineArgs,
    },
    /// Runs a configured experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "ci")]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value = "kl")]
    divergence: String,
    /// Feature specification: inline JSON or a path to a JSON file.
    #[arg(long)]
    features: String,
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long)]
    debias: bool,
    /// Append an unpenalized constant feature.
    #[arg(long)]
    constant: bool,
}

#[derive(Args)]
struct MiArgs {
    #[arg(long, default_value = "kl")]
    divergence: String,
    #[arg(long)]
    features1: String,
    #[arg(long)]
    features2: String,
    /// CSV of paired rows `(x₁, x₂)`.
    #[arg(long)]
    data: PathBuf,
    /// Number of leading columns forming `x₁`.
    #[arg(long)]
    split: usize,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long)]
    debias: bool,
}

#[derive(Subcommand)]
enum SoftmaxCommand {
    /// Fits the model and writes it as JSON.
    Fit {
        #[arg(long, default_value = "kl")]
        divergence: String,
        #[arg(long)]
        features: String,
        #[arg(long)]
        x: PathBuf,
        /// Single-column CSV of labels in `1..=k`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes per-class scores for each row of `--x` as CSV.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnKind {
    Linear,
    Neural,
    Mi,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Variational,
    VariationalSquare,
    Softmax,
    Kde,
    Pearson,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    p: Option<PathBuf>,
    #[arg(long)]
    q: Option<PathBuf>,
    /// Inputs of the softmax baseline.
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    bandwidth: f64,
    #[arg(long)]
    constant: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Ci,
    Paper,
}

/// Configuration of `fdiv learn`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct LearnConfig {
    divergence: String,
    features: Option<FeatureSpec>,
    features1: Option<FeatureSpec>,
    features2: Option<FeatureSpec>,
    p: Option<PathBuf>,
    q: Option<PathBuf>,
    data: Option<PathBuf>,
    split: usize,
    lambda: f64,
    rank: usize,
    ranks: (usize, usize),
    /// MM steps, SGA epochs or alternating rounds.
    iterations: usize,
    tol: f64,
    /// `mm` or `sga` for the linear learner.
    method: String,
    seed: u64,
    hidden: usize,
    epochs: usize,
    step: f64,
    ema_rate: f64,
    moment_refresh: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            divergence: "kl".into(),
            features: None,
            features1: None,
            features2: None,
            p: None,
            q: None,
            data: None,
            split: 1,
            lambda: 1e-3,
            rank: 4,
            ranks: (4, 4),
            iterations: 50,
            tol: 1e-10,
            method: "mm".into(),
            seed: 0,
            hidden: 50,
            epochs: 20,
            step: 1e-2,
            ema_rate: 1e-2,
            moment_refresh: 10,
        }
    }
}

fn feature_spec(arg: &str) -> Result<FeatureSpec> {
    if arg.trim_start().starts_with('{') {
        Ok(serde_json::from_str(arg)?)
    } else {
        read_json(Path::new(arg))
    }
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| FdivError::Config(format!("missing --{name}")))
}

fn load_pair(p: &Path, q: &Path) -> Result<DatasetPair> {
    Ok(DatasetPair::new(read_matrix_csv(p)?, read_matrix_csv(q)?)?)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let m = read_matrix_csv(path)?;
    m.column(0)
        .iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(FdivError::Config(format!("label {v} is not a positive integer")))
            }
        })
        .collect()
}

fn constant_mode(flag: bool) -> ConstantMode {
    if flag {
        ConstantMode::AugmentedUnpenalized
    } else {
        ConstantMode::None
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn with_ones(phi: DMatrix<f64>) -> DMatrix<f64> {
    let cols = phi.ncols();
    phi.insert_column(cols, 1.0)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let spec = parse_divergence(&args.divergence)?;
    let data = load_pair(&args.p, &args.q)?;
    let map = feature_spec(&args.features)?.build(data.dim())?;
    let report = estimate(&data, &map, &spec, args.lambda, constant_mode(args.constant), args.debias)?;
    print_json(&ReportRecord::from_report("spectral", &report))
}

fn cmd_potentials(args: &EstimateArgs, eval: &Path, save: Option<&Path>) -> Result<()> {
    let spec = parse_divergence(&args.divergence)?;
    let data = load_pair(&args.p, &args.q)?;
    let map = feature_spec(&args.features)?.build(data.dim())?;
    let pair = fit_potentials(&data, &map, &spec, args.lambda, constant_mode(args.constant))?;
    if let Some(path) = save {
        write_json(path, &PotentialsRecord::from_pair(&pair)?)?;
    }
    let points = read_matrix_csv(eval)?;
    let (v, w) = pair.eval_rows(&points)?;
    let d = points.ncols();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["v".into(), "w".into()]);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..points.nrows())
        .map(|i| {
            let mut row: Vec<f64> = points.row(i).iter().copied().collect();
            row.extend([v[i], w[i]]);
            row
        })
        .collect();
    write_rows_csv(std::io::stdout().lock(), Some(&header_refs), &rows)
}

fn cmd_mi(args: &MiArgs) -> Result<()> {
    let spec = parse_divergence(&args.divergence)?;
    let xy = read_matrix_csv(&args.data)?;
    if args.split == 0 || args.split >= xy.ncols() {
        return Err(FdivError::Config("split must leave columns on both sides".into()));
    }
    let map1 = feature_spec(&args.features1)?.build(args.split)?;
    let map2 = feature_spec(&args.features2)?.build(xy.ncols() - args.split)?;
    let report = mi_estimate(&xy, &map1, &map2, &spec, args.lambda, args.debias)?;
    print_json(&ReportRecord::from_report("spectral_mi", &report))
}

fn cmd_softmax(cmd: &SoftmaxCommand) -> Result<()> {
    match cmd {
        SoftmaxCommand::Fit {
            divergence,
            features,
            x,
            labels,
            classes,
            lambda,
            out,
        } => {
            let spec = parse_divergence(divergence)?;
            let x = read_matrix_csv(x)?;
            let labels = read_labels(labels)?;
            let map = feature_spec(features)?.build(x.ncols())?;
            let model = softmax_fit(&x, &labels, &map, *classes, &spec, *lambda)?;
            write_json(out, &SoftmaxRecord::from_model(&model)?)?;
            let scores = model.score_matrix(&x)?;
            let value = mi_objective(&scores, &labels, &model.priors);
            print_json(&ReportRecord::plain("spectral_softmax", divergence, value, map.output_dim(), *lambda))
        }
        SoftmaxCommand::Score { model, x } => {
            let model = read_json::<SoftmaxRecord>(model)?.to_model()?;
            let x = read_matrix_csv(x)?;
            let scores = model.score_matrix(&x)?;
            let header: Vec<String> = (1..=scores.ncols()).map(|j| format!("class{j}")).collect();
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows: Vec<Vec<f64>> = scores.row_iter().map(|r| r.iter().copied().collect()).collect();
            write_rows_csv(std::io::stdout().lock(), Some(&header_refs), &rows)
        }
    }
}

fn cmd_learn(kind: LearnKind, config: &Path, resume: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let cfg: LearnConfig = read_json(config)?;
    let spec = parse_divergence(&cfg.divergence)?;
    match kind {
        LearnKind::Linear => {
            let data = load_pair(required(&cfg.p, "p")?, required(&cfg.q, "q")?)?;
            let map = required(&cfg.features, "features")?.build(data.dim())?;
            let full = compute_moments(&map, &data, cfg.lambda, ConstantMode::None)?;
            let (mut gamma, mut trace) = match resume {
                Some(path) => {
                    let ck: LinearCheckpoint = read_json(path)?;
                    (ck.gamma.to_matrix()?, ck.trace)
                }
                None => {
                    let g = init_gamma(map.output_dim(), cfg.rank, cfg.seed);
                    let (_, sq) = full.regularized();
                    (whiten(&g, &sq).unwrap_or(g), Vec::new())
                }
            };
            match cfg.method.as_str() {
                "mm" => {
                    let fit = mm_linear_fit(&full, &gamma, &spec, cfg.iterations, cfg.tol)?;
                    let skip = usize::from(!trace.is_empty());
                    trace.extend(fit.trace.into_iter().skip(skip));
                    gamma = fit.gamma;
                }
                "sga" => {
                    let phi_x = map.feature_matrix(&data.x)?;
                    let phi_y = map.feature_matrix(&data.y)?;
                    let sga = SgaConfig {
                        step: cfg.step,
                        ema_rate: cfg.ema_rate,
                        moment_refresh: cfg.moment_refresh,
                        seed: cfg.seed,
                        ..SgaConfig::default()
                    };
                    let mut state = LinearSgaState::new(gamma, &phi_x, &phi_y, &spec, cfg.lambda, &sga)?;
                    for _ in 0..cfg.iterations {
                        sga_epoch(&mut state, &phi_x, &phi_y, &spec, cfg.lambda, &sga)?;
                    }
                    trace.extend(state.objective_trace.iter().copied());
                    gamma = state.gamma;
                }
                other => return Err(FdivError::Config(format!("unknown linear method {other:?}"))),
            }
            if let Some(path) = checkpoint {
                let ck = LinearCheckpoint {
                    gamma: DenseMatrix::from(&gamma),
                    trace: trace.clone(),
                    seed: cfg.seed,
                };
                write_json(path, &ck)?;
            }
            let value = reduced_value(&full, &gamma, &spec)?;
            print_json(&ReportRecord::plain("learned_linear", &cfg.divergence, value, gamma.ncols(), cfg.lambda))
        }
        LearnKind::Neural => {
            let data = load_pair(required(&cfg.p, "p")?, required(&cfg.q, "q")?)?;
            let ncfg = NeuralConfig {
                hidden: cfg.hidden,
                rank: cfg.rank,
                lambda: cfg.lambda,
                epochs: cfg.epochs,
                sga: SgaConfig {
                    step: cfg.step,
                    ema_rate: cfg.ema_rate,
                    moment_refresh: cfg.moment_refresh,
                    seed: cfg.seed,
                    ..SgaConfig::default()
                },
            };
            let mut state: NeuralState = match resume {
                Some(path) => read_json::<NeuralCheckpoint>(path)?.to_state()?,
                None => NeuralState::init(&data, &ncfg, &spec)?,
            };
            while state.epoch < cfg.epochs {
                neural_epoch(&mut state, &data, &spec, &ncfg)?;
            }
            if let Some(path) = checkpoint {
                write_json(path, &NeuralCheckpoint::from_state(&state, cfg.seed))?;
            }
            let report = neural_report(&state, &data, cfg.lambda, &spec, false)?;
            print_json(&ReportRecord::from_report("learned_neural", &report))
        }
        LearnKind::Mi => {
            let xy = read_matrix_csv(required(&cfg.data, "data")?)?;
            if cfg.split == 0 || cfg.split >= xy.ncols() {
                return Err(FdivError::Config("split must leave columns on both sides".into()));
            }
            let map1 = required(&cfg.features1, "features1")?.build(cfg.split)?;
            let map2 = required(&cfg.features2, "features2")?.build(xy.ncols() - cfg.split)?;
            let phi1 = map1.feature_matrix(&xy.columns(0, cfg.split).into_owned())?;
            let phi2 = map2.feature_matrix(&xy.columns(cfg.split, xy.ncols() - cfg.split).into_owned())?;
            let (start, mut trace) = match resume {
                Some(path) => {
                    let ck: MiCheckpoint = read_json(path)?;
                    ((ck.gamma1.to_matrix()?, ck.gamma2.to_matrix()?), ck.trace)
                }
                None => {
                    let (r1, r2) = cfg.ranks;
                    (
                        (init_gamma(phi1.ncols(), r1, cfg.seed), init_gamma(phi2.ncols(), r2, cfg.seed.wrapping_add(1))),
                        Vec::new(),
                    )
                }
            };
            let learner = mi_feature_learning_from(&phi1, &phi2, &spec, cfg.lambda, start, cfg.iterations)?;
            let skip = usize::from(!trace.is_empty());
            trace.extend(learner.trace.iter().skip(skip).copied());
            if let Some(path) = checkpoint {
                let ck = MiCheckpoint {
                    gamma1: DenseMatrix::from(&learner.gamma1),
                    gamma2: DenseMatrix::from(&learner.gamma2),
                    trace,
                    seed: cfg.seed,
                };
                write_json(path, &ck)?;
            }
            print_json(&ReportRecord::from_report("learned_mi", &learner.report))
        }
    }
}

fn cmd_baseline(kind: BaselineKind, args: &BaselineArgs) -> Result<()> {
    let features = || -> Result<FeatureSpec> { feature_spec(required(&args.features, "features")?) };
    let pair = || -> Result<DatasetPair> { load_pair(required(&args.p, "p")?, required(&args.q, "q")?) };
    let record = match kind {
        BaselineKind::Variational | BaselineKind::VariationalSquare => {
            let data = pair()?;
            let map = features()?.build(data.dim())?;
            let quadratic = matches!(kind, BaselineKind::VariationalSquare);
            let sol = variational_kl(&data, &map, args.lambda, quadratic)?;
            let name = if quadratic { "variational_square" } else { "variational" };
            ReportRecord::plain(name, "kl", sol.unpenalized, sol.theta.len(), args.lambda)
        }
        BaselineKind::Softmax => {
            let x = read_matrix_csv(required(&args.x, "x")?)?;
            let labels = read_labels(required(&args.labels, "labels")?)?;
            let k = *required(&args.classes, "classes")?;
            let map: FeatureMap = features()?.build(x.ncols())?;
            let phi = with_ones(map.feature_matrix(&x)?);
            let sol = softmax_newton(&phi, &labels, k, args.lambda)?;
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l - 1] += 1);
            let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();
            let value = mi_objective(&softmax_scores(&sol, &phi, k), &labels, &priors);
            ReportRecord::plain("softmax_newton", "kl", value, sol.theta.len(), args.lambda)
        }
        BaselineKind::Kde => {
            let data = pair()?;
            let est = kde_plugin(&data, args.bandwidth, None)?;
            if est.floored > 0 {
                eprintln!("warning: {} density values floored", est.floored);
            }
            ReportRecord::plain("kde", "kl", est.value, data.dim(), args.bandwidth)
        }
        BaselineKind::Pearson => {
            let data = pair()?;
            let map = features()?.build(data.dim())?;
            let report = pearson_closed_form(&data, &map, args.lambda, constant_mode(args.constant))?;
            ReportRecord::from_report("pearson", &report)
        }
    };
    print_json(&record)
}

fn cmd_experiment(config: &Path, profile: ProfileArg, out: &Path) -> Result<bool> {
    let cfg: ExperimentConfig = read_json(config)?;
    let profile = match profile {
        ProfileArg::Ci => Profile::Ci,
        ProfileArg::Paper => Profile::Paper,
    };
    let output = run_experiment(&cfg.apply_profile(profile))?;
    write_outputs(out, &output)?;
    let mut stderr = std::io::stderr().lock();
    for f in &output.summary.failures {
        let _ = writeln!(stderr, "cell n={} replication={} failed: {}", f.n, f.replication, f.message);
    }
    for a in &output.summary.assertions {
        let _ = writeln!(stderr, "{}: {}", if a.passed { "PASS" } else { "FAIL" }, a.detail);
    }
    Ok(output.summary.passed())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args)?,
        Command::Potentials { base, eval, save } => cmd_potentials(base, eval, save.as_deref())?,
        Command::Mi(args) => cmd_mi(args)?,
        Command::Softmax(cmd) => cmd_softmax(cmd)?,
        Command::Learn {
            kind,
            config,
            resume,
            checkpoint,
        } => cmd_learn(*kind, config, resume.as_deref(), checkpoint.as_deref())?,
        Command::Baseline { kind, args } => cmd_baseline(*kind, args)?,
        Command::Experiment { config, profile, out } => return cmd_experiment(config, *profile, out),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
