use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdiv::formats::{parse_divergence, read_json, FeatureSpec, NeuralCheckpoint, ReportRecord};
use fdiv_core::{estimate, ConstantMode, DatasetPair};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdiv")).args(args).output().unwrap()
}

fn ok_stdout(args: &[&str]) -> String {
    let out = fdiv(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_csv(path: &Path, m: &DMatrix<f64>) {
    let text: String = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

fn samples(seed: u64, n: usize, warp: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>().powf(warp))
}

fn setup(dir: &Path) -> (String, String) {
    let (p, q) = (dir.join("p.csv"), dir.join("q.csv"));
    write_csv(&p, &samples(1, 400, 0.6));
    write_csv(&q, &samples(2, 400, 1.0));
    (p.display().to_string(), q.display().to_string())
}

const TRIG: &str = r#"{"type":"trigonometric","max_freq":3}"#;

#[test]
fn estimate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = setup(dir.path());
    let json = ok_stdout(&["estimate", "--divergence", "kl", "--features", TRIG, "--p", &p, "--q", &q, "--lambda", "1e-3", "--debias", "--constant"]);
    let record: ReportRecord = serde_json::from_str(&json).unwrap();
    let data = DatasetPair::new(samples(1, 400, 0.6), samples(2, 400, 1.0)).unwrap();
    let map = serde_json::from_str::<FeatureSpec>(TRIG).unwrap().build(1).unwrap();
    let spec = parse_divergence("kl").unwrap();
    let lib = estimate(&data, &map, &spec, 1e-3, ConstantMode::AugmentedUnpenalized, true).unwrap();
    assert_eq!(record.value, lib.value);
    assert_eq!(record.debiased_value, lib.debiased_value);
    assert!(record.correction > 0.0);
}

#[test]
fn potentials_evaluate_and_save() {
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = setup(dir.path());
    let eval = dir.path().join("eval.csv");
    write_csv(&eval, &DMatrix::from_fn(7, 1, |i, _| i as f64 / 7.0));
    let saved = dir.path().join("pot.json");
    let csv = ok_stdout(&[
        "potentials", "--features", TRIG, "--p", &p, "--q", &q, "--eval", eval.to_str().unwrap(), "--save", saved.to_str().unwrap(),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x0,v,w");
    assert_eq!(lines.len(), 8);
    let pair = read_json::<fdiv::formats::PotentialsRecord>(&saved).unwrap().to_pair().unwrap();
    let fields: Vec<f64> = lines[3].split(',').map(|s| s.parse().unwrap()).collect();
    let (v, w) = pair.eval_rows(&DMatrix::from_element(1, 1, fields[0])).unwrap();
    assert_eq!((v[0], w[0]), (fields[1], fields[2]));
}

#[test]
fn softmax_fit_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(300, 1, |_, _| rng.random::<f64>());
    let labels = DMatrix::from_fn(300, 1, |i, _| if x[(i, 0)] + 0.2 * rng.random::<f64>() > 0.6 { 2.0 } else { 1.0 });
    let (xp, lp, model) = (dir.path().join("x.csv"), dir.path().join("y.csv"), dir.path().join("model.json"));
    write_csv(&xp, &x);
    write_csv(&lp, &labels);
    let (xs, ls, ms) = (xp.to_str().unwrap(), lp.to_str().unwrap(), model.to_str().unwrap());
    let json = ok_stdout(&["softmax", "fit", "--features", TRIG, "--x", xs, "--labels", ls, "--classes", "2", "--out", ms]);
    let record: ReportRecord = serde_json::from_str(&json).unwrap();
    assert!(record.value > 0.05);
    let scores = ok_stdout(&["softmax", "score", "--model", ms, "--x", xs]);
    assert_eq!(scores.lines().count(), 301);
    assert!(scores.starts_with("class1,class2"));
    let baseline = ok_stdout(&["baseline", "softmax", "--features", TRIG, "--x", xs, "--labels", ls, "--classes", "2"]);
    let newton: ReportRecord = serde_json::from_str(&baseline).unwrap();
    assert!(newton.value >= record.value - 0.05);
}

#[test]
fn baselines_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = setup(dir.path());
    for kind in ["variational", "variational-square", "kde", "pearson"] {
        let json = ok_stdout(&["baseline", kind, "--features", TRIG, "--p", &p, "--q", &q, "--lambda", "1e-3", "--bandwidth", "0.05"]);
        let record: ReportRecord = serde_json::from_str(&json).unwrap();
        assert!(record.value.is_finite(), "{kind}");
        assert!(record.value > 0.0, "{kind}: {}", record.value);
    }
}

#[test]
fn mi_on_dependent_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xy = DMatrix::from_fn(600, 2, |_, _| rng.random::<f64>());
    let xy = DMatrix::from_fn(600, 2, |i, j| if j == 0 { xy[(i, 0)] } else { (xy[(i, 0)] + 0.2 * xy[(i, 1)]).fract() });
    let path = dir.path().join("xy.csv");
    write_csv(&path, &xy);
    let json = ok_stdout(&["mi", "--features1", TRIG, "--features2", TRIG, "--data", path.to_str().unwrap(), "--split", "1"]);
    let record: ReportRecord = serde_json::from_str(&json).unwrap();
    assert!(record.value > 0.3);
}

#[test]
fn neural_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = setup(dir.path());
    let config = |epochs: usize| {
        serde_json::json!({"p": p, "q": q, "hidden": 6, "rank": 2, "epochs": epochs, "lambda": 1e-3, "seed": 9}).to_string()
    };
    let (short, long) = (dir.path().join("short.json"), dir.path().join("long.json"));
    fs::write(&short, config(2)).unwrap();
    fs::write(&long, config(4)).unwrap();
    let (ck_a, ck_b, ck_c) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("c.json"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let straight = ok_stdout(&["learn", "neural", "--config", &s(&long), "--checkpoint", &s(&ck_a)]);
    ok_stdout(&["learn", "neural", "--config", &s(&short), "--checkpoint", &s(&ck_b)]);
    let resumed = ok_stdout(&["learn", "neural", "--config", &s(&long), "--resume", &s(&ck_b), "--checkpoint", &s(&ck_c)]);
    assert_eq!(straight, resumed);
    let (a, c): (NeuralCheckpoint, NeuralCheckpoint) = (read_json(&ck_a).unwrap(), read_json(&ck_c).unwrap());
    assert_eq!(a, c);
    assert_eq!(a.epoch, 4);
}

#[test]
fn linear_and_mi_learners_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = setup(dir.path());
    let cfg = dir.path().join("lin.json");
    let features = serde_json::json!({"type": "trigonometric", "max_freq": 4});
    fs::write(&cfg, serde_json::json!({"p": p, "q": q, "features": features, "rank": 2, "iterations": 5}).to_string()).unwrap();
    let ck = dir.path().join("lin_ck.json");
    let first: ReportRecord =
        serde_json::from_str(&ok_stdout(&["learn", "linear", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()])).unwrap();
    let second: ReportRecord = serde_json::from_str(&ok_stdout(&[
        "learn", "linear", "--config", cfg.to_str().unwrap(), "--resume", ck.to_str().unwrap(),
    ]))
    .unwrap();
    assert!(second.value >= first.value - 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xy = DMatrix::from_fn(500, 2, |_, _| rng.random::<f64>());
    let xy = DMatrix::from_fn(500, 2, |i, j| if j == 0 { xy[(i, 0)] } else { (xy[(i, 0)] + 0.3 * xy[(i, 1)]).fract() });
    let data = dir.path().join("xy.csv");
    write_csv(&data, &xy);
    let mi_cfg = dir.path().join("mi.json");
    let body = serde_json::json!({"data": data, "split": 1, "features1": features, "features2": features, "ranks": [2, 2], "iterations": 5});
    fs::write(&mi_cfg, body.to_string()).unwrap();
    let mi_ck = dir.path().join("mi_ck.json");
    let json = ok_stdout(&["learn", "mi", "--config", mi_cfg.to_str().unwrap(), "--checkpoint", mi_ck.to_str().unwrap()]);
    let record: ReportRecord = serde_json::from_str(&json).unwrap();
    assert!(record.value > 0.1);
    let ck: fdiv::formats::MiCheckpoint = read_json(&mi_ck).unwrap();
    assert_eq!(ck.trace.len(), 6);
    assert!(ck.trace.windows(2).all(|w| w[1] >= w[0]));
}

fn experiment_config(dir: &Path, assertion_max: f64) -> String {
    let cfg = serde_json::json!({
        "experiment": "scaling_1d",
        "generator": {"variant": "bernoulli_kernel_1d", "beta": 0.5},
        "features": {"type": "bernoulli_kernel", "max_freq": 16},
        "estimators": ["regular", "debiased"],
        "n": [32, 64, 128],
        "replications": 3,
        "lambda": {"schedule": {"scale": 1.0, "exponent": -0.6666666666666666}},
        "assertions": [{"type": "exponent_band", "estimator": "regular", "min": -10.0, "max": assertion_max}]
    });
    let path = dir.join(format!("cfg_{assertion_max}.json"));
    fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn experiment_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), 10.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = fdiv(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]).status;
        assert!(status.success());
    }
    let csv = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("results.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("experiment,estimator,n,replication,lambda,estimate,exact,norm_error,seconds,seed\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
    assert!(a.join("scaling_1d.dat").exists());
}

#[test]
fn failed_assertion_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), -5.0);
    let out = fdiv(&["experiment", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn bad_input_is_reported() {
    let out = fdiv(&["estimate", "--features", TRIG, "--p", "/nonexistent/p.csv", "--q", "/nonexistent/q.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/p.csv"));
}
