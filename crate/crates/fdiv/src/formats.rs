//! JSON feature specifications, serialized models and checkpoints, CSV matrices.

use std::fs;
use std::path::Path;

use fdiv_core::features::Basis;
use fdiv_core::learning::{NeuralState, RunningMoments, TangentBound};
use fdiv_core::{ConstantMode, DivergenceSpec, EstimateReport, FeatureMap, PotentialPair, SoftmaxModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{io_error, FdivError, Result};

/// Declarative feature map, e.g. `{"type":"random_relu","kappa":1,"m":512,"seed":7}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSpec {
    Linear,
    Trigonometric { max_freq: usize },
    BernoulliKernel { max_freq: usize },
    Circle,
    OneHot { cardinality: usize },
    RandomRelu { kappa: u32, m: usize, seed: u64 },
    /// `outer(inner(x))`.
    Compose { inner: Box<FeatureSpec>, outer: Box<FeatureSpec> },
    /// `φ₂(x₂) ⊗ φ₁(x₁)` where `x₁` is the first `split` columns.
    Product { first: Box<FeatureSpec>, second: Box<FeatureSpec>, split: usize },
}

impl FeatureSpec {
    /// Builds the map for inputs of dimension `input_dim`.
    pub fn build(&self, input_dim: usize) -> Result<FeatureMap> {
        Ok(match self {
            FeatureSpec::Linear => FeatureMap::explicit(Basis::Linear, input_dim),
            FeatureSpec::Trigonometric { max_freq } => FeatureMap::explicit(Basis::Trigonometric { max_freq: *max_freq }, input_dim),
            FeatureSpec::BernoulliKernel { max_freq } => FeatureMap::explicit(Basis::BernoulliKernel { max_freq: *max_freq }, input_dim),
            FeatureSpec::Circle => FeatureMap::explicit(Basis::CircleEmbedding, input_dim),
            FeatureSpec::OneHot { cardinality } => {
                if input_dim != 1 {
                    return Err(FdivError::Config(format!("one_hot expects one input column, got {input_dim}")));
                }
                FeatureMap::one_hot(*cardinality)
            }
            FeatureSpec::RandomRelu { kappa, m, seed } => FeatureMap::random_relu(input_dim, *m, *kappa, *seed),
            FeatureSpec::Compose { inner, outer } => {
                let inner = inner.build(input_dim)?;
                let outer = outer.build(inner.output_dim())?;
                FeatureMap::compose(inner, outer)?
            }
            FeatureSpec::Product { first, second, split } => {
                if *split == 0 || *split >= input_dim {
                    return Err(FdivError::Config(format!("product split {split} invalid for {input_dim} columns")));
                }
                FeatureMap::product(first.build(*split)?, second.build(input_dim - split)?)
            }
        })
    }
}

/// Dense matrix stored row-major with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        DenseMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl DenseMatrix {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(FdivError::Config(format!(
                "matrix data has {} entries, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Self-contained serialized feature map, including learned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapRecord {
    Linear { input_dim: usize },
    Trigonometric { input_dim: usize, max_freq: usize },
    BernoulliKernel { input_dim: usize, max_freq: usize },
    Circle { input_dim: usize },
    OneHot { cardinality: usize },
    RandomRelu { kappa: u32, seed: u64, weights: DenseMatrix, biases: Vec<f64> },
    Reduced { inner: Box<MapRecord>, gamma: DenseMatrix },
    Neural { weights: DenseMatrix, biases: Vec<f64>, reduction: Option<DenseMatrix> },
    Product { first: Box<MapRecord>, second: Box<MapRecord> },
    Compose { inner: Box<MapRecord>, outer: Box<MapRecord> },
}

impl MapRecord {
    pub fn from_map(map: &FeatureMap) -> Result<Self> {
        Ok(match map {
            FeatureMap::Explicit { basis, input_dim } => {
                let input_dim = *input_dim;
                match *basis {
                    Basis::Linear => MapRecord::Linear { input_dim },
                    Basis::Trigonometric { max_freq } => MapRecord::Trigonometric { input_dim, max_freq },
                    Basis::BernoulliKernel { max_freq } => MapRecord::BernoulliKernel { input_dim, max_freq },
                    Basis::CircleEmbedding => MapRecord::Circle { input_dim },
                }
            }
            FeatureMap::OneHot { cardinality } => MapRecord::OneHot { cardinality: *cardinality },
            FeatureMap::RandomRelu {
                kappa,
                weights,
                biases,
                seed,
            } => MapRecord::RandomRelu {
                kappa: *kappa,
                seed: *seed,
                weights: weights.into(),
                biases: biases.as_slice().to_vec(),
            },
            FeatureMap::Reduced { inner, gamma } => MapRecord::Reduced {
                inner: Box::new(MapRecord::from_map(inner)?),
                gamma: gamma.into(),
            },
            FeatureMap::Neural {
                weights,
                biases,
                reduction,
            } => MapRecord::Neural {
                weights: weights.into(),
                biases: biases.as_slice().to_vec(),
                reduction: reduction.as_ref().map(DenseMatrix::from),
            },
            FeatureMap::Product { first, second } => MapRecord::Product {
                first: Box::new(MapRecord::from_map(first)?),
                second: Box::new(MapRecord::from_map(second)?),
            },
            FeatureMap::Compose { inner, outer } => MapRecord::Compose {
                inner: Box::new(MapRecord::from_map(inner)?),
                outer: Box::new(MapRecord::from_map(outer)?),
            },
            FeatureMap::Custom { .. } => return Err(FdivError::Unserializable("custom")),
        })
    }

    pub fn to_map(&self) -> Result<FeatureMap> {
        Ok(match self {
            MapRecord::Linear { input_dim } => FeatureMap::explicit(Basis::Linear, *input_dim),
            MapRecord::Trigonometric { input_dim, max_freq } => {
                FeatureMap::explicit(Basis::Trigonometric { max_freq: *max_freq }, *input_dim)
            }
            MapRecord::BernoulliKernel { input_dim, max_freq } => {
                FeatureMap::explicit(Basis::BernoulliKernel { max_freq: *max_freq }, *input_dim)
            }
            MapRecord::Circle { input_dim } => FeatureMap::explicit(Basis::CircleEmbedding, *input_dim),
            MapRecord::OneHot { cardinality } => FeatureMap::one_hot(*cardinality),
            MapRecord::RandomRelu {
                kappa,
                seed,
                weights,
                biases,
            } => FeatureMap::RandomRelu {
                kappa: *kappa,
                weights: weights.to_matrix()?,
                biases: DVector::from_column_slice(biases),
                seed: *seed,
            },
            MapRecord::Reduced { inner, gamma } => FeatureMap::reduced(inner.to_map()?, gamma.to_matrix()?)?,
            MapRecord::Neural {
                weights,
                biases,
                reduction,
            } => FeatureMap::Neural {
                weights: weights.to_matrix()?,
                biases: DVector::from_column_slice(biases),
                reduction: reduction.as_ref().map(|r| r.to_matrix()).transpose()?,
            },
            MapRecord::Product { first, second } => FeatureMap::product(first.to_map()?, second.to_map()?),
            MapRecord::Compose { inner, outer } => FeatureMap::compose(inner.to_map()?, outer.to_map()?)?,
        })
    }
}

/// Serialized quadratic potentials `(M, N, c)` with their feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialsRecord {
    pub divergence: String,
    pub constant: bool,
    pub m: DenseMatrix,
    pub n: DenseMatrix,
    pub c: Vec<f64>,
    pub feature_map: Option<MapRecord>,
}

impl PotentialsRecord {
    pub fn from_pair(pair: &PotentialPair) -> Result<Self> {
        Ok(PotentialsRecord {
            divergence: pair.divergence.name(),
            constant: pair.constant_mode == ConstantMode::AugmentedUnpenalized,
            m: (&pair.m).into(),
            n: (&pair.n).into(),
            c: pair.c.as_slice().to_vec(),
            feature_map: pair.feature_map.as_ref().map(MapRecord::from_map).transpose()?,
        })
    }

    pub fn to_pair(&self) -> Result<PotentialPair> {
        Ok(PotentialPair {
            m: self.m.to_matrix()?,
            n: self.n.to_matrix()?,
            c: DVector::from_column_slice(&self.c),
            divergence: parse_divergence(&self.divergence)?,
            feature_map: self.feature_map.as_ref().map(MapRecord::to_map).transpose()?,
            constant_mode: if self.constant {
                ConstantMode::AugmentedUnpenalized
            } else {
                ConstantMode::None
            },
        })
    }
}

/// Serialized per-class conditional model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRecord {
    pub divergence: String,
    pub lambda: f64,
    pub priors: Vec<f64>,
    pub class_values: Vec<f64>,
    pub m: Vec<DenseMatrix>,
    pub n: Vec<DenseMatrix>,
    pub c: Vec<Vec<f64>>,
    pub feature_map: MapRecord,
}

impl SoftmaxRecord {
    pub fn from_model(model: &SoftmaxModel) -> Result<Self> {
        Ok(SoftmaxRecord {
            divergence: model.divergence.name(),
            lambda: model.lambda_reg,
            priors: model.priors.clone(),
            class_values: model.class_values.clone(),
            m: model.m.iter().map(DenseMatrix::from).collect(),
            n: model.n.iter().map(DenseMatrix::from).collect(),
            c: model.c.iter().map(|c| c.as_slice().to_vec()).collect(),
            feature_map: MapRecord::from_map(&model.feature_map)?,
        })
    }

    pub fn to_model(&self) -> Result<SoftmaxModel> {
        Ok(SoftmaxModel {
            m: self.m.iter().map(DenseMatrix::to_matrix).collect::<Result<_>>()?,
            n: self.n.iter().map(DenseMatrix::to_matrix).collect::<Result<_>>()?,
            c: self.c.iter().map(|c| DVector::from_column_slice(c)).collect(),
            priors: self.priors.clone(),
            class_values: self.class_values.clone(),
            feature_map: self.feature_map.to_map()?,
            divergence: parse_divergence(&self.divergence)?,
            lambda_reg: self.lambda,
        })
    }
}

/// Checkpoint of the linear MM learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCheckpoint {
    pub gamma: DenseMatrix,
    pub trace: Vec<f64>,
    pub seed: u64,
}

/// Checkpoint of the neural learner: parameters, running moments, tangent and schedule.
///
/// The shuffling stream is a function of `(seed, epoch)`, so these fields fix the RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralCheckpoint {
    pub seed: u64,
    pub epoch: usize,
    pub step: f64,
    pub weights: DenseMatrix,
    pub biases: Vec<f64>,
    pub reduction: DenseMatrix,
    pub mu_p: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub sigma_p: DenseMatrix,
    pub sigma_q: DenseMatrix,
    pub tangent_m: DenseMatrix,
    pub tangent_n: DenseMatrix,
    pub tangent_c: Vec<f64>,
    pub tangent_value: f64,
    pub objective_trace: Vec<f64>,
    pub surrogate_trace: Vec<f64>,
    pub skipped_steps: usize,
}

impl NeuralCheckpoint {
    pub fn from_state(state: &NeuralState, seed: u64) -> Self {
        NeuralCheckpoint {
            seed,
            epoch: state.epoch,
            step: state.step,
            weights: (&state.weights).into(),
            biases: state.biases.as_slice().to_vec(),
            reduction: (&state.reduction).into(),
            mu_p: state.running.mu_p.as_slice().to_vec(),
            mu_q: state.running.mu_q.as_slice().to_vec(),
            sigma_p: (&state.running.sigma_p).into(),
            sigma_q: (&state.running.sigma_q).into(),
            tangent_m: (&state.tangent.m).into(),
            tangent_n: (&state.tangent.n).into(),
            tangent_c: state.tangent.c.as_slice().to_vec(),
            tangent_value: state.tangent.anchor_value,
            objective_trace: state.objective_trace.clone(),
            surrogate_trace: state.surrogate_trace.clone(),
            skipped_steps: state.skipped_steps,
        }
    }

    pub fn to_state(&self) -> Result<NeuralState> {
        Ok(NeuralState {
            weights: self.weights.to_matrix()?,
            biases: DVector::from_column_slice(&self.biases),
            reduction: self.reduction.to_matrix()?,
            running: RunningMoments {
                mu_p: DVector::from_column_slice(&self.mu_p),
                mu_q: DVector::from_column_slice(&self.mu_q),
                sigma_p: self.sigma_p.to_matrix()?,
                sigma_q: self.sigma_q.to_matrix()?,
            },
            tangent: TangentBound {
                m: self.tangent_m.to_matrix()?,
                n: self.tangent_n.to_matrix()?,
                c: DVector::from_column_slice(&self.tangent_c),
                anchor_value: self.tangent_value,
            },
            step: self.step,
            epoch: self.epoch,
            objective_trace: self.objective_trace.clone(),
            surrogate_trace: self.surrogate_trace.clone(),
            skipped_steps: self.skipped_steps,
        })
    }
}

/// Checkpoint of alternating MI feature learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiCheckpoint {
    pub gamma1: DenseMatrix,
    pub gamma2: DenseMatrix,
    pub trace: Vec<f64>,
    pub seed: u64,
}

/// JSON shape of an estimate, shared by spectral and baseline estimators.
///
/// Spectrum bounds are absent for estimators without a generalized spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub estimator: String,
    pub divergence: String,
    pub value: f64,
    pub debiased_value: f64,
    pub correction: f64,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub dim: usize,
    pub lambda_reg: f64,
}

impl ReportRecord {
    pub fn from_report(estimator: &str, report: &EstimateReport) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        ReportRecord {
            estimator: estimator.into(),
            divergence: report.divergence.clone(),
            value: report.value,
            debiased_value: report.debiased_value,
            correction: report.correction,
            lambda_min: finite(report.lambda_min),
            lambda_max: finite(report.lambda_max),
            dim: report.dim,
            lambda_reg: report.lambda_reg,
        }
    }

    /// Record of a plain value without spectrum or correction.
    pub fn plain(estimator: &str, divergence: &str, value: f64, dim: usize, lambda_reg: f64) -> Self {
        ReportRecord {
            estimator: estimator.into(),
            divergence: divergence.into(),
            value,
            debiased_value: value,
            correction: 0.0,
            lambda_min: None,
            lambda_max: None,
            dim,
            lambda_reg,
        }
    }
}

pub fn parse_divergence(name: &str) -> Result<DivergenceSpec> {
    let kind = name.parse().map_err(|_| FdivError::Config(format!("unknown divergence {name:?}")))?;
    Ok(DivergenceSpec::new(kind)?)
}

/// Reads a headerless or headed CSV of floats into an `n × d` matrix.
///
/// A first row that does not parse as numbers is treated as a header.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(FdivError::Config(format!("row {}: {e}", i + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(fdiv_core::Error::EmptyDataset.into());
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(FdivError::Config(format!("row {} has {} columns, expected {cols}", bad + 1, rows[bad].len())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(flat.len() / cols, cols, &flat))
}

/// Writes rows of floats with an optional header.
pub fn write_rows_csv<W: std::io::Write>(out: W, header: Option<&[&str]>, rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    if let Some(h) = header {
        writer.write_record(h)?;
    }
    for row in rows {
        writer.write_record(row.iter().map(|v| format_float(*v)))?;
    }
    writer.flush().map_err(|e| io_error(Path::new("<csv>"), e))?;
    Ok(())
}

/// Shortest round-trip decimal representation.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fdiv_core::{fit_potentials, DatasetPair};

    #[test]
    fn feature_spec_json_round_trip() {
        let json = r#"{"type":"compose","inner":{"type":"circle"},"outer":{"type":"random_relu","kappa":1,"m":16,"seed":7}}"#;
        let spec: FeatureSpec = serde_json::from_str(json).unwrap();
        let map = spec.build(2).unwrap();
        assert_eq!(map.input_dim(), 2);
        assert_eq!(map.output_dim(), 16);
        let again: FeatureSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn map_record_preserves_evaluation() {
        let map = FeatureSpec::Compose {
            inner: Box::new(FeatureSpec::Circle),
            outer: Box::new(FeatureSpec::RandomRelu { kappa: 1, m: 8, seed: 3 }),
        }
        .build(2)
        .unwrap();
        let record = MapRecord::from_map(&map).unwrap();
        let text = serde_json::to_string(&record).unwrap();
        let back: MapRecord = serde_json::from_str(&text).unwrap();
        let rebuilt = back.to_map().unwrap();
        let x = [0.3, 0.8];
        assert_eq!(map.eval(&x).unwrap(), rebuilt.eval(&x).unwrap());
    }

    #[test]
    fn potentials_round_trip() {
        let x = DMatrix::from_fn(50, 1, |i, _| (i as f64 / 50.0).sqrt());
        let y = DMatrix::from_fn(50, 1, |i, _| i as f64 / 50.0);
        let data = DatasetPair::new(x, y).unwrap();
        let map = FeatureMap::explicit(Basis::Trigonometric { max_freq: 2 }, 1);
        let kl = parse_divergence("kl").unwrap();
        let pair = fit_potentials(&data, &map, &kl, 1e-3, ConstantMode::AugmentedUnpenalized).unwrap();
        let record = PotentialsRecord::from_pair(&pair).unwrap();
        let back = PotentialsRecord::to_pair(&serde_json::from_str(&serde_json::to_string(&record).unwrap()).unwrap()).unwrap();
        assert_eq!(pair.eval_rows(&data.x).unwrap(), back.eval_rows(&data.x).unwrap());
    }

    #[test]
    fn csv_parsing() {
        let m = parse_matrix_csv("a,b\n1,2\n3.5,-4e-1\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.5, -0.4]));
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
        assert!(parse_matrix_csv("").is_err());
    }

    #[test]
    fn dense_matrix_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = DenseMatrix::from(&m);
        assert_eq!(d.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(d.to_matrix().unwrap(), m);
    }
}
