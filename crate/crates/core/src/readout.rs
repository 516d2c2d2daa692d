//! Memory-less trained readout: linear (ridge) regression for time-series
//! targets, one-vs-all logistic regression for classification, and the
//! benchmark metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::reservoir::StateMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Regression,
    LogisticOvr,
}

/// Per-feature z-scoring statistics, computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &StateMatrix) -> Self {
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.cols];
        for row in x.rows_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; x.cols];
        for row in x.rows_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    fn apply(&self, row: &[f64], out: &mut [f64]) {
        for i in 0..row.len() {
            out[i] = (row[i] - self.mean[i]) / self.std[i];
        }
    }
}

/// Trained affine (or per-class logistic) map from reservoir states to outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReadout {
    /// Row-major `features x outputs` weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub features: usize,
    pub outputs: usize,
    pub kind: ReadoutKind,
    /// Present for logistic readouts: features are z-scored before the map.
    pub standardizer: Option<Standardizer>,
    /// Class ids, one per output column (classification only).
    pub classes: Option<Vec<usize>>,
    /// Feature order the readout was trained on.
    pub feature_names: Option<Vec<String>>,
}

impl LinearReadout {
    fn check_features(&self, x: &StateMatrix) -> Result<()> {
        if x.cols != self.features {
            return Err(Error::Dimension(format!(
                "readout trained on {} features, given {}",
                self.features, x.cols
            )));
        }
        Ok(())
    }

    /// Raw affine scores per row; logistic readouts pass them through a
    /// per-class sigmoid.
    pub fn predict(&self, x: &StateMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_features(x)?;
        let mut scratch = vec![0.0; self.features];
        let mut out = Vec::with_capacity(x.rows);
        for row in x.rows_iter() {
            let feats: &[f64] = match &self.standardizer {
                Some(st) => {
                    st.apply(row, &mut scratch);
                    &scratch
                }
                None => row,
            };
            let mut scores = self.bias.clone();
            for (i, &f) in feats.iter().enumerate() {
                let wrow = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                for (s, w) in scores.iter_mut().zip(wrow) {
                    *s += f * w;
                }
            }
            if self.kind == ReadoutKind::LogisticOvr {
                for s in &mut scores {
                    *s = sigmoid(*s);
                }
            }
            out.push(scores);
        }
        Ok(out)
    }

    /// Single-output regression predictions.
    pub fn predict_scalar(&self, x: &StateMatrix) -> Result<Vec<f64>> {
        if self.outputs != 1 {
            return Err(Error::Dimension(format!(
                "{} outputs, expected 1",
                self.outputs
            )));
        }
        Ok(self.predict(x)?.into_iter().map(|r| r[0]).collect())
    }

    /// Argmax class per row; ties resolve to the lowest class index.
    pub fn predict_labels(&self, x: &StateMatrix) -> Result<Vec<usize>> {
        let classes = self
            .classes
            .as_ref()
            .ok_or_else(|| Error::invalid("readout has no classes"))?;
        let scores = self.predict(x)?;
        Ok(scores
            .iter()
            .map(|row| {
                let mut best = 0usize;
                for (i, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = i;
                    }
                }
                classes[best]
            })
            .collect())
    }

    /// Persist as a CSV weight matrix plus a JSON metadata file.
    ///
    /// The CSV holds `features + 1` rows (last row is the bias) and one
    /// column per output; metadata records kind, class ids, feature order
    /// and standardization statistics.
    pub fn save(&self, weights_csv: impl AsRef<Path>, metadata_json: impl AsRef<Path>) -> Result<()> {
        let mut csv = String::new();
        let header: Vec<String> = match &self.classes {
            Some(cs) => cs.iter().map(|c| format!("class_{c}")).collect(),
            None => (0..self.outputs).map(|o| format!("out_{o}")).collect(),
        };
        csv.push_str(&header.join(","));
        csv.push('\n');
        for i in 0..self.features {
            let row: Vec<String> = (0..self.outputs)
                .map(|o| format!("{:.17e}", self.weights[i * self.outputs + o]))
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        let bias: Vec<String> = self.bias.iter().map(|b| format!("{b:.17e}")).collect();
        csv.push_str(&bias.join(","));
        csv.push('\n');
        crate::io_util::write_atomic(weights_csv, csv.as_bytes())?;

        #[derive(Serialize)]
        struct Meta<'a> {
            kind: ReadoutKind,
            features: usize,
            outputs: usize,
            classes: &'a Option<Vec<usize>>,
            feature_names: &'a Option<Vec<String>>,
            standardizer: &'a Option<Standardizer>,
        }
        let meta = serde_json::to_string_pretty(&Meta {
            kind: self.kind,
            features: self.features,
            outputs: self.outputs,
            classes: &self.classes,
            feature_names: &self.feature_names,
            standardizer: &self.standardizer,
        })
        .expect("metadata serializes");
        crate::io_util::write_atomic(metadata_json, meta.as_bytes())
    }

    pub fn load(weights_csv: impl AsRef<Path>, metadata_json: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: ReadoutKind,
            features: usize,
            outputs: usize,
            classes: Option<Vec<usize>>,
            feature_names: Option<Vec<String>>,
            standardizer: Option<Standardizer>,
        }
        let meta_path = metadata_json.as_ref();
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)
            .map_err(|e| Error::parse(meta_path, e.to_string()))?;
        let csv_path = weights_csv.as_ref();
        let text = std::fs::read_to_string(csv_path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(csv_path, format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.len() != meta.features + 1 || rows.iter().any(|r| r.len() != meta.outputs) {
            return Err(Error::parse(csv_path, "weight matrix shape mismatch"));
        }
        let bias = rows.pop().unwrap();
        Ok(LinearReadout {
            weights: rows.into_iter().flatten().collect(),
            bias,
            features: meta.features,
            outputs: meta.outputs,
            kind: meta.kind,
            standardizer: meta.standardizer,
            classes: meta.classes,
            feature_names: meta.feature_names,
        })
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    ClosedForm,
    GradientDescent,
}

/// Regression training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionCfg {
    pub method: TrainMethod,
    pub ridge_lambda: f64,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for RegressionCfg {
    fn default() -> Self {
        RegressionCfg {
            method: TrainMethod::ClosedForm,
            ridge_lambda: 1e-6,
            lr: 1e-2,
            iters: 20_000,
            seed: 0,
        }
    }
}

/// Logistic one-vs-all training configuration. Features are z-scored with
/// training-split statistics stored inside the readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCfg {
    pub l2_lambda: f64,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for LogisticCfg {
    fn default() -> Self {
        LogisticCfg {
            l2_lambda: 1e-4,
            lr: 0.1,
            iters: 2000,
            seed: 0,
        }
    }
}

/// Train a single-output linear readout.
///
/// Both methods minimize `(1/n) * (||X w + b - y||^2 + lambda ||w||^2)`
/// (bias unpenalized): closed form solves the ridge normal equations,
/// gradient descent runs `iters` full-batch steps from zero-initialized
/// weights. Both are deterministic given the configuration.
pub fn train_linear(x: &StateMatrix, y: &[f64], cfg: &RegressionCfg) -> Result<LinearReadout> {
    if x.rows != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} targets",
            x.rows,
            y.len()
        )));
    }
    if x.rows == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.ridge_lambda < 0.0 {
        return Err(Error::invalid("ridge_lambda must be >= 0"));
    }
    if cfg.ridge_lambda == 0.0 && x.rows < x.cols + 1 {
        return Err(Error::invalid(format!(
            "{} rows cannot determine {} weights + bias; set ridge_lambda > 0",
            x.rows,
            x.cols + 1
        )));
    }
    let theta = match cfg.method {
        TrainMethod::ClosedForm => solve_ridge(x, y, cfg.ridge_lambda)?,
        TrainMethod::GradientDescent => gd_ridge(x, y, cfg),
    };
    let (bias, weights) = theta.split_last().map(|(b, w)| (*b, w.to_vec())).unwrap();
    Ok(LinearReadout {
        weights,
        bias: vec![bias],
        features: x.cols,
        outputs: 1,
        kind: ReadoutKind::Regression,
        standardizer: None,
        classes: None,
        feature_names: Some(x.col_names.clone()),
    })
}

/// Ridge normal equations via Cholesky; weights first, bias last.
fn solve_ridge(x: &StateMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let f = x.cols;
    let dim = f + 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    for (row, &yi) in x.rows_iter().zip(y) {
        for i in 0..f {
            for j in i..f {
                a[(i, j)] += row[i] * row[j];
            }
            a[(i, f)] += row[i];
            b[i] += row[i] * yi;
        }
        a[(f, f)] += 1.0;
        b[f] += yi;
    }
    // accumulation filled the upper triangle; mirror it
    for i in 0..dim {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    for i in 0..f {
        a[(i, i)] += lambda;
    }
    let chol = a.clone().cholesky().ok_or_else(|| {
        if lambda == 0.0 {
            Error::SingularSystem
        } else {
            Error::SolverFailed("ridge normal matrix not positive definite".into())
        }
    })?;
    Ok(chol.solve(&b).iter().copied().collect())
}

fn gd_ridge(x: &StateMatrix, y: &[f64], cfg: &RegressionCfg) -> Vec<f64> {
    let f = x.cols;
    let n = x.rows as f64;
    let mut theta = vec![0.0; f + 1];
    let mut grad = vec![0.0; f + 1];
    for _ in 0..cfg.iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &yi) in x.rows_iter().zip(y) {
            let mut pred = theta[f];
            for i in 0..f {
                pred += theta[i] * row[i];
            }
            let r = pred - yi;
            for i in 0..f {
                grad[i] += r * row[i];
            }
            grad[f] += r;
        }
        for i in 0..f {
            grad[i] = 2.0 / n * (grad[i] + cfg.ridge_lambda * theta[i]);
        }
        grad[f] *= 2.0 / n;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.lr * g;
        }
    }
    theta
}

/// Train a one-vs-all logistic readout by full-batch gradient descent on
/// z-scored features. Deterministic: weights start at zero.
pub fn train_logistic_ovr(
    x: &StateMatrix,
    labels: &[usize],
    cfg: &LogisticCfg,
) -> Result<LinearReadout> {
    if x.rows != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            x.rows,
            labels.len()
        )));
    }
    if x.rows == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "one-vs-all training needs at least two classes",
        ));
    }
    let standardizer = Standardizer::fit(x);
    let mut z = vec![0.0; x.rows * x.cols];
    for (i, row) in x.rows_iter().enumerate() {
        standardizer.apply(row, &mut z[i * x.cols..(i + 1) * x.cols]);
    }
    let f = x.cols;
    let n = x.rows;

    let per_class: Vec<(Vec<f64>, f64)> = classes
        .par_iter()
        .map(|&class| {
            let targets: Vec<f64> = labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { 0.0 })
                .collect();
            fit_binary_logistic(&z, n, f, &targets, cfg)
        })
        .collect();

    let mut weights = vec![0.0; f * classes.len()];
    let mut bias = vec![0.0; classes.len()];
    for (c, (w, b)) in per_class.iter().enumerate() {
        for i in 0..f {
            weights[i * classes.len() + c] = w[i];
        }
        bias[c] = *b;
    }
    Ok(LinearReadout {
        weights,
        bias,
        features: f,
        outputs: classes.len(),
        kind: ReadoutKind::LogisticOvr,
        standardizer: Some(standardizer),
        classes: Some(classes),
        feature_names: Some(x.col_names.clone()),
    })
}

/// Full-batch GD on `(1/n) sum CE + (lambda/2) ||w||^2` (bias unpenalized).
fn fit_binary_logistic(
    z: &[f64],
    n: usize,
    f: usize,
    targets: &[f64],
    cfg: &LogisticCfg,
) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; f];
    let mut b = 0.0;
    let mut grad = vec![0.0; f];
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &t) in z.chunks_exact(f).zip(targets) {
            let mut logit = b;
            for i in 0..f {
                logit += w[i] * row[i];
            }
            let err = sigmoid(logit) - t;
            for i in 0..f {
                grad[i] += err * row[i];
            }
            grad_b += err;
        }
        for i in 0..f {
            w[i] -= cfg.lr * (grad[i] * inv_n + cfg.l2_lambda * w[i]);
        }
        b -= cfg.lr * grad_b * inv_n;
    }
    (w, b)
}

/// Benchmark metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmse_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmse_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
}

/// Squared-error sum normalized by signal power: `sum (z-y)^2 / sum y^2`.
pub fn nmse_ratio(z: &[f64], y: &[f64]) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::Dimension("prediction/target length mismatch".into()));
    }
    let power: f64 = y.iter().map(|v| v * v).sum();
    if power <= 0.0 {
        return Err(Error::invalid("all-zero target signal"));
    }
    let err: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / power)
}

/// Squared-error sum normalized by signal variance:
/// `sum (z-y)^2 / sum (y - mean(y))^2`.
pub fn nmse_variance(z: &[f64], y: &[f64]) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::Dimension("prediction/target length mismatch".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var <= 0.0 {
        return Err(Error::invalid("constant target signal"));
    }
    let err: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / var)
}

/// Accuracy and confusion counts; `confusion[true][predicted]` over the
/// readout's class ordering.
pub fn evaluate_classification(
    readout: &LinearReadout,
    x: &StateMatrix,
    labels: &[usize],
) -> Result<Metrics> {
    if x.rows != labels.len() {
        return Err(Error::Dimension("row/label count mismatch".into()));
    }
    let classes = readout
        .classes
        .as_ref()
        .ok_or_else(|| Error::invalid("readout has no classes"))?;
    let class_index = |label: usize| -> Result<usize> {
        classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::invalid(format!("label {label} outside training classes")))
    };
    let predictions = readout.predict_labels(x)?;
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for (&truth, &pred) in labels.iter().zip(&predictions) {
        let ti = class_index(truth)?;
        let pi = class_index(pred)?;
        confusion[ti][pi] += 1;
        if truth == pred {
            correct += 1;
        }
    }
    Ok(Metrics {
        accuracy: Some(correct as f64 / labels.len() as f64),
        confusion: Some(confusion),
        ..Default::default()
    })
}
