//! One-hidden-layer classifier trained by plain mini-batch SGD.
//!
//! `x → relu(W1·x + b1) → softmax(W2·h + b2)`. Any [`LossKind`] can drive
//! training; its gradient with respect to the probabilities is pulled back
//! through the softmax Jacobian and both dense layers.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{one_hot, LossKind, PredictionBatch};
use crate::metrics::MetricsReport;
use crate::synthdata::SplitDataset;

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// hidden × input
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// classes × hidden
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Parameter gradients, shaped like [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Gradients {
    fn all_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .all(|v| v.is_finite())
    }
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive, got {input_dim}/{hidden_dim}/{n_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = glorot(&mut rng, hidden_dim, input_dim);
        let w2 = glorot(&mut rng, n_classes, hidden_dim);
        Ok(Self {
            w1,
            b1: DVector::zeros(hidden_dim),
            w2,
            b2: DVector::zeros(n_classes),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.nrows()
    }

    fn all_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .all(|v| v.is_finite())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input columns", self.input_dim()),
                actual: format!("{} input columns", x.ncols()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut hidden = x * self.w1.transpose();
        for mut row in hidden.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b1.iter()) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut probs = &hidden * self.w2.transpose();
        for mut row in probs.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b2.iter()) {
                *v += b;
            }
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let sum = row.sum();
            row.apply(|v| *v /= sum);
        }
        (hidden, probs)
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).1)
    }

    /// Backpropagates `dL/dP` to the parameters.
    fn backward(
        &self,
        x: &DMatrix<f64>,
        hidden: &DMatrix<f64>,
        probs: &DMatrix<f64>,
        grad_probs: &DMatrix<f64>,
    ) -> Gradients {
        // Softmax Jacobian: dZ = P ⊙ (G − rowsum(G ⊙ P))
        let mut dz = grad_probs.component_mul(probs);
        for (i, mut row) in dz.row_iter_mut().enumerate() {
            let inner = grad_probs.row(i).dot(&probs.row(i));
            for (c, v) in row.iter_mut().enumerate() {
                *v -= probs[(i, c)] * inner;
            }
        }
        let w2 = dz.transpose() * hidden;
        let b2 = row_sums(&dz);
        let mut dh = &dz * &self.w2;
        dh.zip_apply(hidden, |g, h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = dh.transpose() * x;
        let b1 = row_sums(&dh);
        Gradients { w1, b1, w2, b2 }
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        self.w1 -= &grads.w1 * lr;
        self.b1.axpy(-lr, &grads.b1, 1.0);
        self.w2 -= &grads.w2 * lr;
        self.b2.axpy(-lr, &grads.b2, 1.0);
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_iter()
        .fold(DVector::zeros(m.ncols()), |acc, r| acc + r.transpose())
}

/// Loss on a batch and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &MlpModel,
    x: &DMatrix<f64>,
    y_onehot: &DMatrix<f64>,
    loss: LossKind,
) -> Result<(f64, Gradients)> {
    model.check_input(x)?;
    if x.nrows() == 0 {
        return Err(Error::InvalidBatch("batch is empty".into()));
    }
    let (hidden, probs) = model.forward_cached(x);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    let batch = PredictionBatch::from_raw(y_onehot.clone(), probs.clone())?;
    let result = loss.evaluate(&batch)?;
    Ok((
        result.value,
        model.backward(x, &hidden, &probs, &result.grad),
    ))
}

/// One SGD update `θ ← θ − lr·∇θ`; returns the pre-update loss.
pub fn train_step(
    model: &mut MlpModel,
    x: &DMatrix<f64>,
    y_onehot: &DMatrix<f64>,
    loss: LossKind,
    learning_rate: f64,
) -> Result<f64> {
    let (value, grads) = loss_and_gradients(model, x, y_onehot, loss)?;
    if !value.is_finite() || !grads.all_finite() {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    model.apply(&grads, learning_rate);
    if !model.all_finite() {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 32,
            loss: LossKind::Cce,
            seed: 0,
        }
    }
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-loss value over the epoch's batches.
    pub train_loss: f64,
    pub acc: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub pr_auc: f64,
    /// Not part of the trace CSV; `None` after reading one back.
    pub pr_auc_macro: Option<f64>,
    pub cce: f64,
    pub mse: f64,
    /// Wall time of the epoch, test evaluation included.
    pub sec: f64,
}

pub const TRACE_HEADER: &str = "epoch,train_loss,acc,f1_micro,f1_macro,pr_auc,cce,mse,sec";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, f: impl Fn(&EpochRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn max_of(&self, f: impl Fn(&EpochRecord) -> f64) -> Option<f64> {
        self.records.iter().map(f).reduce(f64::max)
    }

    pub fn min_of(&self, f: impl Fn(&EpochRecord) -> f64) -> Option<f64> {
        self.records.iter().map(f).reduce(f64::min)
    }

    pub fn mean_sec(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.column(|r| r.sec).iter().sum::<f64>() / self.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{TRACE_HEADER}").map_err(io)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.train_loss, r.acc, r.f1_micro, r.f1_macro, r.pr_auc, r.cce, r.mse, r.sec
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            Some(h) => return Err(parse_err(1, format!("unexpected header '{h}'"))),
            None => return Err(parse_err(1, "empty trace file".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i as u64 + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(parse_err(
                    line_no,
                    format!("expected 9 fields, found {}", fields.len()),
                ));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k].trim().parse().map_err(|_| {
                    parse_err(
                        line_no,
                        format!("field {k}: '{}' is not a number", fields[k]),
                    )
                })
            };
            let epoch = fields[0].trim().parse().map_err(|_| {
                parse_err(line_no, format!("epoch '{}' is not an integer", fields[0]))
            })?;
            records.push(EpochRecord {
                epoch,
                train_loss: num(1)?,
                acc: num(2)?,
                f1_micro: num(3)?,
                f1_macro: num(4)?,
                pr_auc: num(5)?,
                pr_auc_macro: None,
                cce: num(6)?,
                mse: num(7)?,
                sec: num(8)?,
            });
        }
        Ok(Self { records })
    }
}

/// A training run that stopped early; `partial` holds the completed epochs.
#[derive(Debug)]
pub struct TrainFailure {
    pub partial: TrainTrace,
    pub error: Error,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} completed epochs",
            self.error,
            self.partial.len()
        )
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn validate_config(config: &TrainConfig) -> Result<()> {
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be nonnegative, got {}",
            config.learning_rate
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(())
}

/// Trains for `config.epochs` epochs, evaluating on the test split after each.
///
/// Each epoch reshuffles the training rows with a generator seeded once from
/// `config.seed`; the final short batch is kept.
pub fn train(
    model: &mut MlpModel,
    data: &SplitDataset,
    config: &TrainConfig,
) -> Result<TrainTrace, TrainFailure> {
    let mut trace = TrainTrace::default();
    let fail = |trace: TrainTrace, error: Error| TrainFailure {
        partial: trace,
        error,
    };
    if let Err(e) = validate_config(config) {
        return Err(fail(trace, e));
    }
    let (train, test) = (&data.train, &data.test);
    if train.is_empty() || test.is_empty() {
        return Err(fail(trace, Error::InvalidArgument("empty split".into())));
    }
    if train.n_features() != model.input_dim() {
        return Err(fail(
            trace,
            Error::ShapeMismatch {
                expected: format!("{} features", model.input_dim()),
                actual: format!("{} features", train.n_features()),
            },
        ));
    }
    let n_classes = model.n_classes();
    if let Some(&l) = train
        .labels
        .iter()
        .chain(&test.labels)
        .find(|&&l| l >= n_classes)
    {
        return Err(fail(
            trace,
            Error::InvalidArgument(format!("label {l} out of range for {n_classes} classes")),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let d = train.n_features();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let x = DMatrix::from_fn(rows.len(), d, |r, c| train.features[(rows[r], c)]);
            let labels: Vec<usize> = rows.iter().map(|&r| train.labels[r]).collect();
            let y = one_hot(&labels, n_classes);
            match train_step(model, &x, &y, config.loss, config.learning_rate) {
                Ok(v) => loss_sum += v,
                Err(Error::Diverged { .. }) => {
                    return Err(fail(
                        trace,
                        Error::Diverged {
                            epoch,
                            batch: b + 1,
                        },
                    ))
                }
                Err(e) => return Err(fail(trace, e)),
            }
            batches += 1;
        }
        let probs = match model.forward(&test.features) {
            Ok(p) if p.iter().all(|v| v.is_finite()) => p,
            // Weights blew up on the last update without turning non-finite.
            Ok(_) => {
                return Err(fail(
                    trace,
                    Error::Diverged {
                        epoch,
                        batch: batches,
                    },
                ))
            }
            Err(e) => return Err(fail(trace, e)),
        };
        let report = match MetricsReport::evaluate(&test.labels, &probs) {
            Ok(r) => r,
            Err(e) => return Err(fail(trace, e)),
        };
        trace.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            acc: report.accuracy,
            f1_micro: report.f1_micro,
            f1_macro: report.f1_macro,
            pr_auc: report.pr_auc,
            pr_auc_macro: Some(report.pr_auc_macro),
            cce: report.cce,
            mse: report.mse,
            sec: start.elapsed().as_secs_f64(),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::Dataset;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpModel::init(20, 32, 10, 5).unwrap();
        assert_eq!(a, MlpModel::init(20, 32, 10, 5).unwrap());
        assert_ne!(a, MlpModel::init(20, 32, 10, 6).unwrap());
        assert!(a.b1.iter().chain(a.b2.iter()).all(|&b| b == 0.0));
        let bound = (6.0f64 / 52.0).sqrt();
        assert!(a.w1.iter().all(|w| w.abs() <= bound));
        assert!(MlpModel::init(0, 32, 10, 0).is_err());
    }

    #[test]
    fn forward_rows_on_simplex() {
        let m = MlpModel::init(3, 8, 4, 1).unwrap();
        let x = DMatrix::from_fn(5, 3, |r, c| (r as f64 - 2.0) * 10.0 + c as f64);
        let p = m.forward(&x).unwrap();
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let bad = DMatrix::from_element(1, 3, f64::NAN);
        assert!(m.forward(&bad).is_err());
        assert!(m.forward(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = MlpModel::init(3, 4, 5, 0).unwrap();
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        let p = m.forward(&DMatrix::from_element(2, 3, 1.5)).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let mut m = MlpModel::init(2, 4, 2, 0).unwrap();
        let before = m.clone();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = one_hot(&[0, 1], 2);
        train_step(&mut m, &x, &y, LossKind::Magnitude, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn cce_step_decreases_loss() {
        let mut m = MlpModel::init(2, 4, 2, 3).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = one_hot(&[0, 1], 2);
        let before = train_step(&mut m, &x, &y, LossKind::Cce, 0.1).unwrap();
        let (after, _) = loss_and_gradients(&m, &x, &y, LossKind::Cce).unwrap();
        assert!(after < before);
    }

    fn toy_split() -> SplitDataset {
        let features = DMatrix::from_fn(40, 2, |r, c| if (r % 2) == c { 1.0 } else { -1.0 });
        let labels = (0..40).map(|r| r % 2).collect();
        let data = Dataset::new(features, labels).unwrap();
        crate::synthdata::split(&data, 0.75, 0).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = MlpModel::init(2, 4, 2, 0).unwrap();
        let before = m.clone();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trace = train(&mut m, &toy_split(), &config).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn trace_has_one_record_per_epoch() {
        let mut m = MlpModel::init(2, 4, 2, 0).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 7,
            loss: LossKind::Spread,
            ..TrainConfig::default()
        };
        let trace = train(&mut m, &toy_split(), &config).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.column(|r| r.epoch as f64), vec![1.0, 2.0, 3.0]);
        assert!(trace.records.iter().all(|r| r.sec >= 0.0));
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        let mut m = MlpModel::init(2, 4, 2, 0).unwrap();
        let config = TrainConfig {
            epochs: 5,
            learning_rate: 1e308,
            ..TrainConfig::default()
        };
        let err = train(&mut m, &toy_split(), &config).unwrap_err();
        assert!(
            matches!(err.error, Error::Diverged { epoch: 1, .. }),
            "{err}"
        );
        assert!(err.partial.is_empty());
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut m = MlpModel::init(2, 4, 2, 0).unwrap();
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let trace = train(&mut m, &toy_split(), &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let back = TrainTrace::read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in trace.records.iter().zip(&back.records) {
            assert_eq!(
                EpochRecord {
                    pr_auc_macro: None,
                    ..*a
                },
                *b
            );
        }
        std::fs::write(&path, "epoch,acc\n").unwrap();
        assert!(TrainTrace::read_csv(&path).is_err());
    }
}
