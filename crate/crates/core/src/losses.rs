//! Classification and triplet losses with gradients.
//!
//! The cardinality-augmented losses treat a batch as the *set* of its error
//! vectors `y_true − y_pred` together with the origin, and measure how many
//! "effectively distinct" errors it contains:
//!
//! ```text
//! magnitude_loss = |{y_true − y_pred} ∪ {0}| − 1
//! spread_loss    = E₀({y_true − y_pred} ∪ {0}) − 1
//! ```
//!
//! A perfect batch collapses onto the origin and scores 0. Repeated identical
//! errors are merged before the invariant is taken, so they count once.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::invariants::{self, Invariant, PointCloud, DEFAULT_DEDUP_TOL};

/// Probability clamp applied before taking logarithms in cross-entropy.
pub const CCE_EPS: f64 = 1e-7;

/// One-hot targets and predicted class probabilities for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    y_true: DMatrix<f64>,
    y_pred: DMatrix<f64>,
}

impl PredictionBatch {
    /// Validates one-hot targets and simplex predictions.
    pub fn new(y_true: DMatrix<f64>, y_pred: DMatrix<f64>) -> Result<Self> {
        let batch = Self::from_raw(y_true, y_pred)?;
        for (i, row) in batch.y_true.row_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidBatch(format!(
                    "y_true row {i} is not one-hot"
                )));
            }
        }
        for (i, row) in batch.y_pred.row_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidBatch(format!(
                    "y_pred row {i} has entries outside [0, 1]"
                )));
            }
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidBatch(format!(
                    "y_pred row {i} sums to {}, not 1",
                    row.sum()
                )));
            }
        }
        Ok(batch)
    }

    /// Skips the one-hot and simplex checks; only shapes and finiteness are
    /// validated. Useful for gradient checks that perturb single entries.
    pub fn from_raw(y_true: DMatrix<f64>, y_pred: DMatrix<f64>) -> Result<Self> {
        if y_true.shape() != y_pred.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", y_true.shape()),
                actual: format!("{:?}", y_pred.shape()),
            });
        }
        if y_true.nrows() == 0 || y_true.ncols() == 0 {
            return Err(Error::InvalidBatch("batch is empty".into()));
        }
        if y_true.iter().chain(y_pred.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction batch".into()));
        }
        Ok(Self { y_true, y_pred })
    }

    /// Builds a batch from integer labels.
    pub fn from_labels(labels: &[usize], y_pred: DMatrix<f64>) -> Result<Self> {
        let n = y_pred.ncols();
        if labels.len() != y_pred.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", y_pred.nrows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::InvalidBatch(format!(
                "label {l} out of range for {n} classes"
            )));
        }
        Self::new(one_hot(labels, n), y_pred)
    }

    pub fn y_true(&self) -> &DMatrix<f64> {
        &self.y_true
    }

    pub fn y_pred(&self) -> &DMatrix<f64> {
        &self.y_pred
    }

    pub fn batch_size(&self) -> usize {
        self.y_true.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.y_true.ncols()
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    m
}

/// Loss value and its gradient with respect to `y_pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// Losses available for training a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Magnitude,
    Spread,
    Cce,
    Mse,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Magnitude,
        LossKind::Cce,
        LossKind::Spread,
        LossKind::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Magnitude => "magnitude",
            LossKind::Spread => "spread",
            LossKind::Cce => "cce",
            LossKind::Mse => "mse",
        }
    }

    pub fn evaluate(self, batch: &PredictionBatch) -> Result<LossResult> {
        match self {
            LossKind::Magnitude => magnitude_loss(batch),
            LossKind::Spread => spread_loss(batch),
            LossKind::Cce => Ok(cce_loss(batch)),
            LossKind::Mse => Ok(mse_loss(batch)),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "magnitude" | "mag" => Ok(LossKind::Magnitude),
            "spread" => Ok(LossKind::Spread),
            "cce" | "crossentropy" => Ok(LossKind::Cce),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

/// Invariant of the deduplicated error set with the origin, minus one.
fn cardinality_loss(batch: &PredictionBatch, which: Invariant) -> Result<LossResult> {
    let (b, n) = batch.y_true.shape();
    // The origin goes first so it always represents its own group.
    let mut coords = vec![0.0; (b + 1) * n];
    for i in 0..b {
        for c in 0..n {
            coords[(i + 1) * n + c] = batch.y_true[(i, c)] - batch.y_pred[(i, c)];
        }
    }
    let cloud = PointCloud::from_flat(n, coords)?;
    let (groups, dist) = invariants::dedup_with_distances(&cloud, DEFAULT_DEDUP_TOL)?;
    let (value, rep_grad) =
        invariants::value_and_grad_with_distances(which, &groups.cloud, &dist, 1.0)?;
    let per_point = groups.distribute(&rep_grad);

    let origin = groups.representative[0];
    let mut grad = DMatrix::zeros(b, n);
    for i in 0..b {
        // Errors merged into the origin do not move it.
        if groups.representative[i + 1] == origin {
            continue;
        }
        for c in 0..n {
            // e = y_true − y_pred
            grad[(i, c)] = -per_point[(i + 1) * n + c];
        }
    }
    Ok(LossResult {
        value: value - 1.0,
        grad,
    })
}

/// `|{y_true − y_pred} ∪ {0}| − 1`, evaluated at scale 1.
pub fn magnitude_loss(batch: &PredictionBatch) -> Result<LossResult> {
    cardinality_loss(batch, Invariant::Magnitude)
}

/// `E₀({y_true − y_pred} ∪ {0}) − 1`, evaluated at scale 1.
pub fn spread_loss(batch: &PredictionBatch) -> Result<LossResult> {
    cardinality_loss(batch, Invariant::Spread)
}

/// Mean categorical cross-entropy with probabilities clamped to
/// `[CCE_EPS, 1 − CCE_EPS]`.
pub fn cce_loss(batch: &PredictionBatch) -> LossResult {
    let (b, n) = batch.y_true.shape();
    let mut grad = DMatrix::zeros(b, n);
    let mut total = 0.0;
    for i in 0..b {
        for c in 0..n {
            let y = batch.y_true[(i, c)];
            if y == 0.0 {
                continue;
            }
            let p = batch.y_pred[(i, c)];
            let clamped = p.clamp(CCE_EPS, 1.0 - CCE_EPS);
            total -= y * clamped.ln();
            if p == clamped {
                grad[(i, c)] = -y / (clamped * b as f64);
            }
        }
    }
    LossResult {
        value: total / b as f64,
        grad,
    }
}

/// Mean squared error over all `b·n` entries.
pub fn mse_loss(batch: &PredictionBatch) -> LossResult {
    let count = batch.y_true.len() as f64;
    let diff = &batch.y_pred - &batch.y_true;
    LossResult {
        value: diff.norm_squared() / count,
        grad: diff * (2.0 / count),
    }
}

/// Welsch-Leclerc loss `1 − exp(−½‖y_true − y_pred‖²)` for a single sample.
pub fn welsch_leclerc(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("length {}", y_true.len()),
            actual: format!("length {}", y_pred.len()),
        });
    }
    let sq: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - (-0.5 * sq).exp())
}

/// Anchors with positive and negative partners, as raw inputs and as network
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchor_inputs: DMatrix<f64>,
    pub negative_inputs: DMatrix<f64>,
    pub anchor_emb: DMatrix<f64>,
    pub positive_emb: DMatrix<f64>,
    pub negative_emb: DMatrix<f64>,
    pub temperature: f64,
}

impl TripletBatch {
    pub fn new(
        anchor_inputs: DMatrix<f64>,
        negative_inputs: DMatrix<f64>,
        anchor_emb: DMatrix<f64>,
        positive_emb: DMatrix<f64>,
        negative_emb: DMatrix<f64>,
        temperature: f64,
    ) -> Result<Self> {
        let b = anchor_inputs.nrows();
        if b == 0 {
            return Err(Error::InvalidBatch("triplet batch is empty".into()));
        }
        if negative_inputs.shape() != anchor_inputs.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", anchor_inputs.shape()),
                actual: format!("{:?}", negative_inputs.shape()),
            });
        }
        for m in [&positive_emb, &negative_emb] {
            if m.shape() != anchor_emb.shape() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", anchor_emb.shape()),
                    actual: format!("{:?}", m.shape()),
                });
            }
        }
        if anchor_emb.nrows() != b {
            return Err(Error::ShapeMismatch {
                expected: format!("{b} embedding rows"),
                actual: format!("{} embedding rows", anchor_emb.nrows()),
            });
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let all = [
            &anchor_inputs,
            &negative_inputs,
            &anchor_emb,
            &positive_emb,
            &negative_emb,
        ];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("triplet batch".into()));
        }
        Ok(Self {
            anchor_inputs,
            negative_inputs,
            anchor_emb,
            positive_emb,
            negative_emb,
            temperature,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.anchor_inputs.nrows()
    }
}

/// Triplet loss value with gradients for every matrix of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLossResult {
    pub value: f64,
    pub grad_anchor_emb: DMatrix<f64>,
    pub grad_positive_emb: DMatrix<f64>,
    pub grad_negative_emb: DMatrix<f64>,
    pub grad_anchor_inputs: DMatrix<f64>,
    pub grad_negative_inputs: DMatrix<f64>,
}

/// Which differences feed the divisor of a division loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DivisorSource {
    /// Raw inputs `s − n`.
    #[default]
    RawInputs,
    /// Embeddings `N(s) − N(n)`.
    Embeddings,
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over triplets of `log(1 + exp(−(N(s)·N(p) − N(s)·N(n)) / τ))`.
///
/// The elementwise products are summed over embedding components so the
/// exponent is a scalar.
pub fn contrastive_base_loss(batch: &TripletBatch) -> TripletLossResult {
    let b = batch.batch_size();
    let tau = batch.temperature;
    let (a, p, n) = (&batch.anchor_emb, &batch.positive_emb, &batch.negative_emb);
    let mut grad_a = DMatrix::zeros(a.nrows(), a.ncols());
    let mut grad_p = grad_a.clone();
    let mut grad_n = grad_a.clone();
    let mut total = 0.0;
    for i in 0..b {
        let z = a.row(i).dot(&p.row(i)) - a.row(i).dot(&n.row(i));
        total += log1p_exp(-z / tau);
        // d/dz log(1 + e^{-z/τ}) = -sigmoid(-z/τ)/τ
        let dz = -sigmoid(-z / tau) / (tau * b as f64);
        grad_a.set_row(i, &((p.row(i) - n.row(i)) * dz));
        grad_p.set_row(i, &(a.row(i) * dz));
        grad_n.set_row(i, &(a.row(i) * -dz));
    }
    TripletLossResult {
        value: total / b as f64,
        grad_anchor_emb: grad_a,
        grad_positive_emb: grad_p,
        grad_negative_emb: grad_n,
        grad_anchor_inputs: DMatrix::zeros(b, batch.anchor_inputs.ncols()),
        grad_negative_inputs: DMatrix::zeros(b, batch.negative_inputs.ncols()),
    }
}

fn division_loss(
    batch: &TripletBatch,
    base: &TripletLossResult,
    which: Invariant,
    source: DivisorSource,
) -> Result<TripletLossResult> {
    let (s, n) = match source {
        DivisorSource::RawInputs => (&batch.anchor_inputs, &batch.negative_inputs),
        DivisorSource::Embeddings => (&batch.anchor_emb, &batch.negative_emb),
    };
    let cloud = PointCloud::from_rows(&(s - n))?;
    let (groups, dist) = invariants::dedup_with_distances(&cloud, DEFAULT_DEDUP_TOL)?;
    let (divisor, rep_grad) =
        invariants::value_and_grad_with_distances(which, &groups.cloud, &dist, 1.0)?;
    let per_point = groups.distribute(&rep_grad);

    let mut out = TripletLossResult {
        value: base.value / divisor,
        grad_anchor_emb: &base.grad_anchor_emb / divisor,
        grad_positive_emb: &base.grad_positive_emb / divisor,
        grad_negative_emb: &base.grad_negative_emb / divisor,
        grad_anchor_inputs: &base.grad_anchor_inputs / divisor,
        grad_negative_inputs: &base.grad_negative_inputs / divisor,
    };
    // Quotient rule: d(L/D) = dL/D − L·dD/D², and the difference s − n
    // routes dD to s with + and to n with −.
    let coef = -base.value / (divisor * divisor);
    let dim = cloud.dim();
    let (gs, gn) = match source {
        DivisorSource::RawInputs => (&mut out.grad_anchor_inputs, &mut out.grad_negative_inputs),
        DivisorSource::Embeddings => (&mut out.grad_anchor_emb, &mut out.grad_negative_emb),
    };
    for i in 0..cloud.len() {
        for c in 0..dim {
            let g = coef * per_point[i * dim + c];
            gs[(i, c)] += g;
            gn[(i, c)] -= g;
        }
    }
    Ok(out)
}

/// Base triplet loss divided by the magnitude of the set of differences.
pub fn division_magnitude_loss(
    batch: &TripletBatch,
    base: &TripletLossResult,
    source: DivisorSource,
) -> Result<TripletLossResult> {
    division_loss(batch, base, Invariant::Magnitude, source)
}

/// Base triplet loss divided by the spread of the set of differences.
pub fn division_spread_loss(
    batch: &TripletBatch,
    base: &TripletLossResult,
    source: DivisorSource,
) -> Result<TripletLossResult> {
    division_loss(batch, base, Invariant::Spread, source)
}
