//! Shared oracles and random instance generators for the integration tests.
#![allow(dead_code)]

use cardloss::invariants::PointCloud;
use cardloss::losses::{one_hot, PredictionBatch, TripletBatch};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − n| / max(|a| + |n|, 1e-5)`. Central differences at `h = 1e-5` carry
/// about `1e-10` of rounding noise, so entries smaller than the floor are
/// compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-5)
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error between two gradients.
pub fn worst_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

pub fn flatten_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect()
}

pub fn from_rows(rows: usize, cols: usize, flat: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, flat)
}

/// Random cloud whose points are pairwise at least `min_sep` apart.
pub fn random_cloud(rng: &mut impl Rng, n: usize, dim: usize, min_sep: f64) -> PointCloud {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let far = pts.iter().all(|q| {
            q.iter()
                .zip(&p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= min_sep
        });
        if far {
            pts.push(p);
        }
    }
    PointCloud::new(pts).unwrap()
}

/// Softmax rows of random logits against random one-hot targets.
pub fn random_batch(rng: &mut impl Rng, b: usize, n: usize) -> PredictionBatch {
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..n)).collect();
    let mut pred = DMatrix::from_fn(b, n, |_, _| rng.gen_range(-2.0..2.0f64));
    for mut row in pred.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row.apply(|v| *v /= s);
    }
    PredictionBatch::new(one_hot(&labels, n), pred).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_triplets(rng: &mut impl Rng, b: usize, m: usize, k: usize) -> TripletBatch {
    TripletBatch::new(
        random_matrix(rng, b, m, 1.0),
        random_matrix(rng, b, m, 1.0),
        random_matrix(rng, b, k, 1.0),
        random_matrix(rng, b, k, 1.0),
        random_matrix(rng, b, k, 1.0),
        rng.gen_range(0.5..2.0),
    )
    .unwrap()
}

use cardloss::invariants::{self as inv, Invariant};
use cardloss::losses::{
    contrastive_base_loss, division_magnitude_loss, division_spread_loss, DivisorSource, LossKind,
    TripletLossResult,
};
use cardloss::nn::{self, MlpModel};

/// Worst relative error of an invariant's analytic gradient.
pub fn invariant_gradient_error(which: Invariant, cloud: &PointCloud, t: f64) -> f64 {
    let analytic: Vec<f64> = match which {
        Invariant::Magnitude => inv::magnitude_gradient(cloud, t).unwrap(),
        Invariant::Spread => inv::spread_gradient(cloud, t).unwrap(),
    }
    .concat();
    let dim = cloud.dim();
    let numeric = central_differences(cloud.as_flat(), FD_STEP, |x| {
        let c = PointCloud::from_flat(dim, x.to_vec()).unwrap();
        inv::evaluate(which, &c, t).unwrap()
    });
    worst_error(&analytic, &numeric)
}

/// Worst relative error of a classification loss's gradient in `y_pred`.
pub fn loss_gradient_error(kind: LossKind, batch: &PredictionBatch) -> f64 {
    let (b, n) = (batch.batch_size(), batch.n_classes());
    let analytic = flatten_rows(&kind.evaluate(batch).unwrap().grad);
    let numeric = central_differences(&flatten_rows(batch.y_pred()), FD_STEP, |p| {
        let probe = PredictionBatch::from_raw(batch.y_true().clone(), from_rows(b, n, p)).unwrap();
        kind.evaluate(&probe).unwrap().value
    });
    worst_error(&analytic, &numeric)
}

#[derive(Debug, Clone, Copy)]
pub enum TripletLoss {
    Contrastive,
    DivisionMagnitude(DivisorSource),
    DivisionSpread(DivisorSource),
}

pub fn triplet_loss(which: TripletLoss, batch: &TripletBatch) -> TripletLossResult {
    let base = contrastive_base_loss(batch);
    match which {
        TripletLoss::Contrastive => base,
        TripletLoss::DivisionMagnitude(s) => division_magnitude_loss(batch, &base, s).unwrap(),
        TripletLoss::DivisionSpread(s) => division_spread_loss(batch, &base, s).unwrap(),
    }
}

/// Worst relative error over the gradients of all five triplet matrices.
pub fn triplet_gradient_error(which: TripletLoss, batch: &TripletBatch) -> f64 {
    let result = triplet_loss(which, batch);
    let parts: [(&DMatrix<f64>, &DMatrix<f64>); 5] = [
        (&batch.anchor_inputs, &result.grad_anchor_inputs),
        (&batch.negative_inputs, &result.grad_negative_inputs),
        (&batch.anchor_emb, &result.grad_anchor_emb),
        (&batch.positive_emb, &result.grad_positive_emb),
        (&batch.negative_emb, &result.grad_negative_emb),
    ];
    let mut worst = 0.0f64;
    for (k, (m, g)) in parts.iter().enumerate() {
        let (r, c) = m.shape();
        let numeric = central_differences(&flatten_rows(m), FD_STEP, |x| {
            let mut probe = batch.clone();
            let slot = match k {
                0 => &mut probe.anchor_inputs,
                1 => &mut probe.negative_inputs,
                2 => &mut probe.anchor_emb,
                3 => &mut probe.positive_emb,
                _ => &mut probe.negative_emb,
            };
            *slot = from_rows(r, c, x);
            triplet_loss(which, &probe).value
        });
        worst = worst.max(worst_error(&flatten_rows(g), &numeric));
    }
    worst
}

fn model_params(m: &MlpModel) -> Vec<f64> {
    [
        m.w1.as_slice(),
        m.b1.as_slice(),
        m.w2.as_slice(),
        m.b2.as_slice(),
    ]
    .concat()
}

fn with_params(m: &MlpModel, p: &[f64]) -> MlpModel {
    let mut out = m.clone();
    let (a, rest) = p.split_at(m.w1.len());
    let (b, rest) = rest.split_at(m.b1.len());
    let (c, d) = rest.split_at(m.w2.len());
    out.w1.copy_from_slice(a);
    out.b1.copy_from_slice(b);
    out.w2.copy_from_slice(c);
    out.b2.copy_from_slice(d);
    out
}

/// Worst relative error of the end-to-end parameter gradient.
pub fn mlp_gradient_error(
    kind: LossKind,
    model: &MlpModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> f64 {
    let (_, g) = nn::loss_and_gradients(model, x, y, kind).unwrap();
    let analytic = [
        g.w1.as_slice(),
        g.b1.as_slice(),
        g.w2.as_slice(),
        g.b2.as_slice(),
    ]
    .concat();
    let numeric = central_differences(&model_params(model), FD_STEP, |p| {
        nn::loss_and_gradients(&with_params(model, p), x, y, kind)
            .unwrap()
            .0
    });
    worst_error(&analytic, &numeric)
}
