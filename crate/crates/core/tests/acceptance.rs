//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use cardloss::experiment::{bench, run_comparison, ComparisonReport, ExperimentConfig, Metric};
use cardloss::invariants::{self as inv, Invariant, PointCloud};
use cardloss::losses::{
    contrastive_base_loss, division_magnitude_loss, division_spread_loss, magnitude_loss, one_hot,
    spread_loss, welsch_leclerc, DivisorSource, LossKind, PredictionBatch,
};
use cardloss::metrics::MetricsReport;
use cardloss::nn::{MlpModel, TrainConfig};
use cardloss::synthdata::{generate, split, DatasetSpec, SplitDataset};
use common::*;
use nalgebra::DMatrix;
use rand::Rng;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass: Some(pass),
        detail,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn two_point_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..200 {
        // Geometric grid over t·l in [0.01, 30].
        let s = 0.01 * (3000.0f64.ln() * i as f64 / 199.0).exp();
        let expected = 2.0 / (1.0 + (-s).exp());
        for (t, l) in [(s, 1.0), (1.0, s), (s.sqrt(), s.sqrt())] {
            let cloud = PointCloud::new(vec![vec![0.0], vec![l]]).unwrap();
            for which in [Invariant::Magnitude, Invariant::Spread] {
                worst = worst.max(rel(inv::evaluate(which, &cloud, t).unwrap(), expected));
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("two-point closed form, worst rel. error {worst:.1e} (tol 1e-10)"),
    )
}

fn equilateral_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for l in [0.1, 1.0, 5.0] {
        let h = l * 3.0f64.sqrt() / 2.0;
        let cloud = PointCloud::new(vec![vec![0.0, 0.0], vec![l, 0.0], vec![l / 2.0, h]]).unwrap();
        let expected = 3.0 / (1.0 + 2.0 * (-l).exp());
        for which in [Invariant::Magnitude, Invariant::Spread] {
            worst = worst.max(rel(inv::evaluate(which, &cloud, 1.0).unwrap(), expected));
        }
    }
    check(
        worst <= 1e-10,
        format!("equilateral triple, worst rel. error {worst:.1e} (tol 1e-10)"),
    )
}

fn spread_bounds() -> Outcome {
    let mut rng = rng(3);
    let grid: Vec<f64> = (0..100)
        .map(|i| 1e-3 * (1e5f64.ln() * i as f64 / 99.0).exp())
        .collect();
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let dim = rng.gen_range(2..=16);
        let cloud = random_cloud(&mut rng, n, dim, 0.05);
        let scan = inv::scale_scan(&cloud, &grid, Invariant::Spread).unwrap();
        let mut prev = 0.0;
        for (_, v) in scan {
            let v = v.unwrap();
            if !(1.0 - 1e-12..=n as f64 + 1e-12).contains(&v) || v < prev - 1e-12 {
                violations += 1;
            }
            prev = v;
        }
    }
    check(
        violations == 0,
        format!(
            "1 <= E0 <= #X and monotone in t on 1000 clouds x 100 scales, {violations} violations"
        ),
    )
}

fn gradient_suite() -> Outcome {
    let mut rng = rng(4);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for kind in LossKind::ALL {
        let e = (0..25)
            .map(|_| {
                let b = rng.gen_range(1..=16);
                loss_gradient_error(kind, &random_batch(&mut rng, b, 10))
            })
            .fold(0.0, f64::max);
        worst.push((kind.to_string(), e));
    }
    let triplets = [
        ("contrastive", TripletLoss::Contrastive),
        (
            "dmag",
            TripletLoss::DivisionMagnitude(DivisorSource::RawInputs),
        ),
        (
            "dmag-emb",
            TripletLoss::DivisionMagnitude(DivisorSource::Embeddings),
        ),
        (
            "dspr",
            TripletLoss::DivisionSpread(DivisorSource::RawInputs),
        ),
        (
            "dspr-emb",
            TripletLoss::DivisionSpread(DivisorSource::Embeddings),
        ),
    ];
    for (name, which) in triplets {
        let e = (0..25)
            .map(|_| {
                let (b, m, k) = (
                    rng.gen_range(1..=10),
                    rng.gen_range(2..=6),
                    rng.gen_range(2..=6),
                );
                triplet_gradient_error(which, &random_triplets(&mut rng, b, m, k))
            })
            .fold(0.0, f64::max);
        worst.push((name.to_string(), e));
    }
    for kind in LossKind::ALL {
        let e = (0..25u64)
            .map(|seed| {
                let model = MlpModel::init(20, 32, 10, seed).unwrap();
                let x = random_matrix(&mut rng, 8, 20, 2.0);
                let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..10)).collect();
                mlp_gradient_error(kind, &model, &x, &one_hot(&labels, 10))
            })
            .fold(0.0, f64::max);
        worst.push((format!("mlp/{kind}"), e));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        max <= 1e-4,
        format!(
            "finite differences, worst rel. error {max:.1e} (tol 1e-4): {}",
            parts.join(", ")
        ),
    )
}

fn set_semantics() -> Outcome {
    let mut rng = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let single = random_batch(&mut rng, 1, 10);
        for k in [2, 5, 32] {
            let rows = vec![0; k];
            let repeated = PredictionBatch::new(
                single.y_true().select_rows(&rows),
                single.y_pred().select_rows(&rows),
            )
            .unwrap();
            for loss in [magnitude_loss, spread_loss] {
                let d = (loss(&repeated).unwrap().value - loss(&single).unwrap().value).abs();
                worst = worst.max(d);
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("k identical errors score as one, worst difference {worst:.1e} (tol 1e-9)"),
    )
}

fn error_batch(d: f64) -> PredictionBatch {
    // Error vector of norm d along (1, -1)/√2.
    let a = d / 2.0f64.sqrt();
    let y = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let p = DMatrix::from_row_slice(1, 3, &[1.0 - a, a, 0.0]);
    PredictionBatch::from_raw(y, p).unwrap()
}

fn batch_size_one() -> Outcome {
    let mut worst = 0.0f64;
    let mut slopes_agree = true;
    let h = 1e-6;
    let wl = |d: f64| welsch_leclerc(&[0.0], &[d]).unwrap();
    for d in [0.1f64, 1.0, 3.0] {
        let expected = (d / 2.0).tanh();
        for loss in [magnitude_loss, spread_loss] {
            worst = worst.max((loss(&error_batch(d)).unwrap().value - expected).abs());
            let slope = (loss(&error_batch(d + h)).unwrap().value
                - loss(&error_batch(d - h)).unwrap().value)
                / (2.0 * h);
            let wl_slope = (wl(d + h) - wl(d - h)) / (2.0 * h);
            slopes_agree &= slope.signum() == wl_slope.signum();
        }
    }
    let wl_zero = wl(0.0) == 0.0 && magnitude_loss(&error_batch(0.0)).unwrap().value == 0.0;
    check(
        worst <= 1e-10 && slopes_agree && wl_zero,
        format!(
            "batch of one equals tanh(d/2), worst error {worst:.1e} (tol 1e-10); \
             Welsch-Leclerc slope signs agree: {slopes_agree}; zero at d=0: {wl_zero}"
        ),
    )
}

fn division_bounds() -> Outcome {
    let mut rng = rng(7);
    let mut violations = 0;
    for _ in 0..100 {
        let b = rng.gen_range(1..=32);
        let (m, k) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let batch = random_triplets(&mut rng, b, m, k);
        let base = contrastive_base_loss(&batch);
        for v in [
            division_magnitude_loss(&batch, &base, DivisorSource::RawInputs)
                .unwrap()
                .value,
            division_spread_loss(&batch, &base, DivisorSource::RawInputs)
                .unwrap()
                .value,
        ] {
            if v < base.value / b as f64 * (1.0 - 1e-12) || v > base.value * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    let mut batch = random_triplets(&mut rng, 16, 4, 4);
    let row = batch.anchor_inputs.row(0).clone_owned();
    for i in 0..16 {
        batch.anchor_inputs.set_row(i, &row);
    }
    batch.negative_inputs.fill(0.0);
    let base = contrastive_base_loss(&batch);
    let dm = division_magnitude_loss(&batch, &base, DivisorSource::RawInputs)
        .unwrap()
        .value;
    let ds = division_spread_loss(&batch, &base, DivisorSource::RawInputs)
        .unwrap()
        .value;
    let equal = rel(dm, base.value) <= 1e-12 && rel(ds, base.value) <= 1e-12;
    check(
        violations == 0 && equal,
        format!("base/b <= L <= base on 100 batches, {violations} violations; equals base when s-n coincide: {equal}"),
    )
}

fn majority_baseline(data90: &SplitDataset) -> Outcome {
    let test = &data90.test;
    let probs = one_hot(&vec![0; test.len()], 10);
    let r = MetricsReport::evaluate(&test.labels, &probs).unwrap();
    let closed_form = 2.0 * 0.9 / 1.9 / 10.0;
    check(
        (r.accuracy - 0.9).abs() <= 0.01 && (r.f1_macro - 0.0947).abs() <= 0.003,
        format!(
            "constant majority predictor: acc {:.4} (0.9 +- 0.01), F1-macro {:.4} (0.0947 +- 0.003, closed form {closed_form:.4})",
            r.accuracy, r.f1_macro
        ),
    )
}

fn medians(report: &ComparisonReport, metric: Metric) -> [f64; 4] {
    [
        LossKind::Magnitude,
        LossKind::Cce,
        LossKind::Spread,
        LossKind::Mse,
    ]
    .map(|l| report.median(metric, l).unwrap_or(f64::NAN))
}

fn fmt4(v: [f64; 4]) -> String {
    format!(
        "magnitude {:.4}, cce {:.4}, spread {:.4}, mse {:.4}",
        v[0], v[1], v[2], v[3]
    )
}

fn ordering_90(report: &ComparisonReport) -> Outcome {
    let f1 = medians(report, Metric::F1Macro);
    check(
        f1[0] > f1[1] && f1[1] > f1[2] && f1[2] > f1[3] && f1[0] >= 0.5,
        format!(
            "90% majority median max F1-macro: {}; need strict ordering and magnitude >= 0.50",
            fmt4(f1)
        ),
    )
}

fn ordering_50(report: &ComparisonReport) -> Outcome {
    let f1 = medians(report, Metric::F1Macro);
    let acc = medians(report, Metric::Accuracy);
    check(
        f1[0] > f1[1] && f1[1] > f1[2] && f1[2] > f1[3] && acc[0] >= acc[1],
        format!(
            "50% majority median max F1-macro: {}; median max acc magnitude {:.4} vs cce {:.4}",
            fmt4(f1),
            acc[0],
            acc[1]
        ),
    )
}

fn cross_loss(r90: &ComparisonReport, r50: &ComparisonReport) -> Outcome {
    let ratio = |r: &ComparisonReport| {
        let m = r
            .median(Metric::Cce, LossKind::Magnitude)
            .unwrap_or(f64::NAN);
        let c = r.median(Metric::Cce, LossKind::Cce).unwrap_or(f64::NAN);
        (m, c, m / c)
    };
    let (a, b) = (ratio(r90), ratio(r50));
    check(
        a.2 <= 1.10 && b.2 <= 1.10,
        format!(
            "median min test CCE, magnitude vs cce training: 90% {:.4} vs {:.4} (ratio {:.3}), 50% {:.4} vs {:.4} (ratio {:.3}); tol 1.10",
            a.0, a.1, a.2, b.0, b.1, b.2
        ),
    )
}

fn warmup(r90: &ComparisonReport, r50: &ComparisonReport) -> Outcome {
    let line = |r: &ComparisonReport| {
        let f = |l, e| r.median_accuracy_at(l, e).unwrap_or(f64::NAN);
        format!(
            "magnitude {:.4} -> {:.4}, cce {:.4} -> {:.4}",
            f(LossKind::Magnitude, 5),
            f(LossKind::Magnitude, 100),
            f(LossKind::Cce, 5),
            f(LossKind::Cce, 100)
        )
    };
    Outcome {
        pass: None,
        detail: format!(
            "median test accuracy, epoch 5 -> 100: 90% {}; 50% {}",
            line(r90),
            line(r50)
        ),
    }
}

fn timing(data50: &SplitDataset) -> Outcome {
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let rows = bench(
        data50,
        &cfg,
        32,
        &[
            LossKind::Cce,
            LossKind::Magnitude,
            LossKind::Cce,
            LossKind::Magnitude,
        ],
    )
    .unwrap();
    let mean = |l| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.loss == l)
            .map(|r| r.mean)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (m, c) = (mean(LossKind::Magnitude), mean(LossKind::Cce));
    check(
        m <= 1.25 * c,
        format!(
            "mean s/epoch at batch 32: magnitude {m:.5}, cce {c:.5}, ratio {:.3} (tol 1.25)",
            m / c
        ),
    )
}

fn comparison(majority: f64) -> ComparisonReport {
    let data = split(
        &generate(&DatasetSpec::imbalanced(majority, 0)).unwrap(),
        0.7,
        0,
    )
    .unwrap();
    let start = Instant::now();
    let report = run_comparison(&data, &ExperimentConfig::default()).unwrap();
    for run in report.failures() {
        println!(
            "  note: {} seed {} stopped: {}",
            run.loss,
            run.seed,
            run.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "  ({:.0}% majority comparison: {} runs in {:.0}s)",
        majority * 100.0,
        report.runs.len(),
        start.elapsed().as_secs_f64()
    );
    report
}

fn report(id: usize, outcome: &Outcome) -> bool {
    let status = match outcome.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "INFO",
    };
    println!("criterion {id:>2} {status}  {}", outcome.detail);
    outcome.pass != Some(false)
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, &two_point_oracle());
    ok &= report(2, &equilateral_oracle());
    ok &= report(3, &spread_bounds());
    ok &= report(4, &gradient_suite());
    ok &= report(5, &set_semantics());
    ok &= report(6, &batch_size_one());
    ok &= report(7, &division_bounds());
    let data90 = split(&generate(&DatasetSpec::imbalanced(0.9, 0)).unwrap(), 0.7, 0).unwrap();
    ok &= report(8, &majority_baseline(&data90));

    let r90 = comparison(0.9);
    let r50 = comparison(0.5);
    ok &= report(9, &ordering_90(&r90));
    ok &= report(10, &ordering_50(&r50));
    ok &= report(11, &cross_loss(&r90, &r50));
    ok &= report(12, &warmup(&r90, &r50));
    let data50 = split(&generate(&DatasetSpec::imbalanced(0.5, 0)).unwrap(), 0.7, 0).unwrap();
    ok &= report(13, &timing(&data50));

    if ok {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}
