//! Multi-loss, multi-seed training comparisons and per-epoch timing.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::{self, MlpModel, TrainConfig, TrainTrace, DEFAULT_HIDDEN};
use crate::synthdata::SplitDataset;

/// One row of a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    PrAuc,
    F1Macro,
    /// Minimum of the column loss's own training value; not comparable
    /// across columns.
    Loss,
    Cce,
    Mse,
    F1Micro,
    PrAucMacro,
    SecPerEpoch,
}

impl Metric {
    /// The first six rows form the main table.
    pub const ALL: [Metric; 9] = [
        Metric::Accuracy,
        Metric::PrAuc,
        Metric::F1Macro,
        Metric::Loss,
        Metric::Cce,
        Metric::Mse,
        Metric::F1Micro,
        Metric::PrAucMacro,
        Metric::SecPerEpoch,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc.",
            Metric::PrAuc => "PR-AUC",
            Metric::F1Macro => "F1Macro",
            Metric::Loss => "Loss",
            Metric::Cce => "CCE",
            Metric::Mse => "MSE",
            Metric::F1Micro => "F1Micro",
            Metric::PrAucMacro => "PR-AUC-macro",
            Metric::SecPerEpoch => "s/epoch",
        }
    }

    /// Best value of the metric over a trace: maxima for scores, minima for
    /// losses, the mean for wall time.
    pub fn of(self, trace: &TrainTrace) -> Option<f64> {
        match self {
            Metric::Accuracy => trace.max_of(|r| r.acc),
            Metric::PrAuc => trace.max_of(|r| r.pr_auc),
            Metric::F1Macro => trace.max_of(|r| r.f1_macro),
            Metric::F1Micro => trace.max_of(|r| r.f1_micro),
            Metric::PrAucMacro => trace
                .records
                .iter()
                .map(|r| r.pr_auc_macro)
                .collect::<Option<Vec<_>>>()?
                .into_iter()
                .reduce(f64::max),
            Metric::Loss => trace.min_of(|r| r.train_loss),
            Metric::Cce => trace.min_of(|r| r.cce),
            Metric::Mse => trace.min_of(|r| r.mse),
            Metric::SecPerEpoch => trace.mean_sec(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Template for every run; `loss` and `seed` are overwritten per run.
    pub train: TrainConfig,
    pub hidden: usize,
    pub losses: Vec<LossKind>,
    /// Each seed drives model initialisation and batch order.
    pub seeds: Vec<u64>,
    /// Worker threads for independent runs.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: DEFAULT_HIDDEN,
            losses: LossKind::ALL.to_vec(),
            seeds: (0..5).collect(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "a comparison needs at least one loss and one seed".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one (loss, seed) run. A failed run keeps its completed epochs.
#[derive(Debug, Clone)]
pub struct Run {
    pub loss: LossKind,
    pub seed: u64,
    pub trace: TrainTrace,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    /// Loss-major, in the order of `losses` then `seeds`.
    pub runs: Vec<Run>,
}

pub fn train_one(
    data: &SplitDataset,
    config: &TrainConfig,
    hidden: usize,
) -> Result<TrainTrace, nn::TrainFailure> {
    let mut model = MlpModel::init(
        data.train.n_features(),
        hidden,
        n_classes(data),
        config.seed,
    )
    .map_err(|error| nn::TrainFailure {
        partial: TrainTrace::default(),
        error,
    })?;
    nn::train(&mut model, data, config)
}

fn n_classes(data: &SplitDataset) -> usize {
    data.train.n_classes().max(data.test.n_classes())
}

/// Trains every (loss, seed) pair, `config.threads` at a time.
pub fn run_comparison(data: &SplitDataset, config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let jobs: Vec<(LossKind, u64)> = config
        .losses
        .iter()
        .flat_map(|&l| config.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let slots: Vec<Mutex<Option<Run>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..config.threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(&(loss, seed)) = jobs.get(i) else {
                    break;
                };
                let cfg = TrainConfig {
                    loss,
                    seed,
                    ..config.train.clone()
                };
                let run = match train_one(data, &cfg, config.hidden) {
                    Ok(trace) => Run {
                        loss,
                        seed,
                        trace,
                        error: None,
                    },
                    Err(f) => Run {
                        loss,
                        seed,
                        error: Some(f.error.to_string()),
                        trace: f.partial,
                    },
                };
                *slots[i].lock().unwrap() = Some(run);
            });
        }
    });
    Ok(ComparisonReport {
        losses: config.losses.clone(),
        seeds: config.seeds.clone(),
        runs: slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every job runs"))
            .collect(),
    })
}

/// Median of the finite values; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

impl ComparisonReport {
    pub fn run(&self, loss: LossKind, seed: u64) -> Option<&Run> {
        self.runs.iter().find(|r| r.loss == loss && r.seed == seed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Run> {
        self.runs.iter().filter(|r| r.error.is_some())
    }

    pub fn value(&self, metric: Metric, loss: LossKind, seed: u64) -> Option<f64> {
        metric.of(&self.run(loss, seed)?.trace)
    }

    /// Median over seeds of the per-run value.
    pub fn median(&self, metric: Metric, loss: LossKind) -> Option<f64> {
        let vals: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|&s| self.value(metric, loss, s))
            .collect();
        median(&vals)
    }

    /// Median over seeds of test accuracy after `epoch` (1-based).
    pub fn median_accuracy_at(&self, loss: LossKind, epoch: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.loss == loss)
            .filter_map(|r| r.trace.records.get(epoch.checked_sub(1)?).map(|e| e.acc))
            .collect();
        median(&vals)
    }

    /// Table for one seed, or the medians when `seed` is `None`.
    pub fn table(&self, seed: Option<u64>) -> Table {
        let rows = Metric::ALL
            .iter()
            .map(|&m| {
                let vals = self
                    .losses
                    .iter()
                    .map(|&l| match seed {
                        Some(s) => self.value(m, l, s),
                        None => self.median(m, l),
                    })
                    .collect();
                (m, vals)
            })
            .collect();
        Table {
            losses: self.losses.clone(),
            rows,
        }
    }

    /// Accuracy after `early` and `late` epochs, per loss.
    pub fn warmup_summary(&self, early: usize, late: usize) -> String {
        let mut out = format!("median test accuracy at epoch {early} / {late}\n");
        for &l in &self.losses {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            out += &format!(
                "  {:<10} {} / {}\n",
                l.name(),
                f(self.median_accuracy_at(l, early)),
                f(self.median_accuracy_at(l, late))
            );
        }
        out
    }
}

/// Metric rows by loss columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub losses: Vec<LossKind>,
    pub rows: Vec<(Metric, Vec<Option<f64>>)>,
}

impl Table {
    pub fn get(&self, metric: Metric, loss: LossKind) -> Option<f64> {
        let col = self.losses.iter().position(|&l| l == loss)?;
        self.rows.iter().find(|(m, _)| *m == metric)?.1[col]
    }

    /// Missing values are written as empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let names: Vec<&str> = self.losses.iter().map(|l| l.name()).collect();
        writeln!(out, "metric,{}", names.join(",")).map_err(io)?;
        for (m, vals) in &self.rows {
            let cells: Vec<String> = vals
                .iter()
                .map(|v| v.map_or(String::new(), |x| format!("{x:?}")))
                .collect();
            writeln!(out, "{},{}", m.label(), cells.join(",")).map_err(io)?;
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
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty table".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("metric") {
            return Err(parse_err(1, format!("unexpected header '{header}'")));
        }
        let losses = cols
            .map(|c| {
                c.parse()
                    .map_err(|_| parse_err(1, format!("unknown loss '{c}'")))
            })
            .collect::<Result<Vec<LossKind>>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line_no = i as u64 + 2;
            let mut cells = line.split(',');
            let name = cells.next().unwrap_or_default();
            let metric = name
                .parse()
                .map_err(|_| parse_err(line_no, format!("unknown metric '{name}'")))?;
            let vals = cells
                .map(|c| match c.trim() {
                    "" => Ok(None),
                    v => v
                        .parse()
                        .map(Some)
                        .map_err(|_| parse_err(line_no, format!("'{v}' is not a number"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != losses.len() {
                return Err(parse_err(
                    line_no,
                    format!("expected {} values, found {}", losses.len(), vals.len()),
                ));
            }
            rows.push((metric, vals));
        }
        Ok(Self { losses, rows })
    }
}

/// Seconds per epoch for one loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub loss: LossKind,
    pub epochs: usize,
    pub mean: f64,
    pub std: f64,
}

/// Times each loss for `config.epochs` epochs, one run after another.
/// `std` is the sample standard deviation over epochs.
pub fn bench(
    data: &SplitDataset,
    config: &TrainConfig,
    hidden: usize,
    losses: &[LossKind],
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(losses.len());
    for &loss in losses {
        let cfg = TrainConfig {
            loss,
            ..config.clone()
        };
        let trace = train_one(data, &cfg, hidden).map_err(|f| f.error)?;
        let secs = trace.column(|r| r.sec);
        let n = secs.len() as f64;
        let mean = secs.iter().sum::<f64>() / n;
        let var = if secs.len() > 1 {
            secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(BenchRow {
            loss,
            epochs: secs.len(),
            mean,
            std: var.sqrt(),
        });
    }
    Ok(rows)
}

pub const BENCH_HEADER: &str = "loss,epochs,mean_sec,std_sec";

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{BENCH_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:?},{:?}",
            r.loss.name(),
            r.epochs,
            r.mean,
            r.std
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
