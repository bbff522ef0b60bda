mod config;
mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use cardloss::experiment::{self, ComparisonReport, ExperimentConfig};
use cardloss::invariants::{self, Invariant, PointCloud};
use cardloss::losses::LossKind;
use cardloss::nn::{EpochRecord, TrainTrace};
use cardloss::synthdata;
use cardloss::Error;

use config::{
    parse_losses, read_config, resolve_seed, BenchArgs, CompareArgs, GenDataArgs, Merge, ScanArgs,
    TrainCmdArgs,
};
use plot::{line_chart, Series};

/// Cardinality-augmented losses: datasets, training runs, comparisons,
/// scale scans and timing.
#[derive(Parser, Debug)]
#[command(name = "cardloss", version)]
pub struct Cli {
    /// JSON object of flag values; flags on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an imbalanced hypercube-cluster dataset as CSV
    GenData(GenDataArgs),
    /// Train one classifier and write its per-epoch trace
    Train(TrainCmdArgs),
    /// Train every loss over several seeds and tabulate the best metrics
    Compare(CompareArgs),
    /// Magnitude and spread of a point cloud over a range of scales
    Scan(ScanArgs),
    /// Mean and standard deviation of seconds per epoch for each loss
    Bench(BenchArgs),
}

const USAGE: u8 = 2;
const IO: u8 = 3;
const DIVERGED: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: IO,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse { .. } => IO,
            Error::Diverged { .. } => DIVERGED,
            Error::InvalidCloud(_)
            | Error::InvalidScale(_)
            | Error::InvalidArgument(_)
            | Error::InvalidBatch(_)
            | Error::InvalidSpec(_)
            | Error::ShapeMismatch { .. } => USAGE,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn with_file<T: Merge + for<'de> serde::Deserialize<'de>>(
    flags: T,
    file: Option<&Path>,
    name: &str,
) -> Result<T, Failure> {
    match file {
        None => Ok(flags),
        Some(path) => {
            let root = Cli::command();
            let cmd = root.find_subcommand(name).expect("known subcommand");
            Ok(flags.merge(read_config(path, cmd)?))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(with_file(a, file, "gen-data")?),
        Command::Train(a) => train(with_file(a, file, "train")?),
        Command::Compare(a) => compare(with_file(a, file, "compare")?),
        Command::Scan(a) => scan(with_file(a, file, "scan")?),
        Command::Bench(a) => bench(with_file(a, file, "bench")?),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let out = a
        .out
        .ok_or_else(|| Failure::usage("gen-data needs --out <path>"))?;
    let spec = a.spec.spec(0.5, resolve_seed(a.seed)?);
    let data = synthdata::generate(&spec)?;
    synthdata::save_csv(&data, &out)?;
    println!(
        "wrote {} rows x {} features to {}",
        data.len(),
        data.n_features(),
        out.display()
    );
    for (class, count) in data.class_histogram(spec.n_classes).iter().enumerate() {
        println!("class {class:>3}: {count}");
    }
    Ok(())
}

fn trace_path(dir: &Path, loss: LossKind, seed: u64) -> PathBuf {
    dir.join(format!("trace_{loss}_{seed}.csv"))
}

fn summary(trace: &TrainTrace) -> String {
    let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4}"));
    format!(
        "max acc {}  max f1_macro {}  max f1_micro {}  max pr_auc {}  min cce {}  min mse {}  mean s/epoch {}",
        f(trace.max_of(|r| r.acc)),
        f(trace.max_of(|r| r.f1_macro)),
        f(trace.max_of(|r| r.f1_micro)),
        f(trace.max_of(|r| r.pr_auc)),
        f(trace.min_of(|r| r.cce)),
        f(trace.min_of(|r| r.mse)),
        f(trace.mean_sec()),
    )
}

fn train(a: TrainCmdArgs) -> Result<(), Failure> {
    let loss: LossKind = a.loss.as_deref().unwrap_or("cce").parse()?;
    let seed = resolve_seed(a.seed)?;
    let out_dir = a.out_dir.unwrap_or_else(|| PathBuf::from("."));
    let data = a.data.load(0.5)?;
    let config = a.train.config(loss, seed);
    create_dir(&out_dir)?;
    let path = trace_path(&out_dir, loss, seed);
    match experiment::train_one(&data, &config, a.train.hidden()) {
        Ok(trace) => {
            trace.write_csv(&path)?;
            println!("{loss} seed {seed}: {}", summary(&trace));
            println!("trace written to {}", path.display());
            Ok(())
        }
        Err(failure) => {
            failure.partial.write_csv(&path)?;
            eprintln!(
                "partial trace ({} epochs) written to {}",
                failure.partial.len(),
                path.display()
            );
            Err(failure.error.into())
        }
    }
}

/// Per-epoch median over the runs of one loss.
fn median_progression(report: &ComparisonReport, loss: LossKind, field: Field) -> Vec<(f64, f64)> {
    let traces: Vec<&TrainTrace> = report
        .runs
        .iter()
        .filter(|r| r.loss == loss)
        .map(|r| &r.trace)
        .collect();
    let epochs = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..epochs)
        .filter_map(|e| {
            let vals: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.records.get(e).map(field))
                .collect();
            experiment::median(&vals).map(|m| ((e + 1) as f64, m))
        })
        .collect()
}

type Field = fn(&EpochRecord) -> f64;

const CHARTS: [(&str, &str, Field); 7] = [
    ("acc", "Test accuracy", |r| r.acc),
    ("f1_macro", "Test F1 (macro)", |r| r.f1_macro),
    ("f1_micro", "Test F1 (micro)", |r| r.f1_micro),
    ("pr_auc", "Test PR-AUC", |r| r.pr_auc),
    ("cce", "Test cross-entropy", |r| r.cce),
    ("mse", "Test MSE", |r| r.mse),
    ("train_loss", "Training loss", |r| r.train_loss),
];

fn format_table(table: &experiment::Table) -> String {
    let mut out = format!("{:<14}", "");
    for l in &table.losses {
        let _ = write!(out, "{:>12}", l.name());
    }
    out.push('\n');
    for (m, vals) in &table.rows {
        let _ = write!(out, "{:<14}", m.label());
        for v in vals {
            let _ = write!(out, "{:>12}", v.map_or("-".into(), |x| format!("{x:.4}")));
        }
        out.push('\n');
    }
    out
}

fn compare(a: CompareArgs) -> Result<(), Failure> {
    let losses = parse_losses(a.losses.as_deref())?;
    let defaults = ExperimentConfig::default();
    let config = ExperimentConfig {
        train: a.train.config(LossKind::Cce, 0),
        hidden: a.train.hidden(),
        losses,
        seeds: a.seeds.unwrap_or(defaults.seeds),
        threads: a.threads.unwrap_or(defaults.threads),
    };
    config.validate()?;
    let out_dir = a.out_dir.unwrap_or_else(|| PathBuf::from("compare"));
    let data = a.data.load(0.5)?;
    create_dir(&out_dir)?;

    let report = experiment::run_comparison(&data, &config)?;
    for run in &report.runs {
        run.trace
            .write_csv(&trace_path(&out_dir, run.loss, run.seed))?;
        if let Some(e) = &run.error {
            eprintln!(
                "warning: {} seed {} stopped after {} epochs: {e}",
                run.loss,
                run.seed,
                run.trace.len()
            );
        }
    }
    for &seed in &report.seeds {
        report
            .table(Some(seed))
            .write_csv(&out_dir.join(format!("seed_{seed}.csv")))?;
    }
    let median = report.table(None);
    median.write_csv(&out_dir.join("median.csv"))?;

    for (file, title, field) in CHARTS {
        let series: Vec<Series> = report
            .losses
            .iter()
            .map(|&l| Series {
                name: l.name().into(),
                points: median_progression(&report, l, field),
            })
            .collect();
        let svg = line_chart(title, "epoch", "median over seeds", &series);
        write_file(&out_dir.join(format!("{file}.svg")), &svg)?;
    }

    println!("median over seeds {:?}", report.seeds);
    print!("{}", format_table(&median));
    let late = config.train.epochs;
    print!("{}", report.warmup_summary(5.min(late), late));
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

fn read_points(path: &Path) -> Result<PointCloud, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| Failure::io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        points.push(row);
    }
    Ok(PointCloud::new(points)?)
}

fn scale_grid(t_min: f64, t_max: f64, steps: usize, log: bool) -> Result<Vec<f64>, Failure> {
    if steps == 0 {
        return Err(Failure::usage("--steps must be positive"));
    }
    if !(t_min > 0.0 && t_min.is_finite()) {
        return Err(Failure::usage(format!(
            "--t-min must be positive, got {t_min}"
        )));
    }
    if steps == 1 {
        return Ok(vec![t_min]);
    }
    if !(t_max > t_min && t_max.is_finite()) {
        return Err(Failure::usage(format!(
            "--t-max ({t_max}) must exceed --t-min ({t_min})"
        )));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            let f = i as f64 / last;
            if log {
                t_min * (t_max / t_min).powf(f)
            } else {
                t_min + f * (t_max - t_min)
            }
        })
        .collect())
}

fn scan(a: ScanArgs) -> Result<(), Failure> {
    let cloud = match (a.two_point, &a.points) {
        (Some(l), None) => {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Failure::usage(format!(
                    "--two-point must be a nonnegative distance, got {l}"
                )));
            }
            PointCloud::new(vec![vec![0.0], vec![l]])?
        }
        (None, Some(path)) => read_points(path)?,
        (Some(_), Some(_)) => return Err(Failure::usage("use either --two-point or --points")),
        (None, None) => {
            return Err(Failure::usage(
                "scan needs --two-point <l> or --points <csv>",
            ))
        }
    };
    let grid = scale_grid(
        a.t_min.unwrap_or(0.01),
        a.t_max.unwrap_or(10.0),
        a.steps.unwrap_or(100),
        a.log.unwrap_or(false),
    )?;
    let mag = invariants::scale_scan(&cloud, &grid, Invariant::Magnitude)?;
    let spr = invariants::scale_scan(&cloud, &grid, Invariant::Spread)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    let mut csv = String::from("t,magnitude,spread\n");
    for ((t, m), (_, s)) in mag.into_iter().zip(spr) {
        let _ = writeln!(csv, "{t:?},{},{}", cell(m), cell(s));
    }
    match a.out {
        Some(path) => write_file(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let losses = parse_losses(a.losses.as_deref())?;
    let seed = resolve_seed(a.seed)?;
    let data = a.data.load(0.5)?;
    let mut config = a.train.config(LossKind::Cce, seed);
    if a.train.epochs.is_none() {
        config.epochs = 20;
    }
    let rows = experiment::bench(&data, &config, a.train.hidden(), &losses)?;
    println!(
        "{:<10} {:>7} {:>12} {:>12}   (batch {})",
        "loss", "epochs", "mean s", "std s", config.batch_size
    );
    for r in &rows {
        println!(
            "{:<10} {:>7} {:>12.6} {:>12.6}",
            r.loss.name(),
            r.epochs,
            r.mean,
            r.std
        );
    }
    if let Some(path) = a.out {
        experiment::write_bench_csv(&rows, &path)?;
    }
    Ok(())
}
