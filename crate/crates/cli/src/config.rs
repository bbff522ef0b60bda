//! Flag structs shared by the subcommands. Every field is optional so values
//! from a JSON config file can fill whatever the command line leaves unset.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use cardloss::losses::LossKind;
use cardloss::synthdata::{self, DatasetSpec, SplitDataset};
use cardloss::TrainConfig;

use crate::Failure;

pub const SEED_ENV: &str = "CARDLOSS_SEED";

/// `self` wins; unset fields fall back to `other`.
pub trait Merge {
    fn merge(self, other: Self) -> Self;
}

macro_rules! merge_fields {
    ($ty:ident { $($field:ident),* $(,)? } $(, flatten { $($inner:ident),* })?) => {
        impl Merge for $ty {
            fn merge(self, other: Self) -> Self {
                Self {
                    $($field: self.$field.or(other.$field),)*
                    $($($inner: self.$inner.merge(other.$inner),)*)?
                }
            }
        }
    };
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct SpecArgs {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long)]
    pub redundant: Option<usize>,
    /// Share of samples in the majority class
    #[arg(long)]
    pub majority: Option<f64>,
    #[arg(long)]
    pub class_sep: Option<f64>,
}

merge_fields!(SpecArgs {
    samples,
    classes,
    informative,
    redundant,
    majority,
    class_sep,
});

impl SpecArgs {
    pub fn spec(&self, default_majority: f64, seed: u64) -> DatasetSpec {
        let base = DatasetSpec::imbalanced(self.majority.unwrap_or(default_majority), seed);
        DatasetSpec {
            n_samples: self.samples.unwrap_or(base.n_samples),
            n_classes: self.classes.unwrap_or(base.n_classes),
            n_informative: self.informative.unwrap_or(base.n_informative),
            n_redundant: self.redundant.unwrap_or(base.n_redundant),
            class_sep: self.class_sep.unwrap_or(base.class_sep),
            ..base
        }
    }
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct DataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// Read the dataset from a CSV file instead of generating one
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the generated dataset
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Fraction of rows used for training
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

merge_fields!(
    DataArgs {
        data,
        data_seed,
        split_ratio,
        split_seed
    },
    flatten { spec }
);

impl DataArgs {
    pub fn load(&self, default_majority: f64) -> Result<SplitDataset, Failure> {
        let data = match &self.data {
            Some(path) => synthdata::load_csv(path)?,
            None => synthdata::generate(
                &self
                    .spec
                    .spec(default_majority, self.data_seed.unwrap_or(0)),
            )?,
        };
        Ok(synthdata::split(
            &data,
            self.split_ratio.unwrap_or(0.7),
            self.split_seed.unwrap_or(0),
        )?)
    }
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer width
    #[arg(long)]
    pub hidden: Option<usize>,
}

merge_fields!(TrainArgs {
    learning_rate,
    epochs,
    batch_size,
    hidden,
});

impl TrainArgs {
    pub fn config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            loss,
            seed,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(cardloss::nn::DEFAULT_HIDDEN)
    }
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(GenDataArgs { seed, out }, flatten { spec });

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainCmdArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// magnitude, spread, cce or mse
    #[arg(long)]
    pub loss: Option<String>,
    /// Seed for weight initialisation and batch order
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

merge_fields!(
    TrainCmdArgs {
        loss,
        seed,
        out_dir
    },
    flatten { data, train }
);

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Comma-separated losses
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    /// Comma-separated training seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

merge_fields!(
    CompareArgs {
        losses,
        seeds,
        threads,
        out_dir
    },
    flatten { data, train }
);

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct ScanArgs {
    /// Scan two points at this distance
    #[arg(long, conflicts_with = "points")]
    pub two_point: Option<f64>,
    /// CSV of points, one per row, no header
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Space the scales geometrically
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub log: Option<bool>,
    /// Output CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(ScanArgs {
    two_point,
    points,
    t_min,
    t_max,
    steps,
    log,
    out,
});

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_fields!(BenchArgs { losses, seed, out }, flatten { data, train });

/// Parses a JSON object whose keys are the long flag names of `cmd`.
pub fn read_config<T: for<'de> Deserialize<'de>>(
    path: &Path,
    cmd: &clap::Command,
) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    parse_config(&text, cmd).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

fn parse_config<T: for<'de> Deserialize<'de>>(
    text: &str,
    cmd: &clap::Command,
) -> Result<T, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    for key in obj.keys() {
        let known = cmd
            .get_arguments()
            .any(|a| a.get_long() == Some(key.as_str()) && key != "config");
        if !known {
            return Err(format!("unknown key '{key}'"));
        }
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Flag, then config file, then `CARDLOSS_SEED`, then 0.
pub fn resolve_seed(seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn parse_losses(names: Option<&[String]>) -> Result<Vec<LossKind>, Failure> {
    match names {
        None => Ok(LossKind::ALL.to_vec()),
        Some(list) => list
            .iter()
            .map(|n| n.trim().parse().map_err(Failure::from))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let flags = TrainCmdArgs {
            loss: Some("spread".into()),
            train: TrainArgs {
                epochs: Some(3),
                ..Default::default()
            },
            ..Default::default()
        };
        let file: TrainCmdArgs = serde_json::from_str(
            r#"{"loss": "mse", "epochs": 9, "batch-size": 8, "majority": 0.9}"#,
        )
        .unwrap();
        let merged = flags.merge(file);
        assert_eq!(merged.loss.as_deref(), Some("spread"));
        assert_eq!(merged.train.epochs, Some(3));
        assert_eq!(merged.train.batch_size, Some(8));
        assert_eq!(merged.data.spec.majority, Some(0.9));
    }

    #[test]
    fn unknown_keys_rejected() {
        use clap::CommandFactory;
        let root = crate::Cli::command();
        let scan = root.find_subcommand("scan").unwrap();
        assert!(parse_config::<ScanArgs>(r#"{"t-mni": 1}"#, scan).is_err());
        assert!(parse_config::<ScanArgs>(r#"[1]"#, scan).is_err());
        let ok: ScanArgs = parse_config(r#"{"t-min": 0.5, "log": true}"#, scan).unwrap();
        assert_eq!((ok.t_min, ok.log), (Some(0.5), Some(true)));
    }

    #[test]
    fn loss_lists() {
        assert_eq!(parse_losses(None).unwrap().len(), 4);
        let names = vec!["cce".to_string(), " magnitude".to_string()];
        assert_eq!(
            parse_losses(Some(&names)).unwrap(),
            vec![LossKind::Cce, LossKind::Magnitude]
        );
        assert!(parse_losses(Some(&["huber".to_string()])).is_err());
    }
}
