//! Imbalanced synthetic classification data.
//!
//! Each class is a standard-normal cluster centred on a distinct vertex of the
//! hypercube `{±class_sep}^n_informative`. Redundant features are a fixed
//! random linear map of the informative ones. One class takes a configurable
//! majority share; the rest is divided evenly among the others.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    /// Share of samples in class 0. Ignored when there is a single class.
    pub majority_fraction: f64,
    pub class_sep: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::imbalanced(0.5, 0)
    }
}

impl DatasetSpec {
    /// 10,000 samples, 10 classes, 15 informative and 5 redundant features.
    pub fn imbalanced(majority_fraction: f64, seed: u64) -> Self {
        Self {
            n_samples: 10_000,
            n_classes: 10,
            n_informative: 15,
            n_redundant: 5,
            majority_fraction,
            class_sep: 1.0,
            seed,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_redundant
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if self.n_classes == 0 {
            return fail("n_classes must be positive".into());
        }
        if self.n_informative == 0 {
            return fail("n_informative must be positive".into());
        }
        if self.n_informative < usize::BITS as usize
            && self.n_classes > 1usize << self.n_informative
        {
            return fail(format!(
                "{} classes need more than the {} vertices of a {}-cube",
                self.n_classes,
                1usize << self.n_informative,
                self.n_informative
            ));
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return fail(format!(
                "class_sep must be positive, got {}",
                self.class_sep
            ));
        }
        if self.n_classes > 1 {
            let f = self.majority_fraction;
            let lo = 1.0 / self.n_classes as f64;
            if !(f > lo && f < 1.0) {
                return fail(format!(
                    "majority fraction {f} must lie strictly between {lo} and 1"
                ));
            }
        }
        Ok(())
    }

    /// Samples per class: the majority share rounded, the remainder spread
    /// as evenly as possible with earlier minority classes taking the extras.
    pub fn class_counts(&self) -> Vec<usize> {
        if self.n_classes == 1 {
            return vec![self.n_samples];
        }
        let majority =
            ((self.majority_fraction * self.n_samples as f64).round() as usize).min(self.n_samples);
        let rest = self.n_samples - majority;
        let minority = self.n_classes - 1;
        let mut counts = vec![majority];
        counts.extend((0..minority).map(|i| rest / minority + usize::from(i < rest % minority)));
        counts
    }
}

/// Features and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", features.nrows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// One more than the largest label.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut h = vec![0; n_classes.max(self.n_classes())];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: DMatrix::from_fn(rows.len(), self.n_features(), |r, c| {
                self.features[(rows[r], c)]
            }),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// Standard normal variates by the Box-Muller transform.
struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    fn new() -> Self {
        Self { spare: None }
    }

    fn sample(&mut self, rng: &mut impl Rng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

fn distinct_vertices(rng: &mut impl Rng, n_classes: usize, dim: usize) -> Vec<Vec<bool>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_classes);
    if dim <= 20 {
        for code in rand::seq::index::sample(rng, 1 << dim, n_classes) {
            out.push((0..dim).map(|b| code >> b & 1 == 1).collect());
        }
        return out;
    }
    while out.len() < n_classes {
        let v: Vec<bool> = (0..dim).map(|_| rng.gen()).collect();
        if seen.insert(v.clone()) {
            out.push(v);
        }
    }
    out
}

/// Draws a dataset. The output depends only on `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = BoxMuller::new();
    let inf = spec.n_informative;
    let d = spec.n_features();

    let vertices = distinct_vertices(&mut rng, spec.n_classes, inf);
    let mixing: Vec<f64> = (0..inf * spec.n_redundant)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();

    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut rng);

    let mut features = DMatrix::zeros(spec.n_samples, d);
    for (row, &label) in labels.iter().enumerate() {
        for (j, &bit) in vertices[label].iter().enumerate() {
            let centre = if bit { spec.class_sep } else { -spec.class_sep };
            features[(row, j)] = centre + normal.sample(&mut rng);
        }
        for r in 0..spec.n_redundant {
            features[(row, inf + r)] = (0..inf)
                .map(|j| features[(row, j)] * mixing[j * spec.n_redundant + r])
                .sum();
        }
    }
    Dataset::new(features, labels)
}

/// Train and test partitions of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub split_ratio: f64,
    /// Source rows of `train` and `test`, in partition order.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Seeded uniform shuffle, then the first `round(ratio·n)` rows train.
pub fn split(data: &Dataset, ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = data.len();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} leaves an empty partition of {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_rows, test_rows) = order.split_at(n_train);
    Ok(SplitDataset {
        train: data.select(train_rows),
        test: data.select(test_rows),
        split_ratio: ratio,
        train_rows: train_rows.to_vec(),
        test_rows: test_rows.to_vec(),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `f0,…,f{d-1},label` with shortest round-trip float formatting.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let d = data.n_features();
    let header: Vec<String> = (0..d)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err(path))?;
    let mut line = String::new();
    for (row, label) in data.labels.iter().enumerate() {
        line.clear();
        for j in 0..d {
            line.push_str(&format!("{:?},", data.features[(row, j)]));
        }
        line.push_str(&label.to_string());
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(1, "missing header row".into()));
    }
    let d = headers.len() - 1;
    for (j, h) in headers.iter().enumerate() {
        let expected = if j == d {
            "label".to_string()
        } else {
            format!("f{j}")
        };
        if h.trim() != expected {
            return Err(parse_err(
                1,
                format!("column {j} is '{h}', expected '{expected}'"),
            ));
        }
    }

    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 1, record.len()),
            ));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column f{j}: '{field}' is not a number")))?;
            coords.push(v);
        }
        let label = record[d]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label '{}' is not an integer", &record[d])))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Dataset::new(DMatrix::from_row_slice(labels.len(), d, &coords), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_samples: 500,
            n_classes: 4,
            n_informative: 5,
            n_redundant: 2,
            majority_fraction: 0.7,
            class_sep: 1.0,
            seed,
        }
    }

    #[test]
    fn majority_count_for_ninety_percent() {
        let data = generate(&DatasetSpec::imbalanced(0.9, 0)).unwrap();
        let h = data.class_histogram(10);
        assert_eq!(h[0], 9_000);
        assert_eq!(h[1..].iter().sum::<usize>(), 1_000);
        assert!(h[1..].iter().all(|&c| c == 1_000 / 9 || c == 1_000 / 9 + 1));
        assert_eq!(data.n_features(), 20);
    }

    #[test]
    fn class_counts_split_remainder() {
        let spec = DatasetSpec {
            n_samples: 10,
            n_classes: 4,
            majority_fraction: 0.5,
            ..small_spec(0)
        };
        assert_eq!(spec.class_counts(), vec![5, 2, 2, 1]);
    }

    #[test]
    fn single_class() {
        let spec = DatasetSpec {
            n_classes: 1,
            majority_fraction: 1.0,
            ..small_spec(3)
        };
        let data = generate(&spec).unwrap();
        assert!(data.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            generate(&small_spec(7)).unwrap(),
            generate(&small_spec(7)).unwrap()
        );
        assert_ne!(
            generate(&small_spec(7)).unwrap().features,
            generate(&small_spec(8)).unwrap().features
        );
    }

    #[test]
    fn invalid_specs() {
        let too_many = DatasetSpec {
            n_classes: 40,
            majority_fraction: 0.5,
            ..small_spec(0)
        };
        assert!(matches!(generate(&too_many), Err(Error::InvalidSpec(_))));
        let low_majority = DatasetSpec {
            majority_fraction: 0.2,
            ..small_spec(0)
        };
        assert!(generate(&low_majority).is_err());
        let empty = DatasetSpec {
            n_samples: 0,
            ..small_spec(0)
        };
        assert!(generate(&empty).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let data = generate(&DatasetSpec::imbalanced(0.5, 1)).unwrap();
        let s = split(&data, 0.7, 0).unwrap();
        assert_eq!(s.train.len(), 7_000);
        assert_eq!(s.test.len(), 3_000);
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10_000).collect::<Vec<_>>());
        assert_eq!(s.train.labels[0], data.labels[s.train_rows[0]]);
    }

    #[test]
    fn split_rejects_degenerate_ratios() {
        let data = generate(&small_spec(0)).unwrap();
        assert!(split(&data, 0.0, 0).is_err());
        assert!(split(&data, 1.0, 0).is_err());
        assert!(split(&data, 0.0005, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = generate(&small_spec(2)).unwrap();
        save_csv(&data, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, data);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,f2,f3,f4,f5,f6,label\n"));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,0\n1.0,oops,1\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { .. })));

        std::fs::write(&path, "f0,label\n1.0,0,7\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));

        assert!(matches!(
            load_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
