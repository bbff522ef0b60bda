//! Cardinality-like invariants of finite point clouds, and the classification
//! losses built from them.
//!
//! The *magnitude* and *spread* of a finite Euclidean point cloud count its
//! "effectively distinct" points. Applied to the set of a batch's error
//! vectors (plus the origin), they give losses that treat repeated identical
//! mistakes as one, which keeps a majority class from dominating the batch.
//!
//! - [`invariants`]: distance and similarity matrices, weightings, magnitude,
//!   spread, scale scans and analytic gradients.
//! - [`losses`]: magnitude/spread losses, cross-entropy, MSE, Welsch-Leclerc
//!   and the division-magnitude/division-spread triplet losses.
//! - [`synthdata`]: imbalanced hypercube-cluster datasets, splits and CSV.
//! - [`nn`]: a one-hidden-layer classifier trained by SGD.
//! - [`metrics`]: accuracy, F1, PR-AUC.
//! - [`experiment`]: multi-seed loss comparisons and timing.
//!
//! ```
//! use cardloss::invariants::{magnitude, PointCloud};
//!
//! let two = PointCloud::new(vec![vec![0.0], vec![1.0]]).unwrap();
//! let m = magnitude(&two, 1.0).unwrap();
//! assert!((m - 2.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
//! ```
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod error;
pub mod experiment;
pub mod invariants;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod synthdata;

pub use error::{Error, Result};
pub use invariants::{Invariant, PointCloud};
pub use losses::{LossKind, LossResult, PredictionBatch};
pub use nn::{MlpModel, TrainConfig, TrainTrace};
pub use synthdata::{Dataset, DatasetSpec, SplitDataset};

// Each chapter becomes a module so a failing listing points at its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/magnitude-and-spread.md")]
    mod magnitude_and_spread {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/division-losses.md")]
    mod division_losses {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
