//! Global censored quantile random forests.
//!
//! Forests of trees grown by minimizing an inverse-probability-of-censoring
//! weighted quantile loss integrated over a grid of quantile levels. Each leaf
//! carries a Nelson-Aalen fit; predictions average the leaf quantile processes
//! over trees.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod forest;
pub mod importance;
pub mod io;
pub mod knockoff;
pub mod loss;
pub mod rng;
pub mod sim;
pub mod survival;
pub mod tree;
pub mod tune;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use exec::Execution;
pub use forest::{fit_forest, fit_forest_with, forest_predict, Forest, ForestConfig, UPolicy};
pub use loss::{QuantileProcess, TauGrid};
pub use survival::{StepSurvival, TailRule};
pub use tree::{Tree, TreeConfig};
pub use importance::{importance_cross_fit, CrossFitConfig, ImportanceReport, MuteStrategy};
pub use io::{load_model, read_csv, save_model, CsvSchema};
pub use tune::{NodesizeSpec, TuningSpace};
