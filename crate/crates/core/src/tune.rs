//! Grid search over forest hyperparameters by out-of-bag I-QLoss.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forest::{fit_forest_with, mtry_from_fraction, oob_iqloss_with, Forest, ForestConfig};

/// How candidate `nodesize` values are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodesizeSpec {
    /// `round(n^η)` for `count` values of `η` equally spaced over
    /// `[ln 5 / ln n, ln(n/4) / ln n]`.
    EtaRange { count: usize },
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSpace {
    pub mtry_fractions: Vec<f64>,
    pub subsample_rates: Vec<f64>,
    pub nodesize: NodesizeSpec,
    /// Trees per candidate forest.
    pub tune_ntree: usize,
}

impl Default for TuningSpace {
    fn default() -> Self {
        Self {
            mtry_fractions: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            subsample_rates: vec![0.3, 0.5, 0.7, 0.9],
            nodesize: NodesizeSpec::EtaRange { count: 5 },
            tune_ntree: 100,
        }
    }
}

impl TuningSpace {
    pub fn nodesizes(&self, n: usize) -> Vec<usize> {
        match &self.nodesize {
            NodesizeSpec::EtaRange { count } => {
                let mut v: Vec<usize> = nodesize_etas(n, *count)
                    .into_iter()
                    .map(|e| nodesize_from_eta(n, e))
                    .collect();
                v.dedup();
                v
            }
            NodesizeSpec::Explicit(v) => v.clone(),
        }
    }

    pub fn len(&self, n: usize) -> usize {
        self.mtry_fractions.len() * self.subsample_rates.len() * self.nodesizes(n).len()
    }

    pub fn is_empty(&self) -> bool {
        self.mtry_fractions.is_empty() || self.subsample_rates.is_empty()
    }
}

/// `count` values equally spaced over `[ln 5 / ln n, ln(n/4) / ln n]`.
pub fn nodesize_etas(n: usize, count: usize) -> Vec<f64> {
    let ln_n = (n.max(2) as f64).ln();
    let lo = 5f64.ln() / ln_n;
    let hi = (n as f64 / 4.0).max(1.0).ln() / ln_n;
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn nodesize_from_eta(n: usize, eta: f64) -> usize {
    ((n as f64).powf(eta).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub mtry_fraction: f64,
    pub subsample_rate: f64,
    pub nodesize: usize,
    pub mtry: usize,
    pub oob_loss: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Winning configuration, carrying the caller's `ntree`.
    pub best: ForestConfig,
    pub table: Vec<TuneRow>,
}

/// Candidate configurations in enumeration order (mtry, then subsample rate,
/// then nodesize), each with `tune_ntree` trees and the base seed.
pub fn candidates(data: &Dataset, space: &TuningSpace, base: &ForestConfig) -> Vec<(ForestConfig, f64)> {
    let (n, p) = (data.n(), data.p());
    let mut out = Vec::new();
    for &frac in &space.mtry_fractions {
        for &rate in &space.subsample_rates {
            for nodesize in space.nodesizes(n) {
                let mut cfg = base.clone();
                cfg.ntree = space.tune_ntree;
                cfg.subsample_rate = rate;
                cfg.tree.mtry = mtry_from_fraction(frac, p);
                cfg.tree.nodesize = nodesize;
                cfg.tree.nodesize_min = base.tree.nodesize_min.min(nodesize);
                out.push((cfg, frac));
            }
        }
    }
    out
}

pub fn tune(data: &Dataset, space: &TuningSpace, base: &ForestConfig) -> Result<TuneResult> {
    tune_with(data, space, base, Execution::default())
}

/// Minimizes OOB I-QLoss over the space; ties keep the earliest candidate.
/// Candidates whose forests leave no row out of bag are skipped.
pub fn tune_with(data: &Dataset, space: &TuningSpace, base: &ForestConfig, exec: Execution) -> Result<TuneResult> {
    if space.is_empty() {
        return Err(Error::BadInput("tuning space is empty".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<(f64, ForestConfig)> = None;
    for (cfg, frac) in candidates(data, space, base) {
        let forest = fit_forest_with(data, &cfg, exec)?;
        let oob = match oob_iqloss_with(&forest, data, exec) {
            Ok(o) => o,
            Err(Error::NoOobCoverage) => continue,
            Err(e) => return Err(e),
        };
        table.push(TuneRow {
            mtry_fraction: frac,
            subsample_rate: cfg.subsample_rate,
            nodesize: cfg.tree.nodesize,
            mtry: cfg.tree.mtry,
            oob_loss: oob.loss,
            coverage: oob.coverage,
        });
        if best.as_ref().is_none_or(|(l, _)| oob.loss < *l) {
            best = Some((oob.loss, cfg));
        }
    }
    let (_, mut best) = best.ok_or(Error::NoOobCoverage)?;
    best.ntree = base.ntree;
    Ok(TuneResult { best, table })
}

/// Tunes, then refits the winner with `base.ntree` trees.
pub fn tune_and_fit(data: &Dataset, space: &TuningSpace, base: &ForestConfig, exec: Execution) -> Result<(Forest, TuneResult)> {
    let result = tune_with(data, space, base, exec)?;
    let forest = fit_forest_with(data, &result.best, exec)?;
    Ok((forest, result))
}
