//! Held-out error metrics and the Nelson-Aalen baseline.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{check_loss, QuantileProcess, TauGrid};
use crate::survival::{censoring_fit, nelson_aalen, truncated_observed, StepSurvival, TailRule};

/// Censoring survival `Ĝ` used to weight held-out observations.
#[derive(Debug, Clone, PartialEq)]
pub enum CensoringModel {
    Marginal(StepSurvival),
    /// Separate fits per distinct value of a discrete feature column, with a
    /// marginal fit for values not seen in training.
    Grouped {
        column: usize,
        levels: Vec<(f64, StepSurvival)>,
        fallback: StepSurvival,
    },
}

impl CensoringModel {
    pub fn marginal(train: &Dataset, u: f64) -> Result<Self> {
        Ok(CensoringModel::Marginal(censoring_fit(train.y(), train.delta(), u)?))
    }

    pub fn grouped(train: &Dataset, column: usize, u: f64) -> Result<Self> {
        if column >= train.p() {
            return Err(Error::BadInput(format!("column {column} out of range")));
        }
        let mut values: Vec<f64> = train.column(column).to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut levels = Vec::with_capacity(values.len());
        for v in values {
            let rows: Vec<usize> = (0..train.n()).filter(|&i| train.value(i, column) == v).collect();
            let y: Vec<f64> = rows.iter().map(|&i| train.y()[i]).collect();
            let d: Vec<bool> = rows.iter().map(|&i| train.delta()[i]).collect();
            levels.push((v, censoring_fit(&y, &d, u)?));
        }
        Ok(CensoringModel::Grouped {
            column,
            levels,
            fallback: censoring_fit(train.y(), train.delta(), u)?,
        })
    }

    fn fit_for(&self, data: &Dataset, i: usize) -> &StepSurvival {
        match self {
            CensoringModel::Marginal(g) => g,
            CensoringModel::Grouped {
                column,
                levels,
                fallback,
            } => {
                let v = data.value(i, *column);
                levels
                    .iter()
                    .find(|(lv, _)| *lv == v)
                    .map_or(fallback, |(_, g)| g)
            }
        }
    }

    /// IPCW weights `Δ_i / max(Ĝ((Y_i ∧ u)-), floor)` for every row of `data`.
    pub fn weights(&self, data: &Dataset, u: f64, floor: f64) -> Vec<f64> {
        (0..data.n())
            .map(|i| {
                let (y, d) = (data.y()[i], data.delta()[i]);
                if truncated_observed(y, d, u) {
                    1.0 / self.fit_for(data, i).survival_left_limit(y.min(u)).max(floor)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn check_grids(preds: &[QuantileProcess]) -> Result<&TauGrid> {
    let first = preds.first().ok_or_else(|| Error::BadInput("no predictions".into()))?;
    if preds.iter().any(|p| p.grid != first.grid) {
        return Err(Error::BadInput("predictions use different tau grids".into()));
    }
    Ok(&first.grid)
}

/// `(1/n) Σ τ(1-τ) (Q_i - Q̂_i)²`.
pub fn qmse(pred: &[f64], truth: &[f64], tau: f64) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    tau * (1.0 - tau) * sum / pred.len() as f64
}

/// Grid mean of [`qmse`]. `oracle[i]` holds the true quantiles of row `i` on the
/// same grid as `preds[i]`.
pub fn iqmse(preds: &[QuantileProcess], oracle: &[QuantileProcess]) -> Result<f64> {
    let grid = check_grids(preds)?;
    if oracle.len() != preds.len() || oracle.iter().any(|o| o.grid != *grid) {
        return Err(Error::BadInput("oracle does not match predictions".into()));
    }
    let mut total = 0.0;
    for (k, &tau) in grid.levels().iter().enumerate() {
        let p: Vec<f64> = preds.iter().map(|q| q.values[k]).collect();
        let t: Vec<f64> = oracle.iter().map(|q| q.values[k]).collect();
        total += qmse(&p, &t, tau);
    }
    Ok(total / grid.len() as f64)
}

/// Grid mean of `(1/n) Σ w_i τ(1-τ) ρ_τ(r_i - Q̂_i)`.
pub fn weighted_iqloss(response: &[f64], weights: &[f64], preds: &[QuantileProcess]) -> Result<f64> {
    let grid = check_grids(preds)?;
    if response.len() != preds.len() || weights.len() != preds.len() {
        return Err(Error::BadInput("responses, weights and predictions differ in length".into()));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    for (k, &tau) in grid.levels().iter().enumerate() {
        let mut sum = 0.0;
        for ((r, w), q) in response.iter().zip(weights).zip(preds) {
            sum += w * check_loss(tau, r - q.values[k]);
        }
        total += tau * (1.0 - tau) * sum / n;
    }
    Ok(total / grid.len() as f64)
}

/// IPCW I-QLoss of `preds` on `test`, truncating at `u` and weighting with `g`
/// (fitted on training data only).
pub fn ipcw_iqloss(test: &Dataset, preds: &[QuantileProcess], u: f64, g: &CensoringModel, floor: f64) -> Result<f64> {
    let weights = g.weights(test, u, floor);
    if weights.iter().all(|&w| w == 0.0) {
        log::warn!("every held-out row is censored before u; IPCW loss is 0");
    }
    let yu: Vec<f64> = test.y().iter().map(|&y| y.min(u)).collect();
    weighted_iqloss(&yu, &weights, preds)
}

/// I-QLoss against the true event times.
pub fn standard_iqloss(t_true: &[f64], preds: &[QuantileProcess]) -> Result<f64> {
    weighted_iqloss(t_true, &vec![1.0; t_true.len()], preds)
}

/// Marginal Nelson-Aalen quantiles, the same for every row.
pub fn na_baseline(train: &Dataset, grid: &TauGrid, rule: TailRule) -> Result<QuantileProcess> {
    if train.n_uncensored() == 0 {
        return Err(Error::NoUncensored);
    }
    let fit = nelson_aalen(train.y(), train.delta())?;
    QuantileProcess::new(grid.clone(), fit.quantiles(grid.levels(), rule, train.y(), train.delta()))
}

pub fn relative_metric(model_loss: f64, baseline_loss: f64) -> Result<f64> {
    if baseline_loss == 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok(model_loss / baseline_loss)
}

/// One line of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setting: String,
    pub snr: f64,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}
