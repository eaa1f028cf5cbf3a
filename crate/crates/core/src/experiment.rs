//! Simulation benchmark: tuned forest, a censoring-ignoring forest and the
//! Nelson-Aalen baseline, scored against true quantiles on fresh test data.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::eval::{iqmse, ipcw_iqloss, na_baseline, relative_metric, standard_iqloss, CensoringModel, MetricRow};
use crate::exec::Execution;
use crate::forest::{fit_forest_with, predict_dataset, Forest, ForestConfig};
use crate::loss::{QuantileProcess, TauGrid};
use crate::rng::{derive_seed, stream, tag};
use crate::sim::{FKind, GKind, SimData, SimSetting, Simulator};
use crate::tune::{tune_and_fit, TuningSpace};

pub const METHOD_GCQRF: &str = "gcqrf";
pub const METHOD_NOCENS: &str = "gcqrf-nocens";
pub const METHOD_NA: &str = "na";

/// One simulation design of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSetting {
    pub f_kind: FKind,
    pub g_kind: GKind,
    pub n: usize,
    pub p: usize,
    /// Test rows per replication; defaults to `n`.
    #[serde(default)]
    pub n_test: Option<usize>,
}

impl BenchmarkSetting {
    /// The eight designs: {linear, nonlinear} x {homo, hete} x {low, high}.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for f_kind in [FKind::Linear, FKind::Nonlinear] {
            for g_kind in [GKind::Homo, GKind::Hete] {
                for (n, p) in [(100, 10), (100, 200)] {
                    out.push(Self {
                        f_kind,
                        g_kind,
                        n,
                        p,
                        n_test: None,
                    });
                }
            }
        }
        out
    }

    pub fn sim_setting(&self, snr: f64, seed: u64) -> SimSetting {
        SimSetting::predictive(self.f_kind, self.g_kind, self.n, self.p, snr, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub forest: ForestConfig,
    /// Grid searched for both forest methods; `None` fits `forest` as given.
    pub tuning: Option<TuningSpace>,
    pub eval_grid: TauGrid,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            tuning: Some(TuningSpace::default()),
            eval_grid: TauGrid::default_eval(),
            seed: 0,
        }
    }
}

/// Test-set losses of one method in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub method: &'static str,
    pub iqmse: f64,
    pub standard_iqloss: f64,
    pub ipcw_iqloss: f64,
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub setting_id: String,
    pub snr: f64,
    pub seed: u64,
    pub scores: Vec<MethodScores>,
}

impl Replicate {
    pub fn scores_of(&self, method: &str) -> Option<&MethodScores> {
        self.scores.iter().find(|s| s.method == method)
    }

    /// Absolute losses plus their ratios to the Nelson-Aalen baseline.
    pub fn metric_rows(&self) -> Result<Vec<MetricRow>> {
        let base = self.scores_of(METHOD_NA).expect("baseline always scored").clone();
        let mut rows = Vec::new();
        for s in &self.scores {
            let metrics = [
                ("iqmse", s.iqmse),
                ("relative_iqmse", relative_metric(s.iqmse, base.iqmse)?),
                ("standard_iqloss", s.standard_iqloss),
                ("relative_standard_iqloss", relative_metric(s.standard_iqloss, base.standard_iqloss)?),
                ("ipcw_iqloss", s.ipcw_iqloss),
                ("relative_ipcw_iqloss", relative_metric(s.ipcw_iqloss, base.ipcw_iqloss)?),
            ];
            for (metric, value) in metrics {
                rows.push(MetricRow {
                    setting: self.setting_id.clone(),
                    snr: self.snr,
                    method: s.method.to_string(),
                    metric: metric.to_string(),
                    value,
                    seed: self.seed,
                });
            }
        }
        Ok(rows)
    }
}

/// Training and test samples of one replication with their oracle.
pub struct ReplicateData {
    pub train: SimData,
    pub test: SimData,
    pub oracle: Vec<QuantileProcess>,
}

/// Seed of replication `rep` under master seed `seed`.
pub fn replicate_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &[rep as u64])
}

pub fn simulate_replicate(setting: &BenchmarkSetting, snr: f64, rep_seed: u64, grid: &TauGrid) -> Result<ReplicateData> {
    let sim = Simulator::new(setting.sim_setting(snr, rep_seed))?;
    let train = sim.sample(setting.n, &mut stream(rep_seed, &[tag::SIM_TRAIN]))?;
    let test = sim.sample(setting.n_test.unwrap_or(setting.n), &mut stream(rep_seed, &[tag::SIM_TEST]))?;
    let oracle = test
        .oracle(grid.levels())
        .into_iter()
        .map(|q| QuantileProcess::new(grid.clone(), q))
        .collect::<Result<_>>()?;
    Ok(ReplicateData { train, test, oracle })
}

fn fit_method(train: &Dataset, cfg: &BenchmarkConfig, seed: u64, exec: Execution) -> Result<Forest> {
    let mut forest_cfg = cfg.forest.clone();
    forest_cfg.seed = seed;
    match &cfg.tuning {
        Some(space) => Ok(tune_and_fit(train, space, &forest_cfg, exec)?.0),
        None => fit_forest_with(train, &forest_cfg, exec),
    }
}

fn score(
    method: &'static str,
    preds: &[QuantileProcess],
    data: &ReplicateData,
    u: f64,
    g: &CensoringModel,
    floor: f64,
) -> Result<MethodScores> {
    Ok(MethodScores {
        method,
        iqmse: iqmse(preds, &data.oracle)?,
        standard_iqloss: standard_iqloss(&data.test.t_true(), preds)?,
        ipcw_iqloss: ipcw_iqloss(&data.test.dataset, preds, u, g, floor)?,
    })
}

/// Runs the three methods on one simulated replication.
///
/// The IPCW loss of every method uses the same truncation time, resolved from
/// the training times by the forest's `u` policy, and a marginal censoring
/// fit on the training data.
pub fn run_replicate(setting: &BenchmarkSetting, snr: f64, rep: usize, cfg: &BenchmarkConfig, exec: Execution) -> Result<Replicate> {
    let rep_seed = replicate_seed(cfg.seed, rep);
    let data = simulate_replicate(setting, snr, rep_seed, &cfg.eval_grid)?;
    let train = &data.train.dataset;
    let u = cfg.forest.u_policy.resolve(train.y())?;
    let g = CensoringModel::marginal(train, u)?;
    let floor = cfg.forest.tree.g_floor;
    let forest_seed = derive_seed(rep_seed, &[tag::TREE]);

    let full = fit_method(train, cfg, forest_seed, exec)?;
    let full_preds = predict_dataset(&full, &data.test.dataset, &cfg.eval_grid, exec)?;
    let nocens = fit_method(&train.ignoring_censoring(), cfg, forest_seed, exec)?;
    let nocens_preds = predict_dataset(&nocens, &data.test.dataset, &cfg.eval_grid, exec)?;
    let na = na_baseline(train, &cfg.eval_grid, cfg.forest.tree.tail_rule)?;
    let na_preds = vec![na; data.test.dataset.n()];

    let scores = vec![
        score(METHOD_GCQRF, &full_preds, &data, u, &g, floor)?,
        score(METHOD_NOCENS, &nocens_preds, &data, u, &g, floor)?,
        score(METHOD_NA, &na_preds, &data, u, &g, floor)?,
    ];
    Ok(Replicate {
        setting_id: setting.sim_setting(snr, rep_seed).id(),
        snr,
        seed: rep_seed,
        scores,
    })
}

/// Metric rows for every setting, SNR and replication, in that nesting order.
pub fn run_benchmark(
    settings: &[BenchmarkSetting],
    snrs: &[f64],
    reps: usize,
    cfg: &BenchmarkConfig,
    exec: Execution,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for setting in settings {
        for &snr in snrs {
            for rep in 0..reps {
                let r = run_replicate(setting, snr, rep, cfg, exec)?;
                log::info!("{} snr={snr:.3} rep={rep} done", r.setting_id);
                rows.extend(r.metric_rows()?);
            }
        }
    }
    Ok(rows)
}
