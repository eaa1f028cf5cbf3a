use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use gcqrf::eval::{iqmse, ipcw_iqloss, na_baseline, relative_metric, standard_iqloss, CensoringModel, MetricRow};
use gcqrf::experiment::{run_benchmark, BenchmarkConfig, BenchmarkSetting};
use gcqrf::forest::{fit_forest_with, predict_columns};
use gcqrf::importance::{importance_cross_fit, CrossFitConfig};
use gcqrf::io::{self, CsvSchema};
use gcqrf::sim::{self, FKind, GKind, SimSetting};
use gcqrf::tune::tune_and_fit;
use gcqrf::{Dataset, Execution, ForestConfig, MuteStrategy, NodesizeSpec, QuantileProcess, TailRule, TauGrid, TuningSpace, UPolicy};

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "gcqrf", version, about = "Censored quantile random forests")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a right-censored dataset and its true conditional quantiles.
    Simulate(SimulateArgs),
    /// Fit a forest to a CSV dataset.
    Train(TrainArgs),
    /// Predict quantile processes for the rows of a CSV file.
    Predict(PredictArgs),
    /// Score predictions against true quantiles or held-out data.
    Evaluate(EvaluateArgs),
    /// Cross-fitted feature-group importance.
    Importance(ImportanceArgs),
    /// Simulation benchmark against the Nelson-Aalen baseline.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(gcqrf::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<gcqrf::Error> for CliError {
    fn from(e: gcqrf::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(gcqrf::Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_grid(spec: &str) -> CliResult<TauGrid> {
    TauGrid::parse(spec).map_err(|e| usage(format!("--tau-grid: {e}")))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingArg {
    Linear,
    Nonlinear,
    /// Six-feature linear design used for importance studies.
    Importance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GArg {
    Homo,
    Hete,
}

impl From<GArg> for GKind {
    fn from(g: GArg) -> Self {
        match g {
            GArg::Homo => GKind::Homo,
            GArg::Hete => GKind::Hete,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub setting: SettingArg,
    #[arg(long, value_enum, default_value = "homo")]
    pub g: GArg,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Feature count (ignored by the importance design, which has six).
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    /// Correlation of the first two features in the importance design.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Target censoring rate.
    #[arg(long, default_value_t = 0.3)]
    pub censoring: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Oracle CSV; defaults to the dataset path with `.oracle.csv`.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value = "0.05:0.5:0.05")]
    pub tau_grid: String,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "delta")]
    pub delta_col: String,
}

impl DataArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            y_col: self.y_col.clone(),
            delta_col: self.delta_col.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    /// JSON forest configuration; absent fields take library defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's tree count.
    #[arg(long)]
    pub ntree: Option<usize>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid-search mtry, subsample rate and nodesize by out-of-bag loss.
    #[arg(long)]
    pub tune: bool,
    /// Trees per candidate during tuning.
    #[arg(long, default_value_t = 100)]
    pub tune_ntree: usize,
}

impl ForestArgs {
    fn forest_config(&self, data: &Dataset) -> CliResult<ForestConfig> {
        let mut cfg = match &self.config {
            Some(path) => io::read_config(path)?,
            None => ForestConfig::for_data(data.n(), data.p()),
        };
        if let Some(n) = self.ntree {
            cfg.ntree = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn tuning(&self) -> Option<TuningSpace> {
        self.tune.then(|| TuningSpace {
            tune_ntree: self.tune_ntree,
            ..TuningSpace::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV holding at least the model's feature columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "0.05:0.5:0.05")]
    pub tau_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Iqmse,
    IpcwIqloss,
    StandardIqloss,
}

impl MetricArg {
    fn name(self) -> &'static str {
        match self {
            MetricArg::Iqmse => "iqmse",
            MetricArg::IpcwIqloss => "ipcw_iqloss",
            MetricArg::StandardIqloss => "standard_iqloss",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Na,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions CSV.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// Oracle CSV, for iqmse and standard-iqloss.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Held-out dataset the predictions were made for, for ipcw-iqloss.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training dataset: censoring fit for ipcw-iqloss and the baseline fit.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "delta")]
    pub delta_col: String,
    /// Truncation time; defaults to the 0.95 quantile of the training times.
    #[arg(long)]
    pub u: Option<f64>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[arg(long, default_value = "model")]
    pub method: String,
    /// Label written to the setting column.
    #[arg(long, default_value = "")]
    pub setting: String,
    /// Label written to the snr column.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Label written to the seed column.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Drop,
    Permute,
    Knockoff,
}

impl From<StrategyArg> for MuteStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Drop => MuteStrategy::Drop,
            StrategyArg::Permute => MuteStrategy::Permute,
            StrategyArg::Knockoff => MuteStrategy::Knockoff,
        }
    }
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// One group per line, features by name or 0-based index separated by
    /// commas; `#` starts a comment. Defaults to one group per feature.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Levels of the held-out loss.
    #[arg(long, default_value = "0.05:0.5:0.05")]
    pub tau_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TuningArg {
    /// 5 mtry fractions x 4 subsample rates x 5 nodesizes.
    Full,
    /// mtry {0.3, 0.9} x subsample {0.5, 0.9} x 2 nodesizes.
    Reduced,
    None,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// JSON array of settings `{f_kind, g_kind, n, p}`; defaults to all eight designs.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    /// `default` for ten log-spaced values over [0.05, 6], or a comma-separated list.
    #[arg(long, default_value = "default")]
    pub snr_grid: String,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub ntree: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub tuning: TuningArg,
    #[arg(long, default_value_t = 100)]
    pub tune_ntree: usize,
    #[arg(long, default_value = "0.05:0.5:0.05")]
    pub tau_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, args: Vec<String>) -> CliResult<()> {
    let exec = Execution::default();
    let command = cli.command;
    match cli.threads {
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(t) => gcqrf::exec::with_threads(t, move || dispatch(command, args, exec)).map_err(usage)?,
        None => dispatch(command, args, exec),
    }
}

fn dispatch(command: Command, args: Vec<String>, exec: Execution) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a, args),
        Command::Train(a) => train(a, args, exec),
        Command::Predict(a) => predict(a, args, exec),
        Command::Evaluate(a) => evaluate(a, args),
        Command::Importance(a) => importance(a, args, exec),
        Command::Benchmark(a) => benchmark(a, args, exec),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn simulate(a: SimulateArgs, args: Vec<String>) -> CliResult<()> {
    let grid = parse_grid(&a.tau_grid)?;
    let mut setting = match a.setting {
        SettingArg::Linear => SimSetting::predictive(FKind::Linear, a.g.into(), a.n, a.p, a.snr, a.seed),
        SettingArg::Nonlinear => SimSetting::predictive(FKind::Nonlinear, a.g.into(), a.n, a.p, a.snr, a.seed),
        SettingArg::Importance => SimSetting::importance(a.g.into(), a.rho, a.n, a.seed),
    };
    setting.target_censoring = a.censoring;
    setting.validate().map_err(|e| usage(e.to_string()))?;
    let data = sim::gen_dataset(&setting)?;
    io::save_dataset_csv(&a.out, &data.dataset)?;
    let oracle_path = a.oracle.clone().unwrap_or_else(|| with_suffix(&a.out, ".oracle.csv"));
    io::write_oracle_csv(create(&oracle_path)?, &grid, &data.oracle(grid.levels()), &data.t_true())?;

    let mut m = RunManifest::new("simulate", args);
    m.seed = Some(a.seed);
    m.output(&a.out);
    m.output(&oracle_path);
    m.write(&a.out)?;
    log::info!(
        "simulated {} rows, censoring rate {:.3} (sigma {:.4})",
        data.dataset.n(),
        data.censoring_rate(),
        data.simulator.sigma
    );
    Ok(())
}

fn write_tuning_table(path: &Path, table: &[gcqrf::tune::TuneRow]) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "mtry_fraction,subsample_rate,nodesize,mtry,oob_loss,coverage")?;
    for r in table {
        writeln!(
            w,
            "{:?},{:?},{},{},{:?},{:?}",
            r.mtry_fraction, r.subsample_rate, r.nodesize, r.mtry, r.oob_loss, r.coverage
        )?;
    }
    w.flush()?;
    Ok(())
}

fn train(a: TrainArgs, args: Vec<String>, exec: Execution) -> CliResult<()> {
    let data = io::read_csv(&a.data.data, &a.data.schema())?;
    let cfg = a.forest.forest_config(&data)?;
    let mut m = RunManifest::new("train", args);
    let forest = match a.forest.tuning() {
        Some(space) => {
            let (forest, result) = tune_and_fit(&data, &space, &cfg, exec)?;
            let table_path = with_suffix(&a.out, ".tuning.csv");
            write_tuning_table(&table_path, &result.table)?;
            m.output(&table_path);
            forest
        }
        None => fit_forest_with(&data, &cfg, exec)?,
    };
    io::save_model(&forest, &a.out)?;
    m.config_path = a.forest.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(forest.config.seed);
    m.input(&a.data.data)?;
    if let Some(c) = &a.forest.config {
        m.input(c)?;
    }
    m.output(&a.out);
    m.write(&a.out)?;
    Ok(())
}

fn predict(a: PredictArgs, args: Vec<String>, exec: Execution) -> CliResult<()> {
    let grid = parse_grid(&a.tau_grid)?;
    let forest = io::load_model(&a.model)?;
    let table = io::read_table(&a.data)?;
    let columns = forest
        .feature_names
        .iter()
        .map(|name| table.index_of(name).map(|j| table.columns[j].clone()))
        .collect::<gcqrf::Result<Vec<_>>>()?;
    let preds = if columns.is_empty() {
        // a featureless model predicts the same process for every row
        let p = gcqrf::forest_predict(&forest, &[], &grid)?;
        vec![p; table.n_rows()]
    } else {
        predict_columns(&forest, &columns, &grid, exec)?
    };
    io::save_predictions_csv(&a.out, &preds)?;
    let mut m = RunManifest::new("predict", args);
    m.seed = Some(forest.config.seed);
    m.input(&a.model)?;
    m.input(&a.data)?;
    m.output(&a.out);
    m.write(&a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs, args: Vec<String>) -> CliResult<()> {
    let preds = io::read_predictions_csv(File::open(&a.pred)?)?;
    let grid = preds[0].grid.clone();
    let schema = CsvSchema {
        y_col: a.y_col.clone(),
        delta_col: a.delta_col.clone(),
    };
    let mut m = RunManifest::new("evaluate", args);
    m.input(&a.pred)?;
    let train = match &a.train {
        Some(p) => {
            m.input(p)?;
            Some(io::read_csv(p, &schema)?)
        }
        None => None,
    };

    type Scorer<'a> = Box<dyn Fn(&[QuantileProcess]) -> gcqrf::Result<f64> + 'a>;
    let oracle;
    let test;
    let scorer: Scorer = match a.metric {
        MetricArg::Iqmse | MetricArg::StandardIqloss => {
            let path = a.oracle.as_ref().ok_or_else(|| usage("--oracle is required for this metric"))?;
            m.input(path)?;
            oracle = io::read_oracle_csv(File::open(path)?)?;
            if a.metric == MetricArg::Iqmse {
                Box::new(|p| iqmse(p, &oracle.quantiles))
            } else {
                Box::new(|p| standard_iqloss(&oracle.t_true, p))
            }
        }
        MetricArg::IpcwIqloss => {
            let path = a.data.as_ref().ok_or_else(|| usage("--data is required for ipcw-iqloss"))?;
            let train = train.as_ref().ok_or_else(|| usage("--train is required for ipcw-iqloss"))?;
            m.input(path)?;
            test = io::read_csv(path, &schema)?;
            let u = match a.u {
                Some(u) => u,
                None => UPolicy::default().resolve(train.y())?,
            };
            let g = CensoringModel::marginal(train, u)?;
            let floor = gcqrf::TreeConfig::default().g_floor;
            Box::new(move |p| ipcw_iqloss(&test, p, u, &g, floor))
        }
    };

    let row = |method: &str, metric: String, value: f64| MetricRow {
        setting: a.setting.clone(),
        snr: a.snr.unwrap_or(f64::NAN),
        method: method.to_string(),
        metric,
        value,
        seed: a.seed,
    };
    let value = scorer(&preds)?;
    let mut rows = vec![row(&a.method, a.metric.name().into(), value)];
    if let Some(BaselineArg::Na) = a.baseline {
        let train = train.as_ref().ok_or_else(|| usage("--train is required for --baseline na"))?;
        let base = na_baseline(train, &grid, TailRule::default())?;
        let base_value = scorer(&vec![base; preds.len()])?;
        rows.push(row("na", a.metric.name().into(), base_value));
        rows.push(row(
            &a.method,
            format!("relative_{}", a.metric.name()),
            relative_metric(value, base_value)?,
        ));
    }
    io::write_metrics_csv(create(&a.out)?, &rows)?;
    m.output(&a.out);
    m.write(&a.out)?;
    Ok(())
}

/// Parses a groups file against the dataset's feature names.
pub fn parse_groups(text: &str, data: &Dataset) -> gcqrf::Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut group = Vec::new();
        for token in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let j = match data.column_index(token) {
                Some(j) => j,
                None => token.parse::<usize>().ok().filter(|&j| j < data.p()).ok_or_else(|| gcqrf::Error::Parse {
                    row: lineno + 1,
                    column: token.to_string(),
                    message: "not a feature name or index".into(),
                })?,
            };
            group.push(j);
        }
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(gcqrf::Error::Parse {
            row: 0,
            column: String::new(),
            message: "groups file lists no groups".into(),
        });
    }
    Ok(groups)
}

fn importance(a: ImportanceArgs, args: Vec<String>, exec: Execution) -> CliResult<()> {
    let grid = parse_grid(&a.tau_grid)?;
    if a.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    let data = io::read_csv(&a.data.data, &a.data.schema())?;
    let mut m = RunManifest::new("importance", args);
    m.input(&a.data.data)?;
    let groups = match &a.groups {
        Some(path) => {
            m.input(path)?;
            parse_groups(&std::fs::read_to_string(path)?, &data)?
        }
        None => (0..data.p()).map(|j| vec![j]).collect(),
    };
    let forest = a.forest.forest_config(&data)?;
    let seed = forest.seed;
    let cfg = CrossFitConfig {
        folds: a.k,
        forest,
        tuning: a.forest.tuning(),
        eval_grid: grid,
        seed,
    };
    let report = importance_cross_fit(&data, &groups, a.strategy.into(), &cfg, exec)?;
    io::write_importance_csv(create(&a.out)?, &report)?;
    m.config_path = a.forest.config.as_ref().map(|p| p.display().to_string());
    if let Some(c) = &a.forest.config {
        m.input(c)?;
    }
    m.seed = Some(seed);
    m.output(&a.out);
    m.write(&a.out)?;
    Ok(())
}

fn parse_snr_grid(spec: &str) -> CliResult<Vec<f64>> {
    if spec == "default" {
        return Ok(sim::snr_grid());
    }
    let values = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--snr-grid {spec:?} is not `default` or a comma-separated list")))?;
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(usage("SNR values must be positive"));
    }
    Ok(values)
}

fn benchmark(a: BenchmarkArgs, args: Vec<String>, exec: Execution) -> CliResult<()> {
    let snrs = parse_snr_grid(&a.snr_grid)?;
    let grid = parse_grid(&a.tau_grid)?;
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let mut m = RunManifest::new("benchmark", args);
    let settings: Vec<BenchmarkSetting> = match &a.settings {
        Some(path) => {
            m.input(path)?;
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| gcqrf::Error::Parse {
                row: e.line(),
                column: format!("char {}", e.column()),
                message: e.to_string(),
            })?
        }
        None => BenchmarkSetting::all(),
    };
    let mut forest = ForestConfig::default();
    forest.ntree = a.ntree;
    forest.tree.grid = grid.clone();
    let tuning = match a.tuning {
        TuningArg::Full => Some(TuningSpace {
            tune_ntree: a.tune_ntree,
            ..TuningSpace::default()
        }),
        TuningArg::Reduced => Some(TuningSpace {
            mtry_fractions: vec![0.3, 0.9],
            subsample_rates: vec![0.5, 0.9],
            nodesize: NodesizeSpec::EtaRange { count: 2 },
            tune_ntree: a.tune_ntree,
        }),
        TuningArg::None => None,
    };
    let mut rows = Vec::new();
    for setting in &settings {
        let mut f = forest.clone();
        if tuning.is_none() {
            // untuned forests still need an mtry that fits each design
            let sized = ForestConfig::for_data(setting.n, setting.p + 1);
            f.tree.mtry = sized.tree.mtry;
            f.tree.nodesize = sized.tree.nodesize;
        }
        let cfg = BenchmarkConfig {
            forest: f,
            tuning: tuning.clone(),
            eval_grid: grid.clone(),
            seed: a.seed,
        };
        rows.extend(run_benchmark(std::slice::from_ref(setting), &snrs, a.reps, &cfg, exec)?);
    }
    io::write_metrics_csv(create(&a.out)?, &rows)?;
    m.seed = Some(a.seed);
    m.output(&a.out);
    m.write(&a.out)?;
    Ok(())
}
