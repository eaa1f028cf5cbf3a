//! Subsampled forests: fitting, prediction and out-of-bag loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::CensoringModel;
use crate::exec::{self, Execution};
use crate::loss::{isotonize, QuantileProcess, TauGrid};
use crate::rng::{stream, tag};
use crate::tree::{grow_tree, Tree, TreeConfig};

/// How the truncation time `u` is chosen at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UPolicy {
    Fixed(#[serde(with = "crate::io::ext_f64")] f64),
    /// Empirical quantile of the observed times at this level.
    Quantile(f64),
}

impl Default for UPolicy {
    fn default() -> Self {
        UPolicy::Quantile(0.95)
    }
}

impl UPolicy {
    pub fn resolve(&self, y: &[f64]) -> Result<f64> {
        match *self {
            UPolicy::Fixed(u) if !u.is_nan() => Ok(u),
            UPolicy::Fixed(_) => Err(Error::BadInput("u is NaN".into())),
            UPolicy::Quantile(level) => {
                if !(level > 0.0 && level <= 1.0) {
                    return Err(Error::BadInput(format!("u quantile level {level} outside (0, 1]")));
                }
                Ok(empirical_quantile(y, level))
            }
        }
    }
}

/// Inverse of the empirical CDF: the `ceil(level * n)`-th smallest value.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub ntree: usize,
    /// Subsample size is `ceil(subsample_rate * n)`.
    pub subsample_rate: f64,
    pub tree: TreeConfig,
    pub seed: u64,
    pub u_policy: UPolicy,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            ntree: 500,
            subsample_rate: 0.5,
            tree: TreeConfig::default(),
            seed: 0,
            u_policy: UPolicy::default(),
        }
    }
}

impl ForestConfig {
    /// Defaults sized to a dataset: `mtry = round(p / 3)`, and `nodesize` at the
    /// middle of the tuning range `n^η`, `η ∈ [ln 5 / ln n, ln(n/4) / ln n]`.
    pub fn for_data(n: usize, p: usize) -> Self {
        let mut cfg = Self::default();
        cfg.tree.mtry = mtry_from_fraction(1.0 / 3.0, p);
        let etas = crate::tune::nodesize_etas(n, 5);
        cfg.tree.nodesize = crate::tune::nodesize_from_eta(n, etas[2]);
        cfg.tree.nodesize_min = cfg.tree.nodesize_min.min(cfg.tree.nodesize);
        cfg
    }

    pub fn subsample_size(&self, n: usize) -> usize {
        ((self.subsample_rate * n as f64).ceil() as usize).clamp(1, n)
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.ntree < 1 {
            return Err(Error::BadInput("ntree must be at least 1".into()));
        }
        if !(self.subsample_rate > 0.0 && self.subsample_rate <= 1.0) {
            return Err(Error::BadInput(format!("subsample rate {} outside (0, 1]", self.subsample_rate)));
        }
        if n < 2 {
            return Err(Error::BadInput("need at least 2 observations".into()));
        }
        self.tree.validate(p)
    }
}

/// `max(1, round(fraction * p))`, capped at `p`.
pub fn mtry_from_fraction(fraction: f64, p: usize) -> usize {
    ((fraction * p as f64).round() as usize).max(1).min(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Sorted row indices each tree was grown on.
    pub subsample_indices: Vec<Vec<usize>>,
    pub config: ForestConfig,
    pub u_resolved: f64,
    pub feature_names: Vec<String>,
}

/// Uniform size-`s_n` subsample without replacement, redrawn until it holds an
/// uncensored row. Returned sorted.
pub fn draw_subsample<R: Rng + ?Sized>(n: usize, s_n: usize, deltas: &[bool], rng: &mut R) -> Result<Vec<usize>> {
    if !deltas.iter().any(|&d| d) {
        return Err(Error::NoUncensored);
    }
    if s_n < 1 || s_n > n || deltas.len() != n {
        return Err(Error::BadInput(format!("subsample size {s_n} invalid for n = {n}")));
    }
    loop {
        let mut idx = rand::seq::index::sample(rng, n, s_n).into_vec();
        if idx.iter().any(|&i| deltas[i]) {
            idx.sort_unstable();
            return Ok(idx);
        }
    }
}

pub fn fit_forest(data: &Dataset, cfg: &ForestConfig) -> Result<Forest> {
    fit_forest_with(data, cfg, Execution::default())
}

/// Fits `cfg.ntree` trees; tree `b` draws from its own stream of `cfg.seed`,
/// so the forest is the same for any execution mode or thread count.
pub fn fit_forest_with(data: &Dataset, cfg: &ForestConfig, exec: Execution) -> Result<Forest> {
    let n = data.n();
    cfg.validate(n, data.p())?;
    if data.n_uncensored() == 0 {
        return Err(Error::NoUncensored);
    }
    let u = cfg.u_policy.resolve(data.y())?;
    let mut tree_cfg = cfg.tree.clone();
    tree_cfg.u = u;
    let s_n = cfg.subsample_size(n);
    let grown = exec::try_map_range(exec, cfg.ntree, |b| -> Result<(Tree, Vec<usize>)> {
        let mut rng = stream(cfg.seed, &[tag::TREE, b as u64]);
        let idx = draw_subsample(n, s_n, data.delta(), &mut rng)?;
        let tree = grow_tree(data, &idx, &tree_cfg, &mut rng)?;
        Ok((tree, idx))
    })?;
    let (trees, subsample_indices) = grown.into_iter().unzip();
    let mut config = cfg.clone();
    config.tree = tree_cfg;
    Ok(Forest {
        trees,
        subsample_indices,
        config,
        u_resolved: u,
        feature_names: data.names().to_vec(),
    })
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn ntree(&self) -> usize {
        self.trees.len()
    }

    /// Leaf quantiles of tree `b` at `x`.
    pub fn tree_values(&self, b: usize, x: &[f64], grid: &TauGrid) -> Result<Vec<f64>> {
        Ok(self.trees[b]
            .leaf_for(x)?
            .quantiles(grid, self.config.tree.tail_rule))
    }

    /// Isotonized mean of the listed trees' predictions.
    fn mean_over(&self, trees: impl Iterator<Item = usize>, x: &[f64], grid: &TauGrid) -> Result<Option<QuantileProcess>> {
        let mut acc = vec![0.0; grid.len()];
        let mut count = 0usize;
        for b in trees {
            let v = self.tree_values(b, x, grid)?;
            for (a, q) in acc.iter_mut().zip(v) {
                *a += q;
            }
            count += 1;
        }
        if count == 0 {
            return Ok(None);
        }
        for a in &mut acc {
            *a /= count as f64;
        }
        isotonize(&mut acc);
        Ok(Some(QuantileProcess::new(grid.clone(), acc)?))
    }

    pub fn in_bag(&self, b: usize, i: usize) -> bool {
        self.subsample_indices[b].binary_search(&i).is_ok()
    }

    /// Trees whose subsample excludes training row `i`.
    pub fn oob_trees(&self, i: usize) -> Vec<usize> {
        (0..self.ntree()).filter(|&b| !self.in_bag(b, i)).collect()
    }
}

/// Per-level mean of the tree predictions at `x`, isotonized in `tau`.
pub fn forest_predict(forest: &Forest, x: &[f64], grid: &TauGrid) -> Result<QuantileProcess> {
    Ok(forest
        .mean_over(0..forest.ntree(), x, grid)?
        .expect("forest has at least one tree"))
}

/// [`forest_predict`] for every row of `data`.
pub fn predict_dataset(forest: &Forest, data: &Dataset, grid: &TauGrid, exec: Execution) -> Result<Vec<QuantileProcess>> {
    predict_columns(forest, data.columns(), grid, exec)
}

/// [`forest_predict`] for every row of a column-major feature matrix.
pub fn predict_columns(forest: &Forest, columns: &[Vec<f64>], grid: &TauGrid, exec: Execution) -> Result<Vec<QuantileProcess>> {
    if columns.len() != forest.n_features() {
        return Err(Error::BadInput(format!(
            "data has {} features, model expects {}",
            columns.len(),
            forest.n_features()
        )));
    }
    let n = columns.first().map_or(0, |c| c.len());
    exec::try_map_range(exec, n, |i| {
        let x: Vec<f64> = columns.iter().map(|c| c[i]).collect();
        forest_predict(forest, &x, grid)
    })
}

/// OOB predictions for the training rows; `None` where a row is in every subsample.
pub fn oob_predictions(forest: &Forest, train: &Dataset, grid: &TauGrid, exec: Execution) -> Result<Vec<Option<QuantileProcess>>> {
    exec::try_map_range(exec, train.n(), |i| {
        forest.mean_over(forest.oob_trees(i).into_iter(), &train.row(i), grid)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobLoss {
    pub loss: f64,
    /// Fraction of training rows with at least one OOB tree.
    pub coverage: f64,
}

/// IPCW I-QLoss of the OOB predictions over the covered training rows, on
/// the forest's training grid, with a marginal censoring fit on `train`.
pub fn oob_iqloss(forest: &Forest, train: &Dataset) -> Result<OobLoss> {
    oob_iqloss_with(forest, train, Execution::default())
}

pub fn oob_iqloss_with(forest: &Forest, train: &Dataset, exec: Execution) -> Result<OobLoss> {
    let grid = &forest.config.tree.grid;
    let preds = oob_predictions(forest, train, grid, exec)?;
    let covered: Vec<usize> = (0..train.n()).filter(|&i| preds[i].is_some()).collect();
    if covered.is_empty() {
        return Err(Error::NoOobCoverage);
    }
    let coverage = covered.len() as f64 / train.n() as f64;
    if coverage < 1.0 {
        log::debug!("OOB coverage {coverage:.3}: {} rows never out of bag", train.n() - covered.len());
    }
    let u = forest.u_resolved;
    let g = CensoringModel::marginal(train, u)?;
    let floor = forest.config.tree.g_floor;
    let subset = train.select_rows(&covered);
    let preds: Vec<QuantileProcess> = covered.iter().map(|&i| preds[i].clone().unwrap()).collect();
    let loss = crate::eval::ipcw_iqloss(&subset, &preds, u, &g, floor)?;
    Ok(OobLoss { loss, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tree::tree_predict;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let t: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + r[1] + 0.3 * rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
        let y = t.iter().zip(&c).map(|(a, b)| a.min(*b)).collect();
        let d = t.iter().zip(&c).map(|(a, b)| a <= b).collect();
        Dataset::from_rows(&rows, y, d).unwrap()
    }

    fn small_cfg(ntree: usize) -> ForestConfig {
        ForestConfig {
            ntree,
            subsample_rate: 0.5,
            tree: TreeConfig {
                mtry: 2,
                nodesize: 5,
                nodesize_min: 2,
                ..TreeConfig::default()
            },
            seed: 42,
            u_policy: UPolicy::Quantile(0.95),
        }
    }

    #[test]
    fn subsample_examples() {
        let mut rng = stream(0, &[0]);
        assert_eq!(draw_subsample(5, 5, &[true; 5], &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let deltas = [false, false, false, true, false];
        for _ in 0..20 {
            assert_eq!(draw_subsample(5, 1, &deltas, &mut rng).unwrap(), vec![3]);
        }
        assert!(matches!(draw_subsample(3, 1, &[false; 3], &mut rng), Err(Error::NoUncensored)));
    }

    #[test]
    fn inclusion_frequency_matches_rate() {
        let (n, s, draws) = (20usize, 7usize, 10_000usize);
        let mut rng = stream(3, &[9]);
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            for i in draw_subsample(n, s, &vec![true; n], &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = s as f64 / n as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 3.0 * se + 1e-3);
        }
    }

    #[test]
    fn single_tree_forest_is_that_tree() {
        let d = toy(60, 1);
        let f = fit_forest(&d, &small_cfg(1)).unwrap();
        let grid = TauGrid::default_eval();
        for i in 0..10 {
            let x = d.row(i);
            let a = forest_predict(&f, &x, &grid).unwrap();
            let b = tree_predict(&f.trees[0], &x, &grid, f.config.tree.tail_rule).unwrap();
            assert_eq!(a, b);
        }
        let oob = f.oob_trees(0);
        assert_eq!(oob.is_empty(), f.in_bag(0, 0));
    }

    #[test]
    fn same_seed_same_forest() {
        let d = toy(60, 2);
        let a = fit_forest(&d, &small_cfg(5)).unwrap();
        let b = fit_forest(&d, &small_cfg(5)).unwrap();
        assert_eq!(a, b);
        let c = fit_forest_with(&d, &small_cfg(5), Execution::Sequential).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn tiny_dataset_runs() {
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 2.0, 3.0], vec![true, false, true]).unwrap();
        let f = fit_forest(&d, &ForestConfig { ntree: 5, ..small_cfg(5) }.with_mtry(1)).unwrap();
        assert_eq!(f.ntree(), 5);
    }

    #[test]
    fn full_subsample_has_no_oob() {
        let d = toy(30, 4);
        let cfg = ForestConfig {
            subsample_rate: 1.0,
            ..small_cfg(3)
        };
        let f = fit_forest(&d, &cfg).unwrap();
        assert!(matches!(oob_iqloss(&f, &d), Err(Error::NoOobCoverage)));
    }

    #[test]
    fn oob_loss_is_finite_and_covered() {
        let d = toy(80, 5);
        let f = fit_forest(&d, &small_cfg(20)).unwrap();
        let l = oob_iqloss(&f, &d).unwrap();
        assert!(l.loss.is_finite() && l.loss >= 0.0);
        assert_eq!(l.coverage, 1.0);
    }

    #[test]
    fn u_policies() {
        let y = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(UPolicy::Quantile(0.95).resolve(&y).unwrap(), 5.0);
        assert_eq!(UPolicy::Quantile(0.5).resolve(&y).unwrap(), 3.0);
        assert_eq!(UPolicy::Fixed(2.5).resolve(&y).unwrap(), 2.5);
        assert!(UPolicy::Quantile(0.0).resolve(&y).is_err());
    }

    #[test]
    fn mtry_rounding() {
        assert_eq!(mtry_from_fraction(0.1, 10), 1);
        assert_eq!(mtry_from_fraction(0.1, 3), 1);
        assert_eq!(mtry_from_fraction(0.9, 11), 10);
        assert_eq!(mtry_from_fraction(0.5, 0), 0);
    }

    impl ForestConfig {
        fn with_mtry(mut self, m: usize) -> Self {
            self.tree.mtry = m;
            self
        }
    }
}
