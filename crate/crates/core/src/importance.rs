//! Cross-fitted conditional feature importance by refitting on muted features.
//!
//! For each fold, a forest fitted on the remaining folds sets the reference
//! held-out loss; each feature group is then muted (dropped, permuted or
//! replaced by knockoffs), a separately tuned forest is refitted on the muted
//! training folds, and the increase in held-out IPCW I-QLoss is recorded.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{ipcw_iqloss, CensoringModel};
use crate::exec::{self, Execution};
use crate::forest::{fit_forest_with, predict_dataset, ForestConfig};
use crate::knockoff::GaussianKnockoffs;
use crate::loss::TauGrid;
use crate::rng::{stream, tag, StreamRng};
use crate::tune::{tune_and_fit, TuningSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuteStrategy {
    Drop,
    Permute,
    Knockoff,
}

impl MuteStrategy {
    pub const ALL: [MuteStrategy; 3] = [MuteStrategy::Drop, MuteStrategy::Permute, MuteStrategy::Knockoff];

    pub fn name(self) -> &'static str {
        match self {
            MuteStrategy::Drop => "drop",
            MuteStrategy::Permute => "permute",
            MuteStrategy::Knockoff => "knockoff",
        }
    }
}

impl fmt::Display for MuteStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MuteStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(MuteStrategy::Drop),
            "permute" => Ok(MuteStrategy::Permute),
            "knockoff" => Ok(MuteStrategy::Knockoff),
            other => Err(Error::BadInput(format!("unknown strategy {other:?}"))),
        }
    }
}

fn check_group(data: &Dataset, group: &[usize]) -> Result<()> {
    if let Some(&j) = group.iter().find(|&&j| j >= data.p()) {
        return Err(Error::BadInput(format!("feature index {j} out of range (p = {})", data.p())));
    }
    let mut g = group.to_vec();
    g.sort_unstable();
    if g.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::BadInput("group lists a feature twice".into()));
    }
    Ok(())
}

fn permute_columns(data: &mut Dataset, group: &[usize], rng: &mut StreamRng) {
    let mut perm: Vec<usize> = (0..data.n()).collect();
    perm.shuffle(rng);
    for &j in group {
        let col = data.column(j).to_vec();
        let target = data.column_mut(j);
        for (i, &src) in perm.iter().enumerate() {
            target[i] = col[src];
        }
    }
}

fn replace_with_knockoffs(data: &mut Dataset, group: &[usize], model: &GaussianKnockoffs, rng: &mut StreamRng) -> Result<()> {
    let knock = model.sample(data.columns(), rng)?;
    for &j in group {
        *data.column_mut(j) = knock[j].clone();
    }
    Ok(())
}

/// Mutes the features in `group`.
///
/// `Drop` removes the columns; `Permute` applies one row permutation to all of
/// them jointly; `Knockoff` replaces them with knockoffs generated jointly with
/// every column of `data`. Other columns are left untouched.
pub fn mute(data: &Dataset, group: &[usize], strategy: MuteStrategy, rng: &mut StreamRng) -> Result<Dataset> {
    check_group(data, group)?;
    if group.is_empty() {
        return Ok(data.clone());
    }
    match strategy {
        MuteStrategy::Drop => Ok(data.drop_columns(group)),
        MuteStrategy::Permute => {
            let mut out = data.clone();
            permute_columns(&mut out, group, rng);
            Ok(out)
        }
        MuteStrategy::Knockoff => {
            let model = GaussianKnockoffs::fit(data.columns())?;
            let mut out = data.clone();
            replace_with_knockoffs(&mut out, group, &model, rng)?;
            Ok(out)
        }
    }
}

/// Mutes a training set and a held-out set consistently. Knockoff parameters
/// come from `train` only; the held-out rows get their own permutation or
/// knockoff draw from `test_rng`.
pub fn mute_pair(
    train: &Dataset,
    test: &Dataset,
    group: &[usize],
    strategy: MuteStrategy,
    train_rng: &mut StreamRng,
    test_rng: &mut StreamRng,
) -> Result<(Dataset, Dataset)> {
    check_group(train, group)?;
    if test.p() != train.p() {
        return Err(Error::BadInput("training and held-out data differ in feature count".into()));
    }
    if group.is_empty() {
        return Ok((train.clone(), test.clone()));
    }
    match strategy {
        MuteStrategy::Drop => Ok((train.drop_columns(group), test.drop_columns(group))),
        MuteStrategy::Permute => {
            let (mut a, mut b) = (train.clone(), test.clone());
            permute_columns(&mut a, group, train_rng);
            permute_columns(&mut b, group, test_rng);
            Ok((a, b))
        }
        MuteStrategy::Knockoff => {
            let model = GaussianKnockoffs::fit(train.columns())?;
            let (mut a, mut b) = (train.clone(), test.clone());
            replace_with_knockoffs(&mut a, group, &model, train_rng)?;
            replace_with_knockoffs(&mut b, group, &model, test_rng)?;
            Ok((a, b))
        }
    }
}

/// Settings shared by every fit of a cross-fitting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitConfig {
    /// Number of folds `K`.
    pub folds: usize,
    /// Forest settings; with `tuning` set, the starting point of each search.
    pub forest: ForestConfig,
    /// Grid searched separately for the full model and every muted model.
    pub tuning: Option<TuningSpace>,
    /// Levels of the held-out loss.
    pub eval_grid: TauGrid,
    /// Seed of the fold assignment and the muting draws.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub strategy: MuteStrategy,
    pub groups: Vec<Vec<usize>>,
    pub group_names: Vec<String>,
    /// Held-out loss of the full model per fold.
    pub full_losses: Vec<f64>,
    /// `per_fold_deltas[k][g]`: muted minus full held-out loss.
    pub per_fold_deltas: Vec<Vec<f64>>,
    pub mean_delta: Vec<f64>,
    /// 1 is the least important group.
    pub rank: Vec<usize>,
}

/// Ranks by ascending value, ties broken by position (1 = smallest).
pub fn ascending_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0; values.len()];
    for (r, &g) in order.iter().enumerate() {
        rank[g] = r + 1;
    }
    rank
}

impl ImportanceReport {
    fn from_losses(
        strategy: MuteStrategy,
        groups: &[Vec<usize>],
        group_names: Vec<String>,
        full_losses: Vec<f64>,
        muted: Vec<Vec<f64>>,
    ) -> Self {
        let per_fold_deltas: Vec<Vec<f64>> = full_losses
            .iter()
            .zip(&muted)
            .map(|(f, row)| row.iter().map(|m| m - f).collect())
            .collect();
        let k = per_fold_deltas.len() as f64;
        let mean_delta: Vec<f64> = (0..groups.len())
            .map(|g| per_fold_deltas.iter().map(|row| row[g]).sum::<f64>() / k)
            .collect();
        let rank = ascending_ranks(&mean_delta);
        Self {
            strategy,
            groups: groups.to_vec(),
            group_names,
            full_losses,
            per_fold_deltas,
            mean_delta,
            rank,
        }
    }

    /// Index of the group ranked most important.
    pub fn top(&self) -> Option<usize> {
        self.rank.iter().position(|&r| r == self.rank.len())
    }
}

/// Assigns rows to `k` folds of near-equal size after a seeded shuffle.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut stream(seed, &[tag::FOLDS]));
    let mut folds = vec![Vec::new(); k];
    for (pos, &i) in rows.iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn group_label(data: &Dataset, group: &[usize]) -> String {
    if group.is_empty() {
        return "(none)".into();
    }
    group.iter().map(|&j| data.names()[j].as_str()).collect::<Vec<_>>().join("+")
}

struct FoldData {
    train: Dataset,
    test: Dataset,
    g: CensoringModel,
}

fn fit_and_score(train: &Dataset, test: &Dataset, g: &CensoringModel, cfg: &CrossFitConfig, exec: Execution) -> Result<f64> {
    let mut base = cfg.forest.clone();
    // dropping columns can leave fewer features than mtry
    base.tree.mtry = base.tree.mtry.clamp(1, train.p().max(1));
    let forest = match &cfg.tuning {
        Some(space) => tune_and_fit(train, space, &base, exec)?.0,
        None => fit_forest_with(train, &base, exec)?,
    };
    let preds = predict_dataset(&forest, test, &cfg.eval_grid, exec)?;
    ipcw_iqloss(test, &preds, forest.u_resolved, g, forest.config.tree.g_floor)
}

/// [`importance_cross_fit`] for several strategies sharing the full-model fits.
pub fn importance_cross_fit_multi(
    data: &Dataset,
    groups: &[Vec<usize>],
    strategies: &[MuteStrategy],
    cfg: &CrossFitConfig,
    exec: Execution,
) -> Result<Vec<ImportanceReport>> {
    let k = cfg.folds;
    if k < 2 {
        return Err(Error::BadInput("need at least 2 folds".into()));
    }
    if data.n() < 2 * k {
        return Err(Error::BadInput(format!("need n >= 2K, got n = {} and K = {k}", data.n())));
    }
    if groups.is_empty() {
        return Err(Error::BadInput("no feature groups".into()));
    }
    for g in groups {
        check_group(data, g)?;
    }
    let folds = fold_assignment(data.n(), k, cfg.seed);
    let mut fold_data = Vec::with_capacity(k);
    for (f, held) in folds.iter().enumerate() {
        let test = data.select_rows(held);
        if test.n_uncensored() == 0 {
            return Err(Error::FoldDegenerate(f));
        }
        let rest: Vec<usize> = (0..data.n()).filter(|i| held.binary_search(i).is_err()).collect();
        let train = data.select_rows(&rest);
        if train.n_uncensored() == 0 {
            return Err(Error::FoldDegenerate(f));
        }
        let u = cfg.forest.u_policy.resolve(train.y())?;
        let g = CensoringModel::marginal(&train, u)?;
        fold_data.push(FoldData { train, test, g });
    }

    let full = exec::try_map_range(exec, k, |f| {
        let fd = &fold_data[f];
        fit_and_score(&fd.train, &fd.test, &fd.g, cfg, exec)
    })?;

    let n_groups = groups.len();
    let tasks = strategies.len() * k * n_groups;
    let muted = exec::try_map_range(exec, tasks, |t| {
        let (s, rest) = (t / (k * n_groups), t % (k * n_groups));
        let (f, g) = (rest / n_groups, rest % n_groups);
        let fd = &fold_data[f];
        let path = [s as u64, f as u64, g as u64];
        let mut train_rng = stream(cfg.seed, &[tag::MUTE_TRAIN, path[0], path[1], path[2]]);
        let mut test_rng = stream(cfg.seed, &[tag::MUTE_TEST, path[0], path[1], path[2]]);
        let (train, test) = mute_pair(&fd.train, &fd.test, &groups[g], strategies[s], &mut train_rng, &mut test_rng)?;
        fit_and_score(&train, &test, &fd.g, cfg, exec)
    })?;

    let names: Vec<String> = groups.iter().map(|g| group_label(data, g)).collect();
    Ok(strategies
        .iter()
        .enumerate()
        .map(|(s, &strategy)| {
            let block = &muted[s * k * n_groups..(s + 1) * k * n_groups];
            let rows: Vec<Vec<f64>> = block.chunks(n_groups).map(|c| c.to_vec()).collect();
            ImportanceReport::from_losses(strategy, groups, names.clone(), full.clone(), rows)
        })
        .collect())
}

/// Cross-fitted importance of each group under one muting strategy.
pub fn importance_cross_fit(
    data: &Dataset,
    groups: &[Vec<usize>],
    strategy: MuteStrategy,
    cfg: &CrossFitConfig,
    exec: Execution,
) -> Result<ImportanceReport> {
    Ok(importance_cross_fit_multi(data, groups, &[strategy], cfg, exec)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| 4.0 * r[0] + 0.1 * rng.random::<f64>()).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.85)).collect();
        Dataset::from_rows(&rows, y, d).unwrap()
    }

    fn small_cfg() -> CrossFitConfig {
        let mut forest = ForestConfig::default();
        forest.ntree = 20;
        forest.tree.mtry = 2;
        forest.seed = 3;
        CrossFitConfig {
            folds: 2,
            forest,
            tuning: None,
            eval_grid: TauGrid::uniform(0.3, 0.7, 0.1).unwrap(),
            seed: 11,
        }
    }

    #[test]
    fn strategy_parse_roundtrip() {
        for s in MuteStrategy::ALL {
            assert_eq!(s.name().parse::<MuteStrategy>().unwrap(), s);
        }
        assert!("shuffle".parse::<MuteStrategy>().is_err());
    }

    #[test]
    fn permute_is_a_joint_rearrangement() {
        let d = toy(40, 1);
        let m = mute(&d, &[0, 2], MuteStrategy::Permute, &mut stream(2, &[])).unwrap();
        assert_eq!(m.column(1), d.column(1));
        let mut a = d.column(0).to_vec();
        let mut b = m.column(0).to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        // the pair (x_0, x_2) moves together
        for i in 0..40 {
            let src = (0..40).find(|&r| d.column(0)[r] == m.column(0)[i]).unwrap();
            assert_eq!(m.column(2)[i], d.column(2)[src]);
        }
    }

    #[test]
    fn knockoff_keeps_other_columns() {
        let d = toy(60, 2);
        let m = mute(&d, &[1], MuteStrategy::Knockoff, &mut stream(3, &[])).unwrap();
        assert_eq!(m.column(0), d.column(0));
        assert_eq!(m.column(2), d.column(2));
        assert_ne!(m.column(1), d.column(1));
        assert_eq!(m.y(), d.y());
    }

    #[test]
    fn drop_removes_columns_and_checks_indices() {
        let d = toy(20, 3);
        let m = mute(&d, &[0, 1, 2], MuteStrategy::Drop, &mut stream(0, &[])).unwrap();
        assert_eq!(m.p(), 0);
        assert!(mute(&d, &[3], MuteStrategy::Drop, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn ranks_are_a_permutation_and_shift_invariant() {
        let v = [0.3, -0.1, 0.3, 2.0];
        assert_eq!(ascending_ranks(&v), vec![2, 1, 3, 4]);
        let shifted: Vec<f64> = v.iter().map(|x| x + 5.0).collect();
        assert_eq!(ascending_ranks(&shifted), ascending_ranks(&v));
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_assignment(10, 3, 4);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() >= 3));
    }

    #[test]
    fn empty_group_has_zero_delta() {
        let d = toy(80, 5);
        for s in MuteStrategy::ALL {
            let r = importance_cross_fit(&d, &[vec![], vec![2]], s, &small_cfg(), Execution::Sequential).unwrap();
            assert!(r.per_fold_deltas.iter().all(|row| row[0] == 0.0));
        }
    }

    #[test]
    fn report_is_reproducible_and_finds_signal() {
        let d = toy(120, 6);
        let groups = vec![vec![0], vec![1], vec![2]];
        let a = importance_cross_fit(&d, &groups, MuteStrategy::Drop, &small_cfg(), Execution::default()).unwrap();
        let b = importance_cross_fit(&d, &groups, MuteStrategy::Drop, &small_cfg(), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.top(), Some(0));
        let mut r = a.rank.clone();
        r.sort_unstable();
        assert_eq!(r, vec![1, 2, 3]);
        for g in 0..3 {
            let mean = a.per_fold_deltas.iter().map(|row| row[g]).sum::<f64>() / 2.0;
            assert_eq!(mean, a.mean_delta[g]);
        }
    }

    #[test]
    fn degenerate_fold_is_reported() {
        let mut d = toy(20, 7);
        let y = d.y().to_vec();
        d = Dataset::new(d.columns().to_vec(), d.names().to_vec(), y, {
            let mut v = vec![false; 20];
            v[0] = true;
            v
        })
        .unwrap();
        let err = importance_cross_fit(&d, &[vec![0]], MuteStrategy::Drop, &small_cfg(), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::FoldDegenerate(_)));
    }
}
