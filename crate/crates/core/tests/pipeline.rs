use rand::Rng;

use gcqrf::importance::importance_cross_fit_multi;
use gcqrf::io::{read_csv_from, write_dataset_csv};
use gcqrf::rng::stream;
use gcqrf::sim::{gen_dataset, FKind, GKind, SimSetting};
use gcqrf::tune::tune_and_fit;
use gcqrf::{
    fit_forest, forest_predict, CrossFitConfig, CsvSchema, Dataset, Execution, ForestConfig, MuteStrategy,
    NodesizeSpec, TauGrid, TuningSpace,
};

/// Event times driven by x_1 alone, no censoring, x_2 and x_3 pure noise.
fn single_signal(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, &[]);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 1.0 + 4.0 * r[0] + 0.2 * rng.random::<f64>()).collect();
    Dataset::from_rows(&rows, y, vec![true; n]).unwrap()
}

fn small_forest(n: usize, p: usize) -> ForestConfig {
    let mut cfg = ForestConfig::for_data(n, p);
    cfg.ntree = 30;
    cfg.tree.mtry = p;
    cfg
}

#[test]
fn muting_strategies_agree_without_censoring() {
    let data = single_signal(240, 3);
    let groups = vec![vec![0], vec![1], vec![2], vec![]];
    let cfg = CrossFitConfig {
        folds: 3,
        forest: small_forest(160, 3),
        tuning: None,
        eval_grid: TauGrid::default_eval(),
        seed: 11,
    };
    let reports = importance_cross_fit_multi(&data, &groups, &MuteStrategy::ALL, &cfg, Execution::default()).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.top(), Some(0), "{}: {:?}", r.strategy, r.mean_delta);
        assert!(r.mean_delta[0] > 10.0 * r.mean_delta[1].abs().max(r.mean_delta[2].abs()));
        // an empty group refits the identical forest
        assert_eq!(r.mean_delta[3], 0.0);
        assert_eq!(r.group_names[3], "(none)");
    }
    // the strategies share the full-model fits
    assert_eq!(reports[0].full_losses, reports[1].full_losses);
    assert_eq!(reports[1].full_losses, reports[2].full_losses);
}

#[test]
fn tuned_fit_is_deterministic_and_uses_best_candidate() {
    let data = gen_dataset(&SimSetting::predictive(FKind::Linear, GKind::Homo, 80, 5, 3.0, 5)).unwrap().dataset;
    let space = TuningSpace {
        mtry_fractions: vec![0.3, 0.9],
        subsample_rates: vec![0.5, 0.9],
        nodesize: NodesizeSpec::Explicit(vec![5, 10]),
        tune_ntree: 10,
    };
    let mut base = ForestConfig::for_data(80, 6);
    base.ntree = 20;
    let (forest, result) = tune_and_fit(&data, &space, &base, Execution::default()).unwrap();
    assert_eq!(result.table.len(), 8);
    let best = result
        .table
        .iter()
        .min_by(|a, b| a.oob_loss.total_cmp(&b.oob_loss))
        .unwrap();
    assert_eq!(forest.config.tree.nodesize, best.nodesize);
    assert_eq!(forest.config.subsample_rate, best.subsample_rate);
    assert_eq!(forest.ntree(), 20);
    let (again, _) = tune_and_fit(&data, &space, &base, Execution::Sequential).unwrap();
    let x = data.row(0);
    let grid = TauGrid::default_eval();
    assert_eq!(
        forest_predict(&forest, &x, &grid).unwrap(),
        forest_predict(&again, &x, &grid).unwrap()
    );
}

#[test]
fn csv_round_trip_preserves_fits() {
    let data = gen_dataset(&SimSetting::predictive(FKind::Nonlinear, GKind::Hete, 60, 4, 1.0, 8)).unwrap().dataset;
    let mut buf = Vec::new();
    write_dataset_csv(&mut buf, &data).unwrap();
    let back = read_csv_from(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back, data);
    let cfg = small_forest(60, 5);
    let a = fit_forest(&data, &cfg).unwrap();
    let b = fit_forest(&back, &cfg).unwrap();
    let grid = TauGrid::default_eval();
    assert_eq!(
        forest_predict(&a, &data.row(3), &grid).unwrap(),
        forest_predict(&b, &data.row(3), &grid).unwrap()
    );
}

#[test]
fn censoring_shifts_forest_away_from_naive_fit() {
    // ignoring censoring biases quantiles downward
    let data = gen_dataset(&SimSetting::predictive(FKind::Linear, GKind::Homo, 300, 5, 6.0, 21)).unwrap();
    let cfg = small_forest(300, 6);
    let full = fit_forest(&data.dataset, &cfg).unwrap();
    let naive = fit_forest(&data.dataset.ignoring_censoring(), &cfg).unwrap();
    let grid = TauGrid::new(vec![0.5]).unwrap();
    let truth = data.oracle(grid.levels());
    let (mut gap, mut err_full, mut err_naive) = (0.0, 0.0, 0.0);
    for i in 0..data.dataset.n() {
        let x = data.dataset.row(i);
        let a = forest_predict(&full, &x, &grid).unwrap().values[0];
        let b = forest_predict(&naive, &x, &grid).unwrap().values[0];
        gap += a - b;
        err_full += (a - truth[i][0]).abs();
        err_naive += (b - truth[i][0]).abs();
    }
    assert!(gap > 0.0);
    assert!(err_full < err_naive, "{err_full} vs {err_naive}");
}
