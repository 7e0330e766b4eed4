//! Acceptance checks for the full pipeline: prediction quality on synthetic
//! benchmarks, solver correctness and monotone trade-offs, and end-to-end
//! determinism of the command-line tool. Runs as its own harness so every
//! check reports one pass/fail line even when an earlier one fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agroplan::clustering::{
    cluster_varieties, correlation_matrix, elbow_curve, kmeans, ClusterAssignment,
    VarietyClusters,
};
use agroplan::dataset::{generate_synthetic, SampleCounts, SplitSpec, SyntheticConfig};
use agroplan::decision::{
    empirical_quantile, solve_risk_capped, solve_robust_exact, solve_robust_greedy,
    solve_utility, PortfolioConstraints, Solution,
};
use agroplan::forest::{ForestConfig, ForestModel};
use agroplan::hierarchy::{train, train_one_layer, AugmentationPolicy};
use agroplan::linalg::Matrix;
use agroplan::scenario::{
    build_scenarios, sample_weather, stats, weather_pool, ScenarioMatrix, ScenarioStats,
    WeatherSample,
};
use agroplan::Error;

fn main() {
    let checks: [(&str, fn()); 11] = [
        (
            "two-layer model beats simpler predictors",
            two_layer_beats_simpler_predictors,
        ),
        (
            "augmentation helps a starved variety",
            augmentation_helps_a_starved_variety,
        ),
        (
            "weather attributes dominate importance",
            weather_attributes_dominate_importance,
        ),
        ("k-means objective and recovery", kmeans_objective_and_recovery),
        (
            "empirical quantile matches a sort oracle",
            quantile_matches_a_sort_oracle,
        ),
        (
            "solver portfolios respect the constraints",
            solver_portfolios_respect_the_constraints,
        ),
        ("solver trade-offs are monotone", solver_trade_offs_are_monotone),
        (
            "greedy tracks the exact robust optimum",
            greedy_tracks_the_exact_robust_optimum,
        ),
        ("hand-checked solver optima", hand_checked_solver_optima),
        (
            "training and planning are deterministic",
            training_and_planning_are_deterministic,
        ),
        (
            "scenario statistics are correct",
            scenario_statistics_are_correct,
        ),
    ];

    // Failures are reported below with the panic text; the default hook
    // would interleave its own output with the pass/fail lines.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, &(name, run)) in checks.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("check {:02} {name}: pass ({elapsed:.1}s)", i + 1),
            Err(payload) => {
                failures += 1;
                println!("check {:02} {name}: FAIL ({elapsed:.1}s)", i + 1);
                println!("    {}", panic_text(&payload).replace('\n', "\n    "));
            }
        }
    }
    if failures > 0 {
        println!("{failures} of {} checks failed", checks.len());
        std::process::exit(1);
    }
    println!("all {} checks passed", checks.len());
}

fn panic_text(payload: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(text) = payload.downcast_ref::<&str>() {
        (*text).to_string()
    } else if let Some(text) = payload.downcast_ref::<String>() {
        text.clone()
    } else {
        "panic without a message".to_string()
    }
}

fn rng(tag: u64, case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(tag * 1_000_003 + case)
}

fn split(seed: u64) -> SplitSpec {
    SplitSpec {
        train_fraction: 0.6,
        validation_fraction: 0.2,
        test_fraction: 0.2,
        seed,
    }
}

/// Random scenario matrix with per-variety means in [40, 90) and column
/// variances comfortably below 60, so a 60 variance cap is always feasible.
fn random_scenarios(r: &mut ChaCha8Rng, n_varieties: usize, n_scenarios: usize) -> ScenarioMatrix<f64> {
    let means: Vec<f64> = (0..n_varieties).map(|_| r.random_range(40.0..90.0)).collect();
    let spreads: Vec<f64> = (0..n_varieties).map(|_| r.random_range(3.0..10.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n_scenarios)
        .map(|_| {
            (0..n_varieties)
                .map(|j| means[j] + r.random_range(-spreads[j]..spreads[j]))
                .collect()
        })
        .collect();
    ScenarioMatrix {
        varieties: (0..n_varieties).map(|j| format!("V{j:03}")).collect(),
        weather: (0..n_scenarios)
            .map(|i| WeatherSample {
                site_id: format!("S{i:03}"),
                year: 2008,
                values: vec![],
            })
            .collect(),
        matrix: Matrix::from_rows(rows).unwrap(),
        floored: 0,
        seed: 0,
    }
}

fn assert_portfolio_valid(solution: &Solution<f64>, grid: u32, n_varieties: usize) {
    let p = &solution.portfolio;
    assert_eq!(p.grid, grid, "portfolio grid");
    assert!(
        !p.counts.is_empty() && p.counts.len() <= 5,
        "support size {} outside 1..=5",
        p.counts.len()
    );
    let mut total = 0u32;
    let mut last = None;
    for &(index, count) in &p.counts {
        assert!(index < n_varieties, "variety index {index} out of range");
        assert!(count >= 1, "zero weight kept in the support at {index}");
        if let Some(previous) = last {
            assert!(index > previous, "support indices not strictly increasing");
        }
        last = Some(index);
        total += count;
    }
    assert_eq!(total, grid, "counts do not fill the simplex");
}

fn two_layer_beats_simpler_predictors() {
    let started = Instant::now();
    let (data, _) = generate_synthetic::<f64>(&SyntheticConfig::default(), 4101).unwrap();
    let (train_set, valid, test) = data.split(&split(4102)).unwrap();
    let correlations = correlation_matrix(&train_set).unwrap();
    let clusters = cluster_varieties(&correlations, 3, 4103, 10).unwrap();
    let model = train(
        &train_set,
        &valid,
        &clusters,
        &AugmentationPolicy::disabled(),
        &ForestConfig { seed: 4104, ..ForestConfig::default() },
    )
    .unwrap();
    let one = train_one_layer(
        &train_set,
        &ForestConfig { seed: 4105, ..ForestConfig::default() },
    )
    .unwrap();
    let report = model.evaluate(&test, Some(&one)).unwrap();

    let one_layer = report.mse_one_layer.unwrap();
    assert!(
        report.mse_baseline > report.mse_check,
        "baseline MSE {} not above check-only {}",
        report.mse_baseline,
        report.mse_check
    );
    assert!(
        report.mse_check > one_layer,
        "check-only MSE {} not above one-layer {one_layer}",
        report.mse_check
    );
    assert!(
        one_layer > report.mse_two_layer,
        "one-layer MSE {one_layer} not above two-layer {}",
        report.mse_two_layer
    );
    assert!(
        report.mse_two_layer <= 0.90 * report.mse_check,
        "two-layer MSE {} above 0.90 x check-only {}",
        report.mse_two_layer,
        report.mse_check
    );
    assert!(started.elapsed().as_secs() < 120, "took {:?}", started.elapsed());
}

fn ground_truth_clusters(groups: &BTreeMap<String, usize>) -> VarietyClusters<f64> {
    let k = groups.values().copied().max().map_or(1, |top| top + 1);
    VarietyClusters {
        assignment: ClusterAssignment {
            k,
            assignment: groups.values().copied().collect(),
            centroids: Matrix::from_rows(vec![vec![0.0]; k]).unwrap(),
            wgss: 0.0,
            iteration_wgss: vec![],
            empty_cluster_reseeds: 0,
        },
        clusters: groups.clone(),
    }
}

fn augmentation_helps_a_starved_variety() {
    let started = Instant::now();
    let config = SyntheticConfig {
        n_sites: 24,
        n_years: 6,
        n_varieties: 6,
        n_groups: 2,
        records_per_variety: SampleCounts::PerVariety(vec![30, 500, 500, 500, 500, 500]),
        ..SyntheticConfig::default()
    };
    let (mut with_da, mut without_da) = (0.0, 0.0);
    for seed in 0..5u64 {
        let (data, truth) = generate_synthetic::<f64>(&config, 4200 + seed).unwrap();
        let (train_set, valid, test) = data.split(&split(4300 + seed)).unwrap();
        let clusters = ground_truth_clusters(&truth.groups);
        let forest = ForestConfig { seed: 4400 + seed, ..ForestConfig::default() };
        let augmented = train(&train_set, &valid, &clusters, &AugmentationPolicy::default(), &forest)
            .unwrap()
            .evaluate(&test, None)
            .unwrap();
        let plain = train(
            &train_set,
            &valid,
            &clusters,
            &AugmentationPolicy::disabled(),
            &forest,
        )
        .unwrap()
        .evaluate(&test, None)
        .unwrap();
        with_da += augmented
            .per_variety_mse
            .get("V000")
            .expect("starved variety missing from the augmented evaluation");
        without_da += plain
            .per_variety_mse
            .get("V000")
            .expect("starved variety missing from the plain evaluation");
    }
    assert!(
        with_da < without_da,
        "augmentation did not help the starved variety: mean MSE {} vs {}",
        with_da / 5.0,
        without_da / 5.0
    );
    assert!(started.elapsed().as_secs() < 120, "took {:?}", started.elapsed());
}

fn weather_attributes_dominate_importance() {
    let started = Instant::now();
    let config = SyntheticConfig {
        n_sites: 20,
        n_years: 5,
        n_varieties: 6,
        records_per_variety: SampleCounts::Uniform(100),
        soil_amplitude: 2.0,
        region_amplitude: 3.0,
        weather_amplitude: 12.0,
        ..SyntheticConfig::default()
    };
    let mut top_weather = 0;
    for seed in 0..10u64 {
        let (data, truth) = generate_synthetic::<f64>(&config, 4500 + seed).unwrap();
        let x = data.attribute_matrix();
        let y = data.check_yields();
        let forest = ForestModel::fit_named(
            &x,
            &y,
            &data.schema().names(),
            &ForestConfig { seed: 4600 + seed, ..ForestConfig::default() },
        )
        .unwrap();
        let ranked = forest.permutation_importance(&x, &y, 4700 + seed).unwrap();
        if truth.weather_attributes.contains(&ranked[0].name) {
            top_weather += 1;
        }
    }
    assert!(
        top_weather >= 9,
        "a weather attribute topped importance in only {top_weather}/10 runs"
    );
    assert!(started.elapsed().as_secs() < 60, "took {:?}", started.elapsed());
}

fn kmeans_objective_and_recovery() {
    for case in 0..100u64 {
        let mut r = rng(4, case);
        let n = r.random_range(5..40usize);
        let d = r.random_range(2..5usize);
        let k = r.random_range(1..=n.min(6));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-10.0..10.0)).collect())
            .collect();
        let points = Matrix::from_rows(rows).unwrap();
        let assignment = kmeans(&points, k, 4800 + case, 3).unwrap();
        for pair in assignment.iteration_wgss.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9) + 1e-9,
                "objective rose from {} to {} within a run",
                pair[0],
                pair[1]
            );
        }
    }

    let mut r = rng(4, 1_000_000);
    let mut rows = Vec::new();
    for _ in 0..30 {
        rows.push(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
    }
    for _ in 0..30 {
        rows.push(vec![
            100.0 + r.random_range(-1.0..1.0),
            100.0 + r.random_range(-1.0..1.0),
        ]);
    }
    let points = Matrix::from_rows(rows).unwrap();
    let clouds = kmeans(&points, 2, 4901, 5).unwrap();
    let first = clouds.assignment[0];
    assert!(
        clouds.assignment[..30].iter().all(|&c| c == first)
            && clouds.assignment[30..].iter().all(|&c| c != first),
        "two separated clouds were not recovered at k=2: {:?}",
        clouds.assignment
    );

    for case in 0..20u64 {
        let mut r = rng(5, case);
        let n = r.random_range(8..30usize);
        let d = r.random_range(2..4usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-10.0..10.0)).collect())
            .collect();
        let points = Matrix::from_rows(rows).unwrap();
        let curve = elbow_curve(&points, 8, 4950 + case, 3).unwrap();
        for pair in curve.windows(2) {
            assert!(
                pair[1].1 <= pair[0].1 * (1.0 + 1e-9) + 1e-9,
                "elbow curve rose from {:?} to {:?}",
                pair[0],
                pair[1]
            );
        }
    }
}

fn quantile_matches_a_sort_oracle() {
    for case in 0..1000u64 {
        let mut r = rng(6, case);
        let n = r.random_range(1..=60usize);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let alpha = r.random_range(0.001..0.999);
        let got = empirical_quantile(&values, alpha).unwrap();

        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = ((alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let expected = sorted[k - 1];
        assert!(
            got == expected,
            "quantile {got} != sort oracle {expected} (n {n}, alpha {alpha})"
        );
    }
}

fn solver_portfolios_respect_the_constraints() {
    let increments = [0.1, 0.125, 0.2, 0.25, 0.5];
    for case in 0..500u64 {
        let mut r = rng(7, case);
        let n = r.random_range(2..=9usize);
        let rows = r.random_range(20..=60usize);
        let scenarios = random_scenarios(&mut r, n, rows);
        let moments = scenarios.stats().unwrap();
        let constraints = PortfolioConstraints {
            increment: increments[r.random_range(0..increments.len())],
            ..PortfolioConstraints::default()
        };
        let grid = constraints.grid().unwrap();

        let lambda = r.random_range(0.0..1.5);
        let utility = solve_utility(&moments, &scenarios.varieties, &constraints, lambda).unwrap();
        assert_portfolio_valid(&utility, grid, n);

        let beta = r.random_range(10.0..80.0);
        match solve_risk_capped(&moments, &scenarios.varieties, &constraints, beta) {
            Ok(capped) => {
                assert_portfolio_valid(&capped, grid, n);
                assert!(
                    capped.variance <= beta * (1.0 + 1e-9) + 1e-12,
                    "variance {} beyond the cap {beta}",
                    capped.variance
                );
            }
            Err(Error::Infeasible { .. }) => {}
            Err(e) => panic!("risk-capped solver failed: {e}"),
        }

        let alpha = r.random_range(0.05..0.95);
        let robust = solve_robust_exact(&scenarios, &constraints, alpha).unwrap();
        assert_portfolio_valid(&robust, grid, n);
    }
}

fn solver_trade_offs_are_monotone() {
    let started = Instant::now();
    let constraints = PortfolioConstraints::default();
    for case in 0..100u64 {
        let mut r = rng(8, case);
        let scenarios = random_scenarios(&mut r, 8, 100);
        let moments = scenarios.stats().unwrap();

        let utilities: Vec<Solution<f64>> = [0.0, 0.03, 0.06, 0.1]
            .iter()
            .map(|&lambda| {
                solve_utility(&moments, &scenarios.varieties, &constraints, lambda).unwrap()
            })
            .collect();
        for pair in utilities.windows(2) {
            assert!(
                pair[1].expected_yield <= pair[0].expected_yield + 1e-9,
                "expected yield rose with lambda: {} -> {}",
                pair[0].expected_yield,
                pair[1].expected_yield
            );
            assert!(
                pair[1].variance <= pair[0].variance + 1e-9,
                "variance rose with lambda: {} -> {}",
                pair[0].variance,
                pair[1].variance
            );
        }

        let capped: Vec<Solution<f64>> = [60.0, 80.0, 100.0]
            .iter()
            .map(|&beta| {
                solve_risk_capped(&moments, &scenarios.varieties, &constraints, beta).unwrap()
            })
            .collect();
        for pair in capped.windows(2) {
            assert!(
                pair[1].expected_yield >= pair[0].expected_yield - 1e-9,
                "expected yield fell as the cap relaxed: {} -> {}",
                pair[0].expected_yield,
                pair[1].expected_yield
            );
        }

        let robust: Vec<Solution<f64>> = [0.2, 0.5, 0.8]
            .iter()
            .map(|&alpha| solve_robust_exact(&scenarios, &constraints, alpha).unwrap())
            .collect();
        for pair in robust.windows(2) {
            assert!(
                pair[1].objective >= pair[0].objective - 1e-9,
                "optimal quantile fell with alpha: {} -> {}",
                pair[0].objective,
                pair[1].objective
            );
        }
    }
    assert!(started.elapsed().as_secs() < 300, "took {:?}", started.elapsed());
}

fn greedy_tracks_the_exact_robust_optimum() {
    let started = Instant::now();
    let constraints = PortfolioConstraints::default();
    let (mut matched, mut total) = (0u32, 0u32);
    for case in 0..200u64 {
        let mut r = rng(9, case);
        let scenarios = random_scenarios(&mut r, 8, 100);
        for alpha in [0.2, 0.5, 0.8] {
            let exact = solve_robust_exact(&scenarios, &constraints, alpha).unwrap();
            let greedy = solve_robust_greedy(&scenarios, &constraints, alpha).unwrap();
            let best_single = (0..scenarios.varieties.len())
                .map(|j| {
                    let column: Vec<f64> = (0..scenarios.matrix.rows())
                        .map(|i| scenarios.matrix.get(i, j))
                        .collect();
                    empirical_quantile(&column, alpha).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                greedy.objective <= exact.objective + 1e-9,
                "greedy {} above the exact optimum {}",
                greedy.objective,
                exact.objective
            );
            assert!(
                greedy.objective >= best_single - 1e-9,
                "greedy {} below the best single variety {best_single}",
                greedy.objective
            );
            total += 1;
            if exact.objective - greedy.objective <= 1e-9 * (1.0 + exact.objective.abs()) {
                matched += 1;
            }
        }
    }
    let rate = f64::from(matched) / f64::from(total);
    println!(
        "    robust greedy matched the exact optimum on {matched}/{total} instances ({:.1}%)",
        rate * 100.0
    );
    assert!(rate >= 0.60, "match rate {:.1}% below 60%", rate * 100.0);
    assert!(started.elapsed().as_secs() < 600, "took {:?}", started.elapsed());
}

fn hand_checked_solver_optima() {
    let constraints = PortfolioConstraints::default();
    let names = vec!["A".to_string(), "B".to_string()];
    let moments: ScenarioStats<f64> = ScenarioStats {
        mean: vec![10.0, 9.0],
        covariance: Matrix::from_rows(vec![vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        repaired: false,
    };

    let utility = solve_utility(&moments, &names, &constraints, 1.0).unwrap();
    assert_eq!(utility.portfolio.counts, vec![(0, 3), (1, 7)], "utility portfolio");
    assert!(
        (utility.objective - 8.45).abs() <= 1e-12,
        "utility objective {} != 8.45",
        utility.objective
    );

    let capped = solve_risk_capped(&moments, &names, &constraints, 1.0).unwrap();
    assert_eq!(capped.portfolio.counts, vec![(0, 4), (1, 6)], "risk-capped portfolio");
    assert!(
        (capped.expected_yield - 9.4).abs() <= 1e-12,
        "risk-capped yield {} != 9.4",
        capped.expected_yield
    );

    let scenarios = ScenarioMatrix {
        varieties: names,
        weather: (0..2)
            .map(|i| WeatherSample {
                site_id: format!("S{i}"),
                year: 2008,
                values: vec![],
            })
            .collect(),
        matrix: Matrix::from_rows(vec![vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap(),
        floored: 0,
        seed: 0,
    };
    let robust = solve_robust_exact(&scenarios, &constraints, 0.5).unwrap();
    assert_eq!(robust.portfolio.counts, vec![(0, 5), (1, 5)], "robust portfolio");
    assert_eq!(robust.objective, 5.0, "robust objective");
}

fn run_cli(bin: &str, config: &Path, args: &[&str]) {
    let output = Command::new(bin)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("failed to launch the binary");
    assert!(
        output.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Relative path -> content for every regular file under `root`.
fn collect_files(root: &Path, prefix: &str, into: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(root).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
        if entry.file_type().unwrap().is_dir() {
            collect_files(&entry.path(), &rel, into);
        } else {
            into.insert(rel, std::fs::read(entry.path()).unwrap());
        }
    }
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (mut files_a, mut files_b) = (BTreeMap::new(), BTreeMap::new());
    collect_files(a, "", &mut files_a);
    collect_files(b, "", &mut files_b);
    assert_eq!(
        files_a.keys().collect::<Vec<_>>(),
        files_b.keys().collect::<Vec<_>>(),
        "the two runs wrote different file sets"
    );
    for (rel, bytes) in &files_a {
        assert!(bytes == &files_b[rel], "{rel} differs between identical runs");
    }
    assert!(!files_a.is_empty(), "no output files to compare");
}

fn training_and_planning_are_deterministic() {
    let bin = env!("CARGO_BIN_EXE_agroplan");
    let dir = tempfile::tempdir().unwrap();

    let synthetic = SyntheticConfig {
        n_sites: 12,
        n_years: 4,
        n_varieties: 6,
        records_per_variety: SampleCounts::Uniform(60),
        ..SyntheticConfig::default()
    };
    let config = serde_json::json!({
        "seed": 4242,
        "source": { "synthetic": synthetic },
        "forest": { "n_trees": 60 },
        "scenario": { "count": 200 },
        "decision": { "beta": 150.0 },
    });
    let config_path = dir.path().join("run_config.json");
    std::fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let t1 = dir.path().join("t1");
    let t2 = dir.path().join("t2");
    for out in [&t1, &t2] {
        run_cli(bin, &config_path, &["--out", out.to_str().unwrap(), "train"]);
    }
    assert_same_outputs(&t1, &t2);

    let model = t1.join("model");
    let p1 = dir.path().join("p1");
    let p2 = dir.path().join("p2");
    for out in [&p1, &p2] {
        run_cli(
            bin,
            &config_path,
            &[
                "--out",
                out.to_str().unwrap(),
                "--model",
                model.to_str().unwrap(),
                "plan",
            ],
        );
    }
    assert_same_outputs(&p1, &p2);
}

fn scenario_statistics_are_correct() {
    let hand = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
    let hand_stats = stats(&hand).unwrap();
    assert_eq!(hand_stats.mean, vec![3.0, 4.0], "column means");
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(hand_stats.covariance.get(i, j), 4.0, "covariance[{i}][{j}]");
        }
    }

    // Column means of a large simulation stay within 3 sigma of the exact
    // per-pool-entry model predictions.
    let config = SyntheticConfig {
        n_sites: 10,
        n_years: 6,
        n_varieties: 4,
        n_groups: 2,
        records_per_variety: SampleCounts::Uniform(80),
        ..SyntheticConfig::default()
    };
    let (data, _) = generate_synthetic::<f64>(&config, 4811).unwrap();
    let (train_set, valid, _) = data.split(&split(4812)).unwrap();
    let correlations = correlation_matrix(&train_set).unwrap();
    let clusters = cluster_varieties(&correlations, 2, 4813, 5).unwrap();
    let model = train(
        &train_set,
        &valid,
        &clusters,
        &AugmentationPolicy::disabled(),
        &ForestConfig { seed: 4814, n_trees: 80, ..ForestConfig::default() },
    )
    .unwrap();

    let sites: Vec<String> = data
        .records()
        .iter()
        .map(|record| record.site_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pool = weather_pool(&data, &sites);
    let n = 10_000usize;
    let draws = sample_weather(&pool, n, 4815).unwrap();
    let profile = data.records()[0].attributes.clone();
    let scenarios = build_scenarios(&model, &profile, &draws, 4816).unwrap();
    assert_eq!(scenarios.floored, 0, "flooring would bias the mean check");

    let weather_idx = model.schema.weather_indices();
    for (j, variety) in scenarios.varieties.iter().enumerate() {
        let mut predictions = Vec::with_capacity(pool.len());
        for sample in &pool {
            let mut attrs = profile.clone();
            for (k, &(idx, _)) in weather_idx.iter().enumerate() {
                attrs[idx] = sample.values[k];
            }
            predictions.push(model.predict_yield(variety, &attrs).unwrap().variety_yield);
        }
        let pool_mean = predictions.iter().sum::<f64>() / pool.len() as f64;
        let pool_var = predictions
            .iter()
            .map(|p| (p - pool_mean).powi(2))
            .sum::<f64>()
            / pool.len() as f64;
        let noise_var = model.residual_mse[variety].max(0.0);
        let sigma = ((pool_var + noise_var) / n as f64).sqrt();
        let column_mean = (0..n).map(|i| scenarios.matrix.get(i, j)).sum::<f64>() / n as f64;
        assert!(
            (column_mean - pool_mean).abs() <= 3.0 * sigma,
            "{variety}: simulated mean {column_mean} vs expected {pool_mean} beyond 3 sigma {sigma}"
        );
    }
}
