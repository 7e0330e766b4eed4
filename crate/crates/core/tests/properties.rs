//! Property tests: randomized inputs against invariants that must hold for
//! every valid input, with small case counts to keep forest training cheap.

use agroplan::dataset::{generate_synthetic, SampleCounts, SplitSpec, SyntheticConfig};
use agroplan::decision::{
    empirical_quantile, solve_risk_capped, solve_utility, portfolio_moments,
    PortfolioConstraints,
};
use agroplan::forest::{ForestConfig, ForestModel};
use agroplan::linalg::Matrix;
use agroplan::scenario::{sample_weather, weather_pool, ScenarioStats};
use agroplan::Error;
use proptest::prelude::*;

fn psd_stats(factors: &[Vec<f64>], mean: &[f64]) -> ScenarioStats<f64> {
    let n = mean.len();
    let mut covariance = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let total: f64 = factors[a].iter().zip(&factors[b]).map(|(x, y)| x * y).sum();
            covariance.set(a, b, total);
        }
    }
    ScenarioStats {
        mean: mean.to_vec(),
        covariance,
        repaired: false,
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("V{i:03}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quantile_is_an_order_statistic(
        values in prop::collection::vec(-1e6..1e6f64, 1..200),
        alpha in 0.001..0.999f64,
    ) {
        let q = empirical_quantile(&values, alpha).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let k = ((alpha * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n);
        prop_assert_eq!(q, sorted[k - 1]);
        // The quantile is always one of the observed values.
        prop_assert!(values.contains(&q));
    }

    #[test]
    fn utility_solutions_satisfy_the_grid_contract(
        seed_rows in prop::collection::vec(
            prop::collection::vec(-3.0..3.0f64, 3), 3,
        ),
        mean in prop::collection::vec(20.0..90.0f64, 3),
        lambda in 0.0..2.0f64,
    ) {
        let stats = psd_stats(&seed_rows, &mean);
        let constraints = PortfolioConstraints {
            increment: 0.1,
            max_varieties: 2,
            node_budget: 1_000_000,
        };
        let s = solve_utility(&stats, &names(3), &constraints, lambda).unwrap();
        let total: u32 = s.portfolio.counts.iter().map(|&(_, c)| c).sum();
        prop_assert_eq!(total, 10);
        prop_assert!(s.portfolio.counts.len() <= 2);
        prop_assert!(s.portfolio.counts.iter().all(|&(_, c)| c > 0));
        let (e, v) = portfolio_moments(
            &s.portfolio.counts,
            s.portfolio.grid,
            &stats.mean,
            &stats.covariance,
        );
        prop_assert!((e - s.expected_yield).abs() < 1e-9);
        prop_assert!((v - s.variance).abs() < 1e-9);
        prop_assert!((s.objective - (e - lambda * v)).abs() < 1e-9);
    }

    #[test]
    fn risk_cap_is_honored_or_reported(
        seed_rows in prop::collection::vec(
            prop::collection::vec(-3.0..3.0f64, 3), 3,
        ),
        mean in prop::collection::vec(20.0..90.0f64, 3),
        beta in 0.01..20.0f64,
    ) {
        let stats = psd_stats(&seed_rows, &mean);
        let constraints = PortfolioConstraints {
            increment: 0.2,
            max_varieties: 3,
            node_budget: 1_000_000,
        };
        match solve_risk_capped(&stats, &names(3), &constraints, beta) {
            Ok(s) => prop_assert!(s.variance <= beta * (1.0 + 1e-9) + 1e-12),
            Err(Error::Infeasible { min_variance, .. }) => {
                prop_assert!(min_variance > beta - 1e-9);
            }
            Err(other) => prop_assert!(false, "unexpected error: {other}"),
        }
    }

    #[test]
    fn weather_sampling_draws_from_the_pool(
        n_sites in 2..6usize,
        n_years in 2..4u16,
        draws in 1..40usize,
        seed in 0..1000u64,
    ) {
        let config = SyntheticConfig {
            n_sites,
            n_years,
            n_varieties: 2,
            n_groups: 1,
            records_per_variety: SampleCounts::Uniform(n_sites * n_years as usize),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, seed).unwrap();
        let sites: Vec<String> = (0..n_sites).map(|s| format!("S{s:03}")).collect();
        let pool = weather_pool(&dataset, &sites);
        prop_assert!(!pool.is_empty());
        let sample = sample_weather(&pool, draws, seed).unwrap();
        prop_assert_eq!(sample.len(), draws);
        for draw in &sample {
            prop_assert!(pool.contains(draw), "draw outside the pool");
        }
        let again = sample_weather(&pool, draws, seed).unwrap();
        prop_assert_eq!(sample, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn forest_predictions_stay_in_the_target_range(
        seed in 0..500u64,
        n_trees in 1..20usize,
    ) {
        let config = SyntheticConfig {
            n_sites: 6,
            n_years: 3,
            n_varieties: 2,
            n_groups: 1,
            records_per_variety: SampleCounts::Uniform(30),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, seed).unwrap();
        let x = dataset.attribute_matrix();
        let y = dataset.check_yields();
        let forest = ForestModel::fit(
            &x,
            &y,
            &ForestConfig {
                n_trees,
                max_depth: Some(6),
                min_samples_leaf: 2,
                seed,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        let (lo, hi) = y
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        for value in forest.predict(&x).unwrap() {
            prop_assert!(value >= lo && value <= hi);
        }
    }

    #[test]
    fn splits_respect_requested_fractions(
        seed in 0..200u64,
        train_pct in 3..8usize,
    ) {
        let config = SyntheticConfig {
            n_sites: 6,
            n_years: 3,
            n_varieties: 3,
            n_groups: 1,
            records_per_variety: SampleCounts::Uniform(40),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, seed).unwrap();
        let train_fraction = train_pct as f64 / 10.0;
        let rest = (1.0 - train_fraction) / 2.0;
        let spec = SplitSpec {
            train_fraction,
            validation_fraction: rest,
            test_fraction: rest,
            seed,
        };
        let (train_set, valid, test) = dataset.split(&spec).unwrap();
        prop_assert_eq!(train_set.len() + valid.len() + test.len(), dataset.len());
        // Largest-remainder apportionment keeps each part within one record
        // per variety of its target.
        let n_varieties = dataset.n_varieties() as f64;
        let target = dataset.len() as f64 * train_fraction;
        prop_assert!((train_set.len() as f64 - target).abs() <= n_varieties);
    }
}
