//! Portfolio selection over the grid simplex.
//!
//! A planting portfolio assigns grid-quantized weights (multiples of the
//! configured increment) to at most `max_varieties` varieties. Three
//! decision models are supported: mean-variance utility, expected yield
//! under a variance cap, and the empirical yield quantile (robust model).
//! The exact solvers enumerate every weighting by depth-first search in
//! decreasing-mean variety order, pruning subtrees whose optimistic bound
//! cannot beat the incumbent, and break objective ties explicitly: smallest
//! support lexicographically, then largest weight vector lexicographically.
//! Every solver counts the weightings it evaluates against a node budget
//! and fails honestly when the budget is exhausted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::scenario::{stats, ScenarioMatrix, ScenarioStats};

/// Grid and cardinality limits for a portfolio search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioConstraints {
    /// Weight grid step; its inverse must be an integer.
    pub increment: f64,
    /// Maximum number of varieties with nonzero weight.
    pub max_varieties: usize,
    /// Maximum number of complete weightings a solver may evaluate.
    pub node_budget: u64,
}

impl Default for PortfolioConstraints {
    fn default() -> Self {
        PortfolioConstraints {
            increment: 0.1,
            max_varieties: 5,
            node_budget: 50_000_000,
        }
    }
}

impl PortfolioConstraints {
    /// The number of grid steps G = 1 / increment.
    pub fn grid(&self) -> Result<u32> {
        if !self.increment.is_finite() || self.increment <= 0.0 || self.increment > 1.0 {
            return Err(Error::Config(format!(
                "increment must be in (0, 1], got {}",
                self.increment
            )));
        }
        let g = (1.0 / self.increment).round();
        if g < 1.0 || (g * self.increment - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "1/increment must be an integer, got increment {}",
                self.increment
            )));
        }
        if self.max_varieties == 0 {
            return Err(Error::Config("max_varieties must be at least 1".into()));
        }
        if self.node_budget == 0 {
            return Err(Error::Config("node_budget must be at least 1".into()));
        }
        Ok(g as u32)
    }
}

/// Grid-quantized weights: `counts` hold (variety index, grid steps) pairs,
/// sorted by index, with steps summing to `grid`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub grid: u32,
    pub counts: Vec<(usize, u32)>,
}

impl Portfolio {
    pub fn support(&self) -> Vec<usize> {
        self.counts.iter().map(|&(i, _)| i).collect()
    }

    /// (variety index, weight) pairs.
    pub fn weights<T: Scalar>(&self) -> Vec<(usize, T)> {
        let g = T::cast(self.grid as f64);
        self.counts
            .iter()
            .map(|&(i, c)| (i, T::cast(c as f64) / g))
            .collect()
    }
}

/// Which decision model produced a solution, with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SolverTag<T> {
    Utility { lambda: T },
    UtilityHeuristic { lambda: T },
    RiskCapped { beta: T },
    RobustExact { alpha: T },
    RobustGreedy { alpha: T },
}

/// A selected portfolio with its reported moments and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution<T> {
    pub solver: SolverTag<T>,
    pub portfolio: Portfolio,
    /// Ids of the selected varieties, parallel to `portfolio.counts`.
    pub varieties: Vec<String>,
    /// Portfolio mean yield under the scenario statistics.
    pub expected_yield: T,
    /// Portfolio yield variance under the scenario statistics.
    pub variance: T,
    /// The model objective: utility, capped expected yield, or quantile.
    pub objective: T,
    /// Complete weightings evaluated while searching.
    pub evaluated: u64,
}

/// Portfolio mean and variance under (mu, covariance), accumulated in
/// index order so recomputation reproduces the stored values bit for bit.
pub fn portfolio_moments<T: Scalar>(
    counts: &[(usize, u32)],
    grid: u32,
    mu: &[T],
    covariance: &Matrix<T>,
) -> (T, T) {
    let g = T::cast(grid as f64);
    let weights: Vec<(usize, T)> = counts
        .iter()
        .map(|&(i, c)| (i, T::cast(c as f64) / g))
        .collect();
    let mut mean = T::zero();
    for &(i, w) in &weights {
        mean += w * mu[i];
    }
    let mut variance = T::zero();
    for &(a, wa) in &weights {
        for &(b, wb) in &weights {
            variance += wa * wb * covariance.get(a, b);
        }
    }
    (mean, variance)
}

/// Strict "is `a` better than `b`" under the tie-breaking rules: higher
/// objective, then lexicographically smaller support, then lexicographically
/// larger weight vector. Counts must be sorted by variety index.
fn better<T: Scalar>(
    objective_a: T,
    counts_a: &[(usize, u32)],
    objective_b: T,
    counts_b: &[(usize, u32)],
) -> bool {
    if objective_a != objective_b {
        return objective_a > objective_b;
    }
    let support_a: Vec<usize> = counts_a.iter().map(|&(i, _)| i).collect();
    let support_b: Vec<usize> = counts_b.iter().map(|&(i, _)| i).collect();
    if support_a != support_b {
        return support_a < support_b;
    }
    for (&(_, ca), &(_, cb)) in counts_a.iter().zip(counts_b) {
        if ca != cb {
            return ca > cb;
        }
    }
    false
}

struct Candidate<T> {
    objective: T,
    counts: Vec<(usize, u32)>,
}

/// A solver's view of one complete weighting.
trait Evaluate<T: Scalar> {
    /// Objective of the weighting, or `None` when it is infeasible.
    /// `counts` are sorted by variety index.
    fn objective(&mut self, counts: &[(usize, u32)]) -> Option<T>;

    /// `Some(slack)` enables mean-based bound pruning: no completion of a
    /// partial weighting can beat `sum(w_i mu_i)` over the remaining steps
    /// by more than `slack`. `None` disables pruning.
    fn bound_slack(&self) -> Option<T>;
}

/// Depth-first enumeration of grid weightings in decreasing-mean variety
/// order.
struct Search<'a, T: Scalar> {
    /// Variety indices, sorted by (mean desc, index asc).
    order: Vec<usize>,
    mu: &'a [T],
    grid: u32,
    max_support: usize,
    /// Require every variety in `order` to receive at least one step.
    min_one: bool,
    budget: u64,
    evaluated: u64,
    best: Option<Candidate<T>>,
}

impl<'a, T: Scalar> Search<'a, T> {
    fn over(indices: &[usize], mu: &'a [T], grid: u32, max_support: usize) -> Self {
        let mut order = indices.to_vec();
        order.sort_by(|&a, &b| {
            mu[b].partial_cmp(&mu[a])
                .expect("finite means")
                .then(a.cmp(&b))
        });
        Search {
            order,
            mu,
            grid,
            max_support,
            min_one: false,
            budget: u64::MAX,
            evaluated: 0,
            best: None,
        }
    }

    fn run<E: Evaluate<T>>(&mut self, eval: &mut E) -> Result<()> {
        let mut partial = Vec::with_capacity(self.max_support);
        self.dfs(eval, 0, self.grid, self.max_support, T::zero(), &mut partial)
    }

    fn dfs<E: Evaluate<T>>(
        &mut self,
        eval: &mut E,
        pos: usize,
        remaining: u32,
        support_left: usize,
        partial_mean_steps: T,
        partial: &mut Vec<(usize, u32)>,
    ) -> Result<()> {
        if remaining == 0 {
            if self.min_one && pos < self.order.len() {
                return Ok(());
            }
            self.evaluated += 1;
            if self.evaluated > self.budget {
                return Err(Error::BudgetExceeded {
                    evaluated: self.evaluated,
                    budget: self.budget,
                });
            }
            let mut counts = partial.clone();
            counts.sort_by_key(|&(i, _)| i);
            if let Some(objective) = eval.objective(&counts) {
                let replace = match &self.best {
                    None => true,
                    Some(best) => better(objective, &counts, best.objective, &best.counts),
                };
                if replace {
                    self.best = Some(Candidate { objective, counts });
                }
            }
            return Ok(());
        }
        if pos == self.order.len() || support_left == 0 {
            return Ok(());
        }

        if let (Some(slack), Some(best)) = (eval.bound_slack(), &self.best) {
            let rest_best = self.mu[self.order[pos]];
            let bound = (partial_mean_steps + T::cast(remaining as f64) * rest_best)
                / T::cast(self.grid as f64);
            let guard = slack + T::cast(1e-9) * (T::one() + best.objective.abs());
            if bound < best.objective - guard {
                return Ok(());
            }
        }

        let index = self.order[pos];
        for steps in (1..=remaining).rev() {
            partial.push((index, steps));
            self.dfs(
                eval,
                pos + 1,
                remaining - steps,
                support_left - 1,
                partial_mean_steps + T::cast(steps as f64) * self.mu[index],
                partial,
            )?;
            partial.pop();
        }
        if self.min_one {
            return Ok(());
        }
        self.dfs(eval, pos + 1, remaining, support_left, partial_mean_steps, partial)
    }
}

struct UtilityEval<'a, T> {
    mu: &'a [T],
    covariance: &'a Matrix<T>,
    grid: u32,
    lambda: T,
}

impl<T: Scalar> Evaluate<T> for UtilityEval<'_, T> {
    fn objective(&mut self, counts: &[(usize, u32)]) -> Option<T> {
        let (mean, variance) = portfolio_moments(counts, self.grid, self.mu, self.covariance);
        Some(mean - self.lambda * variance)
    }

    fn bound_slack(&self) -> Option<T> {
        // The portfolio variance can sit a hair below zero (the covariance
        // tolerates eigenvalues down to -1e-8), so the mean bound can
        // undershoot the utility by at most lambda * 1e-8.
        Some(self.lambda * T::cast(1e-8))
    }
}

struct RiskCapEval<'a, T> {
    mu: &'a [T],
    covariance: &'a Matrix<T>,
    grid: u32,
    cap: T,
    min_variance: Option<T>,
}

impl<T: Scalar> Evaluate<T> for RiskCapEval<'_, T> {
    fn objective(&mut self, counts: &[(usize, u32)]) -> Option<T> {
        let (mean, variance) = portfolio_moments(counts, self.grid, self.mu, self.covariance);
        if self.min_variance.is_none_or(|m| variance < m) {
            self.min_variance = Some(variance);
        }
        (variance <= self.cap).then_some(mean)
    }

    fn bound_slack(&self) -> Option<T> {
        Some(T::zero())
    }
}

struct QuantileEval<'a, T> {
    matrix: &'a Matrix<T>,
    grid: u32,
    /// 0-based rank of the quantile order statistic.
    rank: usize,
    buffer: Vec<T>,
}

impl<T: Scalar> Evaluate<T> for QuantileEval<'_, T> {
    fn objective(&mut self, counts: &[(usize, u32)]) -> Option<T> {
        let g = T::cast(self.grid as f64);
        self.buffer.clear();
        for i in 0..self.matrix.rows() {
            let row = self.matrix.row(i);
            let mut value = T::zero();
            for &(j, c) in counts {
                value += T::cast(c as f64) / g * row[j];
            }
            self.buffer.push(value);
        }
        Some(select_rank(&mut self.buffer, self.rank))
    }

    fn bound_slack(&self) -> Option<T> {
        None
    }
}

fn check_moment_inputs<T: Scalar>(
    stats: &ScenarioStats<T>,
    varieties: &[String],
) -> Result<usize> {
    let n = stats.mean.len();
    if n == 0 {
        return Err(Error::Contract("no varieties to select from".into()));
    }
    if varieties.len() != n {
        return Err(Error::Contract(format!(
            "{} variety names for {n} means",
            varieties.len()
        )));
    }
    if stats.covariance.rows() != n || stats.covariance.cols() != n {
        return Err(Error::Contract(format!(
            "covariance is {}x{}, expected {n}x{n}",
            stats.covariance.rows(),
            stats.covariance.cols()
        )));
    }
    if !stats.mean.iter().all(|m| m.is_finite()) {
        return Err(Error::Contract("non-finite scenario mean".into()));
    }
    for a in 0..n {
        for b in 0..n {
            if !stats.covariance.get(a, b).is_finite() {
                return Err(Error::Contract("non-finite covariance entry".into()));
            }
        }
    }
    Ok(n)
}

fn build_solution<T: Scalar>(
    solver: SolverTag<T>,
    candidate: Candidate<T>,
    grid: u32,
    varieties: &[String],
    mu: &[T],
    covariance: &Matrix<T>,
    evaluated: u64,
) -> Solution<T> {
    let (expected_yield, variance) = portfolio_moments(&candidate.counts, grid, mu, covariance);
    Solution {
        solver,
        varieties: candidate
            .counts
            .iter()
            .map(|&(i, _)| varieties[i].clone())
            .collect(),
        portfolio: Portfolio {
            grid,
            counts: candidate.counts,
        },
        expected_yield,
        variance,
        objective: candidate.objective,
        evaluated,
    }
}

/// Maximize `expected yield - lambda * variance` exactly over the grid
/// simplex.
pub fn solve_utility<T: Scalar>(
    stats: &ScenarioStats<T>,
    varieties: &[String],
    constraints: &PortfolioConstraints,
    lambda: T,
) -> Result<Solution<T>> {
    let n = check_moment_inputs(stats, varieties)?;
    let grid = constraints.grid()?;
    if !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::Config(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut search = Search::over(&indices, &stats.mean, grid, constraints.max_varieties.min(n));
    search.budget = constraints.node_budget;
    let mut eval = UtilityEval {
        mu: &stats.mean,
        covariance: &stats.covariance,
        grid,
        lambda,
    };
    search.run(&mut eval)?;
    let candidate = search.best.expect("the simplex is never empty");
    Ok(build_solution(
        SolverTag::Utility { lambda },
        candidate,
        grid,
        varieties,
        &stats.mean,
        &stats.covariance,
        search.evaluated,
    ))
}

/// Greedy-growth heuristic for the utility model: start from the best
/// single variety, grow while an added variety improves the exact grid
/// optimum over the enlarged set, then try one-for-one swaps until no swap
/// improves. Exact within each candidate support set.
pub fn solve_utility_heuristic<T: Scalar>(
    stats: &ScenarioStats<T>,
    varieties: &[String],
    constraints: &PortfolioConstraints,
    lambda: T,
) -> Result<Solution<T>> {
    let n = check_moment_inputs(stats, varieties)?;
    let grid = constraints.grid()?;
    if !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::Config(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let max_support = constraints.max_varieties.min(n);
    let mut evaluated = 0u64;

    let best_over = |support: &[usize], evaluated: &mut u64| -> Result<Candidate<T>> {
        let mut search = Search::over(support, &stats.mean, grid, support.len());
        search.budget = constraints.node_budget;
        search.evaluated = *evaluated;
        let mut eval = UtilityEval {
            mu: &stats.mean,
            covariance: &stats.covariance,
            grid,
            lambda,
        };
        search.run(&mut eval)?;
        *evaluated = search.evaluated;
        Ok(search.best.expect("nonempty support"))
    };

    // Best single variety.
    let mut support: Vec<usize> = Vec::new();
    let mut incumbent: Option<Candidate<T>> = None;
    for v in 0..n {
        let candidate = best_over(&[v], &mut evaluated)?;
        let replace = match &incumbent {
            None => true,
            Some(best) => better(candidate.objective, &candidate.counts, best.objective, &best.counts),
        };
        if replace {
            incumbent = Some(candidate);
            support = vec![v];
        }
    }
    let mut incumbent = incumbent.expect("at least one variety");

    // Grow while adding a variety improves the exact optimum over the set.
    while support.len() < max_support {
        let mut best_grown: Option<(Candidate<T>, Vec<usize>)> = None;
        for v in 0..n {
            if support.contains(&v) {
                continue;
            }
            let mut grown = support.clone();
            grown.push(v);
            grown.sort_unstable();
            let candidate = best_over(&grown, &mut evaluated)?;
            let replace = match &best_grown {
                None => true,
                Some((best, _)) => {
                    better(candidate.objective, &candidate.counts, best.objective, &best.counts)
                }
            };
            if replace {
                best_grown = Some((candidate, grown));
            }
        }
        match best_grown {
            Some((candidate, grown))
                if better(
                    candidate.objective,
                    &candidate.counts,
                    incumbent.objective,
                    &incumbent.counts,
                ) =>
            {
                incumbent = candidate;
                support = grown;
            }
            _ => break,
        }
    }

    // One-for-one swaps until stable.
    loop {
        let mut improved: Option<(Candidate<T>, Vec<usize>)> = None;
        for (slot, &out) in support.iter().enumerate() {
            for v in 0..n {
                if support.contains(&v) {
                    continue;
                }
                let mut swapped = support.clone();
                swapped[slot] = v;
                swapped.sort_unstable();
                let candidate = best_over(&swapped, &mut evaluated)?;
                let candidate_beats_incumbent = better(
                    candidate.objective,
                    &candidate.counts,
                    incumbent.objective,
                    &incumbent.counts,
                );
                let candidate_beats_improved = match &improved {
                    None => true,
                    Some((best, _)) => {
                        better(candidate.objective, &candidate.counts, best.objective, &best.counts)
                    }
                };
                if candidate_beats_incumbent && candidate_beats_improved {
                    improved = Some((candidate, swapped));
                }
            }
            let _ = out;
        }
        match improved {
            Some((candidate, swapped)) => {
                incumbent = candidate;
                support = swapped;
            }
            None => break,
        }
    }

    Ok(build_solution(
        SolverTag::UtilityHeuristic { lambda },
        incumbent,
        grid,
        varieties,
        &stats.mean,
        &stats.covariance,
        evaluated,
    ))
}

/// Maximize expected yield subject to `variance <= beta`, exactly.
///
/// When no grid weighting satisfies the cap, the error reports the smallest
/// achievable variance.
pub fn solve_risk_capped<T: Scalar>(
    stats: &ScenarioStats<T>,
    varieties: &[String],
    constraints: &PortfolioConstraints,
    beta: T,
) -> Result<Solution<T>> {
    let n = check_moment_inputs(stats, varieties)?;
    let grid = constraints.grid()?;
    if !beta.is_finite() || beta <= T::zero() {
        return Err(Error::Config(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut search = Search::over(&indices, &stats.mean, grid, constraints.max_varieties.min(n));
    search.budget = constraints.node_budget;
    // Portfolios whose variance equals the cap up to rounding are feasible.
    let cap = beta + beta.abs() * T::cast(1e-12) + T::cast(1e-15);
    let mut eval = RiskCapEval {
        mu: &stats.mean,
        covariance: &stats.covariance,
        grid,
        cap,
        min_variance: None,
    };
    search.run(&mut eval)?;
    match search.best {
        Some(candidate) => Ok(build_solution(
            SolverTag::RiskCapped { beta },
            candidate,
            grid,
            varieties,
            &stats.mean,
            &stats.covariance,
            search.evaluated,
        )),
        None => Err(Error::Infeasible {
            beta: beta.widen(),
            min_variance: eval
                .min_variance
                .expect("the simplex is never empty")
                .widen(),
        }),
    }
}

/// 0-based rank of the empirical alpha-quantile order statistic among `n`
/// values: the k-th smallest with k = max(1, ceil(alpha * n)), where the
/// ceiling tolerates floating-point noise just above an integer.
fn quantile_rank(alpha: f64, n: usize) -> usize {
    let k = (alpha * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n) - 1
}

fn select_rank<T: Scalar>(values: &mut [T], rank: usize) -> T {
    let (_, pivot, _) = values
        .select_nth_unstable_by(rank, |a, b| a.partial_cmp(b).expect("finite yields"));
    *pivot
}

/// The empirical alpha-quantile: the k-th smallest value with
/// k = max(1, ceil(alpha * n)).
pub fn empirical_quantile<T: Scalar>(values: &[T], alpha: T) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Contract("quantile of an empty slice".into()));
    }
    let a = alpha.widen();
    if !(0.0..1.0).contains(&a) || a == 0.0 {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {a}")));
    }
    let mut buffer = values.to_vec();
    Ok(select_rank(&mut buffer, quantile_rank(a, values.len())))
}

fn check_scenario_inputs<T: Scalar>(scenarios: &ScenarioMatrix<T>, alpha: T) -> Result<ScenarioStats<T>> {
    let a = alpha.widen();
    if !(0.0..1.0).contains(&a) || a == 0.0 {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {a}")));
    }
    if scenarios.varieties.len() != scenarios.matrix.cols() {
        return Err(Error::Contract(format!(
            "{} variety names for {} scenario columns",
            scenarios.varieties.len(),
            scenarios.matrix.cols()
        )));
    }
    stats(&scenarios.matrix)
}

/// Maximize the empirical alpha-quantile of portfolio yield, exactly, by
/// evaluating every grid weighting against the scenario matrix.
pub fn solve_robust_exact<T: Scalar>(
    scenarios: &ScenarioMatrix<T>,
    constraints: &PortfolioConstraints,
    alpha: T,
) -> Result<Solution<T>> {
    let scenario_stats = check_scenario_inputs(scenarios, alpha)?;
    let grid = constraints.grid()?;
    let n = scenarios.matrix.cols();
    let indices: Vec<usize> = (0..n).collect();
    let mut search = Search::over(
        &indices,
        &scenario_stats.mean,
        grid,
        constraints.max_varieties.min(n),
    );
    search.budget = constraints.node_budget;
    let mut eval = QuantileEval {
        matrix: &scenarios.matrix,
        grid,
        rank: quantile_rank(alpha.widen(), scenarios.matrix.rows()),
        buffer: Vec::with_capacity(scenarios.matrix.rows()),
    };
    search.run(&mut eval)?;
    let candidate = search.best.expect("the simplex is never empty");
    Ok(build_solution(
        SolverTag::RobustExact { alpha },
        candidate,
        grid,
        &scenarios.varieties,
        &scenario_stats.mean,
        &scenario_stats.covariance,
        search.evaluated,
    ))
}

/// Greedy robust selection: best single variety by quantile, grown one
/// variety at a time while the best all-positive weighting over the
/// enlarged set improves, finished with an exhaustive search over every
/// grid weighting of the final set.
pub fn solve_robust_greedy<T: Scalar>(
    scenarios: &ScenarioMatrix<T>,
    constraints: &PortfolioConstraints,
    alpha: T,
) -> Result<Solution<T>> {
    let scenario_stats = check_scenario_inputs(scenarios, alpha)?;
    let grid = constraints.grid()?;
    let n = scenarios.matrix.cols();
    let max_support = constraints.max_varieties.min(n);
    let rank = quantile_rank(alpha.widen(), scenarios.matrix.rows());
    let mut evaluated = 0u64;

    let run_over = |support: &[usize],
                    min_one: bool,
                    evaluated: &mut u64|
     -> Result<Option<Candidate<T>>> {
        let mut search = Search::over(support, &scenario_stats.mean, grid, support.len());
        search.min_one = min_one;
        search.budget = constraints.node_budget;
        search.evaluated = *evaluated;
        let mut eval = QuantileEval {
            matrix: &scenarios.matrix,
            grid,
            rank,
            buffer: Vec::with_capacity(scenarios.matrix.rows()),
        };
        search.run(&mut eval)?;
        *evaluated = search.evaluated;
        Ok(search.best)
    };

    // Step 1: best single variety.
    let mut support: Vec<usize> = Vec::new();
    let mut incumbent: Option<Candidate<T>> = None;
    for v in 0..n {
        let candidate = run_over(&[v], false, &mut evaluated)?.expect("one weighting");
        let replace = match &incumbent {
            None => true,
            Some(best) => better(candidate.objective, &candidate.counts, best.objective, &best.counts),
        };
        if replace {
            incumbent = Some(candidate);
            support = vec![v];
        }
    }
    let mut incumbent = incumbent.expect("at least one variety");

    // Step 2: grow while the best all-positive weighting improves.
    while support.len() < max_support {
        let mut best_grown: Option<(Candidate<T>, Vec<usize>)> = None;
        for v in 0..n {
            if support.contains(&v) {
                continue;
            }
            let mut grown = support.clone();
            grown.push(v);
            grown.sort_unstable();
            let Some(candidate) = run_over(&grown, true, &mut evaluated)? else {
                continue;
            };
            let replace = match &best_grown {
                None => true,
                Some((best, _)) => {
                    better(candidate.objective, &candidate.counts, best.objective, &best.counts)
                }
            };
            if replace {
                best_grown = Some((candidate, grown));
            }
        }
        match best_grown {
            Some((candidate, grown))
                if better(
                    candidate.objective,
                    &candidate.counts,
                    incumbent.objective,
                    &incumbent.counts,
                ) =>
            {
                incumbent = candidate;
                support = grown;
            }
            _ => break,
        }
    }

    // Step 3: exhaustive over every weighting supported within the set.
    let final_best = run_over(&support, false, &mut evaluated)?.expect("nonempty support");
    let candidate = if better(
        final_best.objective,
        &final_best.counts,
        incumbent.objective,
        &incumbent.counts,
    ) {
        final_best
    } else {
        incumbent
    };

    Ok(build_solution(
        SolverTag::RobustGreedy { alpha },
        candidate,
        grid,
        &scenarios.varieties,
        &scenario_stats.mean,
        &scenario_stats.covariance,
        evaluated,
    ))
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<T> {
    pub parameter: T,
    pub solution: Option<Solution<T>>,
    pub error: Option<String>,
}

/// Run a solver across parameter values; failures are recorded per row and
/// the sweep continues.
pub fn sweep<T: Scalar>(
    parameters: &[T],
    mut run: impl FnMut(T) -> Result<Solution<T>>,
) -> Vec<SweepRow<T>> {
    parameters
        .iter()
        .map(|&parameter| match run(parameter) {
            Ok(solution) => SweepRow {
                parameter,
                solution: Some(solution),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep value {parameter}: {e}");
                SweepRow {
                    parameter,
                    solution: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect()
}

/// Plain-text sweep table: one row per parameter value with the selected
/// varieties, their weights, and the portfolio figures.
pub fn render_sweep_table<T: Scalar>(parameter_name: &str, rows: &[SweepRow<T>]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>10}  {:<40} {:>12} {:>12} {:>12}",
        parameter_name, "portfolio", "expected", "variance", "objective"
    );
    for row in rows {
        match &row.solution {
            Some(s) => {
                let weights: Vec<String> = s
                    .portfolio
                    .counts
                    .iter()
                    .zip(&s.varieties)
                    .map(|(&(_, c), id)| {
                        format!("{id}:{:.3}", c as f64 / s.portfolio.grid as f64)
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "{:>10.4}  {:<40} {:>12.4} {:>12.4} {:>12.4}",
                    row.parameter,
                    weights.join(" "),
                    s.expected_yield,
                    s.variance,
                    s.objective
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:>10.4}  error: {}",
                    row.parameter,
                    row.error.as_deref().unwrap_or("unknown")
                );
            }
        }
    }
    out
}
