//! Subcommand implementations. Every command resolves the config, writes
//! `run.json`, and stamps each output file with the config hash and seed so
//! equal-hash runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;

use serde::Serialize;

use agroplan::clustering::{cluster_varieties, correlation_matrix, elbow_curve};
use agroplan::dataset::{
    generate_synthetic, impute_missing, ingest_csv_path, AttributeSchema, IngestReport, SplitSpec,
};
use agroplan::decision::{
    render_sweep_table, solve_risk_capped, solve_robust_greedy, solve_utility, Solution, SweepRow,
};
use agroplan::hierarchy::{train_one_layer, AugmentationPolicy, EvaluationReport};
use agroplan::scenario::{build_scenarios, sample_weather, similar_sites, weather_pool};
use agroplan::{Dataset64, HierarchicalModel64, Error, ScenarioMatrix64, ScenarioStats64};

use crate::config::{stage, DataSource, Resolved, SchemaChoice, SolverChoice};
use crate::{CliError, StageExt};

/// Create the output directory and record the effective run settings.
pub fn prepare_output(r: &Resolved) -> Result<(), CliError> {
    fs::create_dir_all(&r.out).stage(format!("creating {}", r.out.display()))?;
    #[derive(Serialize)]
    struct Run<'a> {
        config_hash: &'a str,
        seed: u64,
        config: &'a crate::config::RunConfig,
    }
    let recorded = r.config.canonical();
    let run = Run {
        config_hash: &r.hash,
        seed: r.config.seed,
        config: &recorded,
    };
    let text = serde_json::to_string_pretty(&run).stage("writing run.json")?;
    fs::write(r.out.join("run.json"), text + "\n").stage("writing run.json")?;
    Ok(())
}

fn provenance_line(r: &Resolved) -> String {
    format!("# config_hash={} seed={}", r.hash, r.config.seed)
}

fn write_text(r: &Resolved, name: &str, body: &str) -> Result<(), CliError> {
    let path = r.out.join(name);
    let text = format!("{}\n{body}", provenance_line(r));
    fs::write(&path, text).stage(format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(r: &Resolved, name: &str, data: &T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Provenance<'a, T> {
        config_hash: &'a str,
        seed: u64,
        data: &'a T,
    }
    let path = r.out.join(name);
    let wrapped = Provenance {
        config_hash: &r.hash,
        seed: r.config.seed,
        data,
    };
    let text = serde_json::to_string_pretty(&wrapped).stage(format!("writing {}", path.display()))?;
    fs::write(&path, text + "\n").stage(format!("writing {}", path.display()))
}

struct Loaded {
    dataset: Dataset64,
    ingest: Option<IngestReport>,
    imputed: BTreeMap<String, usize>,
}

/// Load the configured data source, fill missing values, and apply the
/// top-varieties filter.
fn load_dataset(r: &Resolved) -> Result<Loaded, CliError> {
    let (mut dataset, ingest) = match &r.config.source {
        DataSource::Synthetic(config) => {
            let (data, _truth) = generate_synthetic::<f64>(config, r.stage_seed(stage::GENERATE))
                .stage("generating synthetic data")?;
            (data, None)
        }
        DataSource::Csv { path, schema } => {
            let schema = match schema {
                SchemaChoice::Trial => AttributeSchema::table_b1(),
                SchemaChoice::Synthetic => AttributeSchema::synthetic(),
            };
            let (data, report) = ingest_csv_path::<f64>(path, &schema)
                .stage(format!("reading {}", path.display()))?;
            (data, Some(report))
        }
    };
    let mut imputed = BTreeMap::new();
    if dataset.has_missing() {
        let config = r.config.forest.with_seed(r.stage_seed(stage::IMPUTE));
        let (filled, fills) = impute_missing(&dataset, &config).stage("imputing missing values")?;
        log::info!(
            "imputed {} missing values",
            fills.values().sum::<usize>()
        );
        dataset = filled;
        imputed = fills;
    }
    if let Some(count) = r.config.top_varieties {
        dataset = dataset
            .filter_top_varieties(count)
            .stage("filtering top varieties")?;
    }
    Ok(Loaded {
        dataset,
        ingest,
        imputed,
    })
}

fn split_spec(r: &Resolved) -> SplitSpec {
    r.config.split.to_spec(r.stage_seed(stage::SPLIT))
}

pub fn generate(r: &Resolved) -> Result<(), CliError> {
    let DataSource::Synthetic(config) = &r.config.source else {
        return Err(CliError::Usage(
            "generate needs a synthetic data source in the config".into(),
        ));
    };
    let (dataset, truth) = generate_synthetic::<f64>(config, r.stage_seed(stage::GENERATE))
        .stage("generate")?;
    let path = r.out.join("dataset.csv");
    let mut buffer = Vec::new();
    let _ = writeln!(buffer, "{}", provenance_line(r));
    dataset
        .export_csv(&mut buffer)
        .stage(format!("writing {}", path.display()))?;
    fs::write(&path, buffer).stage(format!("writing {}", path.display()))?;
    write_json(r, "ground_truth.json", &truth)?;
    println!(
        "generated {} records for {} varieties at {} sites -> {}",
        dataset.len(),
        dataset.n_varieties(),
        config.n_sites,
        path.display()
    );
    Ok(())
}

pub fn ingest(r: &Resolved) -> Result<(), CliError> {
    let DataSource::Csv { path, .. } = &r.config.source else {
        return Err(CliError::Usage(
            "ingest needs a csv data source in the config".into(),
        ));
    };
    let source = path.clone();
    let loaded = load_dataset(r)?;
    let clean = r.out.join("clean.csv");
    let mut buffer = Vec::new();
    let _ = writeln!(buffer, "{}", provenance_line(r));
    loaded
        .dataset
        .export_csv(&mut buffer)
        .stage(format!("writing {}", clean.display()))?;
    fs::write(&clean, buffer).stage(format!("writing {}", clean.display()))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        report: &'a IngestReport,
        imputed: &'a BTreeMap<String, usize>,
        records: usize,
        varieties: usize,
    }
    let report = loaded.ingest.as_ref().expect("csv source was required");
    write_json(
        r,
        "ingest_report.json",
        &Summary {
            report,
            imputed: &loaded.imputed,
            records: loaded.dataset.len(),
            varieties: loaded.dataset.n_varieties(),
        },
    )?;
    println!(
        "read {} rows from {}: kept {}, dropped {} with missing values, {} parse errors, {} invalid yields",
        report.rows_read,
        source.display(),
        report.rows_kept,
        report.dropped_missing.values().sum::<usize>(),
        report.parse_errors,
        report.invalid_yields,
    );
    println!(
        "imputed {} values; wrote {} records to {}",
        loaded.imputed.values().sum::<usize>(),
        loaded.dataset.len(),
        clean.display()
    );
    Ok(())
}

fn write_elbow(r: &Resolved, curve: &[(usize, f64)]) -> Result<(), CliError> {
    let mut body = String::from("K,WGSS\n");
    for (k, wgss) in curve {
        body.push_str(&format!("{k},{wgss}\n"));
    }
    write_text(r, "elbow.csv", &body)
}

struct ClusterArtifacts {
    correlations: agroplan::CorrelationMatrix64,
    clusters: agroplan::clustering::VarietyClusters<f64>,
}

fn cluster_training_data(r: &Resolved, train_set: &Dataset64) -> Result<ClusterArtifacts, CliError> {
    let correlations = correlation_matrix(train_set).stage("correlation profiles")?;
    let params = &r.config.clustering;
    let clusters = cluster_varieties(
        &correlations,
        params.k,
        r.stage_seed(stage::CLUSTER),
        params.restarts,
    )
    .stage("clustering varieties")?;
    let k_max = params.elbow_max.min(correlations.varieties.len());
    let curve = elbow_curve(
        &correlations.matrix,
        k_max,
        r.stage_seed(stage::ELBOW),
        params.restarts,
    )
    .stage("elbow curve")?;
    write_elbow(r, &curve)?;

    let path = r.out.join("correlation.csv");
    let mut buffer = Vec::new();
    let _ = writeln!(buffer, "{}", provenance_line(r));
    correlations
        .to_csv(&mut buffer)
        .stage(format!("writing {}", path.display()))?;
    fs::write(&path, buffer).stage(format!("writing {}", path.display()))?;
    write_json(r, "clusters.json", &clusters)?;
    Ok(ClusterArtifacts {
        correlations,
        clusters,
    })
}

pub fn cluster(r: &Resolved) -> Result<(), CliError> {
    let loaded = load_dataset(r)?;
    let (train_set, _, _) = loaded.dataset.split(&split_spec(r)).stage("splitting")?;
    let artifacts = cluster_training_data(r, &train_set)?;
    let k = r.config.clustering.k;
    println!(
        "clustered {} varieties into {k} groups (wgss {:.4})",
        artifacts.correlations.varieties.len(),
        artifacts.clusters.assignment.wgss
    );
    for c in 0..k {
        let members: Vec<&str> = artifacts
            .clusters
            .clusters
            .iter()
            .filter(|&(_, &g)| g == c)
            .map(|(v, _)| v.as_str())
            .collect();
        println!("  cluster {c}: {}", members.join(", "));
    }
    println!("elbow curve -> {}", r.out.join("elbow.csv").display());
    Ok(())
}

fn mse_table(plain: &EvaluationReport<f64>, augmented_two_layer: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "test MSE by predictor ({} records, {} skipped)\n",
        plain.n_records, plain.skipped_unknown
    ));
    out.push_str(&format!(
        "{:>12} {:>12} {:>12} {:>12} {:>14}\n",
        "baseline", "check-only", "one-layer", "two-layer", "two-layer+DA"
    ));
    out.push_str(&format!(
        "{:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>14.4}\n",
        plain.mse_baseline,
        plain.mse_check,
        plain.mse_one_layer.unwrap_or(f64::NAN),
        plain.mse_two_layer,
        augmented_two_layer,
    ));
    out.push_str(&format!(
        "mean abs err {:.4}, median abs err {:.4}\n",
        plain.mean_abs_err, plain.median_abs_err
    ));
    out
}

pub fn train(r: &Resolved) -> Result<(), CliError> {
    let loaded = load_dataset(r)?;
    let (train_set, valid, test) = loaded.dataset.split(&split_spec(r)).stage("splitting")?;
    let artifacts = cluster_training_data(r, &train_set)?;

    let forest = r.config.forest.with_seed(r.stage_seed(stage::HIERARCHY));
    let augmented = agroplan::hierarchy::train(
        &train_set,
        &valid,
        &artifacts.clusters,
        &r.config.augmentation,
        &forest,
    )
    .stage("training two-layer model with augmentation")?;
    let plain = agroplan::hierarchy::train(
        &train_set,
        &valid,
        &artifacts.clusters,
        &AugmentationPolicy::disabled(),
        &forest,
    )
    .stage("training two-layer model")?;
    let one_layer = train_one_layer(
        &train_set,
        &r.config.forest.with_seed(r.stage_seed(stage::ONE_LAYER)),
    )
    .stage("training one-layer model")?;

    let report_plain = plain.evaluate(&test, Some(&one_layer)).stage("evaluating")?;
    let report_augmented = augmented.evaluate(&test, None).stage("evaluating")?;
    augmented
        .save(&r.model_dir)
        .stage(format!("saving model to {}", r.model_dir.display()))?;

    #[derive(Serialize)]
    struct Reports<'a> {
        plain: &'a EvaluationReport<f64>,
        augmented: &'a EvaluationReport<f64>,
    }
    write_json(
        r,
        "evaluation.json",
        &Reports {
            plain: &report_plain,
            augmented: &report_augmented,
        },
    )?;

    let table = mse_table(&report_plain, report_augmented.mse_two_layer);
    write_text(r, "train_report.txt", &table)?;
    print!("{table}");
    println!("model saved to {}", r.model_dir.display());
    Ok(())
}

pub fn importance(r: &Resolved) -> Result<(), CliError> {
    let model = HierarchicalModel64::load(&r.model_dir)
        .stage(format!("loading model {}", r.model_dir.display()))?;
    let loaded = load_dataset(r)?;
    let (_, _, test) = loaded.dataset.split(&split_spec(r)).stage("splitting")?;
    let x = test.attribute_matrix();
    let y = test.check_yields();
    let ranked = model
        .check_forest
        .permutation_importance(&x, &y, r.stage_seed(stage::IMPORTANCE))
        .stage("permutation importance")?;

    let mut body = String::from("ATTRIBUTE,PCT_MSE_INCREASE\n");
    for imp in &ranked {
        body.push_str(&format!("{},{}\n", imp.name, imp.percent_increase));
    }
    write_text(r, "importance.csv", &body)?;

    println!("check-yield attribute importance (percent MSE increase when shuffled)");
    for imp in ranked.iter().take(10) {
        println!("{:>24} {:>10.2}", imp.name, imp.percent_increase);
    }
    println!("full ranking -> {}", r.out.join("importance.csv").display());
    Ok(())
}

struct Scenarios {
    sites: Vec<String>,
    profile_site: String,
    matrix: ScenarioMatrix64,
    stats: ScenarioStats64,
}

/// The fixed attribute profile for scenario generation: the latest trial
/// record of the similar site nearest to the query.
fn target_profile(
    data: &Dataset64,
    sites: &[String],
    r: &Resolved,
) -> Result<(String, Vec<f64>), CliError> {
    let query = r.config.site.query();
    let mut best: Option<(f64, &str)> = None;
    for record in data.records() {
        if !sites.iter().any(|s| s == &record.site_id) {
            continue;
        }
        let d = (record.latitude - query.latitude).powi(2)
            + (record.longitude - query.longitude).powi(2);
        let better = match best {
            None => true,
            Some((bd, bs)) => d < bd || (d == bd && record.site_id.as_str() < bs),
        };
        if better {
            best = Some((d, record.site_id.as_str()));
        }
    }
    let (_, site) = best.ok_or_else(|| CliError::Stage {
        stage: r.config.site.describe(),
        source: Error::InsufficientData("no similar site has trial records".into()),
    })?;
    let profile = data
        .records()
        .iter()
        .filter(|rec| rec.site_id == site)
        .max_by_key(|rec| rec.year)
        .expect("site came from these records");
    Ok((site.to_string(), profile.attributes.clone()))
}

fn build_scenario_bundle(r: &Resolved) -> Result<Scenarios, CliError> {
    let model = HierarchicalModel64::load(&r.model_dir)
        .stage(format!("loading model {}", r.model_dir.display()))?;
    let loaded = load_dataset(r)?;
    let describe = r.config.site.describe();
    let sites = similar_sites(&loaded.dataset, &r.config.site.query()).stage(describe.clone())?;
    let pool = weather_pool(&loaded.dataset, &sites);
    let draws = sample_weather(&pool, r.config.scenario.count, r.stage_seed(stage::SAMPLE))
        .stage(describe.clone())?;
    let (profile_site, profile) = target_profile(&loaded.dataset, &sites, r)?;
    let matrix = build_scenarios(&model, &profile, &draws, r.stage_seed(stage::NOISE))
        .stage("building scenarios")?;
    let stats = matrix.stats().stage("scenario statistics")?;
    Ok(Scenarios {
        sites,
        profile_site,
        matrix,
        stats,
    })
}

fn write_variety_stats(r: &Resolved, s: &Scenarios) -> Result<(), CliError> {
    let mut body = String::from("VARIETY,MEAN_YIELD,YIELD_VARIANCE\n");
    for (j, name) in s.matrix.varieties.iter().enumerate() {
        body.push_str(&format!(
            "{name},{},{}\n",
            s.stats.mean[j],
            s.stats.covariance.get(j, j)
        ));
    }
    write_text(r, "variety_stats.csv", &body)
}

pub fn sample(r: &Resolved) -> Result<(), CliError> {
    let s = build_scenario_bundle(r)?;
    let path = r.out.join("scenarios.csv");
    let mut buffer = Vec::new();
    let _ = writeln!(buffer, "{}", provenance_line(r));
    s.matrix
        .to_csv(&mut buffer)
        .stage(format!("writing {}", path.display()))?;
    fs::write(&path, buffer).stage(format!("writing {}", path.display()))?;

    #[derive(Serialize)]
    struct StatsOut<'a> {
        sites: &'a [String],
        profile_site: &'a str,
        floored: usize,
        stats: &'a ScenarioStats64,
    }
    write_json(
        r,
        "scenario_stats.json",
        &StatsOut {
            sites: &s.sites,
            profile_site: &s.profile_site,
            floored: s.matrix.floored,
            stats: &s.stats,
        },
    )?;
    write_variety_stats(r, &s)?;
    println!(
        "sampled {} scenarios for {} varieties from {} similar sites (profile {}, {} floored) -> {}",
        s.matrix.n_scenarios(),
        s.matrix.varieties.len(),
        s.sites.len(),
        s.profile_site,
        s.matrix.floored,
        path.display()
    );
    Ok(())
}

fn selected_solvers(choice: SolverChoice) -> Vec<SolverChoice> {
    match choice {
        SolverChoice::All => vec![
            SolverChoice::Utility,
            SolverChoice::Riskcap,
            SolverChoice::Robust,
        ],
        one => vec![one],
    }
}

fn solver_slug(choice: SolverChoice) -> &'static str {
    match choice {
        SolverChoice::Utility => "utility",
        SolverChoice::Riskcap => "riskcap",
        SolverChoice::Robust => "robust",
        SolverChoice::All => "all",
    }
}

fn solver_title(r: &Resolved, choice: SolverChoice) -> String {
    let d = &r.config.decision;
    match choice {
        SolverChoice::Utility => format!("mean-variance utility (lambda = {})", d.lambda),
        SolverChoice::Riskcap => format!("risk-capped yield (beta = {})", d.beta),
        SolverChoice::Robust => format!("robust quantile (alpha = {}, greedy)", d.alpha),
        SolverChoice::All => "all".to_string(),
    }
}

fn plan_table(title: &str, solution: &Solution<f64>) -> String {
    let g = solution.portfolio.grid as f64;
    let combination: Vec<String> = solution
        .portfolio
        .counts
        .iter()
        .map(|&(_, c)| format!("{:.3}", c as f64 / g))
        .collect();
    let mut out = String::new();
    out.push_str(&format!("{:<22}{title}\n", "model"));
    out.push_str(&format!(
        "{:<22}{}\n",
        "selected varieties",
        solution.varieties.join(", ")
    ));
    out.push_str(&format!("{:<22}{}\n", "combination", combination.join(", ")));
    out.push_str(&format!(
        "{:<22}{:.4}\n",
        "expected yield", solution.expected_yield
    ));
    out.push_str(&format!("{:<22}{:.4}\n", "variance", solution.variance));
    out.push_str(&format!("{:<22}{:.4}\n", "objective", solution.objective));
    out.push_str(&format!(
        "{:<22}{}\n",
        "evaluated weightings", solution.evaluated
    ));
    out
}

fn run_solver(
    r: &Resolved,
    s: &Scenarios,
    choice: SolverChoice,
    parameter: f64,
) -> agroplan::Result<Solution<f64>> {
    let constraints = r.config.decision.constraints();
    match choice {
        SolverChoice::Utility => {
            solve_utility(&s.stats, &s.matrix.varieties, &constraints, parameter)
        }
        SolverChoice::Riskcap => {
            solve_risk_capped(&s.stats, &s.matrix.varieties, &constraints, parameter)
        }
        SolverChoice::Robust => solve_robust_greedy(&s.matrix, &constraints, parameter),
        SolverChoice::All => unreachable!("expanded before dispatch"),
    }
}

fn plan_parameter(r: &Resolved, choice: SolverChoice) -> f64 {
    let d = &r.config.decision;
    match choice {
        SolverChoice::Utility => d.lambda,
        SolverChoice::Riskcap => d.beta,
        SolverChoice::Robust => d.alpha,
        SolverChoice::All => f64::NAN,
    }
}

pub fn plan(r: &Resolved) -> Result<(), CliError> {
    let s = build_scenario_bundle(r)?;
    write_variety_stats(r, &s)?;
    let mut solutions: BTreeMap<&'static str, Solution<f64>> = BTreeMap::new();
    for choice in selected_solvers(r.solver) {
        let slug = solver_slug(choice);
        let solution = run_solver(r, &s, choice, plan_parameter(r, choice))
            .stage(format!("plan: {}", solver_title(r, choice)))?;
        let table = plan_table(&solver_title(r, choice), &solution);
        write_text(r, &format!("plan_{slug}.txt"), &table)?;
        println!("{table}");
        solutions.insert(slug, solution);
    }
    write_json(r, "plan.json", &solutions)?;
    println!(
        "per-variety scenario moments -> {}",
        r.out.join("variety_stats.csv").display()
    );
    Ok(())
}

pub fn sweep(r: &Resolved) -> Result<(), CliError> {
    let s = build_scenario_bundle(r)?;
    let d = &r.config.decision;
    let mut all_rows: BTreeMap<&'static str, Vec<SweepRow<f64>>> = BTreeMap::new();
    for choice in selected_solvers(r.solver) {
        let (name, values) = match choice {
            SolverChoice::Utility => ("lambda", d.lambda_sweep.clone()),
            SolverChoice::Riskcap => ("beta", d.beta_sweep.clone()),
            SolverChoice::Robust => ("alpha", d.alpha_sweep.clone()),
            SolverChoice::All => unreachable!("expanded before dispatch"),
        };
        let rows = agroplan::decision::sweep(&values, |p| run_solver(r, &s, choice, p));
        let slug = solver_slug(choice);
        let table = render_sweep_table(name, &rows);
        write_text(r, &format!("sweep_{slug}.txt"), &table)?;
        println!("{} sweep over {name}:", solver_slug(choice));
        print!("{table}");
        println!();
        all_rows.insert(slug, rows);
    }
    write_json(r, "sweep.json", &all_rows)?;
    Ok(())
}
