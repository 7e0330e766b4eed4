//! One JSON run configuration drives every subcommand. Flags override the
//! scalar fields before the config hash is taken, so the hash always
//! reflects the effective settings.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use agroplan::dataset::{SplitSpec, SyntheticConfig};
use agroplan::decision::PortfolioConstraints;
use agroplan::forest::ForestConfig;
use agroplan::hierarchy::AugmentationPolicy;
use agroplan::rng;
use agroplan::scenario::SiteQuery;

use crate::{Cli, CliError};

/// Stage tags for deriving per-stage seeds from the master seed.
pub mod stage {
    pub const GENERATE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const CLUSTER: u64 = 3;
    pub const ELBOW: u64 = 4;
    pub const HIERARCHY: u64 = 5;
    pub const ONE_LAYER: u64 = 6;
    pub const IMPORTANCE: u64 = 7;
    pub const SAMPLE: u64 = 8;
    pub const NOISE: u64 = 9;
    pub const IMPUTE: u64 = 10;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: DataSource,
    /// Keep only the most frequent varieties before training.
    pub top_varieties: Option<usize>,
    pub split: SplitFractions,
    pub forest: ForestParams,
    pub augmentation: AugmentationPolicy,
    pub clustering: ClusterParams,
    pub site: SiteParams,
    pub scenario: ScenarioParams,
    pub decision: DecisionParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            source: DataSource::default(),
            top_varieties: None,
            split: SplitFractions::default(),
            forest: ForestParams::default(),
            augmentation: AugmentationPolicy::default(),
            clustering: ClusterParams::default(),
            site: SiteParams::default(),
            scenario: ScenarioParams::default(),
            decision: DecisionParams::default(),
        }
    }
}

impl RunConfig {
    /// The settings that determine computed results: the output location is
    /// pinned to its default so it affects neither the config hash nor the
    /// recorded run manifest, keeping equal-hash runs byte-identical.
    pub fn canonical(&self) -> RunConfig {
        let mut config = self.clone();
        config.output_dir = RunConfig::default().output_dir;
        config
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, schema: SchemaChoice },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaChoice {
    /// The 28-attribute trial schema with wide-by-year weather columns.
    Trial,
    /// The compact schema written by the synthetic generator.
    Synthetic,
}

/// Split fractions; the split seed is derived from the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn to_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train,
            validation_fraction: self.validation,
            test_fraction: self.test,
            seed,
        }
    }
}

/// Forest settings; the forest seed is derived from the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        let base = ForestConfig::default();
        ForestParams {
            n_trees: base.n_trees,
            max_depth: base.max_depth,
            min_samples_leaf: base.min_samples_leaf,
            features_per_split: base.features_per_split,
            bootstrap: base.bootstrap,
        }
    }
}

impl ForestParams {
    pub fn with_seed(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split,
            bootstrap: self.bootstrap,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub k: usize,
    pub restarts: usize,
    /// Largest k on the elbow curve.
    pub elbow_max: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            k: 3,
            restarts: 10,
            elbow_max: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteParams {
    pub latitude: f64,
    pub longitude: f64,
    pub climate_type: String,
    pub n_nearest: usize,
}

impl Default for SiteParams {
    fn default() -> Self {
        SiteParams {
            latitude: 40.0,
            longitude: -95.0,
            climate_type: "C1".to_string(),
            n_nearest: 5,
        }
    }
}

impl SiteParams {
    pub fn query(&self) -> SiteQuery<f64> {
        SiteQuery {
            latitude: self.latitude,
            longitude: self.longitude,
            climate_type: self.climate_type.clone(),
            n_nearest: self.n_nearest,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "site query (lat {}, long {}, climate {}, {} nearest)",
            self.latitude, self.longitude, self.climate_type, self.n_nearest
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub count: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams { count: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Utility,
    Riskcap,
    Robust,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionParams {
    pub increment: f64,
    pub max_varieties: usize,
    pub node_budget: u64,
    pub solver: SolverChoice,
    /// Risk aversion for `plan` under the utility model.
    pub lambda: f64,
    /// Variance cap for `plan` under the risk-capped model.
    pub beta: f64,
    /// Quantile level for `plan` under the robust model.
    pub alpha: f64,
    pub lambda_sweep: Vec<f64>,
    pub beta_sweep: Vec<f64>,
    pub alpha_sweep: Vec<f64>,
}

impl Default for DecisionParams {
    fn default() -> Self {
        let base = PortfolioConstraints::default();
        DecisionParams {
            increment: base.increment,
            max_varieties: base.max_varieties,
            node_budget: base.node_budget,
            solver: SolverChoice::All,
            lambda: 0.1,
            beta: 60.0,
            alpha: 0.25,
            lambda_sweep: vec![0.0, 0.03, 0.06, 0.1],
            beta_sweep: vec![60.0, 80.0, 100.0],
            alpha_sweep: vec![0.2, 0.5, 0.8],
        }
    }
}

impl DecisionParams {
    pub fn constraints(&self) -> PortfolioConstraints {
        PortfolioConstraints {
            increment: self.increment,
            max_varieties: self.max_varieties,
            node_budget: self.node_budget,
        }
    }
}

/// The effective configuration after flag overrides, with its hash.
pub struct Resolved {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub model_dir: PathBuf,
    pub solver: SolverChoice,
}

impl Resolved {
    pub fn stage_seed(&self, tag: u64) -> u64 {
        rng::derive(self.config.seed, &[tag])
    }
}

pub fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| {
                CliError::Usage(format!("invalid config {}: {e}", path.display()))
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let solver = cli.solver.unwrap_or(config.decision.solver);
    config.decision.solver = solver;

    let canonical = serde_json::to_string(&config.canonical())
        .map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();

    let out = config.output_dir.clone();
    let model_dir = cli.model.clone().unwrap_or_else(|| out.join("model"));
    Ok(Resolved {
        config,
        hash,
        out,
        model_dir,
        solver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = RunConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&config).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seedling": 1}"#).unwrap_err();
        assert!(err.to_string().contains("seedling"));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let config: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.scenario.count, 500);
        assert_eq!(config.split.train, 0.6);
    }
}
