//! The two-layer yield model.
//!
//! Layer one is a single check-yield forest F fit on every training record;
//! layer two is a per-variety ratio forest G_v fit on that variety's
//! records, topped up with same-cluster donor records when the variety is
//! data-poor. A yield prediction is the product F(x) * G_v(x), and the
//! per-variety residual spread on validation data feeds the scenario
//! sampler's noise term.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{create_dir_all, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::clustering::VarietyClusters;
use crate::dataset::{AttributeSchema, Dataset};
use crate::error::{Error, Result};
use crate::forest::{ForestConfig, ForestModel};
use crate::linalg::Matrix;
use crate::rng::{derive, stream};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const H_CHECK: u64 = 40;
const H_RATIO: u64 = 41;
const H_AUG: u64 = 42;
const H_ONE_LAYER: u64 = 43;

/// When and how far to top up data-poor varieties with same-cluster donor
/// records before fitting their ratio forests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Varieties with fewer training records than this get augmented;
    /// 0 disables augmentation entirely.
    pub min_samples: usize,
    /// Record count each augmented variety is topped up to.
    pub target_samples: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            min_samples: 200,
            target_samples: 200,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        AugmentationPolicy {
            min_samples: 0,
            target_samples: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_samples > 0 && self.target_samples == 0 {
            return Err(Error::Config(
                "target_samples must be positive when augmentation is enabled".into(),
            ));
        }
        Ok(())
    }
}

/// One variety's augmentation outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub variety: String,
    pub cluster: usize,
    /// The variety's own training records.
    pub own_records: usize,
    /// Donated records added on top.
    pub added: usize,
    /// Donor variety → records contributed.
    pub donors: BTreeMap<String, usize>,
}

/// A check-yield and ratio prediction pair; `variety_yield` is exactly
/// `check_yield * ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub check_yield: T,
    pub ratio: T,
    pub variety_yield: T,
}

/// The trained two-layer model.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel<T> {
    pub schema: AttributeSchema,
    pub policy: AugmentationPolicy,
    pub check_forest: ForestModel<T>,
    pub ratio_models: BTreeMap<String, ForestModel<T>>,
    /// Per-variety mean squared residual of the combined prediction,
    /// measured on validation data where possible.
    pub residual_mse: BTreeMap<String, T>,
    /// Varieties whose residual fell back to training data because they had
    /// no validation records.
    pub residual_from_train: BTreeSet<String>,
    pub augmentation: Vec<AugmentationRecord>,
}

fn mean_squared_residual<T: Scalar>(errors: &[T]) -> T {
    let n = T::cast(errors.len() as f64);
    errors.iter().map(|&e| e * e).sum::<T>() / n
}

fn check_trainable<T: Scalar>(dataset: &Dataset<T>, role: &str) -> Result<()> {
    if dataset.has_missing() {
        return Err(Error::Contract(format!(
            "{role} data still has missing values; impute or drop them before training"
        )));
    }
    Ok(())
}

/// Fit the two-layer model.
///
/// The check forest is trained on every training record. Each variety's
/// ratio forest is trained on its own records plus, when the variety has
/// fewer than `policy.min_samples` records, donor records drawn uniformly
/// from the other varieties in its cluster (without replacement until the
/// pool is exhausted, then with replacement) up to `policy.target_samples`.
pub fn train<T: Scalar>(
    train: &Dataset<T>,
    validation: &Dataset<T>,
    clusters: &VarietyClusters<T>,
    policy: &AugmentationPolicy,
    config: &ForestConfig,
) -> Result<HierarchicalModel<T>> {
    policy.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData(
            "cannot train on an empty dataset".into(),
        ));
    }
    check_trainable(train, "training")?;
    check_trainable(validation, "validation")?;
    if train.schema() != validation.schema() {
        return Err(Error::Schema(
            "training and validation data use different schemas".into(),
        ));
    }

    let schema = train.schema().clone();
    let names = schema.names();
    let x = train.attribute_matrix();

    let check_config = ForestConfig {
        seed: derive(config.seed, &[H_CHECK]),
        ..config.clone()
    };
    let check_forest = ForestModel::fit_named(&x, &train.check_yields(), &names, &check_config)?;

    let mut ratio_models = BTreeMap::new();
    let mut augmentation = Vec::new();

    for (variety, &v) in train.variety_index() {
        let own: Vec<usize> = train
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.variety_id == variety)
            .map(|(i, _)| i)
            .collect();
        let mut selected = own.clone();
        let mut donors: BTreeMap<String, usize> = BTreeMap::new();

        if policy.min_samples > 0 && own.len() < policy.min_samples {
            match clusters.cluster_of(variety) {
                None => log::warn!(
                    "variety {variety} has no cluster; trained on its own {} record(s)",
                    own.len()
                ),
                Some(cluster) => {
                    let pool: Vec<usize> = train
                        .records()
                        .iter()
                        .enumerate()
                        .filter(|(_, r)| {
                            &r.variety_id != variety
                                && clusters.cluster_of(&r.variety_id) == Some(cluster)
                        })
                        .map(|(i, _)| i)
                        .collect();
                    let needed = policy.target_samples.saturating_sub(own.len());
                    if pool.is_empty() {
                        log::warn!(
                            "variety {variety} is alone in cluster {cluster}; no donors available"
                        );
                    } else if needed > 0 {
                        let mut rng = stream(config.seed, &[H_AUG, v as u64]);
                        let mut shuffled = pool.clone();
                        for i in (1..shuffled.len()).rev() {
                            let j = rng.random_range(0..=i);
                            shuffled.swap(i, j);
                        }
                        let mut drawn: Vec<usize> =
                            shuffled.iter().copied().take(needed).collect();
                        while drawn.len() < needed {
                            drawn.push(pool[rng.random_range(0..pool.len())]);
                        }
                        for &i in &drawn {
                            *donors
                                .entry(train.records()[i].variety_id.clone())
                                .or_insert(0) += 1;
                        }
                        augmentation.push(AugmentationRecord {
                            variety: variety.clone(),
                            cluster,
                            own_records: own.len(),
                            added: drawn.len(),
                            donors: donors.clone(),
                        });
                        selected.extend(drawn);
                    }
                }
            }
        }

        let rows: Vec<Vec<T>> = selected
            .iter()
            .map(|&i| train.records()[i].attributes.clone())
            .collect();
        let ratios: Vec<T> = selected
            .iter()
            .map(|&i| train.records()[i].ratio())
            .collect();
        let ratio_config = ForestConfig {
            seed: derive(config.seed, &[H_RATIO, v as u64]),
            ..config.clone()
        };
        let model =
            ForestModel::fit_named(&Matrix::from_rows(rows)?, &ratios, &names, &ratio_config)?;
        ratio_models.insert(variety.clone(), model);
    }

    let mut model = HierarchicalModel {
        schema,
        policy: policy.clone(),
        check_forest,
        ratio_models,
        residual_mse: BTreeMap::new(),
        residual_from_train: BTreeSet::new(),
        augmentation,
    };

    for variety in model.ratio_models.keys().cloned().collect::<Vec<_>>() {
        let from_validation: Vec<T> = residuals_for(&model, validation, &variety)?;
        let (errors, fallback) = if from_validation.is_empty() {
            (residuals_for(&model, train, &variety)?, true)
        } else {
            (from_validation, false)
        };
        if fallback {
            log::warn!(
                "variety {variety} has no validation records; residual spread measured on \
                 training data"
            );
            model.residual_from_train.insert(variety.clone());
        }
        model
            .residual_mse
            .insert(variety, mean_squared_residual(&errors));
    }

    Ok(model)
}

fn residuals_for<T: Scalar>(
    model: &HierarchicalModel<T>,
    data: &Dataset<T>,
    variety: &str,
) -> Result<Vec<T>> {
    let mut errors = Vec::new();
    for record in data.records().iter().filter(|r| r.variety_id == variety) {
        let p = model.predict_yield(variety, &record.attributes)?;
        errors.push(p.variety_yield - record.variety_yield);
    }
    Ok(errors)
}

impl<T: Scalar> HierarchicalModel<T> {
    /// Varieties this model can predict, sorted.
    pub fn varieties(&self) -> Vec<String> {
        self.ratio_models.keys().cloned().collect()
    }

    pub fn predict_yield(&self, variety: &str, attributes: &[T]) -> Result<Prediction<T>> {
        let ratio_model = self.ratio_models.get(variety).ok_or_else(|| {
            Error::Contract(format!("unknown variety `{variety}`"))
        })?;
        let check_yield = self.check_forest.predict_row(attributes)?;
        let ratio = ratio_model.predict_row(attributes)?;
        Ok(Prediction {
            check_yield,
            ratio,
            variety_yield: check_yield * ratio,
        })
    }

    /// Compare the model family on held-out records.
    ///
    /// Records of varieties absent from the model are skipped and counted.
    pub fn evaluate(
        &self,
        test: &Dataset<T>,
        one_layer: Option<&OneLayerModel<T>>,
    ) -> Result<EvaluationReport<T>> {
        check_trainable(test, "evaluation")?;
        let mut included: Vec<&crate::dataset::TrialRecord<T>> = Vec::new();
        let mut skipped_unknown = 0usize;
        for record in test.records() {
            if self.ratio_models.contains_key(&record.variety_id) {
                included.push(record);
            } else {
                skipped_unknown += 1;
            }
        }
        if included.is_empty() {
            return Err(Error::InsufficientData(
                "no evaluation record matches a modeled variety".into(),
            ));
        }
        if skipped_unknown > 0 {
            log::warn!("{skipped_unknown} evaluation record(s) have no modeled variety; skipped");
        }

        let n = T::cast(included.len() as f64);
        let mean_yield = included
            .iter()
            .map(|r| r.variety_yield)
            .sum::<T>()
            / n;
        let mse_baseline = included
            .iter()
            .map(|r| {
                let d = r.variety_yield - mean_yield;
                d * d
            })
            .sum::<T>()
            / n;

        let mut se_check = T::zero();
        let mut se_two = T::zero();
        let mut se_one = T::zero();
        let mut abs_errors: Vec<T> = Vec::with_capacity(included.len());
        let mut per_variety: BTreeMap<String, (T, usize)> = BTreeMap::new();
        for record in &included {
            let p = self.predict_yield(&record.variety_id, &record.attributes)?;
            let err_check = p.check_yield - record.variety_yield;
            se_check += err_check * err_check;
            let err = p.variety_yield - record.variety_yield;
            se_two += err * err;
            abs_errors.push(err.abs());
            let entry = per_variety
                .entry(record.variety_id.clone())
                .or_insert((T::zero(), 0));
            entry.0 += err * err;
            entry.1 += 1;
            if let Some(one) = one_layer {
                let err_one = one.predict(&record.variety_id, &record.attributes)? - record.variety_yield;
                se_one += err_one * err_one;
            }
        }

        abs_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_abs_err = if abs_errors.len() % 2 == 1 {
            abs_errors[abs_errors.len() / 2]
        } else {
            let hi = abs_errors.len() / 2;
            (abs_errors[hi - 1] + abs_errors[hi]) / T::cast(2.0)
        };
        let mean_abs_err = abs_errors.iter().copied().sum::<T>() / n;

        Ok(EvaluationReport {
            n_records: included.len(),
            skipped_unknown,
            mse_baseline,
            mse_check: se_check / n,
            mse_one_layer: one_layer.map(|_| se_one / n),
            mse_two_layer: se_two / n,
            mean_abs_err,
            median_abs_err,
            per_variety_mse: per_variety
                .into_iter()
                .map(|(v, (se, count))| (v, se / T::cast(count as f64)))
                .collect(),
        })
    }

    /// Write the model as a directory: a manifest plus one forest file per
    /// layer component.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir_all(dir)?;
        self.check_forest
            .save(&dir.join("check.json"))?;
        let mut ratio_files = BTreeMap::new();
        for (i, (variety, model)) in self.ratio_models.iter().enumerate() {
            let file = format!("ratio_{i:04}.json");
            model.save(&dir.join(&file))?;
            ratio_files.insert(variety.clone(), file);
        }
        let manifest = Manifest {
            format_version: MODEL_FORMAT_VERSION,
            schema: self.schema.clone(),
            policy: self.policy.clone(),
            residual_mse: self.residual_mse.clone(),
            residual_from_train: self.residual_from_train.clone(),
            augmentation: self.augmentation.clone(),
            check_file: "check.json".to_string(),
            ratio_files,
        };
        let writer = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(writer, &manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self>
    where
        T: DeserializeOwned,
    {
        let reader = BufReader::new(File::open(dir.join("manifest.json"))?);
        let manifest: Manifest<T> = serde_json::from_reader(reader)?;
        if manifest.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: manifest.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let check_forest = ForestModel::load(&dir.join(&manifest.check_file))?;
        let mut ratio_models = BTreeMap::new();
        for (variety, file) in &manifest.ratio_files {
            ratio_models.insert(variety.clone(), ForestModel::load(&dir.join(file))?);
        }
        Ok(HierarchicalModel {
            schema: manifest.schema,
            policy: manifest.policy,
            check_forest,
            ratio_models,
            residual_mse: manifest.residual_mse,
            residual_from_train: manifest.residual_from_train,
            augmentation: manifest.augmentation,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize",
    deserialize = "T: DeserializeOwned"
))]
struct Manifest<T> {
    format_version: u32,
    schema: AttributeSchema,
    policy: AugmentationPolicy,
    residual_mse: BTreeMap<String, T>,
    residual_from_train: BTreeSet<String>,
    augmentation: Vec<AugmentationRecord>,
    check_file: String,
    ratio_files: BTreeMap<String, String>,
}

/// Evaluation summary over one held-out dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport<T> {
    pub n_records: usize,
    pub skipped_unknown: usize,
    /// Squared error of always predicting the evaluated records' mean yield.
    pub mse_baseline: T,
    /// Squared error of using the check-yield prediction as the yield.
    pub mse_check: T,
    pub mse_one_layer: Option<T>,
    pub mse_two_layer: T,
    pub mean_abs_err: T,
    pub median_abs_err: T,
    pub per_variety_mse: BTreeMap<String, T>,
}

/// Per-variety direct-yield forests, the single-layer comparison model.
#[derive(Debug, Clone, PartialEq)]
pub struct OneLayerModel<T> {
    pub schema: AttributeSchema,
    pub models: BTreeMap<String, ForestModel<T>>,
}

impl<T: Scalar> OneLayerModel<T> {
    pub fn predict(&self, variety: &str, attributes: &[T]) -> Result<T> {
        let model = self
            .models
            .get(variety)
            .ok_or_else(|| Error::Contract(format!("unknown variety `{variety}`")))?;
        model.predict_row(attributes)
    }
}

/// Fit one direct-yield forest per variety on its own records, with no
/// augmentation and no check-yield layer.
pub fn train_one_layer<T: Scalar>(
    train: &Dataset<T>,
    config: &ForestConfig,
) -> Result<OneLayerModel<T>> {
    if train.is_empty() {
        return Err(Error::InsufficientData(
            "cannot train on an empty dataset".into(),
        ));
    }
    check_trainable(train, "training")?;
    let names = train.schema().names();
    let mut models = BTreeMap::new();
    for (variety, &v) in train.variety_index() {
        let records: Vec<_> = train
            .records()
            .iter()
            .filter(|r| &r.variety_id == variety)
            .collect();
        let rows: Vec<Vec<T>> = records.iter().map(|r| r.attributes.clone()).collect();
        let yields: Vec<T> = records.iter().map(|r| r.variety_yield).collect();
        let forest_config = ForestConfig {
            seed: derive(config.seed, &[H_ONE_LAYER, v as u64]),
            ..config.clone()
        };
        let model = ForestModel::fit_named(
            &Matrix::from_rows(rows)?,
            &yields,
            &names,
            &forest_config,
        )?;
        models.insert(variety.clone(), model);
    }
    Ok(OneLayerModel {
        schema: train.schema().clone(),
        models,
    })
}
