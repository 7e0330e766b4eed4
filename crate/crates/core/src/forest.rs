//! Random-forest regression trained with variance-reduction splits.
//!
//! Trees are grown on bootstrap resamples of the training data, each split
//! considering a random subset of the attributes. Out-of-bag rows provide an
//! error estimate; permutation importance measures how much an evaluation
//! set's MSE rises when one attribute's column is shuffled. All randomness is
//! derived from counter-based streams, so a forest trained twice with the
//! same config is identical node for node regardless of thread scheduling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::scalar::Scalar;

/// Format tag written into serialized models.
pub const FOREST_FORMAT_VERSION: u32 = 1;

const STREAM_BOOTSTRAP: u64 = 0;
const STREAM_SPLITS: u64 = 1;
const STREAM_IMPORTANCE: u64 = 2;

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    /// Number of trees in the ensemble.
    pub n_trees: usize,
    /// Maximum tree depth; `None` grows until the leaf-size limit stops it.
    pub max_depth: Option<usize>,
    /// Minimum number of training rows in each leaf.
    pub min_samples_leaf: usize,
    /// Attributes considered at each split; `None` means `ceil(p / 3)`.
    pub features_per_split: Option<usize>,
    /// Train each tree on a bootstrap resample. Disabling this also disables
    /// the out-of-bag error estimate.
    pub bootstrap: bool,
    /// Master seed for bootstrap draws and split attribute selection.
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if let Some(m) = self.features_per_split {
            if m == 0 || m > n_features {
                return Err(Error::Config(format!(
                    "features_per_split must be in 1..={n_features}, got {m}"
                )));
            }
        }
        Ok(())
    }

    fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| n_features.div_ceil(3))
            .clamp(1, n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Node<T> {
    Leaf {
        value: T,
        samples: u32,
    },
    Split {
        feature: u32,
        threshold: T,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    fn predict(&self, row: &[T]) -> T {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

/// Permutation importance of one attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Importance<T> {
    pub name: String,
    pub feature: usize,
    /// Percent increase in evaluation MSE when this attribute's column is
    /// shuffled.
    pub percent_increase: T,
}

/// A trained random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    format_version: u32,
    config: ForestConfig,
    feature_names: Vec<String>,
    trees: Vec<Tree<T>>,
    oob_mse: Option<T>,
}

impl<T: Scalar> ForestModel<T> {
    /// Train a forest with auto-generated attribute names `f0..f{p-1}`.
    pub fn fit(x: &Matrix<T>, y: &[T], config: &ForestConfig) -> Result<Self> {
        let names: Vec<String> = (0..x.cols()).map(|j| format!("f{j}")).collect();
        Self::fit_named(x, y, &names, config)
    }

    /// Train a forest with explicit attribute names.
    pub fn fit_named(
        x: &Matrix<T>,
        y: &[T],
        names: &[String],
        config: &ForestConfig,
    ) -> Result<Self> {
        let n = x.rows();
        let p = x.cols();
        config.validate(p)?;
        if n == 0 || p == 0 {
            return Err(Error::InsufficientData(
                "forest training needs at least one row and one attribute".into(),
            ));
        }
        if y.len() != n {
            return Err(Error::Contract(format!(
                "target length {} does not match {n} rows",
                y.len()
            )));
        }
        if names.len() != p {
            return Err(Error::Contract(format!(
                "{} attribute names for {p} attributes",
                names.len()
            )));
        }
        for (i, value) in y.iter().enumerate() {
            for j in 0..p {
                if !x.get(i, j).is_finite() {
                    return Err(Error::Contract(format!(
                        "non-finite attribute value at row {i}, column {j}"
                    )));
                }
            }
            if !value.is_finite() {
                return Err(Error::Contract(format!("non-finite target at row {i}")));
            }
        }

        let mtry = config.resolved_features_per_split(p);
        let trees: Vec<Tree<T>> = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let in_bag: Vec<usize> = if config.bootstrap {
                    let mut rng = stream(config.seed, &[STREAM_BOOTSTRAP, t as u64]);
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let rng = stream(config.seed, &[STREAM_SPLITS, t as u64]);
                build_tree(x, y, &in_bag, config, mtry, rng)
            })
            .collect();

        let mut model = ForestModel {
            format_version: FOREST_FORMAT_VERSION,
            config: config.clone(),
            feature_names: names.to_vec(),
            trees,
            oob_mse: None,
        };
        if config.bootstrap {
            model.oob_mse = model.compute_oob_mse(x, y);
        }
        Ok(model)
    }

    /// Predict a single attribute row.
    pub fn predict_row(&self, row: &[T]) -> Result<T> {
        if row.len() != self.feature_names.len() {
            return Err(Error::Contract(format!(
                "row has {} attributes, model expects {}",
                row.len(),
                self.feature_names.len()
            )));
        }
        Ok(self.predict_row_unchecked(row))
    }

    pub(crate) fn predict_row_unchecked(&self, row: &[T]) -> T {
        debug_assert_eq!(row.len(), self.feature_names.len());
        let sum: T = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / T::cast(self.trees.len() as f64)
    }

    /// Predict every row of a matrix.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.cols() != self.feature_names.len() {
            return Err(Error::Contract(format!(
                "matrix has {} attributes, model expects {}",
                x.cols(),
                self.feature_names.len()
            )));
        }
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_row_unchecked(x.row(i)))
            .collect())
    }

    /// Mean squared prediction error on an evaluation set.
    pub fn mse(&self, x: &Matrix<T>, y: &[T]) -> Result<T> {
        if x.rows() == 0 {
            return Err(Error::Contract("mse of an empty evaluation set".into()));
        }
        if y.len() != x.rows() {
            return Err(Error::Contract(format!(
                "target length {} does not match {} rows",
                y.len(),
                x.rows()
            )));
        }
        let predictions = self.predict(x)?;
        Ok(mean_squared_error(&predictions, y))
    }

    /// Out-of-bag mean squared error, when bootstrap sampling was on and at
    /// least one row was left out of some tree.
    pub fn oob_mse(&self) -> Option<T> {
        self.oob_mse
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    fn oob_rows(&self, tree: usize, n: usize) -> Vec<usize> {
        let mut in_bag = vec![false; n];
        let mut rng = stream(self.config.seed, &[STREAM_BOOTSTRAP, tree as u64]);
        for _ in 0..n {
            in_bag[rng.random_range(0..n)] = true;
        }
        (0..n).filter(|&i| !in_bag[i]).collect()
    }

    fn compute_oob_mse(&self, x: &Matrix<T>, y: &[T]) -> Option<T> {
        let n = x.rows();
        let mut sums = vec![T::zero(); n];
        let mut counts = vec![0usize; n];
        for (t, tree) in self.trees.iter().enumerate() {
            for i in self.oob_rows(t, n) {
                sums[i] += tree.predict(x.row(i));
                counts[i] += 1;
            }
        }
        let mut sse = T::zero();
        let mut covered = 0usize;
        for i in 0..n {
            if counts[i] > 0 {
                let d = sums[i] / T::cast(counts[i] as f64) - y[i];
                sse += d * d;
                covered += 1;
            }
        }
        (covered > 0).then(|| sse / T::cast(covered as f64))
    }

    /// Permutation importance on an evaluation set.
    ///
    /// For each attribute, its column is shuffled once (uniformly, seeded)
    /// and the MSE re-measured; the report is the percent increase over the
    /// unpermuted MSE, sorted most important first. An attribute no tree
    /// splits on scores exactly zero.
    pub fn permutation_importance(
        &self,
        x: &Matrix<T>,
        y: &[T],
        seed: u64,
    ) -> Result<Vec<Importance<T>>> {
        let n = x.rows();
        let p = self.feature_names.len();
        if n < 2 {
            return Err(Error::Contract(
                "permutation importance needs at least 2 rows".into(),
            ));
        }
        if x.cols() != p {
            return Err(Error::Contract(format!(
                "matrix has {} attributes, model expects {p}",
                x.cols()
            )));
        }
        if y.len() != n {
            return Err(Error::Contract(format!(
                "target length {} does not match {n} rows",
                y.len()
            )));
        }

        let base_mse = self.mse(x, y)?;
        if base_mse <= T::zero() {
            log::warn!("unpermuted MSE is zero; all importances reported as 0");
        }

        let mut records: Vec<Importance<T>> = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut column = x.column(j);
                let mut rng = stream(seed, &[STREAM_IMPORTANCE, j as u64]);
                column.shuffle(&mut rng);
                let mut buf = vec![T::zero(); p];
                let mut sse = T::zero();
                for i in 0..n {
                    buf.copy_from_slice(x.row(i));
                    buf[j] = column[i];
                    let d = self.predict_row_unchecked(&buf) - y[i];
                    sse += d * d;
                }
                let permuted_mse = sse / T::cast(n as f64);
                let percent_increase = if base_mse > T::zero() {
                    T::cast(100.0) * (permuted_mse - base_mse) / base_mse
                } else {
                    T::zero()
                };
                Importance {
                    name: self.feature_names[j].clone(),
                    feature: j,
                    percent_increase,
                }
            })
            .collect();
        records.sort_by(|a, b| {
            b.percent_increase
                .partial_cmp(&a.percent_increase)
                .expect("finite importance")
                .then(a.feature.cmp(&b.feature))
        });
        Ok(records)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let model: ForestModel<T> = serde_json::from_reader(reader)?;
        if model.format_version != FOREST_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: model.format_version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    #[cfg(test)]
    fn smallest_leaf(&self) -> u32 {
        self.trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Leaf { samples, .. } => Some(*samples),
                Node::Split { .. } => None,
            })
            .min()
            .unwrap_or(0)
    }
}

/// Mean squared error between two equally long, nonempty slices.
pub fn mean_squared_error<T: Scalar>(predictions: &[T], targets: &[T]) -> T {
    assert_eq!(
        predictions.len(),
        targets.len(),
        "prediction and target lengths differ"
    );
    assert!(!predictions.is_empty(), "mse of empty slices");
    let sse: T = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    sse / T::cast(predictions.len() as f64)
}

fn build_tree<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    in_bag: &[usize],
    config: &ForestConfig,
    mtry: usize,
    mut rng: ChaCha8Rng,
) -> Tree<T> {
    let mut nodes = vec![Node::Leaf {
        value: T::zero(),
        samples: 0,
    }];
    let mut stack = vec![(0usize, in_bag.to_vec(), 0usize)];
    while let Some((slot, idx, depth)) = stack.pop() {
        let n = idx.len();
        let sum: T = idx.iter().map(|&i| y[i]).sum();
        let mean = sum / T::cast(n as f64);

        let depth_reached = config.max_depth.is_some_and(|d| depth >= d);
        let too_small = n < 2 * config.min_samples_leaf;
        let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
        let split = if depth_reached || too_small || pure {
            None
        } else {
            best_split(x, y, &idx, mtry, config.min_samples_leaf, &mut rng)
        };

        match split {
            Some((feature, threshold, sorted, k)) => {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf {
                    value: T::zero(),
                    samples: 0,
                });
                nodes.push(Node::Leaf {
                    value: T::zero(),
                    samples: 0,
                });
                nodes[slot] = Node::Split {
                    feature: feature as u32,
                    threshold,
                    left: left as u32,
                    right: right as u32,
                };
                let (left_idx, right_idx) = sorted.split_at(k);
                stack.push((left, left_idx.to_vec(), depth + 1));
                stack.push((right, right_idx.to_vec(), depth + 1));
            }
            None => {
                nodes[slot] = Node::Leaf {
                    value: mean,
                    samples: n as u32,
                };
            }
        }
    }
    Tree { nodes }
}

/// Find the variance-reduction-optimal split over a random attribute subset.
///
/// Returns the attribute, the threshold, the node's rows sorted by that
/// attribute and the split position. Ties go to the attribute drawn first
/// and, within an attribute, to the leftmost boundary.
fn best_split<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    idx: &[usize],
    mtry: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, T, Vec<usize>, usize)> {
    let n = idx.len();
    let features = sample_distinct(rng, x.cols(), mtry);
    let mut best: Option<(T, usize, T, usize)> = None;

    let mut sorted = idx.to_vec();
    for &f in &features {
        // Secondary sort on the row index keeps tied values in a stable,
        // schedule-independent order.
        sorted.sort_by(|&a, &b| {
            x.get(a, f)
                .partial_cmp(&x.get(b, f))
                .expect("finite attribute values")
                .then(a.cmp(&b))
        });
        let total: T = sorted.iter().map(|&i| y[i]).sum();
        let mut left_sum = T::zero();
        for k in 1..n {
            left_sum += y[sorted[k - 1]];
            let low = x.get(sorted[k - 1], f);
            let high = x.get(sorted[k], f);
            if low == high || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / T::cast(k as f64)
                + right_sum * right_sum / T::cast((n - k) as f64);
            if best.as_ref().is_none_or(|&(s, ..)| score > s) {
                // Midpoint, clamped so rows equal to `low` stay on the left
                // even when the midpoint rounds up to `high`.
                let mut threshold = low + (high - low) / T::cast(2.0);
                if threshold >= high {
                    threshold = low;
                }
                best = Some((score, f, threshold, k));
            }
        }
    }

    best.map(|(_, f, threshold, k)| {
        sorted.sort_by(|&a, &b| {
            x.get(a, f)
                .partial_cmp(&x.get(b, f))
                .expect("finite attribute values")
                .then(a.cmp(&b))
        });
        (f, threshold, sorted, k)
    })
}

/// Draw `m` distinct values from `0..p` by a partial Fisher-Yates shuffle.
fn sample_distinct(rng: &mut ChaCha8Rng, p: usize, m: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..m {
        let j = rng.random_range(i..p);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}
