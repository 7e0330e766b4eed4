//! Variety response profiles and k-means clustering.
//!
//! Varieties are grouped by how their yields co-move with the environment:
//! each variety gets a row of Pearson correlations between its observed
//! yields and each attribute, and those rows are clustered with k-means.
//! Cluster membership later decides which varieties may donate records to
//! each other during training-data augmentation.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::scalar::Scalar;

const STREAM_RESTART: u64 = 30;
const STREAM_ELBOW: u64 = 31;

const MAX_ITERATIONS: usize = 300;

/// Per-variety correlation profiles against the attribute set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<T> {
    /// Varieties with at least 2 records, in dataset (sorted id) order.
    pub varieties: Vec<String>,
    pub attributes: Vec<String>,
    /// Row (v, a) = Pearson correlation of variety v's yields with
    /// attribute a over v's records.
    pub matrix: Matrix<T>,
    /// (variety, attribute) pairs where either side had zero variance; the
    /// entry is set to 0.
    pub zero_variance: Vec<(String, String)>,
    /// Varieties excluded for having fewer than 2 records.
    pub excluded: Vec<String>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    /// Write the matrix as CSV: one row per variety, one column per
    /// attribute.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["VARIETY".to_string()];
        header.extend(self.attributes.iter().cloned());
        out.write_record(&header)?;
        for (i, variety) in self.varieties.iter().enumerate() {
            let mut row = vec![variety.clone()];
            row.extend(self.matrix.row(i).iter().map(|v| format!("{v}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pearson correlation; `None` when either side has zero variance.
fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    debug_assert_eq!(x.len(), y.len());
    let n = T::cast(x.len() as f64);
    let mean_x = x.iter().copied().sum::<T>() / n;
    let mean_y = y.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    Some(r.min(T::one()).max(-T::one()))
}

/// Build the variety-by-attribute correlation matrix from training records.
///
/// Varieties with fewer than 2 records cannot produce a correlation and are
/// excluded with a warning; zero-variance pairs become 0 and are flagged.
pub fn correlation_matrix<T: Scalar>(train: &Dataset<T>) -> Result<CorrelationMatrix<T>> {
    if train.is_empty() {
        return Err(Error::InsufficientData(
            "cannot build a correlation matrix from an empty dataset".into(),
        ));
    }
    let attributes = train.schema().names();
    let mut varieties = Vec::new();
    let mut excluded = Vec::new();
    let mut zero_variance = Vec::new();
    let mut rows = Vec::new();

    for variety in train.varieties() {
        let records: Vec<_> = train
            .records()
            .iter()
            .filter(|r| r.variety_id == variety)
            .collect();
        if records.len() < 2 {
            log::warn!(
                "variety {variety} has {} record(s); excluded from the correlation matrix",
                records.len()
            );
            excluded.push(variety);
            continue;
        }
        let yields: Vec<T> = records.iter().map(|r| r.variety_yield).collect();
        let mut row = Vec::with_capacity(attributes.len());
        for (a, attribute) in attributes.iter().enumerate() {
            let values: Vec<T> = records.iter().map(|r| r.attributes[a]).collect();
            match pearson(&values, &yields) {
                Some(r) => row.push(r),
                None => {
                    zero_variance.push((variety.clone(), attribute.clone()));
                    row.push(T::zero());
                }
            }
        }
        rows.push(row);
        varieties.push(variety);
    }

    if varieties.is_empty() {
        return Err(Error::InsufficientData(
            "no variety has the 2 records needed for a correlation profile".into(),
        ));
    }
    Ok(CorrelationMatrix {
        varieties,
        attributes,
        matrix: Matrix::from_rows(rows)?,
        zero_variance,
        excluded,
    })
}

/// Result of one k-means clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<T> {
    pub k: usize,
    /// Cluster index (0-based) per input row.
    pub assignment: Vec<usize>,
    /// k rows of cluster centroids (member means).
    pub centroids: Matrix<T>,
    /// Within-cluster sum of squared distances.
    pub wgss: T,
    /// Objective recorded after each assignment step of the winning run;
    /// non-increasing up to floating-point noise.
    pub iteration_wgss: Vec<T>,
    /// Times an empty cluster was reseeded during the winning run.
    pub empty_cluster_reseeds: usize,
}

fn distance_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut total = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        total += d * d;
    }
    total
}

fn nearest_centroid<T: Scalar>(point: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = 0;
    let mut best_dist = distance_sq(point, centroids.row(0));
    for c in 1..centroids.rows() {
        let d = distance_sq(point, centroids.row(c));
        if d < best_dist {
            best = c;
            best_dist = d;
        }
    }
    (best, best_dist)
}

/// k-means++ initial centroids.
fn seed_centroids<T: Scalar>(points: &Matrix<T>, k: usize, rng: &mut impl Rng) -> Matrix<T> {
    let n = points.rows();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist: Vec<T> = (0..n)
        .map(|i| distance_sq(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: T = dist.iter().copied().sum();
        let next = if total > T::zero() {
            let target = T::cast(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, slot) in dist.iter_mut().enumerate() {
            let d = distance_sq(points.row(i), points.row(next));
            if d < *slot {
                *slot = d;
            }
        }
    }
    Matrix::from_rows(chosen.iter().map(|&i| points.row(i).to_vec()).collect())
        .expect("centroid rows share the point width")
}

struct KmeansRun<T> {
    assignment: Vec<usize>,
    centroids: Matrix<T>,
    wgss: T,
    iteration_wgss: Vec<T>,
    empty_cluster_reseeds: usize,
}

/// Lloyd iterations from the given initial centroids.
fn lloyd<T: Scalar>(points: &Matrix<T>, mut centroids: Matrix<T>) -> KmeansRun<T> {
    let n = points.rows();
    let d = points.cols();
    let k = centroids.rows();
    let mut assignment = vec![0usize; n];
    let mut previous: Option<Vec<usize>> = None;
    let mut iteration_wgss = Vec::new();
    let mut empty_cluster_reseeds = 0;

    for _ in 0..MAX_ITERATIONS {
        let mut wgss = T::zero();
        for (i, slot) in assignment.iter_mut().enumerate() {
            let (c, dist) = nearest_centroid(points.row(i), &centroids);
            *slot = c;
            wgss += dist;
        }
        iteration_wgss.push(wgss);
        if previous.as_deref() == Some(assignment.as_slice()) {
            break;
        }
        previous = Some(assignment.clone());

        let mut sums = vec![T::zero(); k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (j, &v) in points.row(i).iter().enumerate() {
                sums[c * d + j] += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from its
                // assigned centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = distance_sq(points.row(a), centroids.row(assignment[a]));
                        let db = distance_sq(points.row(b), centroids.row(assignment[b]));
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                empty_cluster_reseeds += 1;
                for j in 0..d {
                    centroids.set(c, j, points.get(far, j));
                }
            } else {
                let count = T::cast(counts[c] as f64);
                for j in 0..d {
                    centroids.set(c, j, sums[c * d + j] / count);
                }
            }
        }
    }

    let wgss = (0..n)
        .map(|i| distance_sq(points.row(i), centroids.row(assignment[i])))
        .sum();
    KmeansRun {
        assignment,
        centroids,
        wgss,
        iteration_wgss,
        empty_cluster_reseeds,
    }
}

fn check_kmeans_inputs<T: Scalar>(points: &Matrix<T>, k: usize, restarts: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if points.rows() == 0 {
        return Err(Error::Contract("cannot cluster an empty point set".into()));
    }
    if k > points.rows() {
        return Err(Error::Contract(format!(
            "cannot form {k} clusters from {} points",
            points.rows()
        )));
    }
    if restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    Ok(())
}

fn best_run<T: Scalar>(candidates: Vec<KmeansRun<T>>) -> KmeansRun<T> {
    candidates
        .into_iter()
        .reduce(|best, run| if run.wgss < best.wgss { run } else { best })
        .expect("at least one run")
}

fn run_to_assignment<T: Scalar>(k: usize, run: KmeansRun<T>) -> ClusterAssignment<T> {
    ClusterAssignment {
        k,
        assignment: run.assignment,
        centroids: run.centroids,
        wgss: run.wgss,
        iteration_wgss: run.iteration_wgss,
        empty_cluster_reseeds: run.empty_cluster_reseeds,
    }
}

/// Cluster rows of `points` into `k` groups, keeping the best of `restarts`
/// independent k-means++ runs (ties keep the earliest restart).
pub fn kmeans<T: Scalar>(
    points: &Matrix<T>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterAssignment<T>> {
    check_kmeans_inputs(points, k, restarts)?;
    let runs: Vec<KmeansRun<T>> = (0..restarts)
        .map(|r| {
            let mut rng = stream(seed, &[STREAM_RESTART, r as u64]);
            lloyd(points, seed_centroids(points, k, &mut rng))
        })
        .collect();
    Ok(run_to_assignment(k, best_run(runs)))
}

/// Variety clustering over correlation profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyClusters<T> {
    pub assignment: ClusterAssignment<T>,
    /// Variety id → cluster index.
    pub clusters: BTreeMap<String, usize>,
}

impl<T> VarietyClusters<T> {
    pub fn cluster_of(&self, variety: &str) -> Option<usize> {
        self.clusters.get(variety).copied()
    }

    /// Variety ids in the given cluster, sorted.
    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.clusters
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(v, _)| v.as_str())
            .collect()
    }
}

/// Cluster varieties by their correlation profiles.
pub fn cluster_varieties<T: Scalar>(
    correlations: &CorrelationMatrix<T>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<VarietyClusters<T>> {
    let assignment = kmeans(&correlations.matrix, k, seed, restarts)?;
    let clusters = correlations
        .varieties
        .iter()
        .cloned()
        .zip(assignment.assignment.iter().copied())
        .collect();
    Ok(VarietyClusters {
        assignment,
        clusters,
    })
}

/// Within-cluster sum of squares for k = 1..=k_max.
///
/// Each k keeps the best of the fresh restarts and a warm start built from
/// the previous k's winning centroids plus the farthest point, so the curve
/// is non-increasing in k.
pub fn elbow_curve<T: Scalar>(
    points: &Matrix<T>,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<Vec<(usize, T)>> {
    check_kmeans_inputs(points, k_max, restarts)?;
    let mut curve = Vec::with_capacity(k_max);
    let mut previous: Option<KmeansRun<T>> = None;
    for k in 1..=k_max {
        let mut candidates: Vec<KmeansRun<T>> = (0..restarts)
            .map(|r| {
                let mut rng = stream(seed, &[STREAM_ELBOW, k as u64, r as u64]);
                lloyd(points, seed_centroids(points, k, &mut rng))
            })
            .collect();
        if let Some(prev) = &previous {
            let far = (0..points.rows())
                .max_by(|&a, &b| {
                    let da = distance_sq(points.row(a), prev.centroids.row(prev.assignment[a]));
                    let db = distance_sq(points.row(b), prev.centroids.row(prev.assignment[b]));
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .unwrap();
            let mut rows: Vec<Vec<T>> =
                (0..prev.centroids.rows()).map(|c| prev.centroids.row(c).to_vec()).collect();
            rows.push(points.row(far).to_vec());
            candidates.push(lloyd(points, Matrix::from_rows(rows)?));
        }
        let best = best_run(candidates);
        curve.push((k, best.wgss));
        previous = Some(best);
    }
    Ok(curve)
}
