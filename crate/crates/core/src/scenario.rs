//! Weather-uncertainty scenarios.
//!
//! Next year's weather at the target site is unknown, so it is resampled
//! from history: the pool is every distinct (site, year) weather
//! realization observed at sites similar to the target (nearby or sharing
//! its climate type), and each scenario draws one realization uniformly
//! with replacement. Pushing the drawn weather through the trained model,
//! plus per-variety residual noise, yields a scenarios-by-varieties matrix
//! of simulated yields whose column moments feed the decision models.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchicalModel;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::stream;
use crate::scalar::Scalar;

const S_NOISE: u64 = 50;
const S_DRAW: u64 = 51;

/// Eigenvalues this far below zero trigger the covariance repair; anything
/// closer to zero is ordinary floating-point noise and the matrix is kept
/// exactly as computed.
const EIGEN_TOLERANCE: f64 = 1e-8;

/// The target site for planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteQuery<T> {
    pub latitude: T,
    pub longitude: T,
    pub climate_type: String,
    /// How many nearest sites (by degree-space distance) to include.
    pub n_nearest: usize,
}

impl<T: Scalar> SiteQuery<T> {
    pub fn validate(&self) -> Result<()> {
        let lat = self.latitude.widen();
        let long = self.longitude.widen();
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Config(format!("latitude {lat} out of [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&long) {
            return Err(Error::Config(format!(
                "longitude {long} out of [-180, 180]"
            )));
        }
        if self.n_nearest == 0 {
            return Err(Error::Config("n_nearest must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sites similar to the query: the union of the `n_nearest` sites by
/// Euclidean distance in (latitude, longitude) degrees and every site
/// sharing the query's climate type. Distance ties are broken by site id.
pub fn similar_sites<T: Scalar>(data: &Dataset<T>, query: &SiteQuery<T>) -> Result<Vec<String>> {
    query.validate()?;
    let mut sites: BTreeMap<&str, (T, T, &str)> = BTreeMap::new();
    for record in data.records() {
        sites.entry(&record.site_id).or_insert((
            record.latitude,
            record.longitude,
            &record.climate_type,
        ));
    }
    if sites.is_empty() {
        return Err(Error::InsufficientData(
            "no sites available for the similarity search".into(),
        ));
    }

    let mut by_distance: Vec<(T, &str)> = sites
        .iter()
        .map(|(&id, &(lat, long, _))| {
            let dlat = lat - query.latitude;
            let dlong = long - query.longitude;
            ((dlat * dlat + dlong * dlong).sqrt(), id)
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));

    let mut selected: std::collections::BTreeSet<&str> = by_distance
        .iter()
        .take(query.n_nearest)
        .map(|&(_, id)| id)
        .collect();
    for (&id, &(_, _, climate)) in &sites {
        if climate == query.climate_type {
            selected.insert(id);
        }
    }
    Ok(selected.into_iter().map(String::from).collect())
}

/// One historical weather realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample<T> {
    pub site_id: String,
    pub year: u16,
    /// Realized weather values in the schema's weather-attribute order.
    pub values: Vec<T>,
}

/// Distinct (site, year) weather realizations observed at the given sites,
/// sorted by site then year. Weather is consistent within a site-year, so
/// the first record of each pair supplies the values.
pub fn weather_pool<T: Scalar>(data: &Dataset<T>, sites: &[String]) -> Vec<WeatherSample<T>> {
    let weather_idx = data.schema().weather_indices();
    let wanted: std::collections::BTreeSet<&str> = sites.iter().map(|s| s.as_str()).collect();
    let mut pool: BTreeMap<(String, u16), Vec<T>> = BTreeMap::new();
    for record in data.records() {
        if !wanted.contains(record.site_id.as_str()) {
            continue;
        }
        pool.entry((record.site_id.clone(), record.year))
            .or_insert_with(|| {
                weather_idx
                    .iter()
                    .map(|&(i, _)| record.attributes[i])
                    .collect()
            });
    }
    pool.into_iter()
        .map(|((site_id, year), values)| WeatherSample {
            site_id,
            year,
            values,
        })
        .collect()
}

/// Draw `n` weather realizations uniformly with replacement.
pub fn sample_weather<T: Scalar>(
    pool: &[WeatherSample<T>],
    n: usize,
    seed: u64,
) -> Result<Vec<WeatherSample<T>>> {
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "the weather pool is empty; no similar site has historical weather".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Config("scenario count must be at least 1".into()));
    }
    let mut rng = stream(seed, &[S_DRAW]);
    Ok((0..n)
        .map(|_| pool[rng.random_range(0..pool.len())].clone())
        .collect())
}

/// Simulated yields: one row per scenario, one column per variety.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix<T> {
    /// Column order, sorted variety ids.
    pub varieties: Vec<String>,
    /// Row provenance: the weather realization behind each scenario.
    pub weather: Vec<WeatherSample<T>>,
    pub matrix: Matrix<T>,
    /// Cells whose noisy yield came out negative and was floored at zero.
    pub floored: usize,
    pub seed: u64,
}

impl<T: Scalar> ScenarioMatrix<T> {
    pub fn n_scenarios(&self) -> usize {
        self.matrix.rows()
    }

    /// Column moments of this matrix.
    pub fn stats(&self) -> Result<ScenarioStats<T>> {
        stats(&self.matrix)
    }

    /// CSV with provenance: SCENARIO, SITE, YEAR, then one column per
    /// variety.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![
            "SCENARIO".to_string(),
            "SITE".to_string(),
            "YEAR".to_string(),
        ];
        header.extend(self.varieties.iter().cloned());
        out.write_record(&header)?;
        for i in 0..self.matrix.rows() {
            let mut row = vec![
                i.to_string(),
                self.weather[i].site_id.clone(),
                self.weather[i].year.to_string(),
            ];
            row.extend(self.matrix.row(i).iter().map(|v| format!("{v}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Simulate yields for every model variety under the drawn weather.
///
/// `fixed` is the target site's full attribute row (schema order); its
/// realized-weather entries are overwritten by each scenario's draw. Each
/// cell adds zero-mean Gaussian noise with the variety's residual variance
/// (skipped exactly when that variance is zero), and negative yields are
/// floored at zero and counted.
pub fn build_scenarios<T: Scalar>(
    model: &HierarchicalModel<T>,
    fixed: &[T],
    weather: &[WeatherSample<T>],
    seed: u64,
) -> Result<ScenarioMatrix<T>> {
    if fixed.len() != model.schema.len() {
        return Err(Error::Contract(format!(
            "fixed attribute row has {} values, schema has {}",
            fixed.len(),
            model.schema.len()
        )));
    }
    if weather.is_empty() {
        return Err(Error::InsufficientData(
            "no weather scenarios to simulate".into(),
        ));
    }
    let weather_idx = model.schema.weather_indices();
    for (i, sample) in weather.iter().enumerate() {
        if sample.values.len() != weather_idx.len() {
            return Err(Error::Contract(format!(
                "weather sample {i} has {} values, schema has {} weather attributes",
                sample.values.len(),
                weather_idx.len()
            )));
        }
    }
    for (j, &value) in fixed.iter().enumerate() {
        let is_weather = weather_idx.iter().any(|&(w, _)| w == j);
        if !value.is_finite() && !is_weather {
            return Err(Error::Contract(format!(
                "fixed attribute {j} is not finite"
            )));
        }
    }

    let varieties = model.varieties();
    let mut noise_sd = Vec::with_capacity(varieties.len());
    for variety in &varieties {
        let mse = *model.residual_mse.get(variety).ok_or_else(|| {
            Error::Contract(format!("variety `{variety}` has no residual estimate"))
        })?;
        noise_sd.push(mse.max(T::zero()).sqrt());
    }

    let mut matrix = Matrix::zeros(weather.len(), varieties.len());
    let mut floored = 0usize;
    let mut x = fixed.to_vec();
    for (i, sample) in weather.iter().enumerate() {
        for (&(slot, _), &value) in weather_idx.iter().zip(&sample.values) {
            x[slot] = value;
        }
        let check = model.check_forest.predict_row(&x)?;
        for (j, variety) in varieties.iter().enumerate() {
            let ratio = model.ratio_models[variety].predict_row(&x)?;
            let mut value = check * ratio;
            if noise_sd[j] > T::zero() {
                let mut rng = stream(seed, &[S_NOISE, i as u64, j as u64]);
                let z: f64 = rng.sample(StandardNormal);
                value += noise_sd[j] * T::cast(z);
            }
            if value < T::zero() {
                value = T::zero();
                floored += 1;
            }
            matrix.set(i, j, value);
        }
    }

    Ok(ScenarioMatrix {
        varieties,
        weather: weather.to_vec(),
        matrix,
        floored,
        seed,
    })
}

/// Per-variety scenario moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats<T> {
    /// Column means.
    pub mean: Vec<T>,
    /// Sample covariance (denominator n - 1).
    pub covariance: Matrix<T>,
    /// True when a materially negative eigenvalue was floored to restore
    /// positive semidefiniteness.
    pub repaired: bool,
}

/// Column means and sample covariance of a scenario matrix.
///
/// The covariance is left exactly as computed unless an eigenvalue falls
/// materially below zero, in which case negative eigenvalues are floored
/// and the matrix reconstructed.
pub fn stats<T: Scalar>(matrix: &Matrix<T>) -> Result<ScenarioStats<T>> {
    let n = matrix.rows();
    let v = matrix.cols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 scenarios to estimate a covariance, got {n}"
        )));
    }
    let mean = matrix.col_means();
    let denom = T::cast((n - 1) as f64);
    let mut covariance = Matrix::zeros(v, v);
    for a in 0..v {
        for b in a..v {
            let mut total = T::zero();
            for i in 0..n {
                total += (matrix.get(i, a) - mean[a]) * (matrix.get(i, b) - mean[b]);
            }
            let value = total / denom;
            covariance.set(a, b, value);
            covariance.set(b, a, value);
        }
    }
    let repaired = repair_psd(&mut covariance)?;
    Ok(ScenarioStats {
        mean,
        covariance,
        repaired,
    })
}

/// Floor materially negative eigenvalues to zero; returns whether anything
/// was changed.
fn repair_psd<T: Scalar>(covariance: &mut Matrix<T>) -> Result<bool> {
    let eigen = symmetric_eigen(covariance)?;
    let tolerance = T::cast(-EIGEN_TOLERANCE);
    if eigen.values.iter().all(|&v| v >= tolerance) {
        return Ok(false);
    }
    log::warn!("covariance has a materially negative eigenvalue; flooring the spectrum at zero");
    let v = covariance.rows();
    let floored: Vec<T> = eigen.values.iter().map(|&w| w.max(T::zero())).collect();
    for a in 0..v {
        for b in 0..v {
            let mut total = T::zero();
            for (k, &value) in floored.iter().enumerate() {
                total += eigen.vectors.get(a, k) * value * eigen.vectors.get(b, k);
            }
            covariance.set(a, b, total);
        }
    }
    Ok(true)
}
