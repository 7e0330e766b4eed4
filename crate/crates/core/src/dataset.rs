//! Trial-data schema, CSV ingestion, filtering/split policies and the
//! synthetic generator used for testing.
//!
//! A record is one experimental observation: a variety grown at a site in a
//! year, with the site's soil/region attributes, that year's weather, the
//! observed variety yield and the site-year's check yield. The attribute
//! schema is configurable; [`AttributeSchema::table_b1`] is the default
//! 28-attribute layout (16 soil, 6 region, 6 weather) and
//! [`AttributeSchema::synthetic`] is the compact layout the generator emits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, ForestModel};
use crate::linalg::Matrix;
use crate::rng::{derive, stream};
use crate::scalar::Scalar;

const STREAM_SPLIT: u64 = 10;
const STREAM_IMPUTE: u64 = 11;
const GEN_SITE: u64 = 20;
const GEN_WEATHER: u64 = 21;
const GEN_CHECK_NOISE: u64 = 22;
const GEN_VARIETY: u64 = 23;
const GEN_RECORD: u64 = 24;

/// Which physical quantity a weather attribute carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherField {
    Temperature,
    Precipitation,
    Radiation,
}

/// Attribute taxonomy: fixed soil and region attributes, per-trial weather
/// realizations (replaced during scenario sampling) and historical weather
/// medians (held fixed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeCategory {
    Soil,
    Region,
    Weather(WeatherField),
    WeatherMedian(WeatherField),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    pub category: AttributeCategory,
}

impl AttributeDef {
    fn new(name: &str, category: AttributeCategory) -> Self {
        AttributeDef {
            name: name.to_string(),
            category,
        }
    }
}

/// Ordered attribute list plus the missing-value policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSchema {
    attributes: Vec<AttributeDef>,
    /// Attributes that may stay missing (NaN) through ingestion for later
    /// imputation; missing values anywhere else drop the row.
    imputable: Vec<String>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeDef>, imputable: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for def in &attributes {
            if !seen.insert(def.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate attribute name `{}`",
                    def.name
                )));
            }
        }
        for name in &imputable {
            if !seen.contains(name.as_str()) {
                return Err(Error::Schema(format!(
                    "imputable attribute `{name}` is not in the schema"
                )));
            }
        }
        Ok(AttributeSchema {
            attributes,
            imputable,
        })
    }

    /// The default 28-attribute layout: 16 soil, 6 region, 6 weather.
    ///
    /// Both the CONUS and ISRIC soil sources are ingested; RM_BAND is the
    /// one attribute allowed to stay missing for imputation. The three
    /// realized weather attributes (TEMP, PREC, RAD) are stored wide by year
    /// in raw files and pivoted at ingestion; the *_MED medians are
    /// per-site historical values.
    pub fn table_b1() -> Self {
        use AttributeCategory::*;
        use WeatherField::*;
        let soil = [
            "SOIL_CUBE", "CONUS_PH", "CONUS_OM", "CONUS_CEC", "CONUS_CLAY", "CONUS_SAND",
            "ISRIC_PH", "ISRIC_OM", "ISRIC_CEC", "ISRIC_CLAY", "ISRIC_SAND", "RM_BAND", "SEASON",
            "BREEDING_G", "EXP", "SITE_YIELD",
        ];
        let region = ["LAT", "LONG", "CLIMATE", "AREA", "RM_25", "TOT_IRR_DE"];
        let mut attributes: Vec<AttributeDef> =
            soil.iter().map(|n| AttributeDef::new(n, Soil)).collect();
        attributes.extend(region.iter().map(|n| AttributeDef::new(n, Region)));
        attributes.push(AttributeDef::new("TEMP", Weather(Temperature)));
        attributes.push(AttributeDef::new("PREC", Weather(Precipitation)));
        attributes.push(AttributeDef::new("RAD", Weather(Radiation)));
        attributes.push(AttributeDef::new("TEMP_MED", WeatherMedian(Temperature)));
        attributes.push(AttributeDef::new("PREC_MED", WeatherMedian(Precipitation)));
        attributes.push(AttributeDef::new("RAD_MED", WeatherMedian(Radiation)));
        AttributeSchema::new(attributes, vec!["RM_BAND".to_string()])
            .expect("table B1 schema is well formed")
    }

    /// The compact layout emitted by [`generate_synthetic`]: 4 soil, 3
    /// region, 3 weather attributes, none imputable.
    pub fn synthetic() -> Self {
        use AttributeCategory::*;
        use WeatherField::*;
        let attributes = vec![
            AttributeDef::new("SOIL_Q", Soil),
            AttributeDef::new("SOIL_PH", Soil),
            AttributeDef::new("SOIL_N1", Soil),
            AttributeDef::new("SOIL_N2", Soil),
            AttributeDef::new("LAT", Region),
            AttributeDef::new("LONG", Region),
            AttributeDef::new("AREA", Region),
            AttributeDef::new("TEMP", Weather(Temperature)),
            AttributeDef::new("PREC", Weather(Precipitation)),
            AttributeDef::new("RAD", Weather(Radiation)),
        ];
        AttributeSchema::new(attributes, Vec::new()).expect("synthetic schema is well formed")
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn defs(&self) -> &[AttributeDef] {
        &self.attributes
    }

    pub fn names(&self) -> Vec<String> {
        self.attributes.iter().map(|d| d.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|d| d.name == name)
    }

    pub fn is_imputable(&self, name: &str) -> bool {
        self.imputable.iter().any(|n| n == name)
    }

    pub fn imputable(&self) -> &[String] {
        &self.imputable
    }

    /// Indices of the realized (per-trial) weather attributes.
    pub fn weather_indices(&self) -> Vec<(usize, WeatherField)> {
        self.attributes
            .iter()
            .enumerate()
            .filter_map(|(i, d)| match d.category {
                AttributeCategory::Weather(f) => Some((i, f)),
                _ => None,
            })
            .collect()
    }
}

/// One experimental observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord<T> {
    pub year: u16,
    pub site_id: String,
    pub latitude: T,
    pub longitude: T,
    pub climate_type: String,
    pub variety_id: String,
    /// Attribute values aligned with the dataset's schema.
    pub attributes: Vec<T>,
    pub variety_yield: T,
    pub check_yield: T,
}

impl<T: Scalar> TrialRecord<T> {
    /// The variety's relative performance R = Y / CY at this trial.
    pub fn ratio(&self) -> T {
        self.variety_yield / self.check_yield
    }
}

/// Immutable collection of trial records under one schema, with a contiguous
/// variety index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    schema: AttributeSchema,
    records: Vec<TrialRecord<T>>,
    variety_index: BTreeMap<String, usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(schema: AttributeSchema, records: Vec<TrialRecord<T>>) -> Result<Self> {
        let imputable_idx: BTreeSet<usize> = schema
            .imputable
            .iter()
            .filter_map(|n| schema.index_of(n))
            .collect();
        for (i, record) in records.iter().enumerate() {
            if record.attributes.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "record {i} has {} attribute values, schema has {}",
                    record.attributes.len(),
                    schema.len()
                )));
            }
            for (j, &value) in record.attributes.iter().enumerate() {
                if !value.is_finite() && !(value.is_nan() && imputable_idx.contains(&j)) {
                    return Err(Error::Schema(format!(
                        "record {i}: non-finite value in attribute `{}`",
                        schema.attributes[j].name
                    )));
                }
            }
            if !(record.check_yield.is_finite() && record.check_yield > T::zero()) {
                return Err(Error::Schema(format!(
                    "record {i}: check yield must be positive and finite"
                )));
            }
            if !(record.variety_yield.is_finite() && record.variety_yield >= T::zero()) {
                return Err(Error::Schema(format!(
                    "record {i}: variety yield must be nonnegative and finite"
                )));
            }
            if !record.latitude.is_finite() || !record.longitude.is_finite() {
                return Err(Error::Schema(format!(
                    "record {i}: non-finite coordinates"
                )));
            }
        }
        let variety_index = build_variety_index(&records);
        Ok(Dataset {
            schema,
            records,
            variety_index,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn records(&self) -> &[TrialRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mapping from variety id to a contiguous 0-based index, ordered by id.
    pub fn variety_index(&self) -> &BTreeMap<String, usize> {
        &self.variety_index
    }

    pub fn n_varieties(&self) -> usize {
        self.variety_index.len()
    }

    /// Sorted variety ids.
    pub fn varieties(&self) -> Vec<String> {
        self.variety_index.keys().cloned().collect()
    }

    /// Record counts per variety.
    pub fn counts_by_variety(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for record in &self.records {
            *counts.entry(record.variety_id.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// True when any attribute value is still missing (NaN).
    pub fn has_missing(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.attributes.iter().any(|v| v.is_nan()))
    }

    /// Attribute rows in record order.
    pub fn attribute_matrix(&self) -> Matrix<T> {
        Matrix::from_rows(self.records.iter().map(|r| r.attributes.clone()).collect())
            .expect("records validated to a common width")
    }

    pub fn check_yields(&self) -> Vec<T> {
        self.records.iter().map(|r| r.check_yield).collect()
    }

    pub fn variety_yields(&self) -> Vec<T> {
        self.records.iter().map(|r| r.variety_yield).collect()
    }

    pub fn ratios(&self) -> Vec<T> {
        self.records.iter().map(|r| r.ratio()).collect()
    }

    /// Keep only the `count` most frequent varieties (ties at the cutoff
    /// broken by lexicographic variety id). Asking for more varieties than
    /// exist returns the dataset unchanged with a warning.
    pub fn filter_top_varieties(&self, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("variety count must be at least 1".into()));
        }
        let counts = self.counts_by_variety();
        if count >= counts.len() {
            log::warn!(
                "asked for top {count} varieties but only {} exist; keeping all",
                counts.len()
            );
            return Ok(self.clone());
        }
        let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let kept: BTreeSet<&String> = ranked.iter().take(count).map(|(id, _)| *id).collect();
        let records: Vec<TrialRecord<T>> = self
            .records
            .iter()
            .filter(|r| kept.contains(&r.variety_id))
            .cloned()
            .collect();
        Dataset::new(self.schema.clone(), records)
    }

    /// Stratified train/validation/test split.
    ///
    /// Each variety's records are shuffled (per-variety stream under
    /// `spec.seed`) and divided by largest-remainder rounding of the
    /// fractions, so the partition is deterministic and every record lands
    /// in exactly one part. Varieties with fewer than 3 records go entirely
    /// to training.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Self, Self, Self)> {
        spec.validate()?;
        let mut assignment = vec![0u8; self.records.len()];
        for (variety, &v) in &self.variety_index {
            let mut indices: Vec<usize> = self
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| &r.variety_id == variety)
                .map(|(i, _)| i)
                .collect();
            if indices.len() < 3 {
                log::warn!(
                    "variety {variety} has {} records; all assigned to training",
                    indices.len()
                );
                continue;
            }
            let mut rng = stream(spec.seed, &[STREAM_SPLIT, v as u64]);
            for i in (1..indices.len()).rev() {
                let j = rng.random_range(0..=i);
                indices.swap(i, j);
            }
            let counts = largest_remainder(
                indices.len(),
                &[
                    spec.train_fraction,
                    spec.validation_fraction,
                    spec.test_fraction,
                ],
            );
            let mut cursor = 0;
            for (part, &take) in counts.iter().enumerate() {
                for &record in &indices[cursor..cursor + take] {
                    assignment[record] = part as u8;
                }
                cursor += take;
            }
        }
        let pick = |part: u8| -> Result<Self> {
            let records: Vec<TrialRecord<T>> = self
                .records
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == part)
                .map(|(r, _)| r.clone())
                .collect();
            Dataset::new(self.schema.clone(), records)
        };
        Ok((pick(0)?, pick(1)?, pick(2)?))
    }

    /// Write the canonical long-format CSV: metadata columns, then the
    /// schema attributes (skipping names already emitted as metadata).
    /// Missing values are written as `NA`.
    pub fn export_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let meta = metadata_columns();
        let extra: Vec<(usize, &str)> = self
            .schema
            .attributes
            .iter()
            .enumerate()
            .filter(|(_, d)| !meta.contains(&d.name.as_str()))
            .map(|(i, d)| (i, d.name.as_str()))
            .collect();
        let mut header: Vec<&str> = meta.to_vec();
        header.extend(extra.iter().map(|(_, n)| *n));
        out.write_record(&header)?;
        for record in &self.records {
            let mut row: Vec<String> = vec![
                record.year.to_string(),
                record.site_id.clone(),
                record.variety_id.clone(),
                record.climate_type.clone(),
                format_value(record.latitude),
                format_value(record.longitude),
                format_value(record.variety_yield),
                format_value(record.check_yield),
            ];
            for &(i, _) in &extra {
                row.push(format_value(record.attributes[i]));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_csv_path(&self, path: &Path) -> Result<()> {
        self.export_csv(BufWriter::new(File::create(path)?))
    }
}

fn build_variety_index<T>(records: &[TrialRecord<T>]) -> BTreeMap<String, usize> {
    let ids: BTreeSet<&String> = records.iter().map(|r| &r.variety_id).collect();
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect()
}

fn metadata_columns() -> [&'static str; 8] {
    [
        "YEAR",
        "SITE",
        "VARIETY",
        "CLIMATE",
        "LAT",
        "LONG",
        "VARIETY_YIELD",
        "CHECK_YIELD",
    ]
}

fn format_value<T: Scalar>(value: T) -> String {
    if value.is_nan() {
        "NA".to_string()
    } else {
        format!("{value}")
    }
}

/// Largest-remainder apportionment of `n` into parts proportional to
/// `fractions`; remainder ties go to the earlier part.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(fractions.len());
    for (i, &f) in fractions.iter().enumerate() {
        let exact = n as f64 * f;
        let floor = exact.floor();
        counts.push(floor as usize);
        remainders.push((exact - floor, i));
    }
    let mut leftover = n - counts.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Fractions and seed for the stratified split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.6,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
        ];
        if fracs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Counts reported by [`ingest_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// Rows dropped because a required column was missing, keyed by the
    /// first offending column.
    pub dropped_missing: BTreeMap<String, usize>,
    /// Missing values retained as NaN in imputable columns.
    pub retained_missing: BTreeMap<String, usize>,
    /// Rows skipped because a cell failed to parse (each is also logged with
    /// its line number).
    pub parse_errors: usize,
    /// Rows dropped for a nonpositive check yield or negative variety yield.
    pub invalid_yields: usize,
}

enum Cell {
    Missing,
    Number(f64),
}

fn parse_cell(text: &str) -> Result<Cell, String> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return Ok(Cell::Missing);
    }
    f64::from_str(trimmed)
        .map(Cell::Number)
        .map_err(|_| format!("`{trimmed}` is not a number"))
}

/// Read a trial CSV under `schema`.
///
/// The header must contain YEAR, SITE, VARIETY, VARIETY_YIELD, CHECK_YIELD,
/// LAT, LONG and CLIMATE plus every schema attribute; realized weather
/// attributes may instead appear wide by year (for example `TEMP_08` ..
/// `TEMP_14`), pivoted into the per-trial value using each row's YEAR.
/// Missing cells are the empty string or `NA`. Rows with missing values in
/// non-imputable columns are dropped and counted; imputable columns keep a
/// NaN marker for [`impute_missing`]. Unparseable rows are skipped with a
/// logged line number. Lines starting with `#` are ignored, so exported
/// files may carry provenance comments.
pub fn ingest_csv<T: Scalar, R: Read>(
    reader: R,
    schema: &AttributeSchema,
) -> Result<(Dataset<T>, IngestReport)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .flexible(false)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let mut columns: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        columns.entry(name).or_insert(i);
    }

    let mut meta = BTreeMap::new();
    for name in [
        "YEAR",
        "SITE",
        "VARIETY",
        "VARIETY_YIELD",
        "CHECK_YIELD",
        "LAT",
        "LONG",
        "CLIMATE",
    ] {
        let index = *columns
            .get(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        meta.insert(name, index);
    }

    // Static column for each attribute, or None when the attribute is
    // realized weather stored wide by year.
    let mut attr_columns: Vec<Option<usize>> = Vec::with_capacity(schema.len());
    for def in schema.defs() {
        match columns.get(def.name.as_str()) {
            Some(&i) => attr_columns.push(Some(i)),
            None => {
                let wide_prefix = format!("{}_", def.name);
                let has_wide = matches!(def.category, AttributeCategory::Weather(_))
                    && headers.iter().any(|h| h.starts_with(&wide_prefix));
                if has_wide {
                    attr_columns.push(None);
                } else {
                    return Err(Error::MissingColumn(def.name.clone()));
                }
            }
        }
    }

    let mut report = IngestReport::default();
    let mut records: Vec<TrialRecord<T>> = Vec::new();

    'rows: for row in csv_reader.records() {
        let row = row?;
        report.rows_read += 1;
        let line = row.position().map_or(0, |p| p.line());

        let skip_parse = |column: &str, message: String| {
            log::warn!("line {line}: column {column}: {message}; row skipped");
        };

        macro_rules! numeric_cell {
            ($column:expr, $index:expr) => {
                match parse_cell(&row[$index]) {
                    Ok(cell) => cell,
                    Err(message) => {
                        skip_parse($column, message);
                        report.parse_errors += 1;
                        continue 'rows;
                    }
                }
            };
        }

        let year_text = row[meta["YEAR"]].trim();
        let year = match u16::from_str(year_text) {
            Ok(y) => y,
            Err(_) => {
                skip_parse("YEAR", format!("`{year_text}` is not a year"));
                report.parse_errors += 1;
                continue 'rows;
            }
        };
        let site_id = row[meta["SITE"]].trim().to_string();
        let variety_id = row[meta["VARIETY"]].trim().to_string();
        let climate_type = row[meta["CLIMATE"]].trim().to_string();
        if site_id.is_empty() || variety_id.is_empty() {
            *report
                .dropped_missing
                .entry(if site_id.is_empty() { "SITE" } else { "VARIETY" }.to_string())
                .or_insert(0) += 1;
            continue 'rows;
        }

        let require = |column: &str, cell: Cell, report: &mut IngestReport| match cell {
            Cell::Number(v) => Some(v),
            Cell::Missing => {
                *report.dropped_missing.entry(column.to_string()).or_insert(0) += 1;
                None
            }
        };

        let cell = numeric_cell!("VARIETY_YIELD", meta["VARIETY_YIELD"]);
        let Some(variety_yield) = require("VARIETY_YIELD", cell, &mut report) else {
            continue 'rows;
        };
        let cell = numeric_cell!("CHECK_YIELD", meta["CHECK_YIELD"]);
        let Some(check_yield) = require("CHECK_YIELD", cell, &mut report) else {
            continue 'rows;
        };
        let cell = numeric_cell!("LAT", meta["LAT"]);
        let Some(latitude) = require("LAT", cell, &mut report) else {
            continue 'rows;
        };
        let cell = numeric_cell!("LONG", meta["LONG"]);
        let Some(longitude) = require("LONG", cell, &mut report) else {
            continue 'rows;
        };

        if check_yield <= 0.0 || variety_yield < 0.0 {
            report.invalid_yields += 1;
            continue 'rows;
        }

        let mut attributes: Vec<T> = Vec::with_capacity(schema.len());
        for (def, column) in schema.defs().iter().zip(&attr_columns) {
            let index = match column {
                Some(i) => *i,
                None => {
                    let wide = format!("{}_{:02}", def.name, year % 100);
                    match columns.get(wide.as_str()) {
                        Some(&i) => i,
                        None => return Err(Error::MissingColumn(wide)),
                    }
                }
            };
            match numeric_cell!(&def.name, index) {
                Cell::Number(v) => attributes.push(T::cast(v)),
                Cell::Missing => {
                    if schema.is_imputable(&def.name) {
                        *report
                            .retained_missing
                            .entry(def.name.clone())
                            .or_insert(0) += 1;
                        attributes.push(T::nan());
                    } else {
                        *report
                            .dropped_missing
                            .entry(def.name.clone())
                            .or_insert(0) += 1;
                        continue 'rows;
                    }
                }
            }
        }

        records.push(TrialRecord {
            year,
            site_id,
            latitude: T::cast(latitude),
            longitude: T::cast(longitude),
            climate_type,
            variety_id,
            attributes,
            variety_yield: T::cast(variety_yield),
            check_yield: T::cast(check_yield),
        });
        report.rows_kept += 1;
    }

    let dataset = Dataset::new(schema.clone(), records)?;
    Ok((dataset, report))
}

pub fn ingest_csv_path<T: Scalar>(
    path: &Path,
    schema: &AttributeSchema,
) -> Result<(Dataset<T>, IngestReport)> {
    let file = File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    ingest_csv(file, schema)
}

/// Fill missing values in imputable attributes with random-forest
/// predictions trained on the non-imputable attributes, returning the
/// completed dataset and the per-attribute fill counts.
pub fn impute_missing<T: Scalar>(
    dataset: &Dataset<T>,
    config: &ForestConfig,
) -> Result<(Dataset<T>, BTreeMap<String, usize>)> {
    let schema = dataset.schema().clone();
    let feature_idx: Vec<usize> = (0..schema.len())
        .filter(|&j| !schema.is_imputable(&schema.defs()[j].name))
        .collect();
    let feature_names: Vec<String> = feature_idx
        .iter()
        .map(|&j| schema.defs()[j].name.clone())
        .collect();

    let mut records = dataset.records().to_vec();
    let mut filled = BTreeMap::new();

    for (attr_pos, target_name) in schema.imputable().to_vec().into_iter().enumerate() {
        let target = schema
            .index_of(&target_name)
            .expect("imputable names validated against the schema");
        let missing: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.attributes[target].is_nan())
            .map(|(i, _)| i)
            .collect();
        if missing.is_empty() {
            continue;
        }
        let present: Vec<usize> = (0..records.len())
            .filter(|&i| !records[i].attributes[target].is_nan())
            .collect();
        if present.is_empty() {
            return Err(Error::InsufficientData(format!(
                "attribute `{target_name}` is missing in every record; cannot impute"
            )));
        }
        let rows: Vec<Vec<T>> = present
            .iter()
            .map(|&i| feature_idx.iter().map(|&j| records[i].attributes[j]).collect())
            .collect();
        let x = Matrix::from_rows(rows)?;
        let y: Vec<T> = present.iter().map(|&i| records[i].attributes[target]).collect();
        let forest_config = ForestConfig {
            seed: derive(config.seed, &[STREAM_IMPUTE, attr_pos as u64]),
            ..config.clone()
        };
        let model = ForestModel::fit_named(&x, &y, &feature_names, &forest_config)?;
        for &i in &missing {
            let row: Vec<T> = feature_idx.iter().map(|&j| records[i].attributes[j]).collect();
            records[i].attributes[target] = model.predict_row(&row)?;
        }
        filled.insert(target_name, missing.len());
    }

    Ok((Dataset::new(schema, records)?, filled))
}

/// Per-variety record counts for the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCounts {
    /// Every variety gets this many records.
    Uniform(usize),
    /// Explicit count per variety, in variety-index order.
    PerVariety(Vec<usize>),
}

impl SampleCounts {
    fn resolve(&self, n_varieties: usize) -> Result<Vec<usize>> {
        let counts = match self {
            SampleCounts::Uniform(n) => vec![*n; n_varieties],
            SampleCounts::PerVariety(counts) => {
                if counts.len() != n_varieties {
                    return Err(Error::Config(format!(
                        "records_per_variety lists {} counts for {n_varieties} varieties",
                        counts.len()
                    )));
                }
                counts.clone()
            }
        };
        if counts.contains(&0) {
            return Err(Error::Config(
                "every variety needs at least one record".into(),
            ));
        }
        Ok(counts)
    }
}

/// Generator settings. Every field is explicit so a JSON config file fully
/// describes the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sites: usize,
    pub first_year: u16,
    pub n_years: u16,
    pub n_varieties: usize,
    /// Varieties are assigned round-robin to this many latent response
    /// groups; same-group varieties share their ratio behavior.
    pub n_groups: usize,
    pub records_per_variety: SampleCounts,
    /// Check yield at neutral attribute values, bushels per acre.
    pub check_base: f64,
    /// Scale of the soil contribution to check yield.
    pub soil_amplitude: f64,
    /// Scale of the latitude/longitude contribution to check yield.
    pub region_amplitude: f64,
    /// Scale of the (peaked) weather contribution to check yield.
    pub weather_amplitude: f64,
    /// Scale of the per-group ratio response around 1.
    pub ratio_amplitude: f64,
    /// Standard deviation of site-year check-yield noise.
    pub check_noise_sd: f64,
    /// Standard deviation of the per-record yield noise Z.
    pub yield_noise_sd: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_sites: 30,
            first_year: 2008,
            n_years: 7,
            n_varieties: 12,
            n_groups: 3,
            records_per_variety: SampleCounts::Uniform(200),
            check_base: 60.0,
            soil_amplitude: 8.0,
            region_amplitude: 3.0,
            weather_amplitude: 15.0,
            ratio_amplitude: 0.15,
            check_noise_sd: 1.5,
            yield_noise_sd: 2.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_varieties == 0 || self.n_years == 0 {
            return Err(Error::Config(
                "synthetic generator needs at least one site, variety and year".into(),
            ));
        }
        if self.n_groups == 0 || self.n_groups > self.n_varieties {
            return Err(Error::Config(format!(
                "n_groups must be in 1..={}, got {}",
                self.n_varieties, self.n_groups
            )));
        }
        for (name, value) in [
            ("check_base", self.check_base),
            ("soil_amplitude", self.soil_amplitude),
            ("region_amplitude", self.region_amplitude),
            ("weather_amplitude", self.weather_amplitude),
            ("ratio_amplitude", self.ratio_amplitude),
            ("check_noise_sd", self.check_noise_sd),
            ("yield_noise_sd", self.yield_noise_sd),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if self.check_base <= 0.0 {
            return Err(Error::Config("check_base must be positive".into()));
        }
        Ok(())
    }
}

// Synthetic schema attribute positions.
const A_SOIL_Q: usize = 0;
const A_SOIL_PH: usize = 1;
const A_LAT: usize = 4;
const A_LONG: usize = 5;
const A_TEMP: usize = 7;
const A_PREC: usize = 8;
const A_RAD: usize = 9;

/// Latent parameters behind a generated dataset, for oracle tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    /// Variety id → latent response group.
    pub groups: BTreeMap<String, usize>,
    /// Variety id → constant ratio offset.
    pub variety_offsets: BTreeMap<String, f64>,
    /// Variety id → standard deviation of its yield noise Z.
    pub noise_sd: BTreeMap<String, f64>,
    pub soil_attributes: Vec<String>,
    pub region_attributes: Vec<String>,
    pub weather_attributes: Vec<String>,
}

impl GroundTruth {
    /// Noise-free check yield at an attribute row (synthetic schema order).
    pub fn latent_check(&self, attributes: &[f64]) -> f64 {
        let c = &self.config;
        let soil = c.soil_amplitude
            * (1.6 * (attributes[A_SOIL_Q] - 0.5) + 0.4 * (attributes[A_SOIL_PH] - 0.5));
        let region = c.region_amplitude
            * (0.7 * (attributes[A_LAT] - 40.0) / 5.0
                + 0.3 * (attributes[A_LONG] + 92.5) / 7.5);
        let peak = temp_peak(attributes[A_TEMP]);
        let weather = c.weather_amplitude
            * (peak + 0.35 * prec_norm(attributes[A_PREC]) + 0.2 * rad_norm(attributes[A_RAD]))
            + 0.4 * c.weather_amplitude * 2.0 * (attributes[A_SOIL_Q] - 0.5) * peak;
        (c.check_base + soil + region + weather).max(1.0)
    }

    /// Noise-free variety ratio at an attribute row.
    pub fn latent_ratio(&self, variety_id: &str, attributes: &[f64]) -> f64 {
        let group = self.groups[variety_id];
        let offset = self.variety_offsets[variety_id];
        let (a, b) = group_direction(group, self.config.n_groups);
        let response = a * temp_norm(attributes[A_TEMP]) + b * 2.0 * (attributes[A_SOIL_Q] - 0.5);
        (1.0 + self.config.ratio_amplitude * response + offset).max(0.05)
    }
}

fn temp_norm(temp: f64) -> f64 {
    (temp - 22.0) / 4.0
}

fn temp_peak(temp: f64) -> f64 {
    let t = temp_norm(temp);
    (-2.0 * t * t).exp()
}

fn prec_norm(prec: f64) -> f64 {
    (prec - 500.0) / 200.0
}

fn rad_norm(rad: f64) -> f64 {
    (rad - 20.0) / 5.0
}

fn group_direction(group: usize, n_groups: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * group as f64 / n_groups.max(1) as f64;
    (angle.cos(), angle.sin())
}

/// Generate a dataset with known latent structure.
///
/// Check yield is a smooth function of soil, region and weather attributes
/// (weather peaked in temperature) plus site-year noise; variety yield is
/// check yield times a group-driven latent ratio plus per-record Gaussian
/// noise. Weather and check-yield noise are consistent per (site, year)
/// regardless of how many records land there.
pub fn generate_synthetic<T: Scalar>(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Dataset<T>, GroundTruth)> {
    config.validate()?;
    let counts = config.records_per_variety.resolve(config.n_varieties)?;
    let schema = AttributeSchema::synthetic();

    struct Site {
        lat: f64,
        long: f64,
        area: f64,
        climate: String,
        soil: [f64; 4],
    }

    let sites: Vec<Site> = (0..config.n_sites)
        .map(|s| {
            let mut rng = stream(seed, &[GEN_SITE, s as u64]);
            let lat: f64 = 35.0 + 10.0 * rng.random::<f64>();
            let long: f64 = -100.0 + 15.0 * rng.random::<f64>();
            let area: f64 = 50.0 + 150.0 * rng.random::<f64>();
            let band = (((lat - 35.0) / 10.0) * 3.0).floor().clamp(0.0, 2.0) as u8;
            let soil = [
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            Site {
                lat,
                long,
                area,
                climate: format!("C{band}"),
                soil,
            }
        })
        .collect();

    let weather_at = |s: usize, yi: u16| -> [f64; 3] {
        let mut rng = stream(seed, &[GEN_WEATHER, s as u64, yi as u64]);
        [
            18.0 + 8.0 * rng.random::<f64>(),
            300.0 + 400.0 * rng.random::<f64>(),
            15.0 + 10.0 * rng.random::<f64>(),
        ]
    };

    let mut groups = BTreeMap::new();
    let mut variety_offsets = BTreeMap::new();
    let mut noise_sd = BTreeMap::new();
    let variety_ids: Vec<String> = (0..config.n_varieties)
        .map(|v| format!("V{v:03}"))
        .collect();
    for (v, id) in variety_ids.iter().enumerate() {
        let mut rng = stream(seed, &[GEN_VARIETY, v as u64]);
        groups.insert(id.clone(), v % config.n_groups);
        variety_offsets.insert(id.clone(), 0.03 * (2.0 * rng.random::<f64>() - 1.0));
        noise_sd.insert(id.clone(), config.yield_noise_sd);
    }

    let truth = GroundTruth {
        config: config.clone(),
        groups,
        variety_offsets,
        noise_sd,
        soil_attributes: vec!["SOIL_Q", "SOIL_PH", "SOIL_N1", "SOIL_N2"]
            .into_iter()
            .map(String::from)
            .collect(),
        region_attributes: vec!["LAT", "LONG", "AREA"]
            .into_iter()
            .map(String::from)
            .collect(),
        weather_attributes: vec!["TEMP", "PREC", "RAD"]
            .into_iter()
            .map(String::from)
            .collect(),
    };

    let mut records = Vec::with_capacity(counts.iter().sum());
    for (v, id) in variety_ids.iter().enumerate() {
        for k in 0..counts[v] {
            let mut rng = stream(seed, &[GEN_RECORD, v as u64, k as u64]);
            let s = rng.random_range(0..config.n_sites);
            let yi = rng.random_range(0..config.n_years);
            let site = &sites[s];
            let w = weather_at(s, yi);
            let attributes = [
                site.soil[0],
                site.soil[1],
                site.soil[2],
                site.soil[3],
                site.lat,
                site.long,
                site.area,
                w[0],
                w[1],
                w[2],
            ];

            let mut check = truth.latent_check(&attributes);
            if config.check_noise_sd > 0.0 {
                let mut cy_rng = stream(seed, &[GEN_CHECK_NOISE, s as u64, yi as u64]);
                let z: f64 = cy_rng.sample(StandardNormal);
                check = (check + config.check_noise_sd * z).max(0.5);
            }
            let ratio = truth.latent_ratio(id, &attributes);
            let mut yield_value = check * ratio;
            if config.yield_noise_sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                yield_value = (yield_value + config.yield_noise_sd * z).max(0.0);
            }

            records.push(TrialRecord {
                year: config.first_year + yi,
                site_id: format!("S{s:03}"),
                latitude: T::cast(site.lat),
                longitude: T::cast(site.long),
                climate_type: site.climate.clone(),
                variety_id: id.clone(),
                attributes: attributes.iter().map(|&v| T::cast(v)).collect(),
                variety_yield: T::cast(yield_value),
                check_yield: T::cast(check),
            });
        }
    }

    Ok((Dataset::new(schema, records)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_b1_has_28_attributes() {
        let schema = AttributeSchema::table_b1();
        assert_eq!(schema.len(), 28);
        let soil = schema
            .defs()
            .iter()
            .filter(|d| d.category == AttributeCategory::Soil)
            .count();
        let region = schema
            .defs()
            .iter()
            .filter(|d| d.category == AttributeCategory::Region)
            .count();
        assert_eq!(soil, 16);
        assert_eq!(region, 6);
        assert_eq!(schema.len() - soil - region, 6);
        assert!(schema.is_imputable("RM_BAND"));
        assert_eq!(schema.weather_indices().len(), 3);
    }

    #[test]
    fn schema_rejects_duplicates_and_unknown_imputables() {
        let dup = vec![
            AttributeDef::new("A", AttributeCategory::Soil),
            AttributeDef::new("A", AttributeCategory::Region),
        ];
        assert!(AttributeSchema::new(dup, vec![]).is_err());
        let attrs = vec![AttributeDef::new("A", AttributeCategory::Soil)];
        assert!(AttributeSchema::new(attrs, vec!["B".into()]).is_err());
    }

    fn tiny_csv() -> String {
        let mut text = String::from(
            "YEAR,SITE,VARIETY,CLIMATE,LAT,LONG,VARIETY_YIELD,CHECK_YIELD,\
             SOIL_Q,SOIL_PH,SOIL_N1,SOIL_N2,AREA,TEMP_08,TEMP_09,PREC_08,PREC_09,RAD_08,RAD_09\n",
        );
        text.push_str("2008,S1,V1,C0,40.0,-92.0,55.0,50.0,0.5,0.5,0.1,0.2,80,21,23,450,500,18,20\n");
        text.push_str("2009,S1,V1,C0,40.0,-92.0,60.0,50.0,0.5,0.5,0.1,0.2,80,21,23,450,500,18,20\n");
        text.push_str("2008,S2,V2,C1,42.0,-95.0,48.0,52.0,0.7,0.4,0.3,0.9,120,22,24,400,520,17,21\n");
        text
    }

    #[test]
    fn ingest_pivots_wide_weather_by_year() {
        let schema = AttributeSchema::synthetic();
        let (dataset, report) = ingest_csv::<f64, _>(tiny_csv().as_bytes(), &schema).unwrap();
        assert_eq!(dataset.len(), 3);
        assert_eq!(report.rows_kept, 3);
        let temp = schema.index_of("TEMP").unwrap();
        assert_eq!(dataset.records()[0].attributes[temp], 21.0);
        assert_eq!(dataset.records()[1].attributes[temp], 23.0);
        let rad = schema.index_of("RAD").unwrap();
        assert_eq!(dataset.records()[2].attributes[rad], 17.0);
        assert_eq!(dataset.n_varieties(), 2);
    }

    #[test]
    fn ingest_drops_missing_and_skips_bad_rows() {
        let schema = AttributeSchema::synthetic();
        let mut text = tiny_csv();
        text.push_str("2008,S3,V2,C1,41.0,-94.0,50.0,51.0,,0.4,0.3,0.9,120,22,24,400,520,17,21\n");
        text.push_str("2008,S3,V2,C1,41.0,-94.0,oops,51.0,0.5,0.4,0.3,0.9,120,22,24,400,520,17,21\n");
        text.push_str("2008,S3,V2,C1,41.0,-94.0,50.0,0.0,0.5,0.4,0.3,0.9,120,22,24,400,520,17,21\n");
        let (dataset, report) = ingest_csv::<f64, _>(text.as_bytes(), &schema).unwrap();
        assert_eq!(dataset.len(), 3);
        assert_eq!(report.rows_read, 6);
        assert_eq!(report.dropped_missing["SOIL_Q"], 1);
        assert_eq!(report.parse_errors, 1);
        assert_eq!(report.invalid_yields, 1);
    }

    #[test]
    fn missing_header_is_named() {
        let schema = AttributeSchema::synthetic();
        let text = "YEAR,SITE,VARIETY,CLIMATE,LAT,LONG,VARIETY_YIELD,CHECK_YIELD,SOIL_Q\n";
        let err = ingest_csv::<f64, _>(text.as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(name) if name == "SOIL_PH"));
    }

    #[test]
    fn empty_file_with_header_gives_empty_dataset() {
        let schema = AttributeSchema::synthetic();
        let mut header = tiny_csv();
        header.truncate(header.find('\n').unwrap() + 1);
        let (dataset, report) = ingest_csv::<f64, _>(header.as_bytes(), &schema).unwrap();
        assert!(dataset.is_empty());
        assert_eq!(report.rows_read, 0);
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let (dataset, _) = generate_synthetic::<f64>(&SyntheticConfig::default(), 7).unwrap();
        let mut buffer = Vec::new();
        dataset.export_csv(&mut buffer).unwrap();
        let (back, report) = ingest_csv::<f64, _>(buffer.as_slice(), dataset.schema()).unwrap();
        assert_eq!(report.rows_kept, dataset.len());
        assert_eq!(dataset, back);
    }

    #[test]
    fn filter_top_varieties_keeps_most_frequent() {
        let config = SyntheticConfig {
            n_varieties: 3,
            n_groups: 1,
            records_per_variety: SampleCounts::PerVariety(vec![100, 50, 10]),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, 1).unwrap();
        let top = dataset.filter_top_varieties(2).unwrap();
        assert_eq!(top.varieties(), vec!["V000", "V001"]);
        assert_eq!(top.len(), 150);
        let again = top.filter_top_varieties(2).unwrap();
        assert_eq!(top, again);
        let all = dataset.filter_top_varieties(10).unwrap();
        assert_eq!(all, dataset);
    }

    #[test]
    fn split_matches_fractions() {
        let config = SyntheticConfig {
            n_varieties: 1,
            n_groups: 1,
            records_per_variety: SampleCounts::Uniform(100),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, 2).unwrap();
        let spec = SplitSpec::default();
        let (train, valid, test) = dataset.split(&spec).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (60, 20, 20));

        let (t2, v2, s2) = dataset.split(&spec).unwrap();
        assert_eq!(train, t2);
        assert_eq!(valid, v2);
        assert_eq!(test, s2);
    }

    #[test]
    fn split_of_five_records_is_3_1_1() {
        let config = SyntheticConfig {
            n_varieties: 1,
            n_groups: 1,
            records_per_variety: SampleCounts::Uniform(5),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, 3).unwrap();
        let (train, valid, test) = dataset.split(&SplitSpec::default()).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (3, 1, 1));
    }

    #[test]
    fn tiny_varieties_go_to_training() {
        let config = SyntheticConfig {
            n_varieties: 2,
            n_groups: 1,
            records_per_variety: SampleCounts::PerVariety(vec![2, 50]),
            ..SyntheticConfig::default()
        };
        let (dataset, _) = generate_synthetic::<f64>(&config, 4).unwrap();
        let (train, valid, test) = dataset.split(&SplitSpec::default()).unwrap();
        let in_train = train
            .records()
            .iter()
            .filter(|r| r.variety_id == "V000")
            .count();
        assert_eq!(in_train, 2);
        assert!(valid.records().iter().all(|r| r.variety_id != "V000"));
        assert!(test.records().iter().all(|r| r.variety_id != "V000"));
    }

    #[test]
    fn zero_noise_yield_is_exactly_product() {
        let config = SyntheticConfig {
            check_noise_sd: 0.0,
            yield_noise_sd: 0.0,
            n_varieties: 2,
            n_groups: 2,
            records_per_variety: SampleCounts::Uniform(40),
            ..SyntheticConfig::default()
        };
        let (dataset, truth) = generate_synthetic::<f64>(&config, 5).unwrap();
        for record in dataset.records() {
            let attrs: Vec<f64> = record.attributes.clone();
            let latent = truth.latent_check(&attrs) * truth.latent_ratio(&record.variety_id, &attrs);
            assert_eq!(record.variety_yield, latent);
            assert_eq!(
                record.variety_yield,
                record.check_yield * truth.latent_ratio(&record.variety_id, &attrs)
            );
        }
    }

    #[test]
    fn generator_is_deterministic_and_counts_match() {
        let config = SyntheticConfig {
            n_varieties: 3,
            n_groups: 3,
            records_per_variety: SampleCounts::PerVariety(vec![10, 100, 37]),
            ..SyntheticConfig::default()
        };
        let (a, _) = generate_synthetic::<f64>(&config, 9).unwrap();
        let (b, _) = generate_synthetic::<f64>(&config, 9).unwrap();
        assert_eq!(a, b);
        let counts = a.counts_by_variety();
        assert_eq!(counts["V000"], 10);
        assert_eq!(counts["V001"], 100);
        assert_eq!(counts["V002"], 37);
    }

    #[test]
    fn degenerate_generator_config_is_rejected() {
        let config = SyntheticConfig {
            n_varieties: 0,
            ..SyntheticConfig::default()
        };
        assert!(matches!(
            generate_synthetic::<f64>(&config, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn impute_fills_missing_rm_band() {
        let schema = AttributeSchema::new(
            vec![
                AttributeDef::new("X", AttributeCategory::Soil),
                AttributeDef::new("RM", AttributeCategory::Soil),
            ],
            vec!["RM".into()],
        )
        .unwrap();
        let mut records = Vec::new();
        for i in 0..60 {
            let x = i as f64 / 10.0;
            let rm = if i % 10 == 0 { f64::NAN } else { 2.0 * x };
            records.push(TrialRecord {
                year: 2008,
                site_id: "S0".into(),
                latitude: 40.0,
                longitude: -92.0,
                climate_type: "C0".into(),
                variety_id: "V0".into(),
                attributes: vec![x, rm],
                variety_yield: 50.0,
                check_yield: 50.0,
            });
        }
        let dataset = Dataset::new(schema, records).unwrap();
        assert!(dataset.has_missing());
        let (filled, counts) = impute_missing(&dataset, &ForestConfig::default()).unwrap();
        assert!(!filled.has_missing());
        assert_eq!(counts["RM"], 6);
        let rm = filled.schema().index_of("RM").unwrap();
        for (i, record) in filled.records().iter().enumerate() {
            if i % 10 == 0 && i > 0 {
                let x = record.attributes[0];
                assert!((record.attributes[rm] - 2.0 * x).abs() < 1.0);
            }
        }
    }
}
