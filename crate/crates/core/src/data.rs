//! Tabular datasets: encoding of string tables, a synthetic biased
//! generator, group-preserving train/test splits and seeded mini-batching.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Error, Result};
use crate::tensor::Matrix;

/// Standard deviations below this are treated as constant columns.
pub const STD_GUARD: f64 = 1e-12;
/// Reshuffles attempted by [`split`] before giving up on a single-group partition.
pub const SPLIT_RETRIES: u64 = 10;

/// Standardised features with binary labels and a binary sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<f64>,
    sensitive: Vec<f64>,
    feature_names: Vec<String>,
    /// `true` for real-valued columns; one-hot indicator columns are `false`
    /// and are never rescaled.
    continuous: Vec<bool>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<f64>,
        sensitive: Vec<f64>,
        feature_names: Vec<String>,
        continuous: Vec<bool>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || sensitive.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} labels, {} sensitive values",
                labels.len(),
                sensitive.len()
            )));
        }
        if feature_names.len() != features.cols() || continuous.len() != features.cols() {
            return Err(Error::Shape(format!(
                "{} columns but {} names / {} kinds",
                features.cols(),
                feature_names.len(),
                continuous.len()
            )));
        }
        if labels.iter().chain(&sensitive).any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation("labels and sensitive values must be 0 or 1".into()));
        }
        Ok(Dataset {
            features,
            labels,
            sensitive,
            feature_names,
            continuous,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[f64] {
        &self.sensitive
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn continuous(&self) -> &[bool] {
        &self.continuous
    }

    /// Number of samples in sensitive groups 0 and 1.
    pub fn group_sizes(&self) -> (usize, usize) {
        let ones = self.sensitive.iter().filter(|&&s| s == 1.0).count();
        (self.len() - ones, ones)
    }

    /// Fails unless both sensitive groups are present.
    pub fn validate_groups(&self) -> Result<()> {
        let (n0, n1) = self.group_sizes();
        if n0 == 0 || n1 == 0 {
            return Err(Error::Validation(format!(
                "sensitive attribute has a single group ({n0} vs {n1} samples)"
            )));
        }
        Ok(())
    }

    /// Positive-label rate within each sensitive group.
    pub fn positive_rates(&self) -> (f64, f64) {
        let mut acc = [(0.0, 0usize); 2];
        for (&y, &s) in self.labels.iter().zip(&self.sensitive) {
            let cell = &mut acc[s as usize];
            cell.0 += y;
            cell.1 += 1;
        }
        let rate = |(sum, n): (f64, usize)| if n == 0 { f64::NAN } else { sum / n as f64 };
        (rate(acc[0]), rate(acc[1]))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sensitive: indices.iter().map(|&i| self.sensitive[i]).collect(),
            feature_names: self.feature_names.clone(),
            continuous: self.continuous.clone(),
        }
    }

    /// Copy with the sensitive groups relabelled `0 ↔ 1`.
    pub fn with_swapped_groups(&self) -> Dataset {
        let mut out = self.clone();
        for s in &mut out.sensitive {
            *s = 1.0 - *s;
        }
        out
    }
}

/// Per-column affine rescaling fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    /// `(mean, std)` for continuous columns, `None` for indicator columns.
    columns: Vec<Option<(f64, f64)>>,
}

impl Standardizer {
    pub fn fit(features: &Matrix, continuous: &[bool]) -> Standardizer {
        let columns = continuous
            .iter()
            .enumerate()
            .map(|(c, &is_cont)| is_cont.then(|| column_stats((0..features.rows()).map(|r| features.get(r, c)))))
            .collect();
        Standardizer { columns }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for (c, stats) in self.columns.iter().enumerate() {
                if let Some((mean, std)) = stats {
                    out.set(r, c, standardize(out.get(r, c), *mean, *std));
                }
            }
        }
        out
    }
}

/// Population mean and standard deviation.
fn column_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, libm::sqrt(var))
}

#[inline]
fn standardize(v: f64, mean: f64, std: f64) -> f64 {
    if std < STD_GUARD {
        0.0
    } else {
        (v - mean) / std
    }
}

/// Which columns carry the label and the sensitive attribute, and how to binarise them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub label_column: String,
    pub sensitive_column: String,
    /// Cell value mapped to label 1; every other value maps to 0.
    pub positive_label: String,
    /// Cell value mapped to sensitive group 1; every other value maps to group 0.
    pub positive_sensitive: String,
    /// Also feed the sensitive column to the network as a feature.
    pub include_sensitive: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            label_column: "label".into(),
            sensitive_column: "group".into(),
            positive_label: "1".into(),
            positive_sensitive: "1".into(),
            include_sensitive: false,
        }
    }
}

/// A parsed CSV body: header plus rows tagged with their source line number.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<RawRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub line: usize,
    pub cells: Vec<String>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }

    pub fn subset(&self, indices: &[usize]) -> RawTable {
        RawTable {
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Binarised sensitive attribute of every row.
    pub fn sensitive_values(&self, schema: &Schema) -> Result<Vec<f64>> {
        let col = self.column_index(&schema.sensitive_column)?;
        self.rows
            .iter()
            .map(|r| Ok(binarize(cell(r, col)?, &schema.positive_sensitive)))
            .collect()
    }
}

fn cell(row: &RawRow, col: usize) -> Result<&str> {
    let v = row.cells.get(col).ok_or_else(|| Error::Row {
        line: row.line,
        reason: format!("expected at least {} fields, found {}", col + 1, row.cells.len()),
    })?;
    let v = v.trim();
    if v.is_empty() {
        return Err(Error::Row {
            line: row.line,
            reason: format!("missing value in field {}", col + 1),
        });
    }
    Ok(v)
}

fn binarize(v: &str, positive: &str) -> f64 {
    if v == positive.trim() {
        1.0
    } else {
        0.0
    }
}

/// How one source column becomes feature columns.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoding {
    Numeric {
        name: String,
        mean: f64,
        std: f64,
    },
    /// One indicator column per level, in first-seen order.
    Categorical {
        name: String,
        levels: Vec<String>,
    },
}

impl ColumnEncoding {
    fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name, .. } | ColumnEncoding::Categorical { name, .. } => name,
        }
    }
}

/// Feature pipeline fitted on training rows and replayable on held-out rows.
///
/// Numeric columns are standardised, string columns are one-hot encoded. A
/// column is numeric when its value in the first row parses as a number.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    pub schema: Schema,
    pub columns: Vec<ColumnEncoding>,
}

impl FeatureEncoder {
    pub fn fit(table: &RawTable, schema: &Schema) -> Result<FeatureEncoder> {
        let label_col = table.column_index(&schema.label_column)?;
        let sens_col = table.column_index(&schema.sensitive_column)?;
        let first = table
            .rows
            .first()
            .ok_or_else(|| Error::Validation("table has no data rows".into()))?;
        let mut columns = Vec::new();
        for (c, name) in table.header.iter().enumerate() {
            if c == label_col || (c == sens_col && !schema.include_sensitive) {
                continue;
            }
            let numeric = cell(first, c)?.parse::<f64>().is_ok();
            if numeric {
                let values = table
                    .rows
                    .iter()
                    .map(|r| parse_number(r, c))
                    .collect::<Result<Vec<_>>>()?;
                let (mean, std) = column_stats(values.iter().copied());
                columns.push(ColumnEncoding::Numeric {
                    name: name.clone(),
                    mean,
                    std,
                });
            } else {
                let mut levels: Vec<String> = Vec::new();
                for r in &table.rows {
                    let v = cell(r, c)?;
                    if !levels.iter().any(|l| l == v) {
                        levels.push(v.to_string());
                    }
                }
                columns.push(ColumnEncoding::Categorical {
                    name: name.clone(),
                    levels,
                });
            }
        }
        Ok(FeatureEncoder {
            schema: schema.clone(),
            columns,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            match col {
                ColumnEncoding::Numeric { name, .. } => names.push(name.clone()),
                ColumnEncoding::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }

    /// Encodes every row. Categories unseen at fit time encode as all zeros.
    pub fn transform(&self, table: &RawTable) -> Result<Dataset> {
        let label_col = table.column_index(&self.schema.label_column)?;
        let sens_col = table.column_index(&self.schema.sensitive_column)?;
        let source: Vec<usize> = self
            .columns
            .iter()
            .map(|c| table.column_index(c.name()))
            .collect::<Result<_>>()?;
        let names = self.feature_names();
        let continuous: Vec<bool> = self
            .columns
            .iter()
            .flat_map(|c| match c {
                ColumnEncoding::Numeric { .. } => vec![true],
                ColumnEncoding::Categorical { levels, .. } => vec![false; levels.len()],
            })
            .collect();
        let mut values = Vec::with_capacity(table.rows.len() * names.len());
        let mut labels = Vec::with_capacity(table.rows.len());
        let mut sensitive = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            labels.push(binarize(cell(row, label_col)?, &self.schema.positive_label));
            sensitive.push(binarize(cell(row, sens_col)?, &self.schema.positive_sensitive));
            for (enc, &c) in self.columns.iter().zip(&source) {
                match enc {
                    ColumnEncoding::Numeric { mean, std, .. } => {
                        values.push(standardize(parse_number(row, c)?, *mean, *std))
                    }
                    ColumnEncoding::Categorical { levels, .. } => {
                        let v = cell(row, c)?;
                        values.extend(levels.iter().map(|l| if l == v { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        let features = Matrix::from_vec(table.rows.len(), names.len(), values)?;
        Dataset::new(features, labels, sensitive, names, continuous)
    }

    /// Flat `key=value` pairs describing the pipeline, for checkpoint metadata.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("schema.label_column".into(), self.schema.label_column.clone());
        m.insert("schema.sensitive_column".into(), self.schema.sensitive_column.clone());
        m.insert("schema.positive_label".into(), self.schema.positive_label.clone());
        m.insert(
            "schema.positive_sensitive".into(),
            self.schema.positive_sensitive.clone(),
        );
        m.insert(
            "schema.include_sensitive".into(),
            self.schema.include_sensitive.to_string(),
        );
        m.insert("encoder.columns".into(), self.columns.len().to_string());
        for (i, col) in self.columns.iter().enumerate() {
            let v = match col {
                ColumnEncoding::Numeric { name, mean, std } => format!("num\t{name}\t{mean:?}\t{std:?}"),
                ColumnEncoding::Categorical { name, levels } => {
                    let mut s = format!("cat\t{name}");
                    for l in levels {
                        s.push('\t');
                        s.push_str(l);
                    }
                    s
                }
            };
            m.insert(format!("encoder.{i:05}"), v);
        }
        m
    }

    /// Inverse of [`to_meta`](Self::to_meta). Returns `None` when no encoder is recorded.
    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Option<FeatureEncoder>> {
        let Some(count) = meta.get("encoder.columns") else {
            return Ok(None);
        };
        let bad = |what: &str| Error::Checkpoint(format!("malformed encoder metadata: {what}"));
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(k));
        let schema = Schema {
            label_column: get("schema.label_column")?,
            sensitive_column: get("schema.sensitive_column")?,
            positive_label: get("schema.positive_label")?,
            positive_sensitive: get("schema.positive_sensitive")?,
            include_sensitive: get("schema.include_sensitive")?
                .parse()
                .map_err(|_| bad("include_sensitive"))?,
        };
        let count: usize = count.parse().map_err(|_| bad("encoder.columns"))?;
        let mut columns = Vec::with_capacity(count);
        for i in 0..count {
            let key = format!("encoder.{i:05}");
            let v = get(&key)?;
            let mut parts = v.split('\t');
            let col = match (parts.next(), parts.next()) {
                (Some("num"), Some(name)) => {
                    let mean = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(&key))?;
                    let std = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(&key))?;
                    ColumnEncoding::Numeric {
                        name: name.into(),
                        mean,
                        std,
                    }
                }
                (Some("cat"), Some(name)) => ColumnEncoding::Categorical {
                    name: name.into(),
                    levels: parts.map(String::from).collect(),
                },
                _ => return Err(bad(&key)),
            };
            columns.push(col);
        }
        Ok(Some(FeatureEncoder { schema, columns }))
    }
}

fn parse_number(row: &RawRow, col: usize) -> Result<f64> {
    let v = cell(row, col)?;
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Row {
            line: row.line,
            reason: format!("cannot parse `{v}` in field {} as a number", col + 1),
        }),
    }
}

/// Fits an encoder on the whole table and encodes it; rejects single-group data.
pub fn encode_table(table: &RawTable, schema: &Schema) -> Result<Dataset> {
    let ds = FeatureEncoder::fit(table, schema)?.transform(table)?;
    ds.validate_groups()?;
    Ok(ds)
}

/// Parameters of [`synth_biased`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub d: usize,
    /// Probability that a sample belongs to sensitive group 1.
    pub group_fraction: f64,
    /// Positive-label rate of group 0 minus that of group 1.
    pub base_rate_gap: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 4000,
            d: 6,
            group_fraction: 0.5,
            base_rate_gap: 0.4,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Unit shift applied along the label and group directions.
const SYNTH_SHIFT: f64 = 1.0;

/// Draws a synthetic dataset whose two sensitive groups have different base rates.
///
/// Group membership is Bernoulli(`group_fraction`); labels are Bernoulli with
/// rate `0.5 ± gap/2` depending on the group. The first `ceil(d/2)` features
/// are shifted by `±1` with the label, the remaining ones by `±1` with the
/// group, and all carry Gaussian noise of scale `noise`.
pub fn synth_biased(p: &SynthParams) -> Result<Dataset> {
    if p.n < 40 {
        return Err(param("n", format!("need at least 40 samples, got {}", p.n)));
    }
    if p.d < 2 {
        return Err(param("d", format!("need at least 2 features, got {}", p.d)));
    }
    if !(p.group_fraction > 0.0 && p.group_fraction < 1.0) {
        return Err(param(
            "group_fraction",
            format!("{} is outside (0, 1)", p.group_fraction),
        ));
    }
    if !(0.0..=1.0).contains(&p.base_rate_gap) {
        return Err(param("gap", format!("{} is outside [0, 1]", p.base_rate_gap)));
    }
    if !(p.noise > 0.0 && p.noise.is_finite()) {
        return Err(param("noise", format!("{} must be positive", p.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let label_dims = p.d.div_ceil(2);
    let mut values = Vec::with_capacity(p.n * p.d);
    let mut labels = Vec::with_capacity(p.n);
    let mut sensitive = Vec::with_capacity(p.n);
    for _ in 0..p.n {
        let s = if rng.gen::<f64>() < p.group_fraction { 1.0 } else { 0.0 };
        let rate = if s == 0.0 {
            0.5 + p.base_rate_gap / 2.0
        } else {
            0.5 - p.base_rate_gap / 2.0
        };
        let y = if rng.gen::<f64>() < rate { 1.0 } else { 0.0 };
        for j in 0..p.d {
            let shift = if j < label_dims { 2.0 * y - 1.0 } else { 2.0 * s - 1.0 };
            values.push(SYNTH_SHIFT * shift + p.noise * standard_normal(&mut rng));
        }
        labels.push(y);
        sensitive.push(s);
    }
    let names = (0..p.d).map(|j| format!("x{j}")).collect();
    let ds = Dataset::new(
        Matrix::from_vec(p.n, p.d, values)?,
        labels,
        sensitive,
        names,
        vec![true; p.d],
    )?;
    ds.validate_groups()?;
    Ok(ds)
}

/// Box–Muller transform.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Sorted `(train, test)` index sets in which both sensitive groups survive.
///
/// Reshuffles up to [`SPLIT_RETRIES`] times before failing.
pub fn split_indices(sensitive: &[f64], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(param("test_fraction", format!("{test_fraction} is outside (0, 1)")));
    }
    let n = sensitive.len();
    if n < 2 {
        return Err(Error::Validation(format!("cannot split {n} samples")));
    }
    let n_test = (libm::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
    let has_both = |idx: &[usize]| {
        let ones = idx.iter().filter(|&&i| sensitive[i] == 1.0).count();
        ones > 0 && ones < idx.len()
    };
    for attempt in 0..=SPLIT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (test, train) = order.split_at(n_test);
        if has_both(train) && has_both(test) {
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            return Ok((train, test));
        }
    }
    Err(Error::Validation(format!(
        "no split with both sensitive groups on each side after {} reshuffles",
        SPLIT_RETRIES
    )))
}

/// Disjoint train/test datasets; continuous columns are re-standardised with
/// statistics of the training part only.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(&ds.sensitive, test_fraction, seed)?;
    let mut train = ds.subset(&train_idx);
    let mut test = ds.subset(&test_idx);
    let scaler = Standardizer::fit(&train.features, &train.continuous);
    train.features = scaler.apply(&train.features);
    test.features = scaler.apply(&test.features);
    Ok((train, test))
}

/// Mini-batch schedule: fixed batch size, a fresh permutation each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl BatchPlan {
    /// Index slices covering `0..n` exactly once; the last one may be short.
    pub fn batches(&self, n: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        if self.batch_size < 2 {
            return Err(param("batch_size", format!("{} is below 2", self.batch_size)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(order.chunks(self.batch_size).map(<[usize]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> RawTable {
        RawTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, r)| RawRow {
                    line: i + 2,
                    cells: r.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        }
    }

    fn col_mean_std(m: &Matrix, c: usize) -> (f64, f64) {
        column_stats((0..m.rows()).map(|r| m.get(r, c)))
    }

    #[test]
    fn numeric_column_is_standardised() {
        let t = table(
            &["v", "label", "group"],
            &[&["1", "1", "a"], &["2", "0", "b"], &["3", "1", "a"], &["4", "0", "b"]],
        );
        let schema = Schema {
            positive_sensitive: "b".into(),
            ..Schema::default()
        };
        let ds = encode_table(&t, &schema).unwrap();
        assert_eq!(ds.dim(), 1);
        let (m, s) = col_mean_std(ds.features(), 0);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(ds.labels(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(ds.sensitive(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn categorical_column_is_one_hot() {
        let t = table(
            &["c", "label", "group"],
            &[&["a", "1", "0"], &["b", "0", "1"], &["a", "1", "1"]],
        );
        let ds = encode_table(&t, &Schema::default()).unwrap();
        assert_eq!(ds.feature_names(), &["c=a".to_string(), "c=b".to_string()]);
        assert_eq!(ds.features().values(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sensitive_can_be_included_as_feature() {
        let t = table(&["v", "label", "group"], &[&["1", "1", "0"], &["2", "0", "1"]]);
        let schema = Schema {
            include_sensitive: true,
            ..Schema::default()
        };
        let ds = encode_table(&t, &schema).unwrap();
        assert_eq!(ds.feature_names(), &["v".to_string(), "group".to_string()]);
    }

    #[test]
    fn table_errors() {
        let t = table(&["v", "label", "group"], &[&["1", "1", "0"], &["2", "0", "0"]]);
        assert!(matches!(
            encode_table(&t, &Schema::default()),
            Err(Error::Validation(_))
        ));

        let t = table(&["v", "group"], &[&["1", "0"]]);
        match encode_table(&t, &Schema::default()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("label")),
            other => panic!("{other:?}"),
        }

        let t = table(&["v", "label", "group"], &[&["1", "1", "0"], &["x", "0", "1"]]);
        assert!(matches!(
            encode_table(&t, &Schema::default()),
            Err(Error::Row { line: 3, .. })
        ));

        let t = table(&["v", "label", "group"], &[&["1", "1", "0"], &["", "0", "1"]]);
        assert!(matches!(
            encode_table(&t, &Schema::default()),
            Err(Error::Row { line: 3, .. })
        ));
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let t = table(&["v", "label", "group"], &[&["5", "1", "0"], &["5", "0", "1"]]);
        let ds = encode_table(&t, &Schema::default()).unwrap();
        assert_eq!(ds.features().values(), &[0.0, 0.0]);
    }

    #[test]
    fn encoder_meta_roundtrip() {
        let t = table(
            &["v", "c", "label", "group"],
            &[&["1.5", "x y", "1", "0"], &["-2", "z", "0", "1"]],
        );
        let enc = FeatureEncoder::fit(&t, &Schema::default()).unwrap();
        let back = FeatureEncoder::from_meta(&enc.to_meta()).unwrap().unwrap();
        assert_eq!(back, enc);
        assert_eq!(FeatureEncoder::from_meta(&BTreeMap::new()).unwrap(), None);
    }

    #[test]
    fn unseen_level_encodes_as_zeros() {
        let fit = table(&["c", "label", "group"], &[&["a", "1", "0"], &["b", "0", "1"]]);
        let enc = FeatureEncoder::fit(&fit, &Schema::default()).unwrap();
        let other = table(&["c", "label", "group"], &[&["q", "1", "0"]]);
        assert_eq!(enc.transform(&other).unwrap().features().values(), &[0.0, 0.0]);
    }

    fn synth(n: usize, gap: f64, seed: u64) -> Dataset {
        synth_biased(&SynthParams {
            n,
            base_rate_gap: gap,
            seed,
            ..SynthParams::default()
        })
        .unwrap()
    }

    #[test]
    fn synthetic_rate_gap_is_controlled() {
        let (r0, r1) = synth(10_000, 0.0, 1).positive_rates();
        assert!((r0 - r1).abs() < 0.05, "{r0} {r1}");
        let ds = synth(10_000, 0.4, 2);
        let (r0, r1) = ds.positive_rates();
        assert!((0.35..=0.45).contains(&(r0 - r1)), "{r0} {r1}");
        let (m0, m1) = ds.with_swapped_groups().positive_rates();
        assert!(((m0 - m1) + (r0 - r1)).abs() < 1e-15);
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(synth(500, 0.3, 9), synth(500, 0.3, 9));
        assert_ne!(synth(500, 0.3, 9), synth(500, 0.3, 10));
    }

    #[test]
    fn synthetic_rejects_bad_parameters() {
        let bad = |p: SynthParams| synth_biased(&p).unwrap_err();
        let base = SynthParams::default();
        assert!(matches!(
            bad(SynthParams { n: 39, ..base }),
            Error::Parameter { name: "n", .. }
        ));
        assert!(matches!(
            bad(SynthParams { d: 1, ..base }),
            Error::Parameter { name: "d", .. }
        ));
        assert!(matches!(
            bad(SynthParams {
                base_rate_gap: 1.5,
                ..base
            }),
            Error::Parameter { name: "gap", .. }
        ));
        assert!(matches!(
            bad(SynthParams { noise: 0.0, ..base }),
            Error::Parameter { name: "noise", .. }
        ));
        assert!(matches!(
            bad(SynthParams {
                group_fraction: 1.0,
                ..base
            }),
            Error::Parameter {
                name: "group_fraction",
                ..
            }
        ));
    }

    #[test]
    fn split_sizes_and_coverage() {
        let ds = synth(100, 0.2, 3);
        let (train, test) = split(&ds, 0.25, 7).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));
        let (a, b) = split_indices(ds.sensitive(), 0.25, 7).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split(&ds, 0.25, 7).unwrap(), (train.clone(), test));
        for c in 0..train.dim() {
            let (m, s) = col_mean_std(train.features(), c);
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn split_fails_when_a_group_cannot_survive() {
        // A single member of group 1 cannot sit on both sides.
        let mut s = vec![0.0; 50];
        s[10] = 1.0;
        assert!(matches!(split_indices(&s, 0.2, 0), Err(Error::Validation(_))));
        assert!(split_indices(&s, 1.0, 0).is_err());
    }

    #[test]
    fn batch_shapes() {
        let plan = BatchPlan {
            batch_size: 4,
            shuffle_seed: 1,
        };
        let b = plan.batches(10, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let e1 = plan.batches(10, 1).unwrap();
        assert_ne!(b, e1);
        let mut flat: Vec<usize> = e1.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
        assert_eq!(b, plan.batches(10, 0).unwrap());
        assert!(BatchPlan {
            batch_size: 1,
            shuffle_seed: 0
        }
        .batches(10, 0)
        .is_err());
    }

    proptest! {
        #[test]
        fn batches_are_a_partition(n in 0usize..300, bs in 2usize..64, seed in any::<u64>(), epoch in 0u64..50) {
            let plan = BatchPlan { batch_size: bs, shuffle_seed: seed };
            let b = plan.batches(n, epoch).unwrap();
            prop_assert!(b.iter().all(|s| !s.is_empty() && s.len() <= bs));
            let mut flat: Vec<usize> = b.concat();
            flat.sort_unstable();
            prop_assert_eq!(flat, (0..n).collect::<Vec<_>>());
        }
    }
}
