//! Loading, cleaning, splitting and standardizing the medical tabular datasets.
//!
//! Three schemas are compiled in (WDBC breast cancer, PIMA diabetes and
//! Cleveland heart disease). Each one names the feature columns to read, the
//! label column and how raw labels map onto `{0, 1}`. The positive class is
//! malignant / diabetic / disease present.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_SPLIT_SEED: u64 = 42;

// Guards floor/round against products like 0.7 * 70 = 48.99999999999999.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    BreastCancer,
    Pima,
    HeartCleveland,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [
        DatasetName::BreastCancer,
        DatasetName::Pima,
        DatasetName::HeartCleveland,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::BreastCancer => "breast_cancer",
            DatasetName::Pima => "pima",
            DatasetName::HeartCleveland => "heart_cleveland",
        }
    }

    /// File name looked up inside the data directory when a dataset is
    /// requested by name only.
    pub fn default_file(&self) -> &'static str {
        match self {
            DatasetName::BreastCancer => "wdbc.csv",
            DatasetName::Pima => "pima.csv",
            DatasetName::HeartCleveland => "heart_cleveland.csv",
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema::preset(*self)
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "breast_cancer" | "breast-cancer" | "wdbc" => Ok(DatasetName::BreastCancer),
            "pima" | "diabetes" => Ok(DatasetName::Pima),
            "heart_cleveland" | "heart-cleveland" | "heart" | "cleveland" => {
                Ok(DatasetName::HeartCleveland)
            }
            other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

/// How raw label strings become binary labels.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// Exact (trimmed) string lookup.
    Lookup(Vec<(String, u8)>),
    /// Cleveland `num` column: 0 is absence, 1..=4 are grades of presence.
    HeartSeverity,
}

impl LabelRule {
    pub fn apply(&self, raw: &str) -> Option<u8> {
        let raw = raw.trim();
        match self {
            LabelRule::Lookup(table) => table
                .iter()
                .find(|(key, _)| key == raw)
                .map(|(_, label)| *label),
            LabelRule::HeartSeverity => {
                let value: f64 = raw.parse().ok()?;
                if value.fract() != 0.0 {
                    return None;
                }
                binarize_heart_label(value as i64).ok()
            }
        }
    }

    fn binary() -> Self {
        LabelRule::Lookup(vec![("0".into(), 0), ("1".into(), 1)])
    }
}

/// Collapse the Cleveland 0..=4 severity grade to absence (0) / presence (1).
pub fn binarize_heart_label(raw: i64) -> Result<u8> {
    match raw {
        0 => Ok(0),
        1..=4 => Ok(1),
        _ => Err(Error::InvalidArgument(format!(
            "heart disease grade {raw} outside 0..=4"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub name: Option<DatasetName>,
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub label_rule: LabelRule,
    pub missing_marker: String,
    /// When set, row ids are read from this column instead of being the
    /// 0-based data-row position in the file.
    pub row_id_column: Option<String>,
}

const WDBC_BASES: [&str; 10] = [
    "radius",
    "texture",
    "perimeter",
    "area",
    "smoothness",
    "compactness",
    "concavity",
    "concave_points",
    "symmetry",
    "fractal_dimension",
];

const PIMA_COLUMNS: [&str; 8] = [
    "Pregnancies",
    "Glucose",
    "BloodPressure",
    "SkinThickness",
    "Insulin",
    "BMI",
    "DiabetesPedigreeFunction",
    "Age",
];

const HEART_COLUMNS: [&str; 13] = [
    "age", "sex", "cp", "trestbps", "chol", "fbs", "restecg", "thalach", "exang", "oldpeak",
    "slope", "ca", "thal",
];

impl DatasetSchema {
    pub fn preset(name: DatasetName) -> Self {
        match name {
            DatasetName::BreastCancer => DatasetSchema {
                name: Some(name),
                feature_columns: ["mean", "se", "worst"]
                    .iter()
                    .flat_map(|kind| WDBC_BASES.iter().map(move |b| format!("{b}_{kind}")))
                    .collect(),
                label_column: "diagnosis".into(),
                label_rule: LabelRule::Lookup(vec![("M".into(), 1), ("B".into(), 0)]),
                missing_marker: "?".into(),
                row_id_column: None,
            },
            DatasetName::Pima => DatasetSchema {
                name: Some(name),
                feature_columns: PIMA_COLUMNS.iter().map(|s| s.to_string()).collect(),
                label_column: "Outcome".into(),
                label_rule: LabelRule::binary(),
                missing_marker: "?".into(),
                row_id_column: None,
            },
            DatasetName::HeartCleveland => DatasetSchema {
                name: Some(name),
                feature_columns: HEART_COLUMNS.iter().map(|s| s.to_string()).collect(),
                label_column: "num".into(),
                label_rule: LabelRule::HeartSeverity,
                missing_marker: "?".into(),
                row_id_column: None,
            },
        }
    }

    /// Schema of the `row_id,label,f0..f{D-1}` file written by
    /// [`TabularDataset::write_clean_csv`].
    pub fn cleaned(n_features: usize) -> Self {
        DatasetSchema {
            name: None,
            feature_columns: (0..n_features).map(|j| format!("f{j}")).collect(),
            label_column: "label".into(),
            label_rule: LabelRule::binary(),
            missing_marker: "?".into(),
            row_id_column: Some("row_id".into()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() {
            return Err(Error::InvalidArgument(
                "schema has no feature columns".into(),
            ));
        }
        for (i, col) in self.feature_columns.iter().enumerate() {
            if self.feature_columns[..i].contains(col) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate feature column `{col}`"
                )));
            }
        }
        Ok(())
    }

    /// Label for display: the preset name, or `custom`.
    pub fn display_name(&self) -> &str {
        self.name.map(|n| n.as_str()).unwrap_or("custom")
    }
}

/// A cleaned binary classification table.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub row_ids: Vec<usize>,
    pub schema: DatasetSchema,
}

impl TabularDataset {
    pub fn new(x: Array2<f64>, y: Vec<u8>, schema: DatasetSchema) -> Result<Self> {
        let row_ids = (0..y.len()).collect();
        Self::with_row_ids(x, y, row_ids, schema)
    }

    pub fn with_row_ids(
        x: Array2<f64>,
        y: Vec<u8>,
        row_ids: Vec<usize>,
        schema: DatasetSchema,
    ) -> Result<Self> {
        if x.nrows() != y.len() || row_ids.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.ncols() != schema.feature_columns.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.feature_columns.len(),
                got: x.ncols(),
            });
        }
        if let Some(bad) = y.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not binary")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let [neg, pos] = class_counts(&y);
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass(if pos == 0 { 0 } else { 1 }));
        }
        Ok(TabularDataset {
            x,
            y,
            row_ids,
            schema,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// `[negatives, positives]`.
    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.y)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.class_counts()[1] as f64 / self.n_rows() as f64
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    /// Write `row_id,label,f0..f{D-1}`. Values use the shortest exact decimal
    /// form, so re-loading reproduces the matrix bit for bit.
    pub fn write_clean_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row_id".to_string(), "label".to_string()];
        header.extend((0..self.n_features()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (i, row) in self.x.outer_iter().enumerate() {
            let mut rec = vec![self.row_ids[i].to_string(), self.y[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn class_counts(y: &[u8]) -> [usize; 2] {
    let pos = y.iter().filter(|&&l| l == 1).count();
    [y.len() - pos, pos]
}

/// Load a CSV with a header row, dropping any row whose feature cells hold
/// the missing marker (or are blank).
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<TabularDataset> {
    let path = path.as_ref();
    schema.validate()?;
    if !path.exists() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::HeaderMismatch(name.to_string()))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_column)?;
    let row_id_idx = schema.row_id_column.as_deref().map(column).transpose()?;

    let d = feature_idx.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut row_ids = Vec::new();
    let mut dropped = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let missing = feature_idx.iter().any(|&j| {
            let c = cell(j);
            c.is_empty() || c == schema.missing_marker
        });
        if missing {
            dropped += 1;
            continue;
        }
        let raw_label = cell(label_idx);
        let label = schema
            .label_rule
            .apply(raw_label)
            .ok_or_else(|| Error::UnknownLabel {
                raw: raw_label.to_string(),
                row,
            })?;
        for &j in &feature_idx {
            let v: f64 = cell(j).parse().map_err(|_| {
                Error::Format(format!(
                    "row {row}, column `{}`: cannot parse `{}` as a number",
                    &headers[j],
                    cell(j)
                ))
            })?;
            values.push(v);
        }
        let id = match row_id_idx {
            Some(j) => cell(j)
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: bad row_id `{}`", cell(j))))?,
            None => row,
        };
        labels.push(label);
        row_ids.push(id);
    }

    let n = labels.len();
    let x = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::Format(format!("feature matrix: {e}")))?;
    let [neg, pos] = class_counts(&labels);
    info!(
        "loaded {} from {}: {n} rows ({dropped} dropped for missing values), {d} features, {pos} positive / {neg} negative",
        schema.display_name(),
        path.display()
    );
    TabularDataset::with_row_ids(x, labels, row_ids, schema.clone())
}

/// Train/validation partition as positions into a [`TabularDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded stratified split. The train size is `round(train_fraction * N)`,
/// shared among the classes by largest remainder so every class lands within
/// one sample of its exact quota. Index lists are returned sorted.
pub fn stratified_split(
    ds: &TabularDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut members: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &label) in ds.y.iter().enumerate() {
        members[label as usize].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: class as u8,
                count: m.len(),
            });
        }
    }

    let n = ds.n_rows() as f64;
    let total = (train_fraction * n + 0.5 + ROUNDING_SLACK).floor() as usize;
    let quotas: Vec<f64> = members
        .iter()
        .map(|m| train_fraction * m.len() as f64)
        .collect();
    let mut take: Vec<usize> = quotas
        .iter()
        .map(|q| (q + ROUNDING_SLACK).floor() as usize)
        .collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - take[a] as f64;
        let rb = quotas[b] - take[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(2 * order.len()) {
        if remaining == 0 {
            break;
        }
        if take[c] < members[c].len() - 1 {
            take[c] += 1;
            remaining -= 1;
        }
    }
    // every class keeps at least one row on each side
    for (c, m) in members.iter().enumerate() {
        take[c] = take[c].clamp(1, m.len() - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(total);
    let mut val = Vec::with_capacity(ds.n_rows() - total);
    for (c, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..take[c]]);
        val.extend_from_slice(&m[take[c]..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices {
        train,
        val,
        seed,
        train_fraction,
    })
}

/// Per-column z-score parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Fit mean and population standard deviation on the given rows only.
/// Columns with zero variance get `std = 1`.
pub fn fit_scaler(ds: &TabularDataset, idx: &[usize]) -> Result<Scaler> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a scaler on zero rows".into(),
        ));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= ds.n_rows()) {
        return Err(Error::InvalidArgument(format!(
            "row index {bad} out of range for {} rows",
            ds.n_rows()
        )));
    }
    let rows = ds.x.select(Axis(0), idx);
    let n = idx.len() as f64;
    let mean = rows.sum_axis(Axis(0)) / n;
    let std = rows
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, &m)| {
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(Scaler { mean, std })
}

/// `out[i][j] = (x[i][j] - mean[j]) / std[j]`
pub fn apply_scaler(scaler: &Scaler, x: &Array2<f64>) -> Result<Array2<f64>> {
    scaler.check_dim(x)?;
    Ok((x - &scaler.mean) / &scaler.std)
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn invert(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(z)?;
        Ok(z * &self.std + &self.mean)
    }

    fn check_dim(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }
}
