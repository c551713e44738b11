//! Frozen feature vectors consumed by the variational head.
//!
//! Binary embedding files ("VBLE") have this little-endian layout:
//!
//! ```text
//! magic     4 bytes  "VBLE"
//! version   u32      1
//! n_rows    u32
//! dim       u32
//! has_lbls  u8       0 or 1
//! payload   n_rows * dim f32, row-major
//! labels    n_rows u8 (only when has_lbls = 1)
//! trailer   optional UTF-8 text, `key=value` per line
//! ```
//!
//! Rows of a binary file are positional: row `i` is the `i`-th row of the
//! cleaned dataset. The CSV fallback (`row_id,label,e0..e{H-1}`) is keyed by
//! row id instead.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{apply_scaler, Scaler, TabularDataset};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"VBLE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Raw,
    RandomProjection,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub e: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub labels: Option<Vec<u8>>,
    pub source: FeatureKind,
    /// True when `row_ids` were read from the file rather than implied by
    /// row position.
    pub keyed_by_row_id: bool,
    pub trailer: Vec<u8>,
}

impl EmbeddingSet {
    pub fn n_rows(&self) -> usize {
        self.e.nrows()
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.e.select(Axis(0), idx)
    }

    /// `key=value` pairs from the text trailer, in file order.
    pub fn trailer_entries(&self) -> Vec<(String, String)> {
        String::from_utf8_lossy(&self.trailer)
            .lines()
            .filter_map(|l| {
                let (k, v) = l.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect()
    }

    pub fn trailer_value(&self, key: &str) -> Option<String> {
        self.trailer_entries()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    /// Reorder (CSV sets) or relabel (binary sets) so that row `i` matches
    /// row `i` of `ds`. Labels carried by the file must agree with the
    /// dataset.
    pub fn align_to(&self, ds: &TabularDataset) -> Result<EmbeddingSet> {
        let aligned = if self.keyed_by_row_id {
            let mut pos = std::collections::HashMap::with_capacity(self.n_rows());
            for (i, &id) in self.row_ids.iter().enumerate() {
                pos.insert(id, i);
            }
            let idx = ds
                .row_ids
                .iter()
                .map(|id| pos.get(id).copied().ok_or(Error::MissingRow(*id)))
                .collect::<Result<Vec<_>>>()?;
            EmbeddingSet {
                e: self.e.select(Axis(0), &idx),
                row_ids: ds.row_ids.clone(),
                labels: self
                    .labels
                    .as_ref()
                    .map(|l| idx.iter().map(|&i| l[i]).collect()),
                source: self.source,
                keyed_by_row_id: true,
                trailer: self.trailer.clone(),
            }
        } else {
            if self.n_rows() != ds.n_rows() {
                return Err(Error::DimensionMismatch {
                    expected: ds.n_rows(),
                    got: self.n_rows(),
                });
            }
            EmbeddingSet {
                row_ids: ds.row_ids.clone(),
                ..self.clone()
            }
        };
        if let Some(labels) = &aligned.labels {
            if let Some(i) = (0..labels.len()).find(|&i| labels[i] != ds.y[i]) {
                return Err(Error::Format(format!(
                    "embedding label {} disagrees with dataset label {} at row_id {}",
                    labels[i], ds.y[i], ds.row_ids[i]
                )));
            }
        }
        Ok(aligned)
    }
}

/// Standardized raw features used directly as the frozen representation.
pub fn raw_features(ds: &TabularDataset, scaler: &Scaler) -> Result<EmbeddingSet> {
    Ok(EmbeddingSet {
        e: apply_scaler(scaler, &ds.x)?,
        row_ids: ds.row_ids.clone(),
        labels: Some(ds.y.clone()),
        source: FeatureKind::Raw,
        keyed_by_row_id: false,
        trailer: Vec::new(),
    })
}

/// `[D x K]` matrix of i.i.d. `N(0, 1) / sqrt(D)` entries.
pub fn projection_matrix(in_dim: usize, target_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (in_dim as f64).sqrt();
    Array2::from_shape_simple_fn((in_dim, target_dim), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// Standardized features multiplied by a seeded Gaussian projection.
pub fn random_projection(
    ds: &TabularDataset,
    scaler: &Scaler,
    target_dim: usize,
    seed: u64,
) -> Result<EmbeddingSet> {
    if target_dim == 0 {
        return Err(Error::InvalidArgument(
            "projection width must be at least 1".into(),
        ));
    }
    let z = apply_scaler(scaler, &ds.x)?;
    let p = projection_matrix(z.ncols(), target_dim, seed);
    Ok(EmbeddingSet {
        e: z.dot(&p),
        row_ids: ds.row_ids.clone(),
        labels: Some(ds.y.clone()),
        source: FeatureKind::RandomProjection,
        keyed_by_row_id: false,
        trailer: Vec::new(),
    })
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let (n, d) = set.e.dim();
    let label_bytes = set.labels.as_ref().map_or(0, |l| l.len());
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + label_bytes + set.trailer.len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.push(u8::from(set.labels.is_some()));
    for v in set.e.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(labels) = &set.labels {
        out.extend_from_slice(labels);
    }
    out.extend_from_slice(&set.trailer);
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "embedding header truncated: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"VBLE\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!(
            "unsupported embedding version {version}"
        )));
    }
    let n = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let has_labels = match bytes[16] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("has_labels flag {other} is not 0/1"))),
    };
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty embedding set ({n} x {d})")));
    }
    let payload_end = HEADER_LEN + n * d * 4;
    let labels_end = payload_end + if has_labels { n } else { 0 };
    if bytes.len() < labels_end {
        return Err(Error::Format(format!(
            "truncated payload: need {labels_end} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in bytes[HEADER_LEN..payload_end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "embedding value at row {}, column {}",
                i / d,
                i % d
            )));
        }
        values.push(v as f64);
    }
    let labels = if has_labels {
        let l = bytes[payload_end..labels_end].to_vec();
        if let Some(i) = l.iter().position(|&b| b > 1) {
            return Err(Error::Format(format!(
                "label byte {} at row {i} is not 0/1",
                l[i]
            )));
        }
        Some(l)
    } else {
        None
    };
    Ok(EmbeddingSet {
        e: Array2::from_shape_vec((n, d), values).expect("shape checked above"),
        row_ids: (0..n).collect(),
        labels,
        source: FeatureKind::External,
        keyed_by_row_id: false,
        trailer: bytes[labels_end..].to_vec(),
    })
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_embeddings(set)).map_err(|e| Error::io(path, e))
}

/// Load a binary VBLE file, or a `row_id,label,e0..` CSV when the path ends
/// in `.csv`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let is_csv = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"));
    if is_csv {
        return load_embeddings_csv(path);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

fn load_embeddings_csv(path: &Path) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "row_id" || &headers[1] != "label" {
        return Err(Error::Format(
            "embedding CSV header must start with row_id,label,e0".into(),
        ));
    }
    let dim = headers.len() - 2;
    let mut values = Vec::new();
    let mut row_ids = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Format(format!("embedding CSV row {line}: bad {what}"));
        row_ids.push(record[0].parse().map_err(|_| bad("row_id"))?);
        match &record[1] {
            "0" => labels.push(0),
            "1" => labels.push(1),
            _ => return Err(bad("label")),
        }
        for cell in record.iter().skip(2) {
            let v: f64 = cell.parse().map_err(|_| bad("value"))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("embedding CSV row {line}")));
            }
            values.push(v);
        }
    }
    let n = row_ids.len();
    if n == 0 {
        return Err(Error::Format("empty embedding set".into()));
    }
    Ok(EmbeddingSet {
        e: Array2::from_shape_vec((n, dim), values)
            .map_err(|e| Error::Format(format!("embedding CSV shape: {e}")))?,
        row_ids,
        labels: Some(labels),
        source: FeatureKind::External,
        keyed_by_row_id: true,
        trailer: Vec::new(),
    })
}
