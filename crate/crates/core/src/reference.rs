//! Published results for the pretrained-model pipeline, printed under the
//! summary tables for side-by-side reading. They come from embeddings and
//! splits not available here and are never asserted against.

use crate::data::DatasetName;

/// `(config, acc, f1, auc, nll, brier, ece)`
pub type ReferenceRow = (&'static str, f64, f64, f64, f64, f64, f64);

const BREAST_CANCER: [ReferenceRow; 6] = [
    ("Baseline", 0.982, 0.986, 0.997, 0.054, 0.015, 0.189),
    ("C1", 0.977, 0.982, 0.998, 0.357, 0.095, 0.312),
    ("C2", 0.977, 0.982, 0.998, 0.356, 0.094, 0.305),
    ("C3", 0.977, 0.982, 0.998, 0.395, 0.110, 0.342),
    ("C4", 0.977, 0.982, 0.998, 0.365, 0.098, 0.341),
    ("C5", 0.982, 0.986, 0.998, 0.378, 0.103, 0.333),
];

// 0.318 is a measured ECE, not 1/pi
#[allow(clippy::approx_constant)]
const PIMA: [ReferenceRow; 6] = [
    ("Baseline", 0.753, 0.632, 0.808, 0.516, 0.171, 0.072),
    ("C1", 0.719, 0.667, 0.803, 0.745, 0.274, 0.327),
    ("C2", 0.723, 0.667, 0.802, 0.738, 0.271, 0.318),
    ("C3", 0.723, 0.670, 0.804, 0.750, 0.277, 0.325),
    ("C4", 0.762, 0.667, 0.804, 0.710, 0.258, 0.301),
    ("C5", 0.758, 0.667, 0.804, 0.713, 0.259, 0.296),
];

const HEART_CLEVELAND: [ReferenceRow; 6] = [
    ("Baseline", 0.846, 0.863, 0.909, 0.390, 0.114, 0.220),
    ("C1", 0.868, 0.885, 0.915, 0.534, 0.172, 0.303),
    ("C2", 0.868, 0.885, 0.915, 0.534, 0.173, 0.304),
    ("C3", 0.868, 0.885, 0.913, 0.552, 0.181, 0.301),
    ("C4", 0.868, 0.885, 0.912, 0.541, 0.176, 0.298),
    ("C5", 0.868, 0.885, 0.914, 0.538, 0.174, 0.299),
];

pub fn reference_rows(name: DatasetName) -> &'static [ReferenceRow] {
    match name {
        DatasetName::BreastCancer => &BREAST_CANCER,
        DatasetName::Pima => &PIMA,
        DatasetName::HeartCleveland => &HEART_CLEVELAND,
    }
}

pub fn reference_row(name: DatasetName, config: &str) -> Option<ReferenceRow> {
    reference_rows(name).iter().copied().find(|r| r.0 == config)
}
