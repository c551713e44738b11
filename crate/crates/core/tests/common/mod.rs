#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const PIMA_ROWS: usize = 768;
pub const PIMA_POSITIVES: usize = 268;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// A PIMA-shaped table (768 rows, 268 positives, the usual column names and
/// zero-coded gaps) with labels that depend on glucose, BMI and age.
pub fn synthetic_pima_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(768);
    let mut labels = vec![0u8; PIMA_ROWS];
    labels[..PIMA_POSITIVES].iter_mut().for_each(|l| *l = 1);
    // deterministic shuffle
    for i in (1..PIMA_ROWS).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = String::from(
        "Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,DiabetesPedigreeFunction,Age,Outcome\n",
    );
    for &y in &labels {
        let shift = if y == 1 { 1.0 } else { 0.0 };
        let mut z = || -> f64 { noise.sample(&mut rng) };
        let preg = (3.8 + 1.2 * shift + 3.3 * z()).round().max(0.0);
        let glucose = (110.0 + 31.0 * shift + 26.0 * z())
            .round()
            .clamp(44.0, 199.0);
        let bp = (70.0 + 2.0 * shift + 12.0 * z()).round().clamp(24.0, 122.0);
        let skin = (20.0 + 3.0 * shift + 15.0 * z()).round().max(0.0);
        let insulin = (70.0 + 30.0 * shift + 100.0 * z()).round().max(0.0);
        let bmi = ((30.3 + 4.8 * shift + 7.0 * z()) * 10.0).round() / 10.0;
        let dpf = ((0.43 + 0.12 * shift + 0.3 * z()).abs() * 1000.0).round() / 1000.0;
        let age = (31.0 + 6.0 * shift + 11.0 * z()).round().clamp(21.0, 81.0);
        let _ = writeln!(
            out,
            "{preg},{glucose},{bp},{skin},{insulin},{bmi},{dpf},{age},{y}"
        );
    }
    out
}

/// Writes the synthetic PIMA table to `dir/pima.csv` and returns its path.
pub fn write_synthetic_pima(dir: &Path) -> PathBuf {
    let path = dir.join("pima.csv");
    std::fs::write(&path, synthetic_pima_csv()).unwrap();
    path
}
