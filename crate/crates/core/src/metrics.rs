//! Binary classification and calibration metrics.
//!
//! All metrics take the predicted probability of the positive class. ECE and
//! the reliability table bin that probability (not the max-class confidence)
//! into equal-width bins over `[0, 1]`; bin `b` is `[b/n, (b+1)/n)` and the
//! last bin also holds `p = 1`.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const LOG_CLAMP_EPS: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 40;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub p_pos: Vec<f64>,
    pub y: Vec<u8>,
}

impl PredictionSet {
    pub fn new(p_pos: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        if p_pos.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: p_pos.len(),
            });
        }
        if p_pos.is_empty() {
            return Err(Error::InvalidArgument("no predictions".into()));
        }
        if let Some(i) = p_pos.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "probability {} at row {i} outside [0, 1]",
                p_pos[i]
            )));
        }
        if let Some(i) = y.iter().position(|&l| l > 1) {
            return Err(Error::InvalidArgument(format!(
                "label {} at row {i} is not binary",
                y[i]
            )));
        }
        Ok(PredictionSet { p_pos, y })
    }

    /// Take column 1 of an `N x 2` probability matrix.
    pub fn from_probs(probs: &Array2<f64>, y: Vec<u8>) -> Result<Self> {
        if probs.ncols() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: probs.ncols(),
            });
        }
        // rounding in the MC average can push p a hair outside [0, 1]
        let p = probs.column(1).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        PredictionSet::new(p, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Threshold at `p >= threshold`; precision, recall and F1 with a zero
/// denominator are reported as 0.
pub fn classification_report(pred: &PredictionSet, threshold: f64) -> ClassificationReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in pred.p_pos.iter().zip(&pred.y) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassificationReport {
        accuracy: ratio(tp + tn, pred.len()),
        precision,
        recall,
        f1,
    }
}

/// Mann-Whitney AUC with average ranks for tied scores.
pub fn auc_roc(pred: &PredictionSet) -> Result<f64> {
    let n_pos = pred.y.iter().filter(|&&l| l == 1).count();
    let n_neg = pred.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(if n_pos == 0 { 0 } else { 1 }));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred.p_pos[a].total_cmp(&pred.p_pos[b]));

    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len()
            && pred.p_pos[order[end]].total_cmp(&pred.p_pos[order[start]]) == Ordering::Equal
        {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| pred.y[i] == 1)
            .count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        start = end;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[LOG_CLAMP_EPS, 1 - LOG_CLAMP_EPS]`.
pub fn nll(pred: &PredictionSet) -> f64 {
    let total: f64 = pred
        .p_pos
        .iter()
        .zip(&pred.y)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / pred.len() as f64
}

/// Binary Brier score, `mean((p - y)^2)`.
pub fn brier(pred: &PredictionSet) -> f64 {
    let total: f64 = pred
        .p_pos
        .iter()
        .zip(&pred.y)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum();
    total / pred.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EceWeighting {
    /// Bins weighted by the fraction of samples they hold.
    #[default]
    MassWeighted,
    /// Unweighted mean over the non-empty bins.
    BinMean,
}

impl fmt::Display for EceWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EceWeighting::MassWeighted => "mass",
            EceWeighting::BinMean => "binmean",
        })
    }
}

impl FromStr for EceWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" | "mass_weighted" => Ok(EceWeighting::MassWeighted),
            "binmean" | "bin_mean" => Ok(EceWeighting::BinMean),
            other => Err(Error::InvalidArgument(format!(
                "unknown ECE weighting `{other}`"
            ))),
        }
    }
}

/// Equal-width bin holding `p`.
pub fn bin_index(p: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut b = ((p * n).floor().max(0.0) as usize).min(n_bins - 1);
    // keep the float product consistent with the edges b / n
    if b > 0 && p < b as f64 / n {
        b -= 1;
    } else if b + 1 < n_bins && p >= (b + 1) as f64 / n {
        b += 1;
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean predicted probability; `None` for an empty bin.
    pub confidence: Option<f64>,
    /// Observed positive rate; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBins {
    pub n_bins: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn non_empty(&self) -> impl Iterator<Item = &ReliabilityBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }

    pub fn ece(&self, weighting: EceWeighting) -> f64 {
        let gaps = self.non_empty().map(|b| {
            let gap = (b.accuracy.unwrap() - b.confidence.unwrap()).abs();
            (b.count, gap)
        });
        match weighting {
            EceWeighting::MassWeighted => {
                let n = self.total_count() as f64;
                gaps.map(|(c, g)| c as f64 / n * g).sum()
            }
            EceWeighting::BinMean => {
                let (k, sum) = gaps.fold((0usize, 0.0), |(k, s), (_, g)| (k + 1, s + g));
                if k == 0 {
                    0.0
                } else {
                    sum / k as f64
                }
            }
        }
    }

    /// `bin_lo,bin_hi,count,conf,acc`; empty bins leave conf/acc blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,count,conf,acc")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for b in &self.bins {
            writeln!(
                w,
                "{:.6},{:.6},{},{},{}",
                b.lo,
                b.hi,
                b.count,
                opt(b.confidence),
                opt(b.accuracy)
            )?;
        }
        Ok(())
    }
}

pub fn reliability_bins(pred: &PredictionSet, n_bins: usize) -> Result<ReliabilityBins> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    for (&p, &y) in pred.p_pos.iter().zip(&pred.y) {
        let b = bin_index(p, n_bins);
        count[b] += 1;
        conf[b] += p;
        pos[b] += y as usize;
    }
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            let mean = |s: f64| (c > 0).then(|| s / c as f64);
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: c,
                confidence: mean(conf[b]),
                accuracy: mean(pos[b] as f64),
            }
        })
        .collect();
    Ok(ReliabilityBins { n_bins, bins })
}

pub fn ece(pred: &PredictionSet, n_bins: usize, weighting: EceWeighting) -> Result<f64> {
    Ok(reliability_bins(pred, n_bins)?.ece(weighting))
}

/// One row of a results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece_mass: f64,
    pub ece_bin_mean: f64,
}

pub const CSV_HEADER: &str = "config,acc,f1,auc,nll,brier,ece";
pub const CSV_HEADER_EXTENDED: &str =
    "config,acc,precision,recall,f1,auc,nll,brier,ece_mass,ece_binmean";

impl MetricsReport {
    pub fn ece(&self, weighting: EceWeighting) -> f64 {
        match weighting {
            EceWeighting::MassWeighted => self.ece_mass,
            EceWeighting::BinMean => self.ece_bin_mean,
        }
    }

    /// Range checks on every field; returns the name of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let unit = [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("auc_roc", self.auc_roc),
            ("brier", self.brier),
            ("ece_mass", self.ece_mass),
            ("ece_bin_mean", self.ece_bin_mean),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.nll >= 0.0 && self.nll.is_finite()) {
            return Err(format!(
                "nll = {} is not a finite non-negative value",
                self.nll
            ));
        }
        Ok(())
    }

    pub fn csv_row(&self, config: &str, weighting: EceWeighting) -> String {
        format!(
            "{config},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.accuracy,
            self.f1,
            self.auc_roc,
            self.nll,
            self.brier,
            self.ece(weighting)
        )
    }

    pub fn csv_row_extended(&self, config: &str) -> String {
        format!(
            "{config},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.auc_roc,
            self.nll,
            self.brier,
            self.ece_mass,
            self.ece_bin_mean
        )
    }

    pub fn table_row(&self, config: &str, weighting: EceWeighting) -> String {
        format!(
            "{config:<9}{:>7.3}{:>7.3}{:>7.3}{:>7.3}{:>7.3}{:>7.3}",
            self.accuracy,
            self.f1,
            self.auc_roc,
            self.nll,
            self.brier,
            self.ece(weighting)
        )
    }
}

/// Every metric plus the reliability table, at threshold 0.5.
pub fn evaluate(pred: &PredictionSet, n_bins: usize) -> Result<(MetricsReport, ReliabilityBins)> {
    let cls = classification_report(pred, DEFAULT_THRESHOLD);
    let bins = reliability_bins(pred, n_bins)?;
    let report = MetricsReport {
        accuracy: cls.accuracy,
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        auc_roc: auc_roc(pred)?,
        nll: nll(pred),
        brier: brier(pred),
        ece_mass: bins.ece(EceWeighting::MassWeighted),
        ece_bin_mean: bins.ece(EceWeighting::BinMean),
    };
    Ok((report, bins))
}
