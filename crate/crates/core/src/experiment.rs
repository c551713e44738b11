//! Baseline-vs-presets experiment grid.
//!
//! For each dataset: load and clean, split 70/30 (stratified, seeded), fit
//! the scaler on the train rows, build the frozen features, then score the
//! baseline and every requested config on the validation rows. Config `i`
//! (0-based, in manifest order) trains with seed `seed ^ i`, so configs are
//! independent and may run in parallel without changing any output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::data::{
    fit_scaler, load_dataset, stratified_split, DatasetName, DatasetSchema, SplitIndices,
    TabularDataset, DEFAULT_SPLIT_SEED, DEFAULT_TRAIN_FRACTION,
};
use crate::error::{Error, Result};
use crate::features::{load_embeddings, random_projection, raw_features, EmbeddingSet};
use crate::head::{map_predictive, predictive_probs, ConfigPreset, TrainConfig, VbllParams};
use crate::metrics::{
    evaluate, EceWeighting, MetricsReport, PredictionSet, ReliabilityBins, CSV_HEADER,
    CSV_HEADER_EXTENDED, DEFAULT_BINS,
};
use crate::optim::{train, TrainHistory};
use crate::reference::reference_rows;
use crate::svg::{emit_reliability_svg, render_grid_svg};

pub const BASELINE_ID: &str = "Baseline";

/// A dataset file plus the schema used to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub label: String,
    pub path: PathBuf,
    pub schema: DatasetSchema,
}

impl DatasetSpec {
    pub fn preset(name: DatasetName, path: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            label: name.to_string(),
            path: path.into(),
            schema: name.schema(),
        }
    }

    /// Accepts `NAME` (file looked up in `data_dir`), `NAME:PATH`, or a bare
    /// `PATH` whose header is matched against the built-in schemas.
    pub fn resolve(arg: &str, data_dir: &Path) -> Result<Self> {
        if let Ok(name) = arg.parse::<DatasetName>() {
            return Ok(DatasetSpec::preset(
                name,
                data_dir.join(name.default_file()),
            ));
        }
        if let Some((head, path)) = arg.split_once(':') {
            if let Ok(name) = head.parse::<DatasetName>() {
                return Ok(DatasetSpec::preset(name, path));
            }
        }
        let path = PathBuf::from(arg);
        if !path.exists() {
            return Err(Error::FileMissing(path));
        }
        let headers = csv::Reader::from_path(&path)?.headers()?.clone();
        let has = |c: &String| headers.iter().any(|h| h.trim() == c);
        DatasetName::ALL
            .into_iter()
            .find(|n| {
                let s = n.schema();
                s.feature_columns.iter().all(has) && has(&s.label_column)
            })
            .map(|n| DatasetSpec::preset(n, &path))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: header matches none of the built-in dataset schemas",
                    path.display()
                ))
            })
    }

    pub fn load(&self) -> Result<TabularDataset> {
        load_dataset(&self.path, &self.schema)
    }
}

/// Where the frozen features come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSpec {
    Raw,
    Projection(usize),
    /// Embedding file; `{dataset}` in the path is replaced by the dataset label.
    File(String),
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "raw" {
            return Ok(FeatureSpec::Raw);
        }
        if let Some(k) = s.strip_prefix("proj:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad projection width `{k}`")))?;
            if k == 0 {
                return Err(Error::InvalidArgument(
                    "projection width must be at least 1".into(),
                ));
            }
            return Ok(FeatureSpec::Projection(k));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(FeatureSpec::File(p.to_string()));
        }
        Err(Error::InvalidArgument(format!(
            "features must be raw, proj:K or file:PATH, got `{s}`"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineSpec {
    /// Deterministic softmax-regression head on the same features. This is a
    /// stand-in: the reference baseline is the pretrained model's own output,
    /// which only arrives through a probability file.
    BuiltinMap,
    /// `row_id,p_pos` CSV; `{dataset}` in the path is substituted.
    ExternalProbs(String),
}

impl FromStr for BaselineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "map" {
            return Ok(BaselineSpec::BuiltinMap);
        }
        if let Some(p) = s.strip_prefix("probs:") {
            return Ok(BaselineSpec::ExternalProbs(p.to_string()));
        }
        Err(Error::InvalidArgument(format!(
            "baseline must be map or probs:PATH, got `{s}`"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSpec {
    Preset(ConfigPreset),
    Custom { id: String, config: TrainConfig },
}

impl ConfigSpec {
    pub fn id(&self) -> String {
        match self {
            ConfigSpec::Preset(p) => p.to_string(),
            ConfigSpec::Custom { id, .. } => id.clone(),
        }
    }

    /// The concrete training config with the run seed substituted.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        match self {
            ConfigSpec::Preset(p) => p.config(seed),
            ConfigSpec::Custom { config, .. } => TrainConfig {
                seed,
                ..config.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub datasets: Vec<DatasetSpec>,
    pub features: FeatureSpec,
    pub configs: Vec<ConfigSpec>,
    pub baseline: Option<BaselineSpec>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ece_weighting: EceWeighting,
    pub n_bins: usize,
    pub train_fraction: f64,
}

impl ExperimentManifest {
    pub fn new(datasets: Vec<DatasetSpec>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentManifest {
            datasets,
            features: FeatureSpec::Raw,
            configs: ConfigPreset::ALL
                .iter()
                .copied()
                .map(ConfigSpec::Preset)
                .collect(),
            baseline: Some(BaselineSpec::BuiltinMap),
            seed: DEFAULT_SPLIT_SEED,
            output_dir: output_dir.into(),
            ece_weighting: EceWeighting::MassWeighted,
            n_bins: DEFAULT_BINS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() && self.baseline.is_none() {
            return Err(Error::InvalidArgument(
                "manifest requests neither a config nor a baseline".into(),
            ));
        }
        if self.datasets.is_empty() {
            return Err(Error::InvalidArgument("manifest names no dataset".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        let mut ids: Vec<String> = self.configs.iter().map(ConfigSpec::id).collect();
        ids.push(BASELINE_ID.into());
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "config id `{}` used twice",
                w[0]
            )));
        }
        for spec in &self.configs {
            spec.train_config(self.seed).validate()?;
        }
        Ok(())
    }

    /// Parse a TOML manifest. Relative paths resolve against `base_dir`.
    ///
    /// ```toml
    /// datasets = ["breast_cancer", "heart_cleveland"]
    /// data_dir = "data"
    /// features = "raw"
    /// configs = ["C1", "C4"]
    /// baseline = "map"
    /// seed = 42
    /// out = "results"
    ///
    /// [[custom]]
    /// id = "wide"
    /// init_logvar = -1.5
    /// weight_mu_coef = 0.1
    /// kl_mode = "linear"
    /// ```
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ManifestFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let data_dir = base_dir.join(file.data_dir.as_deref().unwrap_or("data"));
        let datasets = file
            .datasets
            .iter()
            .map(|d| DatasetSpec::resolve(d, &data_dir))
            .collect::<Result<Vec<_>>>()?;
        let mut m = ExperimentManifest::new(
            datasets,
            base_dir.join(file.out.as_deref().unwrap_or("results")),
        );
        if let Some(f) = &file.features {
            m.features = f.parse()?;
        }
        if let Some(configs) = &file.configs {
            m.configs = configs
                .iter()
                .map(|c| c.parse().map(ConfigSpec::Preset))
                .collect::<Result<Vec<_>>>()?;
        }
        for custom in file.custom {
            m.configs.push(ConfigSpec::Custom {
                id: custom.id,
                config: custom.config,
            });
        }
        m.baseline = match file.baseline.as_deref() {
            None => m.baseline,
            Some("none") => None,
            Some(b) => Some(b.parse()?),
        };
        if let Some(seed) = file.seed {
            m.seed = seed;
        }
        if let Some(w) = &file.ece_weighting {
            m.ece_weighting = w.parse()?;
        }
        if let Some(bins) = file.bins {
            m.n_bins = bins;
        }
        if let Some(f) = file.train_fraction {
            m.train_fraction = f;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    datasets: Vec<String>,
    data_dir: Option<String>,
    features: Option<String>,
    configs: Option<Vec<String>>,
    #[serde(default)]
    custom: Vec<CustomConfig>,
    baseline: Option<String>,
    seed: Option<u64>,
    out: Option<String>,
    ece_weighting: Option<String>,
    bins: Option<usize>,
    train_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct CustomConfig {
    id: String,
    #[serde(flatten)]
    config: TrainConfig,
}

/// Everything one trained config produced.
#[derive(Debug, Clone)]
pub struct ConfigOutcome {
    pub report: MetricsReport,
    pub bins: ReliabilityBins,
    pub predictions: PredictionSet,
    pub history: Option<TrainHistory>,
    pub params: Option<VbllParams>,
}

fn check_alignment(ds: &TabularDataset, emb: &EmbeddingSet) -> Result<()> {
    if emb.n_rows() != ds.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_rows(),
            got: emb.n_rows(),
        });
    }
    Ok(())
}

/// Train on the train rows, predict the validation rows with the
/// Monte-Carlo predictive, and score.
pub fn run_config(
    ds: &TabularDataset,
    emb: &EmbeddingSet,
    split: &SplitIndices,
    cfg: &TrainConfig,
    n_bins: usize,
) -> Result<ConfigOutcome> {
    check_alignment(ds, emb)?;
    let e_train = emb.e.select(Axis(0), &split.train);
    let (params, history) = train(cfg, e_train.view(), &ds.labels_at(&split.train))?;
    let e_val = emb.e.select(Axis(0), &split.val);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let probs = predictive_probs(&params, e_val.view(), cfg.eval_samples, &mut rng)?;
    let predictions = PredictionSet::from_probs(&probs, ds.labels_at(&split.val))?;
    let (report, bins) = evaluate(&predictions, n_bins)?;
    Ok(ConfigOutcome {
        report,
        bins,
        predictions,
        history: Some(history),
        params: Some(params),
    })
}

/// Baseline input: features for the builtin head, or probabilities keyed
/// by row id.
pub enum BaselineInput<'a> {
    Builtin { emb: &'a EmbeddingSet, seed: u64 },
    External(&'a HashMap<usize, f64>),
}

pub fn run_baseline(
    ds: &TabularDataset,
    input: BaselineInput<'_>,
    split: &SplitIndices,
    n_bins: usize,
) -> Result<ConfigOutcome> {
    match input {
        BaselineInput::Builtin { emb, seed } => {
            check_alignment(ds, emb)?;
            let cfg = TrainConfig::map_baseline(seed);
            let e_train = emb.e.select(Axis(0), &split.train);
            let (params, history) = train(&cfg, e_train.view(), &ds.labels_at(&split.train))?;
            let e_val = emb.e.select(Axis(0), &split.val);
            let probs = map_predictive(&params, e_val.view())?;
            let predictions = PredictionSet::from_probs(&probs, ds.labels_at(&split.val))?;
            let (report, bins) = evaluate(&predictions, n_bins)?;
            Ok(ConfigOutcome {
                report,
                bins,
                predictions,
                history: Some(history),
                params: Some(params),
            })
        }
        BaselineInput::External(probs) => {
            let p = split
                .val
                .iter()
                .map(|&i| {
                    let id = ds.row_ids[i];
                    probs.get(&id).copied().ok_or(Error::MissingRow(id))
                })
                .collect::<Result<Vec<_>>>()?;
            let predictions = PredictionSet::new(p, ds.labels_at(&split.val))?;
            let (report, bins) = evaluate(&predictions, n_bins)?;
            Ok(ConfigOutcome {
                report,
                bins,
                predictions,
                history: None,
                params: None,
            })
        }
    }
}

/// Read a `row_id,p_pos` CSV.
pub fn load_probabilities(path: impl AsRef<Path>) -> Result<HashMap<usize, f64>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "row_id" || &headers[1] != "p_pos" {
        return Err(Error::Format(format!(
            "{}: expected header row_id,p_pos",
            path.display()
        )));
    }
    let mut out = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::Format(format!("{} row {line}: bad value", path.display()));
        let id: usize = record[0].parse().map_err(|_| bad())?;
        let p: f64 = record[1].parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} for row_id {id} outside [0, 1]"
            )));
        }
        if out.insert(id, p).is_some() {
            return Err(Error::Format(format!("row_id {id} appears twice")));
        }
    }
    Ok(out)
}

/// Read a `row_id,label` CSV.
pub fn load_labels(path: impl AsRef<Path>) -> Result<HashMap<usize, u8>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileMissing(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::Format(format!("{} row {line}: bad value", path.display()));
        let id: usize = record.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let label: u8 = match record.get(1).ok_or_else(bad)? {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad()),
        };
        out.insert(id, label);
    }
    Ok(out)
}

/// Join probabilities with labels on row id, in ascending row-id order.
pub fn join_predictions(
    probs: &HashMap<usize, f64>,
    labels: &HashMap<usize, u8>,
) -> Result<PredictionSet> {
    let mut ids: Vec<usize> = probs.keys().copied().collect();
    ids.sort_unstable();
    let y = ids
        .iter()
        .map(|id| labels.get(id).copied().ok_or(Error::MissingRow(*id)))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(ids.iter().map(|id| probs[id]).collect(), y)
}

/// `row_id,p_pos` with the shortest exact decimal for each probability.
pub fn write_probabilities(path: impl AsRef<Path>, row_ids: &[usize], p: &[f64]) -> Result<()> {
    let mut text = String::from("row_id,p_pos\n");
    for (id, p) in row_ids.iter().zip(p) {
        let _ = writeln!(text, "{id},{p}");
    }
    write_file(path.as_ref(), text)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub id: String,
    pub outcome: ConfigOutcome,
}

/// One dataset's rows, baseline first, then configs in manifest order.
#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub dataset: String,
    pub dataset_name: Option<DatasetName>,
    pub n_rows: usize,
    pub n_val: usize,
    pub rows: Vec<ResultRow>,
    pub training_runs: usize,
    pub baseline_evaluations: usize,
}

impl ResultsTable {
    pub fn row(&self, id: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn to_csv(&self, weighting: EceWeighting) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&r.outcome.report.csv_row(&r.id, weighting));
            out.push('\n');
        }
        out
    }

    pub fn to_extended_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER_EXTENDED}\n");
        for r in &self.rows {
            out.push_str(&r.outcome.report.csv_row_extended(&r.id));
            out.push('\n');
        }
        out
    }

    /// Three-decimal text table with published values underneath when the
    /// dataset is one of the presets.
    pub fn to_text(&self, weighting: EceWeighting, baseline_note: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} (N = {}, validation = {}, ECE weighting = {weighting})",
            self.dataset, self.n_rows, self.n_val
        );
        let _ = writeln!(
            out,
            "{:<9}{:>7}{:>7}{:>7}{:>7}{:>7}{:>7}",
            "Config", "Acc", "F1", "AUC", "NLL", "Brier", "ECE"
        );
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.outcome.report.table_row(&r.id, weighting));
        }
        if self.row(BASELINE_ID).is_some() {
            let _ = writeln!(out, "Baseline: {baseline_note}");
        }
        if let Some(name) = self.dataset_name {
            let _ = writeln!(
                out,
                "\nPublished reference (pretrained-model embeddings, unknown split; not expected to match):"
            );
            for (id, acc, f1, auc, nll, brier, ece) in reference_rows(name) {
                let _ = writeln!(
                    out,
                    "{id:<9}{acc:>7.3}{f1:>7.3}{auc:>7.3}{nll:>7.3}{brier:>7.3}{ece:>7.3}"
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub tables: Vec<ResultsTable>,
}

fn substitute(template: &str, dataset: &str) -> PathBuf {
    PathBuf::from(template.replace("{dataset}", dataset))
}

fn build_features(
    m: &ExperimentManifest,
    spec: &DatasetSpec,
    ds: &TabularDataset,
    split: &SplitIndices,
) -> Result<EmbeddingSet> {
    let scaler = fit_scaler(ds, &split.train)?;
    match &m.features {
        FeatureSpec::Raw => raw_features(ds, &scaler),
        FeatureSpec::Projection(k) => random_projection(ds, &scaler, *k, m.seed),
        FeatureSpec::File(template) => {
            let emb = load_embeddings(substitute(template, &spec.label))?.align_to(ds)?;
            if let Some(s) = emb.trailer_value("split_seed") {
                if s != m.seed.to_string() {
                    warn!(
                        "{}: embedding file records split_seed={s}, run uses {}",
                        spec.label, m.seed
                    );
                }
            }
            Ok(emb)
        }
    }
}

pub fn baseline_note(spec: &BaselineSpec) -> &'static str {
    match spec {
        BaselineSpec::BuiltinMap => {
            "builtin deterministic softmax-regression head (stand-in for the pretrained model's own probabilities)"
        }
        BaselineSpec::ExternalProbs(_) => "external probabilities file",
    }
}

/// Run every dataset in the manifest and write its artifacts:
///
/// ```text
/// OUT/<dataset>/results.csv            config,acc,f1,auc,nll,brier,ece
/// OUT/<dataset>/results_extended.csv   + precision, recall, both ECEs
/// OUT/<dataset>/reliability_<id>.csv   bin_lo,bin_hi,count,conf,acc
/// OUT/<dataset>/reliability_<id>.svg
/// OUT/<dataset>/predictions_<id>.csv   row_id,p_pos for the validation rows
/// OUT/<dataset>/history_<id>.csv       epoch,loss,ce,kl,beta
/// OUT/<dataset>/summary.txt
/// OUT/reliability_grid.svg             rows = configs, columns = datasets
/// OUT/summary.txt
/// ```
pub fn run_grid(m: &ExperimentManifest) -> Result<GridResult> {
    m.validate()?;
    fs::create_dir_all(&m.output_dir).map_err(|e| Error::io(&m.output_dir, e))?;
    let mut tables = Vec::with_capacity(m.datasets.len());
    for spec in &m.datasets {
        let ds = spec.load()?;
        let split = stratified_split(&ds, m.train_fraction, m.seed)?;
        let emb = build_features(m, spec, &ds, &split)?;
        info!(
            "{}: {} train / {} validation rows, feature dim {}",
            spec.label,
            split.train.len(),
            split.val.len(),
            emb.dim()
        );

        let mut rows = Vec::new();
        let mut baseline_evaluations = 0;
        if let Some(b) = &m.baseline {
            let outcome = match b {
                BaselineSpec::BuiltinMap => run_baseline(
                    &ds,
                    BaselineInput::Builtin {
                        emb: &emb,
                        seed: m.seed,
                    },
                    &split,
                    m.n_bins,
                )?,
                BaselineSpec::ExternalProbs(template) => {
                    let probs = load_probabilities(substitute(template, &spec.label))?;
                    run_baseline(&ds, BaselineInput::External(&probs), &split, m.n_bins)?
                }
            };
            baseline_evaluations += 1;
            rows.push(ResultRow {
                id: BASELINE_ID.into(),
                outcome,
            });
        }

        let outcomes = m
            .configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let cfg = c.train_config(m.seed ^ i as u64);
                run_config(&ds, &emb, &split, &cfg, m.n_bins).map(|o| ResultRow {
                    id: c.id(),
                    outcome: o,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let training_runs = outcomes.len();
        rows.extend(outcomes);

        let table = ResultsTable {
            dataset: spec.label.clone(),
            dataset_name: spec.schema.name,
            n_rows: ds.n_rows(),
            n_val: split.val.len(),
            rows,
            training_runs,
            baseline_evaluations,
        };
        write_dataset_artifacts(m, &table, &ds, &split)?;
        tables.push(table);
    }
    write_grid_artifacts(m, &tables)?;
    Ok(GridResult { tables })
}

fn write_dataset_artifacts(
    m: &ExperimentManifest,
    table: &ResultsTable,
    ds: &TabularDataset,
    split: &SplitIndices,
) -> Result<()> {
    let dir = m.output_dir.join(&table.dataset);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("results.csv"), table.to_csv(m.ece_weighting))?;
    write_file(&dir.join("results_extended.csv"), table.to_extended_csv())?;
    let val_ids: Vec<usize> = split.val.iter().map(|&i| ds.row_ids[i]).collect();
    for r in &table.rows {
        let mut csv = Vec::new();
        r.outcome
            .bins
            .write_csv(&mut csv)
            .expect("writing to a Vec cannot fail");
        write_file(&dir.join(format!("reliability_{}.csv", r.id)), csv)?;
        emit_reliability_svg(
            &r.outcome.bins,
            &format!("{} / {}", r.id, table.dataset),
            dir.join(format!("reliability_{}.svg", r.id)),
        )?;
        write_probabilities(
            dir.join(format!("predictions_{}.csv", r.id)),
            &val_ids,
            &r.outcome.predictions.p_pos,
        )?;
        if let Some(h) = &r.outcome.history {
            h.save_csv(dir.join(format!("history_{}.csv", r.id)))?;
        }
    }
    let note = m.baseline.as_ref().map(baseline_note).unwrap_or("");
    write_file(
        &dir.join("summary.txt"),
        table.to_text(m.ece_weighting, note),
    )
}

fn write_grid_artifacts(m: &ExperimentManifest, tables: &[ResultsTable]) -> Result<()> {
    let mut row_labels: Vec<String> = Vec::new();
    for t in tables {
        for r in &t.rows {
            if !row_labels.contains(&r.id) {
                row_labels.push(r.id.clone());
            }
        }
    }
    let col_labels: Vec<String> = tables.iter().map(|t| t.dataset.clone()).collect();
    let cells: Vec<Vec<Option<&ReliabilityBins>>> = row_labels
        .iter()
        .map(|id| {
            tables
                .iter()
                .map(|t| t.row(id).map(|r| &r.outcome.bins))
                .collect()
        })
        .collect();
    write_file(
        &m.output_dir.join("reliability_grid.svg"),
        render_grid_svg(&row_labels, &col_labels, &cells),
    )?;
    let note = m.baseline.as_ref().map(baseline_note).unwrap_or("");
    let summary = tables
        .iter()
        .map(|t| t.to_text(m.ece_weighting, note))
        .collect::<Vec<_>>()
        .join("\n");
    write_file(&m.output_dir.join("summary.txt"), summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_spec_parsing() {
        assert_eq!("raw".parse::<FeatureSpec>().unwrap(), FeatureSpec::Raw);
        assert_eq!(
            "proj:16".parse::<FeatureSpec>().unwrap(),
            FeatureSpec::Projection(16)
        );
        assert_eq!(
            "file:emb/{dataset}.vble".parse::<FeatureSpec>().unwrap(),
            FeatureSpec::File("emb/{dataset}.vble".into())
        );
        assert!("proj:0".parse::<FeatureSpec>().is_err());
        assert!("pca".parse::<FeatureSpec>().is_err());
    }

    #[test]
    fn baseline_spec_parsing() {
        assert_eq!(
            "map".parse::<BaselineSpec>().unwrap(),
            BaselineSpec::BuiltinMap
        );
        assert_eq!(
            "probs:p.csv".parse::<BaselineSpec>().unwrap(),
            BaselineSpec::ExternalProbs("p.csv".into())
        );
        assert!("tabpfn".parse::<BaselineSpec>().is_err());
    }

    #[test]
    fn manifest_requires_something_to_run() {
        let mut m =
            ExperimentManifest::new(vec![DatasetSpec::preset(DatasetName::Pima, "x.csv")], "out");
        m.configs.clear();
        m.baseline = None;
        assert!(m.validate().is_err());
        m.baseline = Some(BaselineSpec::BuiltinMap);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn resolve_by_name() {
        let spec = DatasetSpec::resolve("wdbc", Path::new("data")).unwrap();
        assert_eq!(spec.path, Path::new("data/wdbc.csv"));
        let spec = DatasetSpec::resolve("pima:/tmp/p.csv", Path::new("data")).unwrap();
        assert_eq!(spec.path, Path::new("/tmp/p.csv"));
        assert_eq!(spec.schema.name, Some(DatasetName::Pima));
    }

    #[test]
    fn manifest_toml() {
        let text = r#"
            datasets = ["pima"]
            configs = ["C1", "c4"]
            baseline = "none"
            seed = 7
            ece_weighting = "binmean"

            [[custom]]
            id = "wide"
            init_logvar = -1.5
            weight_mu_coef = 0.1
            kl_mode = "linear"
        "#;
        let m = ExperimentManifest::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.baseline, None);
        assert_eq!(m.ece_weighting, EceWeighting::BinMean);
        assert_eq!(m.configs.len(), 3);
        assert_eq!(m.configs[2].id(), "wide");
        let cfg = m.configs[2].train_config(9);
        assert_eq!(
            (cfg.init_logvar, cfg.weight_mu_coef, cfg.seed),
            (-1.5, 0.1, 9)
        );
        assert_eq!(cfg.epochs, 50);
        assert_eq!(m.datasets[0].path, Path::new("/base/data/pima.csv"));
        assert!(ExperimentManifest::from_toml("datasets = []\nbogus = 1", Path::new(".")).is_err());
    }
}
