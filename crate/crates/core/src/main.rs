use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vbll_calib::experiment::{
    baseline_note, join_predictions, load_labels, load_probabilities, run_grid, BaselineSpec,
    ConfigSpec, DatasetSpec, ExperimentManifest,
};
use vbll_calib::head::ConfigPreset;
use vbll_calib::metrics::{evaluate, CSV_HEADER_EXTENDED, DEFAULT_BINS};
use vbll_calib::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vbll",
    version,
    about = "Variational Bayesian last-layer calibration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baseline and VBLL configs on one or more datasets.
    Run {
        /// Comma-separated dataset names or CSV paths (NAME, NAME:PATH or PATH).
        #[arg(long)]
        dataset: Option<String>,
        /// Directory searched for datasets given by name.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// raw | proj:K | file:PATH (`{dataset}` is substituted in PATH).
        #[arg(long, default_value = "raw")]
        features: String,
        /// Comma-separated presets, or `none`.
        #[arg(long, default_value = "C1,C2,C3,C4,C5")]
        configs: String,
        /// map | probs:PATH | none
        #[arg(long, default_value = "map")]
        baseline: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// mass | binmean
        #[arg(long, default_value = "mass")]
        ece_weighting: String,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// TOML manifest; replaces the options above.
        #[arg(long, conflicts_with = "dataset")]
        manifest: Option<PathBuf>,
    },
    /// Score a `row_id,p_pos` file against a `row_id,label` file.
    Metrics {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Write a cleaned dataset as `row_id,label,f0..f{D-1}`.
    ExportClean {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            dataset,
            data_dir,
            features,
            configs,
            baseline,
            seed,
            out,
            ece_weighting,
            bins,
            manifest,
        } => {
            let m = match manifest {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let base = path.parent().unwrap_or(Path::new("."));
                    ExperimentManifest::from_toml(&text, base)?
                }
                None => {
                    let dataset = dataset.ok_or_else(|| {
                        Error::InvalidArgument("either --dataset or --manifest is required".into())
                    })?;
                    let datasets = dataset
                        .split(',')
                        .map(|d| DatasetSpec::resolve(d.trim(), &data_dir))
                        .collect::<Result<Vec<_>>>()?;
                    let mut m = ExperimentManifest::new(datasets, out);
                    m.features = features.parse()?;
                    m.configs = if configs == "none" {
                        Vec::new()
                    } else {
                        configs
                            .split(',')
                            .map(|c| c.parse::<ConfigPreset>().map(ConfigSpec::Preset))
                            .collect::<Result<Vec<_>>>()?
                    };
                    m.baseline = match baseline.as_str() {
                        "none" => None,
                        b => Some(b.parse::<BaselineSpec>()?),
                    };
                    m.seed = seed;
                    m.ece_weighting = ece_weighting.parse()?;
                    m.n_bins = bins;
                    m
                }
            };
            let result = run_grid(&m)?;
            for t in &result.tables {
                println!(
                    "{}",
                    t.to_text(
                        m.ece_weighting,
                        m.baseline.as_ref().map(baseline_note).unwrap_or("")
                    )
                );
            }
            println!("artifacts written to {}", m.output_dir.display());
            Ok(())
        }
        Command::Metrics {
            probs,
            labels,
            bins,
        } => {
            let pred = join_predictions(&load_probabilities(probs)?, &load_labels(labels)?)?;
            let (report, _) = evaluate(&pred, bins)?;
            println!("{CSV_HEADER_EXTENDED}");
            println!("{}", report.csv_row_extended("scored"));
            Ok(())
        }
        Command::ExportClean {
            dataset,
            data_dir,
            out,
        } => {
            let spec = DatasetSpec::resolve(&dataset, &data_dir)?;
            let ds = spec.load()?;
            ds.write_clean_csv(&out)?;
            println!("{} rows written to {}", ds.n_rows(), out.display());
            Ok(())
        }
    }
}
