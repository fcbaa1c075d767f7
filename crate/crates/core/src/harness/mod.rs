//! Seeded experiment grid: per variant and run, build the training set,
//! train M members, evaluate the ensemble at every checkpoint epoch, then
//! aggregate over runs and write the CSV reports.

pub mod aggregate;
pub mod config;
pub mod eval;
pub mod report;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use aggregate::{AccuracyRow, HistogramRow, Measure, RecordRow, RunAccuracy};
pub use config::{member_seed, run_seed, shortcut_seed, EvalSplit, ExperimentConfig, Variant};
pub use eval::{evaluate_checkpoint, CheckpointEval};
pub use train::{train_member, EpochProgress, TrainSettings, TrainedMember};

use crate::data::{build_mnist3, inject_shortcut, DatasetKind, LabeledImageSet, Mnist3Splits, RawMnist};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const VARIANT_FILE: &str = "variant.toml";
pub const CONFIG_FILE: &str = "config.toml";

/// Progress callback: the variant being trained and one finished epoch.
pub type Progress<'a> = &'a (dyn Fn(Variant, &EpochProgress) + Sync);

/// Builds run `run`'s data for `variant`: a fresh balanced training sample
/// (seeded by the run seed) with the variant's shortcut injected. The test
/// splits never carry a shortcut.
pub fn prepare_run(cfg: &ExperimentConfig, raw: &RawMnist, variant: Variant, run: usize) -> Result<Mnist3Splits> {
    let mut splits = build_mnist3(raw, cfg.n_train, run_seed(cfg.base_seed, run))?;
    if variant.dataset != DatasetKind::Mnist3 {
        let seed = shortcut_seed(cfg.base_seed, run);
        splits.train = inject_shortcut(&splits.train, variant.dataset, variant.strength, seed)?;
    }
    splits.train.validate()?;
    Ok(splits)
}

/// Everything one variant produced, before aggregation.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub ensemble_size: usize,
    pub accuracies: Vec<RunAccuracy>,
    /// Ordered by run, checkpoint epoch, split (as configured), sample.
    pub records: Vec<RecordRow>,
    /// `(run, member, per-epoch mean training loss)`.
    pub losses: Vec<(usize, usize, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub variants: Vec<VariantOutcome>,
    pub accuracy: Vec<AccuracyRow>,
    pub histograms: Vec<HistogramRow>,
}

fn split_set(splits: &Mnist3Splits, split: EvalSplit) -> &LabeledImageSet {
    match split {
        EvalSplit::Ood => &splits.test_ood,
        EvalSplit::Ind => &splits.test_ind,
    }
}

/// Trains and evaluates every run of one variant. Members of a run train
/// concurrently under [`Execution::Parallel`]; runs go one after another.
pub fn run_variant(
    cfg: &ExperimentConfig,
    raw: &RawMnist,
    variant: Variant,
    exec: Execution,
    progress: Progress<'_>,
) -> Result<VariantOutcome> {
    let settings = TrainSettings::from_config(cfg);
    let mut out = VariantOutcome {
        variant,
        ensemble_size: cfg.ensemble_size,
        accuracies: Vec::new(),
        records: Vec::new(),
        losses: Vec::new(),
    };
    for run in 0..cfg.n_runs {
        let splits = prepare_run(cfg, raw, variant, run)?;
        let member_ids: Vec<usize> = (0..cfg.ensemble_size).collect();
        let report = |p: &EpochProgress| progress(variant, p);
        let members = exec.try_map(&member_ids, |&m| {
            train_member(&settings, &splits.train, run, m, member_seed(cfg.base_seed, run, m), &report)
        })?;
        for &epoch in &settings.checkpoints {
            let snapshot: Vec<_> = members
                .iter()
                .map(|m| m.snapshot(epoch).ok_or_else(|| Error::Config(format!("no snapshot at epoch {epoch}"))))
                .collect::<Result<_>>()?;
            for &split in &cfg.eval_splits {
                let ev = evaluate_checkpoint(&snapshot, split_set(&splits, split), split, exec)?;
                if let Some(accuracy) = ev.accuracy {
                    out.accuracies.push(RunAccuracy { run, epoch, accuracy });
                }
                out.records.extend(
                    ev.records.iter().enumerate().map(|(i, r)| RecordRow::from_record(run, epoch, split, i, r)),
                );
            }
        }
        out.losses.extend(members.into_iter().map(|m| (m.run, m.member, m.epoch_losses)));
    }
    Ok(out)
}

/// Runs the whole grid and aggregates it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    raw: &RawMnist,
    exec: Execution,
    progress: Progress<'_>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let variants =
        cfg.variant_list().into_iter().map(|v| run_variant(cfg, raw, v, exec, progress)).collect::<Result<Vec<_>>>()?;
    let (accuracy, histograms) = aggregate_outcomes(&variants, cfg.fraction, cfg.n_bins)?;
    Ok(ExperimentOutput { variants, accuracy, histograms })
}

/// Accuracy and histogram rows for a set of variant outcomes, in canonical order.
pub fn aggregate_outcomes(
    variants: &[VariantOutcome],
    fraction: f64,
    n_bins: usize,
) -> Result<(Vec<AccuracyRow>, Vec<HistogramRow>)> {
    let mut accuracy = Vec::new();
    let mut histograms = Vec::new();
    for v in variants {
        accuracy.extend(aggregate::aggregate_accuracy(v.variant, v.ensemble_size, &v.accuracies));
        histograms.extend(aggregate::aggregate_histograms(v.variant, v.ensemble_size, &v.records, fraction, n_bins)?);
    }
    aggregate::sort_accuracy(&mut accuracy);
    aggregate::sort_histograms(&mut histograms);
    Ok((accuracy, histograms))
}

/// Identifies the variant a `records.csv` belongs to; written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantManifest {
    pub variant: Variant,
    pub ensemble_size: usize,
    pub n_runs: usize,
    pub fraction: f64,
    pub n_bins: usize,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes `accuracy.csv`, `histograms.csv` and `config.toml` to `dir`, plus
/// `<slug>/variant.toml` and (if enabled) `<slug>/records.csv` per variant.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    report::write_accuracy_csv(&dir.join(ACCURACY_FILE), &out.accuracy)?;
    report::write_histograms_csv(&dir.join(HISTOGRAMS_FILE), &out.histograms)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string())?;
    for v in &out.variants {
        let sub = dir.join(v.variant.slug(v.ensemble_size));
        create_dir(&sub)?;
        let manifest = VariantManifest {
            variant: v.variant,
            ensemble_size: v.ensemble_size,
            n_runs: cfg.n_runs,
            fraction: cfg.fraction,
            n_bins: cfg.n_bins,
        };
        write_text(&sub.join(VARIANT_FILE), &toml::to_string(&manifest).expect("manifest is plain data"))?;
        if cfg.write_records {
            report::write_records_csv(&sub.join(RECORDS_FILE), &v.records)?;
        }
    }
    Ok(())
}

/// Per-variant directories under `dir` (or `dir` itself) holding a manifest.
pub fn find_variant_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(VARIANT_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?.path();
        if path.join(VARIANT_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_manifest(dir: &Path) -> Result<VariantManifest> {
    let path = dir.join(VARIANT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// Recomputes histogram rows from the per-sample records under `dir`.
/// `fraction` and `n_bins` default to the values stored with each variant.
pub fn histograms_from_records(dir: &Path, fraction: Option<f64>, n_bins: Option<usize>) -> Result<Vec<HistogramRow>> {
    let mut rows = Vec::new();
    for sub in find_variant_dirs(dir)? {
        let m = read_manifest(&sub)?;
        let records = report::read_records_csv(&sub.join(RECORDS_FILE))?;
        let fraction = fraction.unwrap_or(m.fraction);
        let n_bins = n_bins.unwrap_or(m.n_bins);
        rows.extend(aggregate::aggregate_histograms(m.variant, m.ensemble_size, &records, fraction, n_bins)?);
    }
    aggregate::sort_histograms(&mut rows);
    Ok(rows)
}
