use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{EvalSplit, Variant};
use crate::error::{Error, Result};
use crate::uq::{bin_edges, bin_histogram, least_confident_indices, UncertaintyRecord};

/// Round to the 6-decimal value written to CSV, so that aggregates computed
/// in memory and aggregates recomputed from `records.csv` see identical inputs.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

/// One per-sample line of `records.csv`, already quantised.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub run: usize,
    pub epoch: usize,
    pub split: EvalSplit,
    pub sample_id: usize,
    pub tu_norm: f64,
    pub au_norm: f64,
    pub eu_norm: f64,
    pub confidence: f64,
}

impl RecordRow {
    pub fn from_record(run: usize, epoch: usize, split: EvalSplit, sample_id: usize, r: &UncertaintyRecord) -> Self {
        Self {
            run,
            epoch,
            split,
            sample_id,
            tu_norm: quantize(r.tu_norm),
            au_norm: quantize(r.au_norm),
            eu_norm: quantize(r.eu_norm),
            confidence: quantize(r.confidence),
        }
    }

    pub fn measure(&self, m: Measure) -> f64 {
        match m {
            Measure::AuNorm => self.au_norm,
            Measure::EuNorm => self.eu_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    AuNorm,
    EuNorm,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::AuNorm, Measure::EuNorm];

    pub fn name(self) -> &'static str {
        match self {
            Measure::AuNorm => "au_norm",
            Measure::EuNorm => "eu_norm",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "au_norm" => Ok(Measure::AuNorm),
            "eu_norm" => Ok(Measure::EuNorm),
            other => Err(Error::Config(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunAccuracy {
    pub run: usize,
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub variant: Variant,
    pub ensemble_size: usize,
    pub epoch: usize,
    pub mean_accuracy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub variant: Variant,
    pub ensemble_size: usize,
    pub epoch: usize,
    pub split: EvalSplit,
    pub measure: Measure,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mean_proportion: f64,
    pub stderr: f64,
}

impl HistogramRow {
    fn key(&self) -> (Variant, usize, usize, EvalSplit, Measure, u64) {
        (self.variant, self.ensemble_size, self.epoch, self.split, self.measure, self.bin_lo.to_bits())
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`);
/// the standard error is 0 for fewer than two values.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn aggregate_accuracy(variant: Variant, ensemble_size: usize, accs: &[RunAccuracy]) -> Vec<AccuracyRow> {
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for a in accs {
        by_epoch.entry(a.epoch).or_default().push(a.accuracy);
    }
    by_epoch
        .into_iter()
        .map(|(epoch, xs)| {
            let (mean_accuracy, stderr) = mean_stderr(&xs);
            AccuracyRow { variant, ensemble_size, epoch, mean_accuracy, stderr }
        })
        .collect()
}

/// For every (epoch, split, measure): in each run, histogram the measure over
/// that run's `fraction` least-confident records, then report the per-bin
/// mean and standard error across runs.
pub fn aggregate_histograms(
    variant: Variant,
    ensemble_size: usize,
    records: &[RecordRow],
    fraction: f64,
    n_bins: usize,
) -> Result<Vec<HistogramRow>> {
    let mut groups: BTreeMap<(usize, EvalSplit), BTreeMap<usize, Vec<&RecordRow>>> = BTreeMap::new();
    for r in records {
        groups.entry((r.epoch, r.split)).or_default().entry(r.run).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((epoch, split), runs) in groups {
        for measure in Measure::ALL {
            let mut per_run = Vec::with_capacity(runs.len());
            for recs in runs.values() {
                let conf: Vec<f64> = recs.iter().map(|r| r.confidence).collect();
                let picked = least_confident_indices(&conf, fraction)?;
                let values: Vec<f64> = picked.iter().map(|&i| recs[i].measure(measure)).collect();
                per_run.push(bin_histogram(&values, n_bins)?);
            }
            for k in 0..n_bins {
                let props: Vec<f64> = per_run.iter().map(|h| h[k]).collect();
                let (mean_proportion, stderr) = mean_stderr(&props);
                let (bin_lo, bin_hi) = bin_edges(k, n_bins);
                rows.push(HistogramRow {
                    variant,
                    ensemble_size,
                    epoch,
                    split,
                    measure,
                    bin_lo,
                    bin_hi,
                    mean_proportion,
                    stderr,
                });
            }
        }
    }
    Ok(rows)
}

pub(crate) fn sort_histograms(rows: &mut [HistogramRow]) {
    rows.sort_by_key(HistogramRow::key);
}

pub(crate) fn sort_accuracy(rows: &mut [AccuracyRow]) {
    rows.sort_by_key(|r| (r.variant, r.ensemble_size, r.epoch));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetKind;

    fn row(run: usize, sample_id: usize, eu: f64, conf: f64) -> RecordRow {
        RecordRow {
            run,
            epoch: 5,
            split: EvalSplit::Ood,
            sample_id,
            tu_norm: eu,
            au_norm: 0.0,
            eu_norm: eu,
            confidence: conf,
        }
    }

    #[test]
    fn stderr_examples() {
        assert_eq!(mean_stderr(&[0.7]), (0.7, 0.0));
        let (m, se) = mean_stderr(&[0.96, 0.97, 0.98]);
        assert!((m - 0.97).abs() < 1e-12);
        assert!((se - 0.01 / 3f64.sqrt()).abs() < 1e-12);
        assert!((se - 0.005_773_5).abs() < 1e-6);
    }

    #[test]
    fn accuracy_grouped_by_epoch() {
        let v = Variant::new(DatasetKind::Mnist3, 0);
        let accs = [
            RunAccuracy { run: 0, epoch: 10, accuracy: 0.9 },
            RunAccuracy { run: 0, epoch: 5, accuracy: 0.8 },
            RunAccuracy { run: 1, epoch: 5, accuracy: 0.6 },
        ];
        let rows = aggregate_accuracy(v, 3, &accs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].epoch, 5);
        assert!((rows[0].mean_accuracy - 0.7).abs() < 1e-12);
        assert_eq!(rows[1].stderr, 0.0);
    }

    #[test]
    fn histograms_select_per_run_and_sum_to_one() {
        let v = Variant::new(DatasetKind::Cmnist3, 100);
        let mut records = Vec::new();
        for run in 0..3 {
            for i in 0..10 {
                // the two least-confident samples per run have eu 0.99
                let low = i >= 8;
                records.push(row(run, i, if low { 0.99 } else { 0.2 }, if low { 0.34 } else { 0.9 }));
            }
        }
        let rows = aggregate_histograms(v, 3, &records, 0.2, 20).unwrap();
        assert_eq!(rows.len(), 2 * 20);
        let eu: Vec<&HistogramRow> = rows.iter().filter(|r| r.measure == Measure::EuNorm).collect();
        assert_eq!(eu[19].mean_proportion, 1.0);
        assert_eq!(eu[19].stderr, 0.0);
        let total: f64 = eu.iter().map(|r| r.mean_proportion).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let all = aggregate_histograms(v, 3, &records, 1.0, 20).unwrap();
        let eu_all: Vec<&HistogramRow> = all.iter().filter(|r| r.measure == Measure::EuNorm).collect();
        assert!((eu_all[19].mean_proportion - 0.2).abs() < 1e-12);
        assert!((eu_all[3].mean_proportion - 0.8).abs() < 1e-12);
    }

    #[test]
    fn quantize_matches_six_decimal_text() {
        assert_eq!(quantize(0.123_456_749), 0.123_457);
        assert_eq!(quantize(1.0), 1.0);
        assert_eq!(format!("{:.6}", quantize(0.960_156_3)), "0.960156");
    }
}
