//! CSV reports. Floats carry 6 decimals, the header row is always written,
//! rows end in `\n`.

use std::path::Path;

use super::aggregate::{AccuracyRow, HistogramRow, RecordRow};
use super::{EvalSplit, Variant};
use crate::data::DatasetKind;
use crate::error::{Error, Result};

pub const ACCURACY_HEADER: [&str; 6] = ["dataset", "strength", "ensemble_size", "epoch", "mean_accuracy", "stderr"];
pub const HISTOGRAM_HEADER: [&str; 10] = [
    "dataset",
    "strength",
    "ensemble_size",
    "epoch",
    "split",
    "measure",
    "bin_lo",
    "bin_hi",
    "mean_proportion",
    "stderr",
];
pub const RECORDS_HEADER: [&str; 8] =
    ["run", "epoch", "split", "sample_id", "tu_norm", "au_norm", "eu_norm", "confidence"];

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_accuracy_csv(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    write_rows(
        path,
        ACCURACY_HEADER,
        rows.iter().map(|r| {
            [
                r.variant.dataset.to_string(),
                r.variant.strength.to_string(),
                r.ensemble_size.to_string(),
                r.epoch.to_string(),
                f6(r.mean_accuracy),
                f6(r.stderr),
            ]
        }),
    )
}

pub fn write_histograms_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    write_rows(
        path,
        HISTOGRAM_HEADER,
        rows.iter().map(|r| {
            [
                r.variant.dataset.to_string(),
                r.variant.strength.to_string(),
                r.ensemble_size.to_string(),
                r.epoch.to_string(),
                r.split.name().to_string(),
                r.measure.to_string(),
                f6(r.bin_lo),
                f6(r.bin_hi),
                f6(r.mean_proportion),
                f6(r.stderr),
            ]
        }),
    )
}

pub fn write_records_csv(path: &Path, rows: &[RecordRow]) -> Result<()> {
    write_rows(
        path,
        RECORDS_HEADER,
        rows.iter().map(|r| {
            [
                r.run.to_string(),
                r.epoch.to_string(),
                r.split.name().to_string(),
                r.sample_id.to_string(),
                f6(r.tu_norm),
                f6(r.au_norm),
                f6(r.eu_norm),
                f6(r.confidence),
            ]
        }),
    )
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr =
        csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Dataset(format!("{}: unexpected header {found:?}", path.display())));
    }
    Ok(rdr.records().collect::<Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Dataset(format!("{}: bad field {i} in {rec:?}", path.display())))
}

fn variant(rec: &csv::StringRecord, path: &Path) -> Result<Variant> {
    let dataset: DatasetKind = rec.get(0).unwrap_or_default().parse()?;
    Ok(Variant::new(dataset, field(rec, 1, path)?))
}

fn split(rec: &csv::StringRecord, i: usize) -> Result<EvalSplit> {
    rec.get(i).unwrap_or_default().parse()
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>> {
    read_rows(path, &RECORDS_HEADER)?
        .iter()
        .map(|r| {
            Ok(RecordRow {
                run: field(r, 0, path)?,
                epoch: field(r, 1, path)?,
                split: split(r, 2)?,
                sample_id: field(r, 3, path)?,
                tu_norm: field(r, 4, path)?,
                au_norm: field(r, 5, path)?,
                eu_norm: field(r, 6, path)?,
                confidence: field(r, 7, path)?,
            })
        })
        .collect()
}

pub fn read_histograms_csv(path: &Path) -> Result<Vec<HistogramRow>> {
    read_rows(path, &HISTOGRAM_HEADER)?
        .iter()
        .map(|r| {
            Ok(HistogramRow {
                variant: variant(r, path)?,
                ensemble_size: field(r, 2, path)?,
                epoch: field(r, 3, path)?,
                split: split(r, 4)?,
                measure: r.get(5).unwrap_or_default().parse()?,
                bin_lo: field(r, 6, path)?,
                bin_hi: field(r, 7, path)?,
                mean_proportion: field(r, 8, path)?,
                stderr: field(r, 9, path)?,
            })
        })
        .collect()
}

pub fn read_accuracy_csv(path: &Path) -> Result<Vec<AccuracyRow>> {
    read_rows(path, &ACCURACY_HEADER)?
        .iter()
        .map(|r| {
            Ok(AccuracyRow {
                variant: variant(r, path)?,
                ensemble_size: field(r, 2, path)?,
                epoch: field(r, 3, path)?,
                mean_accuracy: field(r, 4, path)?,
                stderr: field(r, 5, path)?,
            })
        })
        .collect()
}
