use super::EvalSplit;
use crate::data::{LabeledImageSet, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CnnParams, IMAGE_LEN};
use crate::uq::{decompose, EnsemblePrediction, UncertaintyRecord};

const EVAL_BATCH: usize = 256;
const DECOMPOSE_CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub struct CheckpointEval {
    pub split: EvalSplit,
    pub records: Vec<UncertaintyRecord>,
    /// Consensus-argmax accuracy; only defined on the in-distribution split.
    pub accuracy: Option<f64>,
}

/// Class probabilities `[N,3]` of one member over a whole split.
pub fn member_probs(params: &CnnParams, set: &LabeledImageSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len() * NUM_CLASSES);
    for chunk in set.images.chunks(EVAL_BATCH * IMAGE_LEN) {
        out.extend(params.predict(chunk)?);
    }
    Ok(out)
}

/// Decomposes per-sample ensemble predictions given each member's `[N,3]` output.
pub fn decompose_all(probs: &[Vec<f64>], exec: Execution) -> Result<Vec<UncertaintyRecord>> {
    let n = probs.first().map_or(0, |p| p.len() / NUM_CLASSES);
    let starts: Vec<usize> = (0..n).step_by(DECOMPOSE_CHUNK).collect();
    let chunks = exec.try_map(&starts, |&start| -> Result<Vec<UncertaintyRecord>> {
        (start..(start + DECOMPOSE_CHUNK).min(n))
            .map(|i| {
                let rows = probs.iter().map(|p| &p[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]);
                Ok(decompose(&EnsemblePrediction::from_rows(rows)?)?)
            })
            .collect()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Runs every member on `set`, decomposes each sample's ensemble prediction
/// and, for the in-distribution split, scores the consensus argmax
/// (ties to the lowest class).
pub fn evaluate_checkpoint(
    members: &[&CnnParams],
    set: &LabeledImageSet,
    split: EvalSplit,
    exec: Execution,
) -> Result<CheckpointEval> {
    if members.is_empty() {
        return Err(Error::Uq(crate::uq::UqError::EmptyEnsemble));
    }
    if set.meta.split != split.split() {
        return Err(Error::Dataset(format!("asked to evaluate {:?} as the {} split", set.meta.split, split.name())));
    }
    if split == EvalSplit::Ind && !set.has_labels() {
        return Err(Error::Dataset("in-distribution split has no labels".into()));
    }
    let probs = exec.try_map(members, |p| member_probs(p, set))?;
    let records = decompose_all(&probs, exec)?;
    let accuracy = (split == EvalSplit::Ind).then(|| {
        let hits = records.iter().zip(&set.labels).filter(|(r, &l)| r.consensus.argmax() == l).count();
        hits as f64 / records.len().max(1) as f64
    });
    Ok(CheckpointEval { split, records, accuracy })
}
