//! Second-order uncertainty for a finite ensemble.
//!
//! An ensemble of `M` first-order distributions over `K` labels stands in
//! for a distribution over hypotheses. With `mean` the consensus of the
//! members:
//!
//! ```text
//! TU = H(mean)                       total
//! AU = (1/M) sum_m H(p_m)            aleatoric (expected conditional entropy)
//! EU = TU - AU                       epistemic (mutual information)
//!    = (1/M) sum_m KL(p_m || mean)
//! ```
//!
//! All values are in nats; normalised values divide by `ln K`.

use thiserror::Error;

use crate::tensor::PROB_FLOOR;

/// Tolerance on `sum(p) == 1` for a first-order distribution.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Slightly negative EU down to this value is treated as rounding and clamped to 0.
pub const EU_NEGATIVE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum UqError {
    #[error("not a probability vector: {0}")]
    InvalidDistribution(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("member {member} has {found} classes, expected {expected}")]
    ClassMismatch { member: usize, expected: usize, found: usize },
    #[error("negative epistemic uncertainty {0:e}: members are not on the simplex")]
    NegativeEpistemic(f64),
    #[error("selection fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("histogram value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("need at least one histogram bin")]
    NoBins,
}

/// A point on the probability simplex: one hypothesis' label distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderDist(Vec<f64>);

impl FirstOrderDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, UqError> {
        if probs.is_empty() {
            return Err(UqError::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(UqError::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(UqError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(classes: usize, k: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[k] = 1.0;
        Self(p)
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The `M` member predictions for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    members: Vec<FirstOrderDist>,
}

impl EnsemblePrediction {
    pub fn new(members: Vec<FirstOrderDist>) -> Result<Self, UqError> {
        let first = members.first().ok_or(UqError::EmptyEnsemble)?;
        let k = first.classes();
        if let Some((m, d)) = members.iter().enumerate().find(|(_, d)| d.classes() != k) {
            return Err(UqError::ClassMismatch { member: m, expected: k, found: d.classes() });
        }
        Ok(Self { members })
    }

    /// Builds from raw rows, validating each as a simplex point.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, UqError> {
        Self::new(rows.into_iter().map(|r| FirstOrderDist::new(r.to_vec())).collect::<Result<_, _>>()?)
    }

    pub fn members(&self) -> &[FirstOrderDist] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn classes(&self) -> usize {
        self.members[0].classes()
    }
}

/// Uncertainty of one prediction: raw (nats) and normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRecord {
    pub tu: f64,
    pub au: f64,
    pub eu: f64,
    pub tu_norm: f64,
    pub au_norm: f64,
    pub eu_norm: f64,
    pub consensus: FirstOrderDist,
    /// Largest consensus probability.
    pub confidence: f64,
}

/// Shannon entropy in nats with `0 ln 0 = 0`; logs are taken of `max(p, 1e-12)`.
pub fn entropy_of(p: &[f64]) -> f64 {
    0.0 - p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.max(PROB_FLOOR).ln()).sum::<f64>()
}

/// `KL(p || q)` in nats, skipping terms with `p = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a.ln() - b.ln())).sum()
}

/// Coordinatewise mean of equally long rows.
pub fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let mut mean = vec![0.0; rows[0].len()];
    for row in rows {
        for (acc, v) in mean.iter_mut().zip(*row) {
            *acc += v;
        }
    }
    let m = rows.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    mean
}

pub fn entropy(p: &FirstOrderDist) -> f64 {
    entropy_of(p.probs())
}

fn rows(e: &EnsemblePrediction) -> Vec<&[f64]> {
    e.members.iter().map(FirstOrderDist::probs).collect()
}

pub fn consensus(e: &EnsemblePrediction) -> FirstOrderDist {
    FirstOrderDist(mean_rows(&rows(e)))
}

pub fn total_uncertainty(e: &EnsemblePrediction) -> f64 {
    entropy(&consensus(e))
}

pub fn aleatoric_uncertainty(e: &EnsemblePrediction) -> f64 {
    e.members.iter().map(entropy).sum::<f64>() / e.size() as f64
}

fn clamp_eu(eu: f64) -> Result<f64, UqError> {
    if eu < -EU_NEGATIVE_TOL {
        Err(UqError::NegativeEpistemic(eu))
    } else {
        Ok(eu.max(0.0))
    }
}

/// Mutual information as the entropy gap `TU - AU`.
pub fn epistemic_uncertainty(e: &EnsemblePrediction) -> Result<f64, UqError> {
    clamp_eu(total_uncertainty(e) - aleatoric_uncertainty(e))
}

/// Mutual information as the mean KL divergence from members to the consensus.
pub fn eu_via_kl(e: &EnsemblePrediction) -> f64 {
    let mean = consensus(e);
    e.members.iter().map(|m| kl_divergence(m.probs(), mean.probs())).sum::<f64>() / e.size() as f64
}

pub fn decompose(e: &EnsemblePrediction) -> Result<UncertaintyRecord, UqError> {
    let consensus = consensus(e);
    let tu = entropy(&consensus);
    let au = aleatoric_uncertainty(e);
    let eu = clamp_eu(tu - au)?;
    let scale = (e.classes() as f64).ln();
    let norm = |v: f64| if scale > 0.0 { (v / scale).clamp(0.0, 1.0) } else { 0.0 };
    Ok(UncertaintyRecord {
        tu,
        au,
        eu,
        tu_norm: norm(tu),
        au_norm: norm(au),
        eu_norm: norm(eu),
        confidence: consensus.max_prob(),
        consensus,
    })
}

/// Number of items kept when selecting `fraction` of `n`: `ceil(fraction * n)`,
/// with a small allowance so that e.g. `0.2 * 15` keeps 3, not 4.
pub fn selection_size(n: usize, fraction: f64) -> Result<usize, UqError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(UqError::InvalidFraction(fraction));
    }
    Ok(((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n))
}

/// Indices of the `ceil(fraction * n)` lowest confidences, ascending by
/// confidence; equal confidences keep their input order.
pub fn least_confident_indices(confidences: &[f64], fraction: f64) -> Result<Vec<usize>, UqError> {
    let keep = selection_size(confidences.len(), fraction)?;
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    order.truncate(keep);
    Ok(order)
}

pub fn select_least_confident(
    records: &[UncertaintyRecord],
    fraction: f64,
) -> Result<Vec<&UncertaintyRecord>, UqError> {
    let conf: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    Ok(least_confident_indices(&conf, fraction)?.into_iter().map(|i| &records[i]).collect())
}

/// Bin index for `v` among `n_bins` equal bins over `[0, 1]`: the first bin
/// is `[0, 1/n]`, the rest are right-closed `(k/n, (k+1)/n]`.
pub fn bin_index(v: f64, n_bins: usize) -> Result<usize, UqError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(UqError::ValueOutOfRange(v));
    }
    let upper = |k: usize| (k + 1) as f64 / n_bins as f64;
    Ok((0..n_bins).find(|&k| v <= upper(k)).unwrap_or(n_bins - 1))
}

/// Proportion of `values` in each bin. An empty input gives all zeros.
pub fn bin_histogram(values: &[f64], n_bins: usize) -> Result<Vec<f64>, UqError> {
    if n_bins == 0 {
        return Err(UqError::NoBins);
    }
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        counts[bin_index(v, n_bins)?] += 1;
    }
    let n = values.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `(lo, hi)` edges of bin `k`.
pub fn bin_edges(k: usize, n_bins: usize) -> (f64, f64) {
    (k as f64 / n_bins as f64, (k + 1) as f64 / n_bins as f64)
}
