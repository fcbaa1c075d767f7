use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, Split};
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;

/// One dataset variant of the grid, written `name:strength` (e.g. `cmnist3:95`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub dataset: DatasetKind,
    pub strength: u32,
}

impl Variant {
    pub fn new(dataset: DatasetKind, strength: u32) -> Self {
        let strength = if dataset == DatasetKind::Mnist3 { 0 } else { strength };
        Self { dataset, strength }
    }

    /// Directory name for per-variant outputs.
    pub fn slug(&self, ensemble_size: usize) -> String {
        format!("{}_s{}_m{}", self.dataset, self.strength, ensemble_size)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset, self.strength)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, strength) = s.split_once(':').unwrap_or((s, "0"));
        let strength: u32 =
            strength.trim().parse().map_err(|_| Error::Config(format!("bad strength in variant {s:?}")))?;
        if strength > 100 {
            return Err(Error::Config(format!("strength {strength} outside [0, 100] in variant {s:?}")));
        }
        Ok(Variant::new(name.trim().parse()?, strength))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Ood,
    Ind,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Ood => "ood",
            EvalSplit::Ind => "ind",
        }
    }

    pub fn split(self) -> Split {
        match self {
            EvalSplit::Ood => Split::TestOod,
            EvalSplit::Ind => Split::TestInd,
        }
    }
}

impl FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ood" => Ok(EvalSplit::Ood),
            "ind" => Ok(EvalSplit::Ind),
            other => Err(Error::Config(format!("unknown eval split {other:?} (expected ood or ind)"))),
        }
    }
}

/// Everything one `train` invocation needs. Loaded from a flat TOML file whose
/// keys are these field names; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub strength: u32,
    /// Grid of variants; when non-empty it replaces `dataset`/`strength`.
    pub variants: Vec<Variant>,
    pub ensemble_size: usize,
    pub n_runs: usize,
    pub epochs: usize,
    /// Defaults to every 5th epoch plus the final one.
    pub checkpoint_epochs: Option<Vec<usize>>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub base_seed: u64,
    pub n_train: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub eval_splits: Vec<EvalSplit>,
    /// Share of least-confident predictions entering the histograms.
    pub fraction: f64,
    pub n_bins: usize,
    pub write_records: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist3,
            strength: 0,
            variants: Vec::new(),
            ensemble_size: 3,
            n_runs: 3,
            epochs: 25,
            checkpoint_epochs: None,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 0.01,
            patience: 10,
            factor: 0.1,
            min_delta: 1e-4,
            base_seed: 0,
            n_train: 10_000,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("results"),
            eval_splits: vec![EvalSplit::Ood, EvalSplit::Ind],
            fraction: 0.2,
            n_bins: 20,
            write_records: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn variant_list(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![Variant::new(self.dataset, self.strength)]
        } else {
            self.variants.clone()
        }
    }

    pub fn resolved_checkpoints(&self) -> Vec<usize> {
        let mut eps = match &self.checkpoint_epochs {
            Some(list) => list.clone(),
            None => (5..=self.epochs).step_by(5).chain([self.epochs]).collect(),
        };
        eps.sort_unstable();
        eps.dedup();
        eps
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ensemble_size", self.ensemble_size),
            ("n_runs", self.n_runs),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("n_train", self.n_train),
            ("n_bins", self.n_bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config("lr must be positive; weight_decay and min_delta non-negative".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("factor {} must lie in (0, 1)", self.factor)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} must lie in (0, 1]", self.fraction)));
        }
        if self.strength > 100 {
            return Err(Error::Config(format!("strength {} outside [0, 100]", self.strength)));
        }
        let checkpoints = self.resolved_checkpoints();
        if checkpoints.is_empty() || checkpoints.iter().any(|&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!("checkpoint epochs {checkpoints:?} must lie in [1, {}]", self.epochs)));
        }
        if self.eval_splits.is_empty() {
            return Err(Error::Config("eval_splits is empty".into()));
        }
        Ok(())
    }
}

/// Seed of run `run`: `base_seed + run`.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

/// Seed of ensemble member `member` in run `run`.
pub fn member_seed(base_seed: u64, run: usize, member: usize) -> u64 {
    splitmix64(splitmix64(run_seed(base_seed, run)) ^ (member as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seed for shortcut selection in run `run`, separate from the subsampling stream.
pub fn shortcut_seed(base_seed: u64, run: usize) -> u64 {
    splitmix64(run_seed(base_seed, run) ^ 0x5348_4f52_5443_5554)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
