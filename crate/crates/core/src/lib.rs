//! Deep ensembles of small CNNs trained on shortcut-infused 3-class MNIST
//! variants, with predictive uncertainty split into aleatoric and epistemic
//! parts through the entropy / mutual-information decomposition.
//!
//! Layout:
//!
//! - [`tensor`]: dense `f64` tensors, a reverse-mode tape and the layers the
//!   network needs.
//! - [`optim`]: AdamW and a reduce-on-plateau learning-rate schedule.
//! - [`model`]: the conv / pool / two-FC network and its parameters.
//! - [`data`]: IDX parsing, pooled 3-class tasks, colour and patch shortcuts.
//! - [`uq`]: entropy, consensus, TU / AU / EU, least-confident selection,
//!   histogram binning.
//! - [`harness`]: seeded ensemble training, checkpoint evaluation,
//!   aggregation over runs and CSV reports.
//! - [`exec`]: data-parallel map with a sequential fallback.
//! - [`verify`]: the property suite behind `shortcut-uq verify`.

// `!(x > 0.0)` style checks are deliberate: NaN has to fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod uq;
pub mod verify;

pub use error::{Error, Result};
