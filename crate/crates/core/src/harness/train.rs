use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::model::{CnnParams, IMAGE_LEN, IMAGE_SIDE, IN_CHANNELS};
use crate::optim::{AdamW, AdamWConfig, PlateauScheduler};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub checkpoints: Vec<usize>,
}

impl TrainSettings {
    pub fn from_config(cfg: &super::ExperimentConfig) -> Self {
        Self {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            optimizer: cfg.adamw(),
            patience: cfg.patience,
            factor: cfg.factor,
            min_delta: cfg.min_delta,
            checkpoints: cfg.resolved_checkpoints(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochProgress {
    pub run: usize,
    pub member: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedMember {
    pub run: usize,
    pub member: usize,
    pub seed: u64,
    /// `(epoch, parameters after that epoch)` for each checkpoint epoch.
    pub snapshots: Vec<(usize, CnnParams)>,
    pub epoch_losses: Vec<f64>,
    pub epoch_lrs: Vec<f64>,
}

impl TrainedMember {
    pub fn snapshot(&self, epoch: usize) -> Option<&CnnParams> {
        self.snapshots.iter().find(|(e, _)| *e == epoch).map(|(_, p)| p)
    }

    pub fn final_params(&self) -> Option<&CnnParams> {
        self.snapshots.last().map(|(_, p)| p)
    }
}

pub(crate) fn gather_batch(set: &LabeledImageSet, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let mut images = Vec::with_capacity(indices.len() * IMAGE_LEN);
    for &i in indices {
        images.extend_from_slice(set.image(i));
    }
    let labels = indices.iter().map(|&i| set.labels[i]).collect();
    let t = Tensor::new(vec![indices.len(), IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], images).expect("batch shape");
    (t, labels)
}

/// Trains one ensemble member from its own seed: initialisation and the
/// per-epoch shuffle both draw from a single ChaCha stream seeded by `seed`.
pub fn train_member(
    settings: &TrainSettings,
    train: &LabeledImageSet,
    run: usize,
    member: usize,
    seed: u64,
    progress: &(dyn Fn(&EpochProgress) + Sync),
) -> Result<TrainedMember> {
    if !train.has_labels() || train.is_empty() {
        return Err(Error::Dataset("training set needs labelled images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = CnnParams::init(&mut rng);
    let mut opt = AdamW::new(settings.optimizer, &CnnParams::sizes());
    let mut sched =
        PlateauScheduler::new(settings.optimizer.lr, settings.patience, settings.factor, settings.min_delta);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut out =
        TrainedMember { run, member, seed, snapshots: Vec::new(), epoch_losses: Vec::new(), epoch_lrs: Vec::new() };

    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let lr = opt.lr();
        let mut total = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let (images, labels) = gather_batch(train, batch);
            let (loss, grads) = params.loss_and_grads(images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { run, member, epoch });
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            opt.step(&mut params.as_slices_mut(), &grad_refs).map_err(|e| match e {
                Error::NanGradient { .. } => Error::Diverged { run, member, epoch },
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::Diverged { run, member, epoch });
        }
        let mean_loss = total / train.len() as f64;
        out.epoch_losses.push(mean_loss);
        out.epoch_lrs.push(lr);
        opt.set_lr(sched.step(mean_loss));
        progress(&EpochProgress { run, member, epoch, mean_loss, lr });
        if settings.checkpoints.contains(&epoch) {
            out.snapshots.push((epoch, params.clone()));
        }
    }
    Ok(out)
}
