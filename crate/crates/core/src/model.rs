//! The ensemble member: 3x3 conv (16 filters, pad 1) -> ReLU -> 2x2 max-pool
//! -> FC 3136->128 -> ReLU -> FC 128->3 -> softmax.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const IN_CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 28;
pub const FILTERS: usize = 16;
pub const HIDDEN: usize = 128;
pub const CLASSES: usize = 3;
pub const FLAT: usize = FILTERS * (IMAGE_SIDE / 2) * (IMAGE_SIDE / 2);
pub const IMAGE_LEN: usize = IN_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

/// Shapes of the six parameter tensors, in the order used everywhere.
pub const PARAM_SHAPES: [&[usize]; 6] =
    [&[FILTERS, IN_CHANNELS, 3, 3], &[FILTERS], &[FLAT, HIDDEN], &[HIDDEN], &[HIDDEN, CLASSES], &[CLASSES]];

pub const PARAM_NAMES: [&str; 6] = ["conv.weight", "conv.bias", "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub tensors: Vec<Vec<f64>>,
}

/// Tape handles for one forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    pub probs: Var,
}

impl CnnParams {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let fan_ins = [IN_CHANNELS * 9, FLAT, HIDDEN];
        let tensors = PARAM_SHAPES
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                if i % 2 == 1 {
                    return vec![0.0; n];
                }
                let bound = (6.0 / fan_ins[i / 2] as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            })
            .collect();
        Self { tensors }
    }

    pub fn sizes() -> Vec<usize> {
        PARAM_SHAPES.iter().map(|s| s.iter().product()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn as_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors.iter_mut().map(Vec::as_mut_slice).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Records the network on `tape` for a `[N,3,28,28]` batch.
    pub fn forward(&self, tape: &mut Tape, images: Tensor, track_grad: bool) -> Result<Forward> {
        let n = images.shape()[0];
        let x = tape.leaf(images);
        let params: Vec<Var> = self
            .tensors
            .iter()
            .zip(PARAM_SHAPES)
            .map(|(data, shape)| {
                let t = Tensor::new(shape.to_vec(), data.clone()).expect("parameter shapes are fixed");
                tape.leaf(if track_grad { t.with_grad() } else { t })
            })
            .collect();
        let h = tape.conv2d(x, params[0], params[1])?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let h = tape.reshape(h, vec![n, FLAT])?;
        let h = tape.linear(h, params[2], params[3])?;
        let h = tape.relu(h);
        let logits = tape.linear(h, params[4], params[5])?;
        let probs = tape.softmax_rows(logits)?;
        Ok(Forward { params, probs })
    }

    /// Mean cross-entropy of a batch and its gradient for every parameter.
    pub fn loss_and_grads(&self, images: Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, images, true)?;
        let loss = tape.cross_entropy(fwd.probs, labels)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        let grads = fwd
            .params
            .iter()
            .zip(&self.tensors)
            .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        Ok((value, grads))
    }

    /// Class probabilities `[N,3]` (row-major) for a flat batch of images.
    pub fn predict(&self, images: &[f64]) -> Result<Vec<f64>> {
        let n = images.len() / IMAGE_LEN;
        let batch = Tensor::new(vec![n, IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], images.to_vec())?;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, false)?;
        Ok(tape.value(fwd.probs).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_dimension_is_16_times_196() {
        assert_eq!(FLAT, 16 * 196);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = CnnParams::init(&mut ChaCha8Rng::seed_from_u64(7));
        let b = CnnParams::init(&mut ChaCha8Rng::seed_from_u64(7));
        let c = CnnParams::init(&mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0 / FLAT as f64).sqrt();
        assert!(a.tensors[2].iter().all(|v| v.abs() <= bound));
        assert!(a.tensors[3].iter().all(|&v| v == 0.0));
        assert_eq!(a.num_values(), 16 * 27 + 16 + FLAT * 128 + 128 + 128 * 3 + 3);
    }

    #[test]
    fn predict_rows_are_distributions() {
        let params = CnnParams::init(&mut ChaCha8Rng::seed_from_u64(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images: Vec<f64> = (0..2 * IMAGE_LEN).map(|_| rng.gen::<f64>()).collect();
        let p = params.predict(&images).unwrap();
        assert_eq!(p.len(), 6);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
