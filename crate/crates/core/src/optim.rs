//! AdamW with decoupled weight decay, and a reduce-on-plateau schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    /// `sizes[i]` is the element count of parameter `i`.
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.first_moment[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.second_moment[param]
    }

    /// One update of every parameter. Nothing is modified if any gradient
    /// contains a NaN or has the wrong length.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adamw_step",
                format!(
                    "{} params / {} grads for {} optimizer slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("param {i}: {} values, {} grads, {} moments", p.len(), g.len(), self.first_moment[i].len()),
                ));
            }
            if g.iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient { param: i });
            }
        }

        self.step += 1;
        let AdamWConfig { lr, weight_decay, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without the metric improving on its best value by more than
/// `min_delta`. The stale-epoch counter resets after each reduction.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    initial_lr: f64,
    reductions: i32,
    best: f64,
    stale_epochs: usize,
    history: Vec<f64>,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, factor: f64, min_delta: f64) -> Self {
        Self {
            patience,
            factor,
            min_delta,
            initial_lr,
            reductions: 0,
            best: f64::INFINITY,
            stale_epochs: 0,
            history: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr * self.factor.powi(self.reductions)
    }

    pub fn reductions(&self) -> i32 {
        self.reductions
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        self.history.push(metric);
        if metric < self.best - self.min_delta {
            self.best = metric;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.reductions += 1;
                self.stale_epochs = 0;
            }
        }
        self.lr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(opt: &mut AdamW, p: &mut Vec<f64>, g: &[f64]) {
        opt.step(&mut [p.as_mut_slice()], &[g]).unwrap();
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &[3]);
        let mut p = vec![0.5, -1.0, 2.0];
        for _ in 0..5 {
            run(&mut opt, &mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn zero_grad_applies_decoupled_decay() {
        let mut opt = AdamW::new(AdamWConfig { lr: 0.001, weight_decay: 0.01, ..Default::default() }, &[2]);
        let mut p = vec![1.0, -3.0];
        run(&mut opt, &mut p, &[0.0, 0.0]);
        let s = 1.0 - 0.001 * 0.01;
        assert_eq!(p, vec![s, -3.0 * s]);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[1, 2]);
        let mut a = vec![0.0];
        let mut b = vec![0.0, 0.0];
        let err = opt.step(&mut [&mut a, &mut b], &[&[0.0], &[1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NanGradient { param: 1 }));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn strictly_decreasing_metric_keeps_lr() {
        let mut s = PlateauScheduler::new(1e-3, 10, 0.1, 1e-4);
        for e in 0..25 {
            assert_eq!(s.step(1.0 - 0.01 * e as f64), 1e-3);
        }
    }

    #[test]
    fn constant_metric_reduces_on_eleventh_call() {
        let mut s = PlateauScheduler::new(1e-3, 10, 0.1, 1e-4);
        for epoch in 1..=10 {
            assert_eq!(s.step(0.7), 1e-3, "epoch {epoch}");
        }
        let lr = s.step(0.7);
        assert!((lr - 1e-4).abs() < 1e-18);
        // counter restarted: the next reduction needs another 10 stale epochs
        for _ in 0..9 {
            assert_eq!(s.step(0.7), lr);
        }
        assert!((s.step(0.7) - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn improvement_then_flatline() {
        // improves through epoch 6, then flat: stale epochs are 7..=16
        let mut s = PlateauScheduler::new(1e-3, 10, 0.1, 1e-4);
        let mut reduced_at = None;
        for epoch in 1..=25 {
            let metric = if epoch <= 6 { 1.0 - 0.1 * epoch as f64 } else { 0.4 };
            let lr = s.step(metric);
            if reduced_at.is_none() && lr < 1e-3 {
                reduced_at = Some(epoch);
            }
        }
        assert_eq!(reduced_at, Some(16));
    }

    #[test]
    fn improvements_below_min_delta_count_as_stale() {
        let mut s = PlateauScheduler::new(1e-3, 2, 0.1, 1e-4);
        s.step(1.0);
        s.step(1.0 - 5e-5);
        assert!(s.step(1.0 - 9e-5) < 1e-3);
    }
}
