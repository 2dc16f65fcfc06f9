use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

pub const MIN_LR: f64 = 1e-6;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f32>>,
    #[serde(skip)]
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &Params<f32>, lr: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: lr.max(MIN_LR),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` means the
    /// parameter took no part in the forward pass and is left untouched.
    pub fn step(&mut self, params: &mut Params<f32>, grads: &[Option<Vec<f32>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Nn(format!(
                "adam: {} gradients / {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            let Some(g) = g else { continue };
            if g.len() != params.get(id).len() {
                return Err(Error::shape("adam", params.get(id).shape(), &[g.len()]));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = params.tensors_mut()[i].data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                data[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate when validation loss stalls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
    /// Minimum absolute decrease that counts as an improvement.
    pub threshold: f64,
    pub best: f64,
    pub stale_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: lr.max(MIN_LR),
            patience: 10,
            factor: 0.5,
            floor: MIN_LR,
            threshold: 1e-5,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    /// Feeds one epoch's validation loss and returns the learning rate to use next.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_params(x: f32) -> Params<f32> {
        let mut p = Params::new();
        p.add("x", Tensor::new([1], vec![x]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_params(0.7);
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Some(vec![0.0])]).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Some(vec![1.0])]).unwrap();
        let moved = 1.0 - p.tensors()[0].data()[0] as f64;
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-7, "moved {moved}");
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = scalar_params(1.0);
        let mut adam = AdamState::new(&p, 1e-3);
        match adam.step(&mut p, &[Some(vec![f32::NAN])]) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.tensors()[0].data()[0], 1.0);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut p = scalar_params(1.0);
        let mut adam = AdamState::new(&p, 1e-2);
        let mut trace = Vec::new();
        for _ in 0..100 {
            let x = p.tensors()[0].data()[0];
            adam.step(&mut p, &[Some(vec![2.0 * x])]).unwrap();
            trace.push(p.tensors()[0].data()[0].abs());
        }
        for w in trace[5..].windows(2) {
            assert!(w[1] < w[0], "{w:?}");
        }
    }

    #[test]
    fn plateau_keeps_lr_while_improving() {
        let mut s = PlateauSchedule::new(1e-3);
        for i in 0..50 {
            assert_eq!(s.update(1.0 - i as f64 * 0.01), 1e-3);
        }
    }

    #[test]
    fn plateau_halves_after_patience_stale_epochs() {
        let mut s = PlateauSchedule::new(1e-3);
        s.update(1.0);
        for _ in 0..9 {
            assert_eq!(s.update(1.0), 1e-3);
        }
        assert_eq!(s.update(1.0), 5e-4);
    }

    #[test]
    fn plateau_clamps_at_floor() {
        let mut s = PlateauSchedule::new(1e-3);
        s.update(1.0);
        let mut lr = 0.0;
        for _ in 0..120 {
            lr = s.update(1.0);
        }
        assert_eq!(lr, 1e-6);
    }

    #[test]
    fn plateau_ignores_sub_threshold_improvements() {
        let mut s = PlateauSchedule::new(1e-3);
        s.update(1.0);
        for i in 1..=10 {
            s.update(1.0 - i as f64 * 1e-7);
        }
        assert_eq!(s.lr, 5e-4);
    }
}
