//! Adam with bias correction and an exponential learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::SplatOrigin;
use crate::splat::PARAMS_PER_SPLAT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_start: f64,
    pub lr_end: f64,
    /// Iterations over which the rate decays from start to end.
    pub iterations: usize,
}

impl Schedule {
    /// `1e-3` decaying to `1e-5`.
    pub fn modeling(iterations: usize) -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-5,
            iterations,
        }
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            lr_start: lr,
            lr_end: lr,
            iterations: 1,
        }
    }

    /// `lr_start · (lr_end / lr_start)^(i / N)`, held at `lr_end` past `N`.
    pub fn lr(&self, iteration: usize) -> f64 {
        let n = self.iterations.max(1) as f64;
        let frac = (iteration as f64 / n).min(1.0);
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
}

impl AdamState {
    pub fn new(len: usize, schedule: Schedule) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Learning rate of the next step.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step as usize)
    }

    /// Carries moments across a densification: kept splats keep theirs, new
    /// splats start from zero.
    pub fn remap(&mut self, origin: &[SplatOrigin]) {
        let mut m = vec![0.0; origin.len() * PARAMS_PER_SPLAT];
        let mut v = vec![0.0; origin.len() * PARAMS_PER_SPLAT];
        for (new, o) in origin.iter().enumerate() {
            if let SplatOrigin::Kept(old) = *o {
                let (src, dst) = (old * PARAMS_PER_SPLAT, new * PARAMS_PER_SPLAT);
                m[dst..dst + PARAMS_PER_SPLAT]
                    .copy_from_slice(&self.m[src..src + PARAMS_PER_SPLAT]);
                v[dst..dst + PARAMS_PER_SPLAT]
                    .copy_from_slice(&self.v[src..src + PARAMS_PER_SPLAT]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One Adam update in place.
///
/// Coordinates whose gradient is exactly zero are left alone, moments
/// included, so splats that received no signal this step do not coast on
/// stale momentum. The step counter always advances.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Layout {
            expected: state.len(),
            actual: if params.len() != state.len() {
                params.len()
            } else {
                grads.len()
            },
        });
    }
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        if g == 0.0 {
            continue;
        }
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = AdamState::new(3, Schedule::constant(0.1));
        s.m = vec![0.5, -0.2, 0.1];
        s.v = vec![0.3, 0.3, 0.3];
        let mut p = vec![1.0, 2.0, 3.0];
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(1, Schedule::constant(1e-3));
        let mut p = vec![0.0];
        adam_step(&mut p, &[4.0], &mut s).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-11);
    }

    #[test]
    fn quadratic_descends() {
        let mut s = AdamState::new(1, Schedule::constant(1e-2));
        let mut x = vec![1.0];
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut s).unwrap();
        }
        assert!(x[0].abs() < 0.5);
    }

    #[test]
    fn schedule_endpoints() {
        let sch = Schedule::modeling(1000);
        assert_eq!(sch.lr(0), 1e-3);
        assert!((sch.lr(1000) - 1e-5).abs() < 1e-18);
        assert!((sch.lr(500) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_errors() {
        let mut s = AdamState::new(2, Schedule::constant(1e-3));
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s).is_err());
    }
}
