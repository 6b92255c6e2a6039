//! SGD with momentum and learning-rate schedules.

use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, ParamStore, Real, Result};

/// One update of every trainable parameter:
/// `v <- momentum * v + g; p <- p - lr * v`, then gradients are zeroed.
pub fn sgd_step(params: &mut ParamStore, lr: Real, momentum: Real) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    for e in params.entries_mut().iter_mut().filter(|e| e.trainable) {
        let (p, g, v) = (e.value.data_mut(), e.grad.data(), e.velocity.data_mut());
        for i in 0..p.len() {
            v[i] = momentum * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    }
    params.zero_grad();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheduler {
    Constant,
    /// Multiply by `gamma` every `period` epochs.
    Step { gamma: Real, period: usize },
}

impl Scheduler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheduler::Constant => Ok(()),
            Scheduler::Step { gamma, period } => {
                if !(gamma > 0.0) {
                    return Err(Error::config(format!("step scheduler gamma must be positive, got {gamma}")));
                }
                if period == 0 {
                    return Err(Error::config("step scheduler period must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Learning rate for a zero-based epoch index.
pub fn schedule_lr(base_lr: Real, scheduler: Scheduler, epoch: usize) -> Result<Real> {
    scheduler.validate()?;
    Ok(match scheduler {
        Scheduler::Constant => base_lr,
        Scheduler::Step { gamma, period } => base_lr * gamma.powi((epoch / period) as i32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(p: Real) -> (ParamStore, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p), true).unwrap();
        (s, id)
    }

    #[test]
    fn plain_step() {
        let (mut s, id) = single(1.0);
        s.entries_mut()[0].grad = Tensor::scalar(2.0);
        sgd_step(&mut s, 0.1, 0.0).unwrap();
        assert!((s.value(id).item() - 0.8).abs() < 1e-15);
        assert_eq!(s.grad(id).item(), 0.0);
    }

    #[test]
    fn momentum_recursion_by_hand() {
        // g = 1 on both steps, lr 0.1, momentum 0.9:
        // v1 = 1, p1 = 1 - 0.1 = 0.9; v2 = 0.9 + 1 = 1.9, p2 = 0.9 - 0.19 = 0.71
        let (mut s, id) = single(1.0);
        for _ in 0..2 {
            s.entries_mut()[0].grad = Tensor::scalar(1.0);
            sgd_step(&mut s, 0.1, 0.9).unwrap();
        }
        assert!((s.value(id).item() - 0.71).abs() < 1e-14);
        assert!((s.entry(id).velocity.item() - 1.9).abs() < 1e-14);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut s, id) = single(5.0);
        let mut steps = 0;
        while s.value(id).item().abs() >= 1e-3 {
            let p = s.value(id).item();
            s.entries_mut()[0].grad = Tensor::scalar(2.0 * p);
            sgd_step(&mut s, 0.1, 0.0).unwrap();
            steps += 1;
            assert!(steps <= 200);
        }
    }

    #[test]
    fn bad_hyperparameters() {
        let (mut s, _) = single(1.0);
        assert!(matches!(sgd_step(&mut s, 0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(sgd_step(&mut s, -1.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(sgd_step(&mut s, 0.1, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn schedules() {
        assert_eq!(schedule_lr(0.5, Scheduler::Constant, 99).unwrap(), 0.5);
        let lr = schedule_lr(1.0, Scheduler::Step { gamma: 0.1, period: 10 }, 25).unwrap();
        assert!((lr - 0.01).abs() < 1e-15);
        for e in 0..50 {
            assert_eq!(schedule_lr(0.3, Scheduler::Step { gamma: 1.0, period: 3 }, e).unwrap(), 0.3);
        }
        assert!(schedule_lr(1.0, Scheduler::Step { gamma: 0.0, period: 1 }, 0).is_err());
    }
}
