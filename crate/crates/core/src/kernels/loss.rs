//! Loss functions with analytic gradients w.r.t. the prediction.

use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Real, Result, Tensor};

/// Smoothing added to numerator and denominator of the soft Dice ratio.
pub const DICE_SMOOTH: Real = 1e-7;
const LOG_FLOOR: Real = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    Mse,
    CrossEntropy,
}

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        let axis = pred
            .shape()
            .iter()
            .zip(target.shape())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(Error::dim(
            axis,
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    Ok(())
}

/// Returns `(loss, d loss / d pred)`.
pub fn loss_forward_backward(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<(Real, Tensor)> {
    check(pred, target)?;
    Ok(match kind {
        LossKind::Dice => soft_dice(pred, target),
        LossKind::Mse => mse(pred, target),
        LossKind::CrossEntropy => cross_entropy(pred, target),
    })
}

/// `1 - mean over (sample, class) of (2 Σ p t + ε) / (Σ p + Σ t + ε)` on
/// `[B, C, S...]` probabilities.
fn soft_dice(pred: &Tensor, target: &Tensor) -> (Real, Tensor) {
    let groups = pred.shape()[0] * pred.shape().get(1).copied().unwrap_or(1);
    let vol = pred.len() / groups;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for g in 0..groups {
        let p = &pred.data()[g * vol..(g + 1) * vol];
        let t = &target.data()[g * vol..(g + 1) * vol];
        let inter: Real = p.iter().zip(t).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<Real>() + t.iter().sum::<Real>() + DICE_SMOOTH;
        let num = 2.0 * inter + DICE_SMOOTH;
        total += num / denom;
        let scale = -1.0 / groups as Real;
        for (d, &tv) in grad.data_mut()[g * vol..(g + 1) * vol].iter_mut().zip(t) {
            *d = scale * (2.0 * tv * denom - num) / (denom * denom);
        }
    }
    (1.0 - total / groups as Real, grad)
}

fn mse(pred: &Tensor, target: &Tensor) -> (Real, Tensor) {
    let n = pred.len() as Real;
    let mut grad = Tensor::zeros(pred.shape());
    let mut s = 0.0;
    for ((d, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        s += (p - t) * (p - t);
        *d = 2.0 * (p - t) / n;
    }
    (s / n, grad)
}

/// Categorical cross-entropy on `[B, C]` probabilities, averaged over samples.
fn cross_entropy(pred: &Tensor, target: &Tensor) -> (Real, Tensor) {
    let bsz = pred.shape()[0] as Real;
    let mut grad = Tensor::zeros(pred.shape());
    let mut s = 0.0;
    for ((d, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        if t != 0.0 {
            let pc = p.max(LOG_FLOOR);
            s -= t * pc.ln();
            if p > LOG_FLOOR {
                *d = -t / (p * bsz);
            }
        }
    }
    (s / bsz, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dice_perfect_prediction_is_near_zero() {
        let t = Tensor::new(&[1, 2, 2, 2], vec![1., 0., 1., 0., 0., 1., 0., 1.]).unwrap();
        let (l, _) = loss_forward_backward(&t, &t, LossKind::Dice).unwrap();
        assert!(l.abs() < 1e-7);
    }

    #[test]
    fn mse_hand_values() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(loss_forward_backward(&a, &a, LossKind::Mse).unwrap().0, 0.0);
        let z = Tensor::zeros(&[2]);
        let o = Tensor::full(&[2], 1.0);
        assert_eq!(loss_forward_backward(&z, &o, LossKind::Mse).unwrap().0, 1.0);
    }

    #[test]
    fn cross_entropy_uniform() {
        let p = Tensor::full(&[1, 4], 0.25);
        let t = Tensor::new(&[1, 4], vec![0., 1., 0., 0.]).unwrap();
        let (l, _) = loss_forward_backward(&p, &t, LossKind::CrossEntropy).unwrap();
        assert!((l - (4.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(&[1, 2, 4]);
        let b = Tensor::zeros(&[1, 2, 5]);
        assert!(matches!(
            loss_forward_backward(&a, &b, LossKind::Mse),
            Err(Error::Dimension { axis: 2, .. })
        ));
    }
}
