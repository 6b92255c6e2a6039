//! Central finite-difference checks of the reverse-mode gradients.
//!
//! [`check`] compares the tape's gradient of a scalar with respect to each
//! input against `(f(x + h e_i) - f(x - h e_i)) / 2h`, reporting the
//! norm-wise relative error `|g - n| / max(|g|, |n|)` per input.
//! [`kernel_suite`] runs that check over every differentiable operation.

use alloc::{string::String, vec, vec::Vec};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::kernels::activation::Activation;
use crate::kernels::loss::LossKind;
use crate::{Real, Result, Rng, Tape, Tensor, Var};

/// Default central-difference step.
pub const STEP: Real = 1e-5;

fn eval(inputs: &[Tensor], f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<Real> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

fn norm(v: impl Iterator<Item = Real>) -> Real {
    v.map(|x| x * x).sum::<Real>().sqrt()
}

/// Relative gradient error of `f` with respect to each input.
pub fn check(inputs: &[Tensor], h: Real, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<Vec<Real>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = Vec::with_capacity(input.len());
        let mut probe = inputs.to_vec();
        for i in 0..input.len() {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = eval(&probe, &f)?;
            probe[k].data_mut()[i] = x0 - h;
            let down = eval(&probe, &f)?;
            probe[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = norm(analytic.data().iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.data().iter().copied()).max(norm(numeric.iter().copied()));
        errors.push(if scale == 0.0 { diff } else { diff / scale });
    }
    Ok(errors)
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0) as Real)
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.range(0.1, 0.9) as Real)
}

fn one_hot_rows(rows: usize, classes: usize, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(&[rows, classes]);
    for r in 0..rows {
        let c = rng.below(classes as u64) as usize;
        t.data_mut()[r * classes + c] = 1.0;
    }
    t
}

/// Reduce a kernel output to a scalar with a fixed random quadratic.
fn mse_head(tape: &mut Tape, y: Var, target: &Tensor) -> Result<Var> {
    tape.loss(y, target, LossKind::Mse)
}

/// Worst relative error of every differentiable operation and loss,
/// checked on small random inputs. Returns `(name, error)` pairs.
pub fn kernel_suite(seed: u64) -> Result<Vec<(String, Real)>> {
    let mut rng = Rng::new(seed);
    let mut out: Vec<(String, Real)> = Vec::new();
    let mut record = |name: &str, errs: Vec<Real>| {
        out.push((name.into(), errs.into_iter().fold(0.0, Real::max)));
    };

    for (name, xs, ws, stride, pad) in [
        ("conv2d", vec![2, 2, 5, 6], vec![3, 2, 3, 3], vec![1, 1], vec![1, 1]),
        ("conv2d_stride2", vec![1, 2, 6, 7], vec![2, 2, 3, 3], vec![2, 2], vec![1, 0]),
        ("conv3d", vec![1, 2, 4, 4, 3], vec![2, 2, 3, 3, 3], vec![1, 1, 1], vec![1, 1, 1]),
        ("conv2d_1x1", vec![2, 3, 4, 4], vec![2, 3, 1, 1], vec![1, 1], vec![0, 0]),
    ] {
        let x = random(&xs, &mut rng);
        let w = random(&ws, &mut rng);
        let b = random(&[ws[0]], &mut rng);
        let mut probe = Tape::new();
        let (xv, wv, bv) = (probe.constant(x.clone()), probe.constant(w.clone()), probe.constant(b.clone()));
        let y = probe.conv(xv, wv, Some(bv), &stride, &pad)?;
        let target = random(probe.value(y).shape(), &mut rng);
        record(
            name,
            check(&[x, w, b], STEP, |t, v| {
                let y = t.conv(v[0], v[1], Some(v[2]), &stride, &pad)?;
                mse_head(t, y, &target)
            })?,
        );
    }

    for (name, xs, ws, stride) in [
        ("transpose_conv2d", vec![2, 3, 3, 4], vec![3, 2, 2, 2], vec![2, 2]),
        ("transpose_conv3d", vec![1, 2, 2, 3, 2], vec![2, 2, 2, 2, 2], vec![2, 2, 2]),
    ] {
        let x = random(&xs, &mut rng);
        let w = random(&ws, &mut rng);
        let b = random(&[ws[1]], &mut rng);
        let mut probe = Tape::new();
        let (xv, wv, bv) = (probe.constant(x.clone()), probe.constant(w.clone()), probe.constant(b.clone()));
        let y = probe.transpose_conv(xv, wv, Some(bv), &stride)?;
        let target = random(probe.value(y).shape(), &mut rng);
        record(
            name,
            check(&[x, w, b], STEP, |t, v| {
                let y = t.transpose_conv(v[0], v[1], Some(v[2]), &stride)?;
                mse_head(t, y, &target)
            })?,
        );
    }

    let x = random(&[2, 2, 6, 6], &mut rng);
    let target = random(&[2, 2, 3, 3], &mut rng);
    record("max_pool", check(std::slice::from_ref(&x), STEP, |t, v| {
        let y = t.max_pool(v[0], &[2, 2], &[2, 2])?;
        mse_head(t, y, &target)
    })?);
    record("avg_pool", check(std::slice::from_ref(&x), STEP, |t, v| {
        let y = t.avg_pool(v[0], &[2, 2], &[2, 2])?;
        mse_head(t, y, &target)
    })?);
    let gtarget = random(&[2, 2, 1, 1], &mut rng);
    record("global_avg_pool", check(std::slice::from_ref(&x), STEP, |t, v| {
        let y = t.global_avg_pool(v[0])?;
        mse_head(t, y, &gtarget)
    })?);
    let utarget = random(&[2, 2, 12, 18], &mut rng);
    record("upsample", check(std::slice::from_ref(&x), STEP, |t, v| {
        let y = t.upsample(v[0], &[2, 3])?;
        mse_head(t, y, &utarget)
    })?);

    let xt = random(&[2, 3, 4, 4], &mut rng);
    let at = random(&[2, 3, 4, 4], &mut rng);
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.1)),
        ("sigmoid", Activation::Sigmoid),
        ("softmax", Activation::Softmax(1)),
    ] {
        record(name, check(std::slice::from_ref(&xt), STEP, |t, v| {
            let y = t.activation(v[0], kind)?;
            mse_head(t, y, &at)
        })?);
    }

    let g = random(&[3], &mut rng);
    let be = random(&[3], &mut rng);
    for (name, per_sample) in [("instance_norm", true), ("batch_norm", false)] {
        record(name, check(&[xt.clone(), g.clone(), be.clone()], STEP, |t, v| {
            let (y, _, _) = t.norm(v[0], v[1], v[2], per_sample)?;
            mse_head(t, y, &at)
        })?);
    }
    let mean = random(&[3], &mut rng);
    let var = positive(&[3], &mut rng);
    record("frozen_batch_norm", check(&[xt.clone(), g.clone(), be.clone()], STEP, |t, v| {
        let y = t.frozen_batch_norm(v[0], v[1], v[2], &mean, &var)?;
        mse_head(t, y, &at)
    })?);

    let xd = random(&[3, 5], &mut rng);
    let wd = random(&[5, 4], &mut rng);
    let bd = random(&[4], &mut rng);
    let dt = random(&[3, 4], &mut rng);
    record("dense", check(&[xd, wd, bd], STEP, |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        mse_head(t, y, &dt)
    })?);

    let yt = random(&[2, 3, 4, 4], &mut rng);
    record("add", check(&[xt.clone(), yt.clone()], STEP, |t, v| {
        let y = t.add(v[0], v[1])?;
        mse_head(t, y, &at)
    })?);
    let ct = random(&[2, 5, 4, 4], &mut rng);
    let xc = random(&[2, 2, 4, 4], &mut rng);
    record("concat", check(&[xt.clone(), xc], STEP, |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        mse_head(t, y, &ct)
    })?);
    let rt = random(&[2, 48], &mut rng);
    record("reshape", check(std::slice::from_ref(&xt), STEP, |t, v| {
        let y = t.reshape(v[0], &[2, 48])?;
        mse_head(t, y, &rt)
    })?);
    record("sum", check(std::slice::from_ref(&xt), STEP, |t, v| {
        let s = t.sum(v[0]);
        let r = t.reshape(s, &[1])?;
        mse_head(t, r, &Tensor::full(&[1], 0.5))
    })?);
    record("mean", check(std::slice::from_ref(&xt), STEP, |t, v| {
        let s = t.mean(v[0]);
        let r = t.reshape(s, &[1])?;
        mse_head(t, r, &Tensor::full(&[1], 0.5))
    })?);

    let p = positive(&[2, 3, 4, 4], &mut rng);
    let seg = Tensor::from_fn(&[2, 3, 4, 4], |_| Real::from(u8::from(rng.bernoulli(0.4))));
    record("loss_dice", check(std::slice::from_ref(&p), STEP, |t, v| t.loss(v[0], &seg, LossKind::Dice))?);
    let mt = random(&[2, 3, 4, 4], &mut rng);
    record("loss_mse", check(&[random(&[2, 3, 4, 4], &mut rng)], STEP, |t, v| t.loss(v[0], &mt, LossKind::Mse))?);
    let pc = positive(&[4, 3], &mut rng);
    let oh = one_hot_rows(4, 3, &mut rng);
    record("loss_cross_entropy", check(&[pc], STEP, |t, v| t.loss(v[0], &oh, LossKind::CrossEntropy))?);
    let logits = random(&[4, 3], &mut rng);
    record("softmax_cross_entropy", check(&[logits], STEP, |t, v| {
        let y = t.activation(v[0], Activation::Softmax(1))?;
        t.loss(y, &oh, LossKind::CrossEntropy)
    })?);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_fn(&[4], |i| i as Real + 0.5);
        let target = Tensor::zeros(&[4]);
        let ok = check(std::slice::from_ref(&x), STEP, |t, v| t.loss(v[0], &target, LossKind::Mse)).unwrap();
        assert!(ok[0] < 1e-8);
    }
}
