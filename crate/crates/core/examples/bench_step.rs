use medpipe_core::kernels::loss::LossKind;
use medpipe_core::models::{build, ArchSpec, Architecture, FinalActivation, Task};
use medpipe_core::{optim, Real, Rng, Tape, Tensor};
use std::time::Instant;

fn main() {
    let arch = std::env::args().nth(1).unwrap_or("resunet".into());
    let size: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let bs: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let a: Architecture = arch.parse().unwrap();
    let task = if a.is_vgg() { Task::Regression } else { Task::Segmentation };
    let spec = ArchSpec {
        architecture: a,
        dims: 2,
        in_channels: 1,
        classes: if a.is_vgg() { 1 } else { 2 },
        base_filters: 8,
        depth: 3,
        final_activation: if a.is_vgg() { FinalActivation::None } else { FinalActivation::Softmax },
        batch_norm: false,
    };
    let mut m = build(&spec, task, 1).unwrap();
    let mut rng = Rng::new(0);
    let x = Tensor::from_fn(&[bs, 1, size, size], |_| rng.normal(0.0, 1.0) as Real);
    let y = if a.is_vgg() { Tensor::zeros(&[bs, 1]) } else { Tensor::from_fn(&[bs, 2, size, size], |i| (i % 2) as Real) };
    let kind = if a.is_vgg() { LossKind::Mse } else { LossKind::Dice };
    let t = Instant::now();
    for _ in 0..5 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = m.forward_train(&mut tape, xv).unwrap();
        let l = tape.loss(p, &y, kind).unwrap();
        tape.backward_into(l, m.params_mut()).unwrap();
        optim::sgd_step(m.params_mut(), 0.01, 0.9).unwrap();
    }
    println!("{arch} {size} bs{bs}: {:.3}s/step, params {}", t.elapsed().as_secs_f64() / 5.0, m.params().entries().iter().map(|e| e.value.len()).sum::<usize>());
}
