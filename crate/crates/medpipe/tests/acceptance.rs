//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion ids (e.g. `AC3`) as
//! arguments to run a subset.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use medpipe::config::PipelineConfig;
use medpipe::data::load_subjects;
use medpipe::evaluate::{predict, Output};
use medpipe::io::read_manifest;
use medpipe::splits::{plan_for, write_plan};
use medpipe::synthetic;
use medpipe::trainer::{self, fold_dir, read_logs, run_fold, select, BEST};
use medpipe_core::augment::kspace::{bias_field, ghosting, monomials, spike, SpikeParams};
use medpipe_core::augment::spatial::{elastic, flip, rotate, ElasticParams};
use medpipe_core::augment::intensity::gamma;
use medpipe_core::augment::{compose, default_kinds, AugmentationPlan, PlanEntry, Sample};
use medpipe_core::crossval::{make_nested_splits, SplitMode};
use medpipe_core::fft::{dft_line, fft_nd, Complex};
use medpipe_core::gradcheck::kernel_suite;
use medpipe_core::histology::{build_tiled_pyramid, mine_patches, otsu_threshold, tiled_infer, tissue_mask};
use medpipe_core::inference::{dice_class, mse, sliding_window, StitchMode};
use medpipe_core::kernels::activation::Activation;
use medpipe_core::{Geometry, Image, Real, Rng, Tape, Tensor};

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn image(ext: &[usize], channels: usize, values: Vec<Real>) -> Image {
    Image::new(ext, channels, values, Geometry::unit(ext.len())).expect("consistent test image")
}

fn random_image(ext: &[usize], channels: usize, rng: &mut Rng) -> Image {
    let n = channels * ext.iter().product::<usize>();
    image(ext, channels, (0..n).map(|_| rng.normal(0.0, 1.0)).collect())
}

fn max_abs_diff(a: &[Real], b: &[Real]) -> Real {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, Real::max)
}

// AC1 ---------------------------------------------------------------------

fn gradient_suite() -> Check {
    let start = Instant::now();
    let results = kernel_suite(20_240_601).map_err(e2s)?;
    let worst = results.iter().cloned().fold(("none".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<_> = results.iter().filter(|(_, e)| e.is_nan() || *e >= 1e-4).collect();
    ensure(bad.is_empty(), || format!("relative error >= 1e-4 for {bad:?}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("suite took {secs:.1}s"))?;
    Ok(format!("{} kernels and losses, worst {} at {:.2e}", results.len(), worst.0, worst.1))
}

// AC2 ---------------------------------------------------------------------

fn nested_cv() -> Check {
    let ids: Vec<String> = (0..100).map(|i| format!("s{i:03}")).collect();
    let plan = make_nested_splits(&ids, 5, 5, 42, SplitMode::Nested).map_err(e2s)?;
    ensure(plan.folds.len() == 25, || format!("{} folds", plan.folds.len()))?;
    let all: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut outer_tests: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); 5];
    for f in &plan.folds {
        let (tr, va, te) = (f.train.len() as i64, f.validation.len() as i64, f.test.len() as i64);
        ensure((te - 20).abs() <= 1 && (va - 16).abs() <= 1 && (tr - 64).abs() <= 1, || {
            format!("fold ({}, {}) has {te}/{va}/{tr}", f.outer, f.inner)
        })?;
        let sets: Vec<BTreeSet<&str>> =
            [&f.train, &f.validation, &f.test].iter().map(|v| v.iter().map(String::as_str).collect()).collect();
        ensure(sets.iter().map(BTreeSet::len).sum::<usize>() == 100, || "duplicate ids inside a fold".into())?;
        let union: BTreeSet<&str> = sets.iter().flatten().copied().collect();
        ensure(union == all, || format!("fold ({}, {}) does not cover every id", f.outer, f.inner))?;
        let test: BTreeSet<&str> = sets[2].clone();
        if outer_tests[f.outer].is_empty() {
            outer_tests[f.outer] = test;
        } else {
            ensure(outer_tests[f.outer] == test, || format!("test set varies inside outer fold {}", f.outer))?;
        }
    }
    let mut seen = BTreeSet::new();
    for t in &outer_tests {
        for id in t {
            ensure(seen.insert(*id), || format!("{id} is in two outer test sets"))?;
        }
    }
    ensure(seen == all, || "outer test sets do not partition the ids".into())?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_plan(&a, &plan).map_err(e2s)?;
    write_plan(&b, &make_nested_splits(&ids, 5, 5, 42, SplitMode::Nested).map_err(e2s)?).map_err(e2s)?;
    ensure(fs::read(&a).map_err(e2s)? == fs::read(&b).map_err(e2s)?, || "plans differ between runs".into())?;
    Ok("25 folds of 20/16/64, partition laws hold, plans byte-identical".into())
}

// AC3 / AC4 -----------------------------------------------------------------

fn fold_of(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<(Vec<medpipe::data::Subject>, f64), String> {
    let records = read_manifest(manifest, cfg.task(), true).map_err(e2s)?;
    let plan = plan_for(&records, cfg).map_err(e2s)?;
    let subjects = load_subjects(&records, cfg).map_err(e2s)?;
    let fold = &plan.folds[0];
    let report = run_fold(cfg, &subjects, fold, out).map_err(e2s)?;
    Ok((subjects, report.best_val_loss))
}

fn segmentation_end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let manifest = synthetic::write_segmentation_dataset(&dir.path().join("data"), 200, 64, 11).map_err(e2s)?;
    let cfg = PipelineConfig::from_yaml(
        "model: {architecture: resunet, base_filters: 8, depth: 3, class_list: [0, 1]}\n\
         patch_size: [32, 32]\nbatch_size: 8\nnum_epochs: 20\nlearning_rate: 0.02\nloss_function: dice\n\
         nested_training: {testing: 5, validation: 5, mode: single_fold}\n\
         q_samples_per_volume: 4\nq_max_length: 32\ninference: {overlap: 0.5, stitch: average}\nseed: 3\n",
    )
    .map_err(e2s)?;
    let out = dir.path().join("out");
    let (subjects, _) = fold_of(&cfg, &manifest, &out)?;
    let records = read_manifest(&manifest, cfg.task(), true).map_err(e2s)?;
    let plan = plan_for(&records, &cfg).map_err(e2s)?;
    let test = select(&subjects, &plan.folds[0].test).map_err(e2s)?;
    let model = medpipe::checkpoint::load(&fold_dir(&out, 0, 0).join(BEST)).map_err(e2s)?.model;
    let mut total = 0.0;
    for s in &test {
        let Output::Probabilities(p) = predict(&model, &s.image, &cfg).map_err(e2s)? else {
            return Err("segmentation model returned scores".into());
        };
        let labels = medpipe_core::inference::argmax_labels(&p);
        total += dice_class(&labels, s.mask.as_ref().expect("mask"), 1.0).map_err(e2s)?;
    }
    let dice = total / test.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(dice >= 0.90, || format!("stitched test Dice {dice:.4} < 0.90"))?;
    ensure(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!("stitched test Dice {dice:.4} on {} subjects in {secs:.0}s", test.len()))
}

fn regression_end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(e2s)?;
    let manifest = synthetic::write_regression_dataset(&dir.path().join("data"), 200, 32, 5).map_err(e2s)?;
    let cfg = PipelineConfig::from_yaml(
        "model: {architecture: vgg11, base_filters: 8}\npatch_size: [32, 32]\nbatch_size: 8\nnum_epochs: 20\n\
         learning_rate: 0.002\nloss_function: mse\nnested_training: {testing: 5, validation: 5, mode: single_fold}\n\
         seed: 4\n",
    )
    .map_err(e2s)?;
    let out = dir.path().join("out");
    let (subjects, _) = fold_of(&cfg, &manifest, &out)?;
    let records = read_manifest(&manifest, cfg.task(), true).map_err(e2s)?;
    let plan = plan_for(&records, &cfg).map_err(e2s)?;
    let test = select(&subjects, &plan.folds[0].test).map_err(e2s)?;
    let model = medpipe::checkpoint::load(&fold_dir(&out, 0, 0).join(BEST)).map_err(e2s)?.model;
    let mut preds = Vec::new();
    let targets: Vec<Real> = test.iter().map(|s| s.value.expect("label")).collect();
    for s in &test {
        let Output::Scores(v) = predict(&model, &s.image, &cfg).map_err(e2s)? else {
            return Err("regression model returned a map".into());
        };
        preds.push(v[0]);
    }
    let err = mse(&preds, &targets).map_err(e2s)?;
    let mean = targets.iter().sum::<Real>() / targets.len() as Real;
    let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<Real>() / targets.len() as Real;
    ensure(err < 0.1 * var, || format!("test MSE {err:.5} >= 0.1 x variance {var:.5}"))?;
    Ok(format!(
        "test MSE {err:.5} vs target variance {var:.5} (ratio {:.3}) in {:.0}s",
        err / var,
        start.elapsed().as_secs_f64()
    ))
}

// AC5 ---------------------------------------------------------------------

struct Voxelwise {
    w: Tensor,
    b: Tensor,
}

impl Voxelwise {
    fn new(cin: usize, cout: usize, dims: usize, rng: &mut Rng) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(1, dims));
        Voxelwise {
            w: Tensor::from_fn(&shape, |_| rng.normal(0.0, 1.0)),
            b: Tensor::from_fn(&[cout], |_| rng.normal(0.0, 1.0)),
        }
    }

    fn forward(&self, x: &Tensor) -> medpipe_core::Result<Tensor> {
        let dims = x.ndim() - 2;
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(self.w.clone()), tape.constant(self.b.clone()));
        let y = tape.conv(xv, wv, Some(bv), &vec![1; dims], &vec![0; dims])?;
        let p = tape.activation(y, Activation::Softmax(1))?;
        Ok(tape.value(p).clone())
    }
}

fn stitching_oracle() -> Check {
    let mut rng = Rng::new(77);
    let mut checked = 0;
    for (ext, patch) in [(vec![37, 45], vec![16, 16]), (vec![10, 12, 9], vec![4, 8, 4])] {
        let img = random_image(&ext, 2, &mut rng);
        let model = Voxelwise::new(2, 3, ext.len(), &mut rng);
        let whole = model.forward(&img.to_tensor()).map_err(e2s)?;
        for overlap in [0.0, 0.25, 0.5] {
            let st = sliding_window(&img, &patch, overlap, StitchMode::Average, |b| model.forward(b)).map_err(e2s)?;
            let d = max_abs_diff(st.prediction.map.values(), whole.data());
            ensure(d <= 1e-9, || format!("average mode, {ext:?} overlap {overlap}: differs by {d:e}"))?;
            let cr = sliding_window(&img, &patch, overlap, StitchMode::Crop, |b| model.forward(b)).map_err(e2s)?;
            ensure(cr.counts.counts.iter().all(|&c| c == 1.0), || {
                format!("crop mode, {ext:?} overlap {overlap}: coverage is not exactly 1")
            })?;
            let d = max_abs_diff(cr.prediction.map.values(), whole.data());
            ensure(d <= 1e-9, || format!("crop mode, {ext:?} overlap {overlap}: differs by {d:e}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} image/overlap cases match the whole-image forward; crop coverage exactly 1"))
}

// AC6 ---------------------------------------------------------------------

/// Exhaustive Otsu: maximise w0 w1 (mu0 - mu1)^2 over cut points `t`
/// (class 0 = bins <= t) using exact integer arithmetic on
/// `(n1 S0 - n0 S1)^2 / (n0 n1)`; lowest `t` wins ties.
fn otsu_oracle(h: &[u64; 256]) -> Option<u8> {
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..255usize {
        let (n0, s0): (u128, u128) = (0..=t).fold((0, 0), |(n, s), i| (n + h[i] as u128, s + i as u128 * h[i] as u128));
        let (n1, s1): (u128, u128) =
            (t + 1..256).fold((0, 0), |(n, s), i| (n + h[i] as u128, s + i as u128 * h[i] as u128));
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n1 * s0).abs_diff(n0 * s1);
        let (num, den) = (diff * diff, n0 * n1);
        match best {
            Some((_, bn, bd)) if num * bd <= bn * den => {}
            _ => best = Some((t as u8, num, den)),
        }
    }
    best.map(|b| b.0)
}

fn otsu() -> Check {
    let mut rng = Rng::new(6);
    let mut mismatches = 0;
    for case in 0..1000 {
        let mut h = [0u64; 256];
        match case % 4 {
            0 => h.iter_mut().for_each(|v| *v = rng.below(1000)),
            1 => {
                for _ in 0..1 + rng.below(6) {
                    h[rng.below(256) as usize] += 1 + rng.below(1000);
                }
            }
            2 => {
                for _ in 0..2000 {
                    let c = if rng.bernoulli(0.4) { 60.0 } else { 190.0 };
                    h[rng.normal(c, 20.0).clamp(0.0, 255.0) as usize] += 1;
                }
            }
            _ => {
                let lo = rng.below(200) as usize;
                for v in h.iter_mut().skip(lo).take(1 + rng.below(50) as usize) {
                    *v = rng.below(5);
                }
            }
        }
        let got = otsu_threshold(&h).ok();
        if got != otsu_oracle(&h) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok("1000 histograms, zero mismatches against exhaustive search".into())
}

// AC7 ---------------------------------------------------------------------

fn naive_dft(x: &[Complex]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (j, &v)| {
                let a = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                acc + v * Complex::new(a.cos(), a.sin())
            })
        })
        .collect()
}

fn fft_suite() -> Check {
    let mut rng = Rng::new(8);
    let mut worst: f64 = 0.0;
    for n in [7usize, 12, 16, 32] {
        let x: Vec<Complex> = (0..n).map(|_| Complex::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0))).collect();
        let mut y = x.clone();
        dft_line(&mut y, false);
        let oracle = naive_dft(&x);
        let d = y.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ensure(d < 1e-10, || format!("n={n}: differs from naive DFT by {d:e}"))?;
        let mut back = y.clone();
        fft_nd(&mut back, &[n], true);
        let r = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ensure(r < 1e-10, || format!("n={n}: round trip error {r:e}"))?;
        let ex: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let p = (ex - ey).abs() / ex;
        ensure(p < 1e-10, || format!("n={n}: Parseval mismatch {p:e}"))?;
        worst = worst.max(d).max(r).max(p);
    }
    for shape in [vec![7, 12], vec![4, 6, 5]] {
        let total: usize = shape.iter().product();
        let x: Vec<Complex> = (0..total).map(|_| Complex::new(rng.normal(0.0, 1.0), 0.0)).collect();
        let mut y = x.clone();
        fft_nd(&mut y, &shape, false);
        fft_nd(&mut y, &shape, true);
        let r = y.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ensure(r < 1e-10, || format!("{shape:?}: round trip error {r:e}"))?;
        worst = worst.max(r);
    }
    Ok(format!("sizes 7/12/16/32 and 2D/3D grids, worst error {worst:.1e}"))
}

// AC8 ---------------------------------------------------------------------

fn same(a: &Sample, b: &Sample, tol: Real, what: &str) -> Result<(), String> {
    let d = max_abs_diff(a.image.values(), b.image.values());
    ensure(a.image.extents() == b.image.extents() && d <= tol, || format!("{what}: image differs by {d:e}"))?;
    match (&a.mask, &b.mask) {
        (Some(x), Some(y)) => {
            let d = max_abs_diff(x.values(), y.values());
            ensure(d <= tol, || format!("{what}: mask differs by {d:e}"))
        }
        (None, None) => Ok(()),
        _ => Err(format!("{what}: mask presence changed")),
    }
}

fn augmentation_identities() -> Check {
    let mut rng = Rng::new(12);
    for ext in [vec![16, 16], vec![8, 8, 6]] {
        let dims = ext.len();
        let img = random_image(&ext, 1, &mut rng).map(|v| v + 3.0);
        let mask = image(&ext, 1, (0..img.voxels()).map(|_| Real::from(u8::from(rng.bernoulli(0.3)))).collect());
        let s = Sample::new(img.clone(), Some(mask)).map_err(e2s)?;
        let all_axes: Vec<usize> = (0..dims).collect();
        let twice = flip(&flip(&s, &all_axes).map_err(e2s)?, &all_axes).map_err(e2s)?;
        same(&twice, &s, 0.0, "flip twice")?;
        let mut r = s.clone();
        for _ in 0..4 {
            r = rotate(&r, 1, (0, 1)).map_err(e2s)?;
        }
        same(&r, &s, 0.0, "rotate 90 four times")?;
        let g = Sample::new(gamma(&img, 1.0).map_err(e2s)?, None).map_err(e2s)?;
        same(&g, &Sample::new(img.clone(), None).map_err(e2s)?, 1e-12, "gamma(1)")?;
        let grid = vec![4; dims];
        let cells: usize = grid.iter().product();
        let e = elastic(&s, &ElasticParams { grid, displacement: vec![vec![0.0; cells]; dims] }).map_err(e2s)?;
        same(&e, &s, 1e-12, "zero elastic")?;
        let plain = Sample::new(img.clone(), None).map_err(e2s)?;
        let gh = Sample::new(ghosting(&img, 2, 0, 0.0).map_err(e2s)?, None).map_err(e2s)?;
        same(&gh, &plain, 1e-12, "zero ghosting")?;
        let sp = spike(&img, &SpikeParams { positions: vec![vec![1; dims]], intensity: 0.0 }).map_err(e2s)?;
        same(&Sample::new(sp, None).map_err(e2s)?, &plain, 1e-12, "zero spike")?;
        let zero = vec![0.0; monomials(dims, 3).len()];
        let bf = Sample::new(bias_field(&img, 3, &zero).map_err(e2s)?, None).map_err(e2s)?;
        same(&bf, &plain, 1e-12, "zero bias field")?;

        let plan = AugmentationPlan {
            entries: default_kinds(dims).into_iter().map(|kind| PlanEntry { kind, probability: 0.5 }).collect(),
        };
        let a = compose(&plan, &s, &mut Rng::new(99)).map_err(e2s)?;
        let b = compose(&plan, &s, &mut Rng::new(99)).map_err(e2s)?;
        same(&a, &b, 0.0, "seeded compose")?;
    }
    Ok("flip, rotate, gamma, elastic, ghosting, spike and bias identities hold in 2D and 3D; compose reproducible".into())
}

// AC9 ---------------------------------------------------------------------

fn histology() -> Check {
    let mut rng = Rng::new(21);
    let (slide, oracle) = synthetic::slide(512, &mut rng);
    let tiled = build_tiled_pyramid(&slide, 3, 2, 128).map_err(e2s)?;
    let mask = tissue_mask(&tiled, 0).map_err(e2s)?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&m, &o) in mask.mask.iter().zip(oracle.values()) {
        let o = o != 0.0;
        inter += usize::from(m && o);
        a += usize::from(m);
        b += usize::from(o);
    }
    let dice = 2.0 * inter as f64 / (a + b) as f64;
    ensure(dice >= 0.95, || format!("tissue mask Dice {dice:.4} < 0.95"))?;

    let coords = mine_patches(&mask, 64, 0.5, 0.05).map_err(e2s)?;
    ensure(!coords.is_empty(), || "no patches mined".into())?;
    let model = Voxelwise::new(3, 2, 2, &mut rng);
    let pred = tiled_infer(&tiled, &coords, 64, |x| model.forward(x)).map_err(e2s)?;

    // Brute force: forward each patch alone and average per pixel.
    let n = 512 * 512;
    let mut sum = vec![0.0f64; 2 * n];
    let mut count = vec![0u32; n];
    for c in &coords {
        let mut vals = Vec::with_capacity(3 * 64 * 64);
        for ch in 0..3 {
            for r in 0..64 {
                for col in 0..64 {
                    vals.push(slide.channel(ch)[(c.y + r) * 512 + c.x + col] / 255.0);
                }
            }
        }
        let out = model.forward(&Tensor::new(&[1, 3, 64, 64], vals).map_err(e2s)?).map_err(e2s)?;
        for k in 0..2 {
            for r in 0..64 {
                for col in 0..64 {
                    let off = (c.y + r) * 512 + c.x + col;
                    sum[k * n + off] += out.data()[k * 4096 + r * 64 + col];
                    if k == 0 {
                        count[off] += 1;
                    }
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        for v in 0..n {
            let expect = if count[v] > 0 { sum[k * n + v] / count[v] as f64 } else { 0.0 };
            let got = pred.probabilities.values()[k * n + v];
            ensure((0.0..=1.0).contains(&got), || format!("probability {got} outside [0, 1]"))?;
            worst = worst.max((got - expect).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("tiled_infer differs from brute force by {worst:e}"))?;
    Ok(format!("mask Dice {dice:.4}; {} patches, max deviation from brute force {worst:.1e}", coords.len()))
}

// AC10 --------------------------------------------------------------------

fn metric_oracle() -> Check {
    let mut pred = vec![0.0; 16];
    let mut gt = vec![0.0; 16];
    for r in 0..2 {
        for c in 0..2 {
            pred[r * 4 + c] = 1.0;
        }
        for c in 0..3 {
            gt[r * 4 + c] = 1.0;
        }
    }
    let d = dice_class(&image(&[4, 4], 1, pred), &image(&[4, 4], 1, gt), 1.0).map_err(e2s)?;
    ensure(d == 0.8, || format!("Dice {d} != 0.8"))?;
    for (p, t, want) in [
        (vec![1.0, 2.0], vec![1.0, 2.0], 0.0),
        (vec![0.0, 0.0], vec![1.0, 1.0], 1.0),
        (vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 5.0], 5.0 / 3.0),
    ] {
        let m = mse(&p, &t).map_err(e2s)?;
        ensure(m == want, || format!("mse({p:?}, {t:?}) = {m}, expected {want}"))?;
    }
    Ok("Dice 2x2 vs 2x3 = 0.8; three MSE fixtures exact".into())
}

// AC11 --------------------------------------------------------------------

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_medpipe"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("MEDPIPE_SEED")
        .status()
        .map_err(e2s)?;
    ensure(status.success(), || format!("medpipe {} exited with {status}", args.join(" ")))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(e2s)?;
    synthetic::write_segmentation_dataset(&dir.path().join("data"), 16, 32, 3).map_err(e2s)?;
    // The manifest holds absolute paths; rewrite it with paths relative to
    // the working directory, as a user would.
    let manifest = dir.path().join("data/manifest.csv");
    let text = fs::read_to_string(&manifest).map_err(e2s)?;
    let prefix = format!("{}/", dir.path().display());
    fs::write(&manifest, text.replace(&prefix, "")).map_err(e2s)?;
    fs::write(
        dir.path().join("config.yaml"),
        "model: {architecture: unet, base_filters: 4, depth: 2}\npatch_size: [16, 16]\nbatch_size: 4\n\
         num_epochs: 2\nlearning_rate: 0.05\nloss_function: dice\nnested_training: {testing: 2, validation: 2}\n\
         data_augmentation: {flip: {probability: 0.5}, noise: {probability: 0.5}}\n\
         q_samples_per_volume: 2\nq_num_workers: 2\nq_max_length: 4\nseed: 5\n",
    )
    .map_err(e2s)?;
    let common = ["--data", "data/manifest.csv", "--config", "config.yaml", "--output"];
    run_cli(&[&["train"][..], &common, &["run_a"]].concat(), dir.path())?;
    run_cli(&[&["train"][..], &common, &["run_b", "--parallel", "2"]].concat(), dir.path())?;
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    let plan_a = fs::read(a.join("split_plan.csv")).map_err(e2s)?;
    ensure(plan_a == fs::read(b.join("split_plan.csv")).map_err(e2s)?, || "split_plan.csv differs".into())?;
    let mut folds = 0;
    let mut worst: f64 = 0.0;
    for outer in 0..2 {
        for inner in 0..2 {
            let la = read_logs(&fold_dir(&a, outer, inner).join(trainer::LOGS)).map_err(e2s)?;
            let lb = read_logs(&fold_dir(&b, outer, inner).join(trainer::LOGS)).map_err(e2s)?;
            ensure(la.len() == 2 && lb.len() == 2, || format!("fold {outer}/{inner}: expected 2 epochs"))?;
            for (x, y) in la.iter().zip(&lb) {
                ensure(x.epoch == y.epoch, || "epoch index differs".into())?;
                for (p, q) in [(x.train_loss, y.train_loss), (x.val_loss, y.val_loss), (x.val_metric, y.val_metric), (x.lr, y.lr)] {
                    worst = worst.max((p - q).abs());
                }
            }
            folds += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("logs differ by {worst:e}"))?;
    Ok(format!("{folds} folds: sequential and --parallel 2 runs agree (max diff {worst:e}); split plans byte-identical"))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let criteria: [Criterion; 11] = [
        ("AC1", "gradient suite", gradient_suite),
        ("AC2", "nested cross-validation arithmetic", nested_cv),
        ("AC3", "synthetic segmentation end-to-end", segmentation_end_to_end),
        ("AC4", "synthetic regression end-to-end", regression_end_to_end),
        ("AC5", "stitching oracle", stitching_oracle),
        ("AC6", "Otsu oracle", otsu),
        ("AC7", "FFT suite", fft_suite),
        ("AC8", "augmentation identities", augmentation_identities),
        ("AC9", "histology pipeline", histology),
        ("AC10", "metric oracle", metric_oracle),
        ("AC11", "CLI determinism", determinism),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
