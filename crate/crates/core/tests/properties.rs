use std::collections::BTreeSet;

use medpipe_core::augment::spatial::{flip, rotate};
use medpipe_core::augment::Sample;
use medpipe_core::crossval::{make_nested_splits, SplitMode};
use medpipe_core::kernels::conv::{conv_backward, conv_forward};
use medpipe_core::models::{build, Architecture, ArchSpec, FinalActivation, Task};
use medpipe_core::{Geometry, Image, Real, Rng, Tensor};
use proptest::prelude::*;

fn dot(a: &Tensor, b: &Tensor) -> Real {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0))
}

#[test]
fn conv_input_gradient_is_the_adjoint() {
    let mut rng = Rng::new(5);
    for (xs, ws, stride, pad) in [
        (vec![2, 3, 7, 6], vec![4, 3, 3, 3], vec![1, 1], vec![1, 1]),
        (vec![1, 2, 9, 8], vec![3, 2, 3, 3], vec![2, 2], vec![0, 1]),
        (vec![1, 2, 5, 4, 6], vec![2, 2, 3, 3, 3], vec![1, 2, 1], vec![1, 1, 0]),
    ] {
        let x = gaussian(&xs, &mut rng);
        let w = gaussian(&ws, &mut rng);
        let y = conv_forward(&x, &w, None, &stride, &pad).unwrap();
        let v = gaussian(y.shape(), &mut rng);
        let g = conv_backward(&x, &w, &v, &stride, &pad, true).unwrap();
        let lhs = dot(&y, &v);
        let rhs = dot(&x, g.input.as_ref().unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{xs:?}: {lhs} vs {rhs}");
        // The weight gradient is the adjoint in w.
        assert!((lhs - dot(&w, &g.weight)).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

fn vgg_spec(arch: Architecture, base: usize, cin: usize, classes: usize) -> ArchSpec {
    ArchSpec {
        architecture: arch,
        dims: 2,
        in_channels: cin,
        classes,
        base_filters: base,
        depth: 3,
        final_activation: FinalActivation::None,
        batch_norm: false,
    }
}

#[test]
fn vgg_parameter_counts_match_closed_form() {
    // Canonical stage widths; zero marks a pool.
    let layouts: [(Architecture, &[usize], usize); 4] = [
        (Architecture::Vgg11, &[64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0], 8),
        (Architecture::Vgg13, &[64, 64, 0, 128, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0], 10),
        (Architecture::Vgg16, &[64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0], 13),
        (
            Architecture::Vgg19,
            &[64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0],
            16,
        ),
    ];
    for (arch, layout, convs) in layouts {
        let (base, cin, classes) = (8, 2, 3);
        let model = build(&vgg_spec(arch, base, cin, classes), Task::Classification, 0).unwrap();
        let mut expected = 0;
        let mut c = cin;
        for &w in layout.iter().filter(|&&w| w > 0) {
            let out = w * base / 64;
            expected += c * out * 9 + out;
            c = out;
        }
        let hidden = 4096 * base / 64;
        expected += c * hidden + hidden + hidden * hidden + hidden + hidden * classes + classes;
        let got: usize = model.params().entries().iter().map(|e| e.value.len()).sum();
        assert_eq!(got, expected, "{arch}");
        assert_eq!(model.layer_tally(), (convs, 3), "{arch}");
    }
}

fn sample(ext: &[usize], values: Vec<Real>, mask: Vec<Real>) -> Sample {
    let g = Geometry::unit(ext.len());
    Sample::new(
        Image::new(ext, 1, values, g.clone()).unwrap(),
        Some(Image::new(ext, 1, mask, g).unwrap()),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_splits_partition(n in 4usize..60, k_o in 2usize..5, k_i in 2usize..4, seed in any::<u64>()) {
        prop_assume!(n >= k_o * k_i);
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let plan = make_nested_splits(&ids, k_o, k_i, seed, SplitMode::Nested).unwrap();
        prop_assert_eq!(plan.folds.len(), k_o * k_i);
        let all: BTreeSet<&String> = ids.iter().collect();
        let mut tests = BTreeSet::new();
        for f in &plan.folds {
            let parts = [&f.train, &f.validation, &f.test];
            prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), n);
            let union: BTreeSet<&String> = parts.iter().flat_map(|p| p.iter()).collect();
            prop_assert_eq!(&union, &all);
            prop_assert!(!f.train.is_empty() && !f.validation.is_empty() && !f.test.is_empty());
            if f.inner == 0 {
                for id in &f.test {
                    prop_assert!(tests.insert(id.clone()), "{} tested twice", id);
                }
            }
        }
        prop_assert_eq!(tests.len(), n);
        let again = make_nested_splits(&ids, k_o, k_i, seed, SplitMode::Nested).unwrap();
        prop_assert_eq!(plan, again);
    }

    #[test]
    fn flip_and_rotate_are_invertible(h in 1usize..9, w in 1usize..9, seed in any::<u64>(), axes in prop::sample::subsequence(vec![0usize, 1], 0..=2)) {
        let mut rng = Rng::new(seed);
        let n = h * w;
        let s = sample(&[h, w], (0..n).map(|_| rng.normal(0.0, 1.0)).collect(), (0..n).map(|_| rng.below(3) as Real).collect());
        let back = flip(&flip(&s, &axes).unwrap(), &axes).unwrap();
        prop_assert_eq!(back.image.values(), s.image.values());
        prop_assert_eq!(back.mask.as_ref().unwrap().values(), s.mask.as_ref().unwrap().values());
        let sq = sample(&[h, h], (0..h * h).map(|_| rng.normal(0.0, 1.0)).collect(), vec![0.0; h * h]);
        let mut r = sq.clone();
        for _ in 0..4 {
            r = rotate(&r, 1, (0, 1)).unwrap();
        }
        prop_assert_eq!(r.image.values(), sq.image.values());
        let half = rotate(&rotate(&sq, 1, (0, 1)).unwrap(), 1, (0, 1)).unwrap();
        let both = flip(&sq, &[0, 1]).unwrap();
        prop_assert_eq!(half.image.values(), both.image.values());
    }
}
