use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use medpipe::synthetic::{write_regression_dataset, write_segmentation_dataset};

fn medpipe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medpipe"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("MEDPIPE_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SEG: &str = "model: {architecture: unet, base_filters: 4, depth: 2, class_list: [0, 1]}\n\
patch_size: [16, 16]\nbatch_size: 4\nnum_epochs: 1\nlearning_rate: 0.05\nloss_function: dice\n\
nested_training: {testing: 2, validation: 2}\nq_samples_per_volume: 1\nseed: 2\n";

#[test]
fn train_then_infer_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_segmentation_dataset(&dir.path().join("data"), 8, 32, 4).unwrap();
    fs::write(dir.path().join("seg.yaml"), SEG).unwrap();
    let m = manifest.to_str().unwrap();
    let o = medpipe(dir.path(), &["train", "--data", m, "--config", "seg.yaml", "--output", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("split_plan.csv").is_file());
    assert!(out.join("resolved_config.yaml").is_file());
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let fd = out.join(format!("outer_{a}/inner_{b}"));
        for f in ["model_best.ckpt", "model_latest.ckpt", "logs.csv", "test_metrics.csv", "resolved_config.yaml"] {
            assert!(fd.join(f).is_file(), "{} missing", fd.join(f).display());
        }
    }
    let o = medpipe(dir.path(), &["infer", "--data", m, "--config", "seg.yaml", "--output", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().next(), Some("subject_id,prediction,dice_1,dice_mean"));
    assert_eq!(results.lines().count(), 9);
    assert_eq!(fs::read_dir(out.join("predictions")).unwrap().count(), 8);

    let o = medpipe(dir.path(), &["preview", "--data", m, "--config", "seg.yaml", "--output", "pv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("pv/preview").read_dir().unwrap().count() >= 4);
}

#[test]
fn regression_split_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_regression_dataset(&dir.path().join("data"), 10, 32, 4).unwrap();
    fs::write(
        dir.path().join("r.yaml"),
        "model: {architecture: vgg11, base_filters: 4}\npatch_size: [32, 32]\nnum_epochs: 1\nlearning_rate: 0.01\n\
         loss_function: mse\nnested_training: {testing: 5, validation: 2}\n",
    )
    .unwrap();
    let o = medpipe(dir.path(), &["split", "--data", manifest.to_str().unwrap(), "--config", "r.yaml", "--output", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan = fs::read_to_string(dir.path().join("s/split_plan.csv")).unwrap();
    assert_eq!(plan.lines().next(), Some("outer,inner,role,subject_id"));
    assert_eq!(plan.lines().count(), 1 + 10 * 10);
}

#[test]
fn failures_exit_one_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_segmentation_dataset(&dir.path().join("data"), 4, 32, 4).unwrap();
    let m = manifest.to_str().unwrap();

    fs::write(dir.path().join("bad.yaml"), "patch_size: [16, 16]\n").unwrap();
    let o = medpipe(dir.path(), &["split", "--data", m, "--config", "bad.yaml", "--output", "x"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("configuration failed") && e.contains("model"), "{e}");

    fs::write(dir.path().join("typo.yaml"), format!("{SEG}learnin_rate: 1\n")).unwrap();
    let o = medpipe(dir.path(), &["split", "--data", m, "--config", "typo.yaml", "--output", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learnin_rate"), "{}", stderr(&o));

    fs::write(dir.path().join("seg.yaml"), SEG).unwrap();
    let o = medpipe(dir.path(), &["train", "--data", "nope.csv", "--config", "seg.yaml", "--output", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest failed"), "{}", stderr(&o));

    let o = medpipe(dir.path(), &["infer", "--data", m, "--config", "seg.yaml", "--output", "empty"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(medpipe(dir.path(), &["train"]).status.code(), Some(2));
    assert_eq!(medpipe(dir.path(), &["bogus"]).status.code(), Some(2));
    let o = medpipe(dir.path(), &["train", "--data", "a", "--config", "b", "--output", "c", "--parallel", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(medpipe(dir.path(), &["--help"]).status.success());
}
