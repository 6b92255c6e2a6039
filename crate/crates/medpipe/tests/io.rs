use std::fs;
use std::path::Path;

use medpipe::histology_io::{read_bundle, read_coords, write_bundle, write_coords};
use medpipe::io::{mha, pnm, read_manifest};
use medpipe::PipelineError;
use medpipe_core::histology::{build_tiled_pyramid, Coord};
use medpipe_core::models::Task;
use medpipe_core::{Geometry, Image, Real};
use proptest::prelude::*;

fn ramp(ext: &[usize], channels: usize) -> Image {
    let n = channels * ext.iter().product::<usize>();
    Image::new(ext, channels, (0..n).map(|i| i as Real * 0.5 - 3.0).collect(), Geometry::unit(ext.len())).unwrap()
}

#[test]
fn mha_round_trip_keeps_geometry_and_channels() {
    let dir = tempfile::tempdir().unwrap();
    let geometry = Geometry { spacing: vec![2.5, 0.75, 1.0], origin: vec![-10.0, 3.0, 0.5] };
    let img = ramp(&[3, 4, 5], 2).with_geometry(geometry.clone()).unwrap();
    let p = dir.path().join("a.mha");
    mha::write(&img, &p).unwrap();
    let back = mha::read(&p).unwrap();
    assert_eq!(back.extents(), img.extents());
    assert_eq!(back.channels(), 2);
    assert_eq!(back.geometry(), &geometry);
    assert_eq!(back.values(), img.values());
}

#[test]
fn hand_written_mha_is_read_fastest_axis_first() {
    // Width 3, height 2, unsigned bytes, spacing listed x then y.
    let mut bytes = b"ObjectType = Image\nNDims = 2\nDimSize = 3 2\nElementSpacing = 0.5 2\nOffset = 1 7\n\
ElementType = MET_UCHAR\nElementDataFile = LOCAL\n"
        .to_vec();
    bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
    let img = mha::decode(Path::new("fixture.mha"), &bytes).unwrap();
    assert_eq!(img.extents(), &[2, 3]);
    assert_eq!(img.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(img.geometry().spacing, vec![2.0, 0.5]);
    assert_eq!(img.geometry().origin, vec![7.0, 1.0]);
}

#[test]
fn truncated_mha_reports_offset() {
    let bytes = b"NDims = 2\nDimSize = 3 2\nElementType = MET_SHORT\nElementDataFile = LOCAL\n\x01\x00";
    match mha::decode(Path::new("short.mha"), bytes) {
        Err(PipelineError::Header { offset, message, .. }) => {
            assert!(offset > 0);
            assert!(message.contains("12"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        mha::decode(Path::new("x.mha"), b"NDims = 2\nDimSize = 1 1\nElementType = MET_QUAD\nElementDataFile = LOCAL\n"),
        Err(PipelineError::Format { .. })
    ));
}

#[test]
fn pnm_round_trips_gray_rgb_and_sixteen_bit() {
    let dir = tempfile::tempdir().unwrap();
    for (channels, scale) in [(1, 1.0), (3, 1.0), (1, 300.0)] {
        let img = ramp(&[4, 6], channels).map(|v| ((v + 3.0) * 2.0 * scale).round());
        let p = dir.path().join(format!("img_{channels}_{scale}.pnm"));
        pnm::write(&img, &p).unwrap();
        let back = pnm::read(&p).unwrap();
        assert_eq!(back.values(), img.values());
        assert_eq!(back.channels(), channels);
    }
    assert!(pnm::write(&ramp(&[2, 2], 1), &dir.path().join("neg.pgm")).is_err());
}

fn write_images(dir: &Path, names: &[&str]) {
    for n in names {
        mha::write(&ramp(&[4, 4], 1), &dir.join(n)).unwrap();
    }
}

#[test]
fn manifest_reports_every_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &["a.mha", "a_seg.mha"]);
    let d = dir.path().display();
    let m = dir.path().join("m.csv");
    fs::write(&m, format!("SubjectID,Channel_0,Label\na,{d}/a.mha,{d}/a_seg.mha\nb,{d}/b.mha,{d}/b_seg.mha\n")).unwrap();
    let msg = read_manifest(&m, Task::Segmentation, true).unwrap_err().to_string();
    assert!(msg.contains("b.mha") && msg.contains("b_seg.mha"), "{msg}");
}

#[test]
fn manifest_rejects_duplicates_ragged_rows_and_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &["a.mha"]);
    let d = dir.path().display();
    let m = dir.path().join("m.csv");
    fs::write(&m, format!("SubjectID,Channel_0,Label\na,{d}/a.mha,1\na,{d}/a.mha,2\n")).unwrap();
    let msg = read_manifest(&m, Task::Regression, true).unwrap_err().to_string();
    assert!(msg.contains("duplicate") && msg.contains('a'), "{msg}");

    fs::write(&m, format!("SubjectID,Channel_0,Label\na,{d}/a.mha\n")).unwrap();
    match read_manifest(&m, Task::Regression, true) {
        Err(PipelineError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }

    fs::write(&m, format!("SubjectID,Channel_0,Label\na,{d}/a.mha,big\n")).unwrap();
    assert!(read_manifest(&m, Task::Regression, true).unwrap_err().to_string().contains("not a number"));

    fs::write(&m, format!("SubjectID,Channel_1\na,{d}/a.mha\n")).unwrap();
    assert!(read_manifest(&m, Task::Regression, false).is_err());

    fs::write(&m, format!("SubjectID,Channel_0\na,{d}/a.mha\n")).unwrap();
    let ok = read_manifest(&m, Task::Regression, false).unwrap();
    assert_eq!(ok.len(), 1);
    assert!(read_manifest(&m, Task::Regression, true).is_err());
}

#[test]
fn pyramid_bundle_and_coords_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = Image::new(&[40, 36], 3, (0..3 * 40 * 36).map(|i| (i % 256) as Real).collect(), Geometry::unit(2)).unwrap();
    let tiled = build_tiled_pyramid(&rgb, 3, 2, 16).unwrap();
    write_bundle(&dir.path().join("slide"), &tiled).unwrap();
    let back = read_bundle(&dir.path().join("slide")).unwrap();
    assert_eq!(back.levels.len(), tiled.levels.len());
    for l in 0..tiled.levels.len() {
        assert_eq!(back.level_image(l).unwrap().values(), tiled.level_image(l).unwrap().values());
    }
    let coords = vec![Coord { x: 0, y: 8, tissue_fraction: 0.25 }, Coord { x: 16, y: 4, tissue_fraction: 1.0 }];
    let p = dir.path().join("coords.csv");
    write_coords(&p, &coords).unwrap();
    assert_eq!(read_coords(&p).unwrap(), coords);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mha_round_trip_is_exact(h in 1usize..6, w in 1usize..6, d in 1usize..4, c in 1usize..3, seed in any::<u64>()) {
        let mut rng = medpipe_core::Rng::new(seed);
        let ext = [d, h, w];
        let n = c * d * h * w;
        let img = Image::new(&ext, c, (0..n).map(|_| rng.normal(0.0, 100.0)).collect(), Geometry::unit(3)).unwrap();
        let bytes = mha::encode(&img);
        let back = mha::decode(Path::new("p.mha"), &bytes).unwrap();
        prop_assert_eq!(back.values(), img.values());
        prop_assert_eq!(back.extents(), img.extents());
    }
}
