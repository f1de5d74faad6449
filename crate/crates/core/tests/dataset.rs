use std::fs;

use sdn_core::augment::{run_stage, AugmentStageConfig, Stage};
use sdn_core::dataset::{
    canonical_crop, parse_pts, read_manifest, read_manifest_lenient, write_manifest, write_pts,
    DatasetError, ImageCache, LandmarkSource,
};
use sdn_core::{synthetic, CoordinateFrame};

#[test]
fn written_dataset_reads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let faces = synthetic::faces(3, 32, 4);
    let path = synthetic::write_dataset(dir.path(), "train.tsv", &faces).unwrap();
    let m = read_manifest(&path).unwrap();
    assert_eq!(m.n_landmarks, synthetic::N_LANDMARKS);
    assert_eq!(m.mirror_perm, synthetic::MIRROR_PERM);
    let loaded = m.load_samples().unwrap();
    for (a, b) in loaded.iter().zip(&faces) {
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.bbox, b.bbox);
        assert_eq!(a.meta.id, b.meta.id);
    }
}

#[test]
fn crops_match_between_memory_and_disk() {
    let dir = tempfile::tempdir().unwrap();
    let faces = synthetic::faces(2, 32, 5);
    let path = synthetic::write_dataset(dir.path(), "train.tsv", &faces).unwrap();
    let loaded = read_manifest(&path).unwrap().load_samples().unwrap();
    let cache = ImageCache::new();
    for (disk, mem) in loaded.iter().zip(&faces) {
        let a = canonical_crop(&cache, disk, 32).unwrap();
        let b = canonical_crop(&cache, mem, 32).unwrap();
        // PNG stores 8-bit intensities; the in-memory render is unquantised.
        let worst = a
            .pixels
            .data()
            .iter()
            .zip(b.pixels.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
        let t = a.targets(&disk.landmarks);
        assert_eq!(t.frame(), CoordinateFrame::CropUnit);
        assert!(t
            .points()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }
}

#[test]
fn augmented_manifest_round_trips_warps() {
    let dir = tempfile::tempdir().unwrap();
    let path =
        synthetic::write_dataset(dir.path(), "train.tsv", &synthetic::faces(2, 32, 6)).unwrap();
    let out = run_stage(
        &read_manifest(&path).unwrap(),
        &AugmentStageConfig::defaults(Stage::S2),
        None,
    )
    .unwrap();
    let aug = dir.path().join("s2.tsv");
    out.write(&aug).unwrap();
    let before = out.manifest.load_samples().unwrap();
    let after = read_manifest(&aug).unwrap().load_samples().unwrap();
    assert_eq!(before.len(), after.len());
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.warp, b.warp);
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.bbox, b.bbox);
    }
}

#[test]
fn missing_files_are_errors_or_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let path =
        synthetic::write_dataset(dir.path(), "train.tsv", &synthetic::faces(3, 16, 7)).unwrap();
    fs::remove_file(dir.path().join("face0001.png")).unwrap();
    assert!(matches!(
        read_manifest(&path),
        Err(DatasetError::MissingFile { .. })
    ));
    let (m, warnings) = read_manifest_lenient(&path).unwrap();
    assert_eq!(m.entries.len(), 2);
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].to_string().contains("face0001"));
}

#[test]
fn pts_sources_resolve_relative_to_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let faces = synthetic::faces(1, 16, 8);
    let path = synthetic::write_dataset(dir.path(), "train.tsv", &faces).unwrap();
    let mut m = read_manifest(&path).unwrap();
    write_pts(dir.path().join("face0000.pts"), &faces[0].landmarks).unwrap();
    m.entries[0].landmarks = LandmarkSource::File("face0000.pts".into());
    write_manifest(&path, &m).unwrap();
    let again = read_manifest(&path).unwrap().load_samples().unwrap();
    let direct = parse_pts(dir.path().join("face0000.pts")).unwrap();
    assert_eq!(again[0].landmarks, direct);
    for (a, b) in direct.points().iter().zip(faces[0].landmarks.points()) {
        assert!(a.distance(*b) < 1e-9);
    }
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let path =
        synthetic::write_dataset(dir.path(), "train.tsv", &synthetic::faces(1, 16, 9)).unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("broken\tface0000.png\t1,2,3\tinline:0,0\t-\n");
    fs::write(&path, text).unwrap();
    match read_manifest(&path) {
        Err(DatasetError::Manifest { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a line-numbered error, got {other:?}"),
    }
}
