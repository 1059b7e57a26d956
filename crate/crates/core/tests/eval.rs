use std::fs;
use std::path::Path;

use lhmaploc_core::eval::*;
use lhmaploc_core::geometry::{render_depth, NoiseRange, Pose};
use lhmaploc_core::mapstore::{build_lhmap, lift_local_map, LHMap, MapMeta};
use lhmaploc_core::model::Model;
use lhmaploc_core::nets::NetConfig;
use lhmaploc_core::synth::{desk_camera, gen_scene, make_dataset, SyntheticScene};
use lhmaploc_core::EvalError;

fn write_scan(path: &Path, pts: &[[f32; 3]]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut bytes = Vec::new();
    for p in pts {
        for v in p.iter().chain(std::iter::once(&0.5f32)) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).unwrap();
}

/// Two frames, one meter apart along z. Scan 0 has two points in the same
/// 0.1 m voxel plus one apart; scan 1 has two separate points.
fn kitti_fixture(dir: &Path) {
    fs::create_dir_all(dir.join("poses")).unwrap();
    fs::write(
        dir.join("poses/00.txt"),
        "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 1\n",
    )
    .unwrap();
    let velo = dir.join("sequences/00/velodyne");
    write_scan(
        &velo.join("000000.bin"),
        &[[1.01, 2.01, 5.01], [1.03, 2.03, 5.03], [-3.0, 0.5, 8.0]],
    );
    write_scan(
        &velo.join("000001.bin"),
        &[[0.0, 0.0, 4.0], [2.0, 1.0, 6.0]],
    );
}

#[test]
fn kitti_two_frame_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    kitti_fixture(tmp.path());
    let seq = ingest_kitti(tmp.path(), "00").unwrap();
    assert_eq!(seq.frames.len(), 2);
    assert_eq!(seq.map.len(), 2 + 2);
    assert_eq!(seq.frames[1].pose.translation().z, 1.0);
    assert!(seq.frames.iter().all(|f| f.image.is_none()));
    // frame 1 points are shifted by its pose
    let has = |x: f64, y: f64, z: f64| {
        seq.map
            .points
            .iter()
            .any(|p| (p.x - x).abs() < 1e-6 && (p.y - y).abs() < 1e-6 && (p.z - z).abs() < 1e-6)
    };
    assert!(has(0.0, 0.0, 5.0));
    assert!(has(2.0, 1.0, 7.0));
    assert!(has(-3.0, 0.5, 8.0));
}

#[test]
fn kitti_calibration_is_applied() {
    let tmp = tempfile::tempdir().unwrap();
    kitti_fixture(tmp.path());
    fs::write(
        tmp.path().join("sequences/00/calib.txt"),
        "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 1 0 0 10 0 1 0 0 0 0 1 0\n",
    )
    .unwrap();
    let seq = ingest_kitti(tmp.path(), "00").unwrap();
    assert!(seq
        .map
        .points
        .iter()
        .any(|p| (p.x - 12.0).abs() < 1e-6 && (p.z - 7.0).abs() < 1e-6));
}

#[test]
fn kitti_missing_scan_names_frame() {
    let tmp = tempfile::tempdir().unwrap();
    kitti_fixture(tmp.path());
    fs::remove_file(tmp.path().join("sequences/00/velodyne/000001.bin")).unwrap();
    match ingest_kitti(tmp.path(), "00") {
        Err(EvalError::MissingScan { frame, path }) => {
            assert_eq!(frame, 1);
            assert!(path.ends_with("000001.bin"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn kitti_malformed_pose_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    kitti_fixture(tmp.path());
    fs::write(
        tmp.path().join("poses/00.txt"),
        "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n",
    )
    .unwrap();
    match ingest_kitti(tmp.path(), "00") {
        Err(EvalError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        ingest_kitti(tmp.path(), "01"),
        Err(EvalError::Io { .. })
    ));
}

#[test]
fn truncated_scan_is_a_typed_error() {
    let tmp = tempfile::tempdir().unwrap();
    kitti_fixture(tmp.path());
    fs::write(
        tmp.path().join("sequences/00/velodyne/000000.bin"),
        [0u8; 10],
    )
    .unwrap();
    assert!(matches!(
        ingest_kitti(tmp.path(), "00"),
        Err(EvalError::Parse { .. })
    ));
}

fn small_scene() -> SyntheticScene {
    gen_scene(5, 20_000, 40.0, 4, desk_camera()).unwrap()
}

fn dense_map(scene: &SyntheticScene) -> LHMap {
    let cam = scene.cam;
    let records = scene
        .trajectory
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = render_depth(&scene.map, p, &cam);
            let scores = vec![1.0; d.values.len()];
            lift_local_map(i as u64, &d, p, &cam, &scores).unwrap()
        })
        .collect();
    build_lhmap(
        records,
        MapMeta {
            camera: cam,
            budget: cam.pixel_count() as u32,
        },
    )
    .unwrap()
}

fn overlay_for(scene: &SyntheticScene, frame: usize, est: Pose) -> Overlay {
    let gt = scene.trajectory[frame];
    Overlay {
        frame_id: frame as u64,
        image: lhmaploc_core::synth::render_rgb(scene, &gt),
        points: scene.map.clone(),
        est,
        gt,
        cam: scene.cam,
    }
}

#[test]
fn overlay_at_ground_truth_lands_on_splats() {
    let scene = small_scene();
    let gt = scene.trajectory[1];
    let img = lhmaploc_core::synth::render_rgb(&scene, &gt);
    let (_, drawn) = draw_overlay(&img, &scene.map, &gt, &scene.cam, 80.0);
    let drawn: std::collections::BTreeSet<(usize, usize)> = drawn.into_iter().collect();
    let depth = render_depth(&scene.map, &gt, &scene.cam);
    assert!(!drawn.is_empty());
    // every drawn pixel carries a splat, and the centroids agree
    assert!(drawn.iter().all(|&(r, c)| depth.get(r, c) > 0.0));
    let n = drawn.len() as f64;
    let (mr, mc) = drawn.iter().fold((0.0, 0.0), |(a, b), &(r, c)| {
        (a + r as f64 / n, b + c as f64 / n)
    });
    let splats: Vec<usize> = depth.valid_indices().collect();
    let m = splats.len() as f64;
    let w = scene.cam.width;
    let (sr, sc) = splats.iter().fold((0.0, 0.0), |(a, b), &i| {
        (a + (i / w) as f64 / m, b + (i % w) as f64 / m)
    });
    assert!(((mr - sr).powi(2) + (mc - sc).powi(2)).sqrt() < 1.0);
}

#[test]
fn plots_are_deterministic() {
    let scene = small_scene();
    let shifted = lhmaploc_core::geometry::compose(
        &scene.trajectory[2],
        &Pose::from_translation([0.5, 0.0, 0.0]),
    );
    let overlays = vec![overlay_for(&scene, 2, shifted)];
    let frames = vec![
        FrameError {
            frame_id: 2,
            transl_err_m: 0.5,
            rot_err_deg: 0.0,
        },
        FrameError {
            frame_id: 3,
            transl_err_m: 1.5,
            rot_err_deg: 2.0,
        },
    ];
    let report = EvalReport::from_frames(frames, vec![], None, None);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_plots(&report, &overlays, a.path(), 80.0).unwrap();
    let fb = emit_plots(&report, &overlays, b.path(), 80.0).unwrap();
    assert_eq!(fa.overlays.len(), 1);
    assert!(fa.overlays[0].ends_with("overlay_000002.png"));
    assert!(fa.cdf.as_ref().unwrap().ends_with(CDF_FILE));
    for (x, y) in fa
        .overlays
        .iter()
        .chain(&fa.cdf)
        .zip(fb.overlays.iter().chain(&fb.cdf))
    {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let img = image::open(&fa.overlays[0]).unwrap();
    assert_eq!(img.height() as usize, scene.cam.height);
    assert_eq!(img.width() as usize, 2 * scene.cam.width + 2);
}

#[test]
fn empty_report_writes_no_cdf() {
    let report = EvalReport::from_frames(vec![], vec![], None, None);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plots(&report, &[], dir.path(), 80.0).unwrap();
    assert!(files.cdf.is_none());
    assert!(!dir.path().join(CDF_FILE).exists());
}

#[test]
fn unwritable_plot_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let report = EvalReport::from_frames(vec![], vec![], None, None);
    assert!(emit_plots(&report, &[], &blocker.join("plots"), 80.0).is_err());
}

#[test]
fn report_json_round_trip() {
    let frames = vec![
        FrameError {
            frame_id: 0,
            transl_err_m: 0.1 + 0.2,
            rot_err_deg: 1.0 / 3.0,
        },
        FrameError {
            frame_id: 7,
            transl_err_m: 4.000000000000001,
            rot_err_deg: 1e-17,
        },
    ];
    let report = EvalReport::from_frames(
        frames,
        vec![IterationSummary {
            iteration: 1,
            transl_median_m: 2.15,
            rot_median_deg: 0.3,
        }],
        Some(TimingSummary {
            pre_ms: 1.25,
            infer_ms: std::f64::consts::PI,
            total_ms: 4.39,
        }),
        Some(123_456),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), report);
}

#[test]
fn benchmark_reports_additive_timing() {
    let scene = small_scene();
    let map = dense_map(&scene);
    let samples = make_dataset(&scene, &NoiseRange::level(3).unwrap(), 1);
    let model = Model::new(NetConfig::default(), 0);
    let t = benchmark_timing(&model, &map, &samples[..2], &scene.cam, 3, 1).unwrap();
    assert_eq!((t.reps, t.frames), (3, 2));
    assert!(t.pre_ms_mean >= 0.0 && t.infer_ms_mean > 0.0);
    assert!((t.total_ms_mean - (t.pre_ms_mean + t.infer_ms_mean)).abs() < 1.0);
    assert!(t.pre_ms_var >= 0.0 && t.infer_ms_var >= 0.0 && t.total_ms_var >= 0.0);
    assert!(matches!(
        benchmark_timing(&model, &map, &samples, &scene.cam, 0, 1),
        Err(EvalError::Empty)
    ));
}

#[test]
fn evaluate_aggregates_and_iterations() {
    let scene = small_scene();
    let map = dense_map(&scene);
    let samples = make_dataset(&scene, &NoiseRange::level(2).unwrap(), 4);
    let m1 = Model::new(NetConfig::default(), 1);
    let m2 = Model::new(NetConfig::default(), 2);
    let (report, results) = evaluate(&[&m1, &m2], &map, &samples, &scene.cam, 2, 1).unwrap();
    assert_eq!(report.frames.len(), samples.len());
    assert_eq!(results.len(), samples.len());
    assert_eq!(report.iterations.len(), 2);
    let last: Vec<f64> = results
        .iter()
        .map(|r| r.trace[1].transl_err.unwrap())
        .collect();
    assert!((median(&last).unwrap() - report.transl_median_m.unwrap()).abs() < 1e-12);
    assert_eq!(report.map_bytes, Some(map.encoded_len() as u64));
    let timing = report.timing.unwrap();
    assert!((timing.total_ms - timing.pre_ms - timing.infer_ms).abs() < 1e-9);
}
