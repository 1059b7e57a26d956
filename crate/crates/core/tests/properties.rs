use lhmaploc_core::eval::parse_pose_line;
use lhmaploc_core::geometry::{
    compose, invert, project_point, quat_geodesic_deg, unproject, CameraModel, DepthImage, Pose,
};
use lhmaploc_core::losses::{rotation_loss, smooth_l1};
use lhmaploc_core::mapstore::{build_lhmap, KeyframeRecord, LHMap, MapMeta};
use lhmaploc_core::nets::{attention_weights, Tensor};
use lhmaploc_core::offline::topn_indices;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-3.0f64..3.0),
        prop::array::uniform3(-50.0f64..50.0),
    )
        .prop_map(|(r, t)| {
            Pose::from_parts(
                UnitQuaternion::from_scaled_axis(Vector3::from(r)),
                Vector3::from(t),
            )
        })
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.translation() - b.translation()).norm() < tol && a.rotation().angle_to(b.rotation()) < tol
}

fn cam() -> CameraModel {
    CameraModel::new(120.0, 110.0, 64.0, 40.0, 80, 128).unwrap()
}

proptest! {
    #[test]
    fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&compose(&compose(&a, &b), &c), &compose(&a, &compose(&b, &c)), 1e-9));
    }

    #[test]
    fn inverse_cancels(a in pose()) {
        prop_assert!(close(&compose(&a, &invert(&a)), &Pose::identity(), 1e-9));
        prop_assert!(close(&compose(&invert(&a), &a), &Pose::identity(), 1e-9));
    }

    #[test]
    fn quaternion_is_canonical(a in pose(), b in pose()) {
        prop_assert!(compose(&a, &b).quat()[0] >= 0.0);
        prop_assert!(invert(&a).quat()[0] >= 0.0);
    }

    #[test]
    fn unproject_then_project(
        p in pose(),
        u in 0.0f64..128.0,
        v in 0.0f64..80.0,
        z in 0.1f64..200.0,
    ) {
        let cam = cam();
        let w = unproject(u, v, z, &p, &cam).unwrap();
        let ip = project_point(&w, &p, &cam).unwrap();
        prop_assert!((ip.u - u).abs() < 1e-6 && (ip.v - v).abs() < 1e-6 && (ip.z - z).abs() < 1e-6);
    }

    #[test]
    fn rotation_loss_is_half_geodesic(a in pose(), b in pose(), flip in any::<bool>()) {
        let qa = a.quat();
        let qb = if flip { b.quat().map(|x| -x) } else { b.quat() };
        let l = rotation_loss(&qa, &qb).unwrap();
        let half = quat_geodesic_deg(a.rotation(), b.rotation()).to_radians() / 2.0;
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&l));
        prop_assert!((l - half).abs() < 1e-9);
        prop_assert!((l - rotation_loss(&qb, &qa).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_is_even_and_continuous(x in -10.0f64..10.0) {
        prop_assert_eq!(smooth_l1(x), smooth_l1(-x));
        prop_assert!(smooth_l1(x) >= 0.0 && smooth_l1(x) <= x.abs());
        prop_assert!((smooth_l1(1.0 + 1e-12) - smooth_l1(1.0 - 1e-12)).abs() < 1e-11);
    }

    #[test]
    fn attention_weights_are_a_distribution(
        vals in prop::collection::vec(-30.0f64..30.0, 2 * 5 * 7),
    ) {
        let mut h = Tensor::zeros(&[2, 5, 7]);
        h.data_mut().copy_from_slice(&vals);
        let w = attention_weights(&h);
        for ch in w.data().chunks(35) {
            prop_assert!(ch.iter().all(|&x| x >= 0.0));
            prop_assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn topn_picks_highest_valid(
        cells in prop::collection::vec((0u8..4, prop::option::of(0.5f64..80.0)), 1..120),
        n in 0usize..130,
        k in 0.01f64..100.0,
    ) {
        let mut d = DepthImage::zeros(1, cells.len(), Pose::identity());
        let h: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
        for (i, c) in cells.iter().enumerate() {
            d.values[i] = c.1.unwrap_or(0.0);
        }
        let got = topn_indices(&h, &d, n);
        let valid: Vec<usize> = (0..cells.len()).filter(|&i| d.values[i] > 0.0).collect();
        prop_assert_eq!(got.len(), n.min(valid.len()));
        prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(got.iter().all(|&i| d.values[i] > 0.0));
        let worst_in = got.iter().map(|&i| h[i]).fold(f64::INFINITY, f64::min);
        for &i in valid.iter().filter(|i| !got.contains(i)) {
            prop_assert!(h[i] <= worst_in);
        }
        let scaled: Vec<f64> = h.iter().map(|v| v * k).collect();
        prop_assert_eq!(topn_indices(&scaled, &d, n), got);
    }

    #[test]
    fn map_bytes_round_trip(
        records in prop::collection::vec(
            (pose(), prop::collection::vec((prop::array::uniform3(-1e3f32..1e3), 0.0f32..10.0), 0..40)),
            0..5,
        ),
    ) {
        let recs: Vec<KeyframeRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, (anchor, pts))| KeyframeRecord {
                frame_id: i as u64 * 3,
                anchor,
                points: pts.iter().map(|p| p.0).collect(),
                scores: pts.iter().map(|p| p.1).collect(),
            })
            .collect();
        let map = build_lhmap(recs, MapMeta { camera: cam(), budget: 40 }).unwrap();
        let bytes = map.to_bytes();
        prop_assert_eq!(bytes.len(), map.encoded_len());
        prop_assert_eq!(LHMap::from_bytes(&bytes).unwrap(), map);
    }

    #[test]
    fn pose_lines_round_trip(p in pose()) {
        let m = p.to_matrix();
        let line: Vec<String> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:e}", m[(r, c)]))
            .collect();
        let back = parse_pose_line(&line.join(" ")).unwrap();
        prop_assert!(close(&back, &p, 1e-9));
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = LHMap::from_bytes(&bytes);
    }
}
