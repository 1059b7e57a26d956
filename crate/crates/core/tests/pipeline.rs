use lhmaploc_core::geometry::{compose, DepthImage, NoiseRange, Pose};
use lhmaploc_core::mapstore::LHMap;
use lhmaploc_core::model::Model;
use lhmaploc_core::nets::{NetConfig, Tensor};
use lhmaploc_core::offline::{
    correction_target, export_lhmap, heat_value, repose_selection, topn_indices, topn_select,
    train_offline, OfflineConfig,
};
use lhmaploc_core::online::{
    localize_iterative, localize_once, regress_correction, render_local_map, train_online,
    OnlineConfig,
};
use lhmaploc_core::synth::{desk_camera, gen_scene, make_dataset, OfflineSample};
use lhmaploc_core::PipelineError;
use nalgebra::{UnitQuaternion, Vector3};

fn fixture() -> (Vec<OfflineSample>, LHMap) {
    let cam = desk_camera();
    let scene = gen_scene(21, 20_000, 40.0, 4, cam).unwrap();
    let data = make_dataset(&scene, &NoiseRange::level(1).unwrap(), 5);
    let map = export_lhmap(&Model::new(NetConfig::default(), 3), &data, &cam, 1500).unwrap();
    (data, map)
}

/// A model whose pose head always outputs the identity correction.
fn identity_model() -> Model {
    let mut m = Model::new(NetConfig::default(), 4);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let name = m.store.name(id).to_string();
        if name.starts_with("pose.q.2.") || name.starts_with("pose.t.2.") {
            m.store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        if name == "pose.q.2.b" {
            m.store.get_mut(id).data_mut()[0] = 1.0;
        }
    }
    m
}

#[test]
fn heat_value_sums_channels_and_masks() {
    let mut d = DepthImage::zeros(4, 6, Pose::identity());
    d.values[0] = 3.0;
    d.values[7] = 1.5;
    let h = Tensor::filled(&[2, 2, 3], 0.25);
    let v = heat_value(&h, &d);
    assert_eq!(v.len(), 24);
    assert_eq!(v[0], 0.5);
    assert_eq!(v[7], 0.5);
    assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 2);
}

#[test]
fn topn_ties_go_to_smaller_index() {
    let mut d = DepthImage::zeros(3, 3, Pose::identity());
    for i in [1, 2, 4, 5, 8] {
        d.values[i] = i as f64;
    }
    let h = vec![1.0; 9];
    assert_eq!(topn_indices(&h, &d, 3), vec![1, 2, 4]);
    let h = vec![0.0, 0.0, 0.5, 0.0, 0.9, 0.5, 9.0, 0.0, 0.5];
    assert_eq!(topn_indices(&h, &d, 2), vec![2, 4]);
    assert_eq!(topn_indices(&h, &d, 0), Vec::<usize>::new());
    assert_eq!(topn_indices(&h, &d, 40), vec![1, 2, 4, 5, 8]);
    let m = topn_select(&h, &d, 2);
    assert_eq!(m.values[2], 2.0);
    assert_eq!(m.values[4], 4.0);
    assert_eq!(m.valid_count(), 2);
}

#[test]
fn repose_to_same_pose_is_exact() {
    let cam = desk_camera();
    let (data, _) = fixture();
    let s = &data[0];
    let h: Vec<f64> = (0..cam.pixel_count()).map(|i| (i % 17) as f64).collect();
    let m_c = topn_select(&h, &s.d_gt, 500);
    let (out, source) = repose_selection(&m_c, &s.t_gt, &s.t_gt, &cam);
    assert_eq!(out.values, m_c.values);
    for (k, src) in source.iter().enumerate() {
        assert_eq!(*src, (m_c.values[k] > 0.0).then_some(k));
    }
}

#[test]
fn correction_target_recovers_noise() {
    let t_gt = Pose::from_parts(
        UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
        Vector3::new(4.0, -1.0, 2.0),
    );
    let noise = Pose::from_parts(
        UnitQuaternion::from_euler_angles(0.02, 0.05, -0.01),
        Vector3::new(0.5, 0.1, -0.3),
    );
    let t_init = compose(&t_gt, &noise);
    let (q, t) = correction_target(&t_init, &t_gt);
    let back = compose(&t_init, &Pose::new(q, t).unwrap());
    assert!((back.translation() - t_gt.translation()).norm() < 1e-12);
    assert!(back.rotation().angle_to(t_gt.rotation()) < 1e-12);
    let (q, t) = correction_target(&t_gt, &t_gt);
    assert!((q[0] - 1.0).abs() < 1e-15 && t.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn localization_is_deterministic() {
    let cam = desk_camera();
    let (data, map) = fixture();
    let model = Model::new(NetConfig::default(), 9);
    let s = &data[1];
    let a = localize_once(&model, &map, &s.image, &s.t_init, &cam, 1).unwrap();
    let b = localize_once(&model, &map, &s.image, &s.t_init, &cam, 1).unwrap();
    assert_eq!(a.pose, b.pose);
    assert_eq!(a.m_r.values, b.m_r.values);
    let direct = regress_correction(&model, &s.image, &a.m_r).unwrap();
    assert_eq!(direct, a.correction);
    assert_eq!(compose(&s.t_init, &direct), a.pose);
}

#[test]
fn single_iteration_equals_localize_once() {
    let cam = desk_camera();
    let (data, map) = fixture();
    let model = Model::new(NetConfig::default(), 9);
    let s = &data[2];
    let once = localize_once(&model, &map, &s.image, &s.t_init, &cam, 1).unwrap();
    let it = localize_iterative(
        &[&model],
        &map,
        &s.image,
        &s.t_init,
        &cam,
        1,
        Some(&s.t_gt),
        1,
    )
    .unwrap();
    assert_eq!(it.pose_est, once.pose);
    assert_eq!(it.trace.len(), 1);
    let err = (once.pose.translation() - s.t_gt.translation()).norm();
    assert_eq!(it.trace[0].transl_err, Some(err));
}

#[test]
fn identity_correction_is_a_fixed_point() {
    let cam = desk_camera();
    let (data, map) = fixture();
    let model = identity_model();
    let s = &data[0];
    let once = localize_once(&model, &map, &s.image, &s.t_init, &cam, 1).unwrap();
    assert_eq!(once.correction.quat(), [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(*once.correction.translation(), Vector3::zeros());
    assert_eq!(once.pose, s.t_init);
    let models = [&model, &model, &model];
    let it = localize_iterative(&models, &map, &s.image, &s.t_init, &cam, 3, None, 1).unwrap();
    assert_eq!(it.pose_est, s.t_init);
    assert!(it.trace.iter().all(|e| e.transl_err.is_none()));
}

#[test]
fn too_many_iterations_for_models() {
    let cam = desk_camera();
    let (data, map) = fixture();
    let model = identity_model();
    let s = &data[0];
    let r = localize_iterative(&[&model], &map, &s.image, &s.t_init, &cam, 2, None, 1);
    assert!(matches!(r, Err(PipelineError::MissingModel(1))));
}

#[test]
fn pose_far_from_map_has_empty_local_map() {
    let cam = desk_camera();
    let (_, map) = fixture();
    let away = Pose::from_parts(UnitQuaternion::identity(), Vector3::new(0.0, -5000.0, 0.0));
    assert!(matches!(
        render_local_map(&map, &away, &cam, 1),
        Err(PipelineError::EmptyLocalMap)
    ));
}

#[test]
fn training_rejects_empty_inputs() {
    let cam = desk_camera();
    let (_, map) = fixture();
    let mut model = Model::new(NetConfig::default(), 1);
    let r = train_offline(&mut model, &[], &cam, &OfflineConfig::default());
    assert!(matches!(r, Err(PipelineError::EmptyDataset)));
    let r = train_online(
        &mut model,
        &map,
        &[],
        &cam,
        &NoiseRange::level(1).unwrap(),
        &OnlineConfig::default(),
    );
    assert!(matches!(r, Err(PipelineError::EmptyDataset)));
}

#[test]
fn short_training_runs_are_reproducible() {
    let cam = desk_camera();
    let (data, map) = fixture();
    let data = &data[..2];
    let cfg = OfflineConfig {
        epochs: 1,
        batch: 2,
        topn: 600,
        ..OfflineConfig::default()
    };
    let run = || {
        let mut m = Model::new(NetConfig::default(), 2);
        let rep = train_offline(&mut m, data, &cam, &cfg).unwrap();
        (m, rep)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    assert!(r1.epoch_losses[0].is_finite());
    let online = OnlineConfig {
        epochs: 1,
        batch: 2,
        ..OnlineConfig::default()
    };
    let range = NoiseRange::level(2).unwrap();
    let (mut a, mut b) = (m1, m2);
    let ra = train_online(&mut a, &map, data, &cam, &range, &online).unwrap();
    let rb = train_online(&mut b, &map, data, &cam, &range, &online).unwrap();
    assert_eq!(ra, rb);
    let s = &data[0];
    let pa = localize_once(&a, &map, &s.image, &s.t_init, &cam, 1)
        .unwrap()
        .pose;
    let pb = localize_once(&b, &map, &s.image, &s.t_init, &cam, 1)
        .unwrap()
        .pose;
    assert_eq!(pa, pb);
}
