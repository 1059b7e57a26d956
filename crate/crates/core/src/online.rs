//! Localization against a heat map: render the local map at the initial
//! pose, regress the correction, optionally iterate with finer models.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, PipelineError};
use crate::geometry::{
    compose, quat_geodesic_deg, render_depth, sample_noise, CameraModel, DepthImage, NoiseRange,
    Pose,
};
use crate::mapstore::{query_local, LHMap};
use crate::model::Model;
use crate::nets::{cosine_lr, depth_tensor, image_tensor, Adam, Gradients, Graph};
use crate::offline::correction_target;
use crate::raster::RgbImage;
use crate::synth::OfflineSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// When set, the learning rate follows a cosine decay down to this value.
    pub lr_min: Option<f64>,
    /// Number of nearest keyframe records assembled into the local map.
    pub k: usize,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch: 12,
            lr: 1e-4,
            lr_min: None,
            k: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Localization {
    pub pose: Pose,
    /// Regressed correction `ΔT` with `pose = T_init · ΔT`.
    pub correction: Pose,
    pub m_r: DepthImage,
    pub pre_ms: f64,
    pub infer_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub pose_q: [f64; 4],
    pub pose_t: [f64; 3],
    pub transl_err: Option<f64>,
    pub rot_err_deg: Option<f64>,
    pub pre_ms: f64,
    pub infer_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub pose_est: Pose,
    pub trace: Vec<TraceEntry>,
    pub pre_ms: f64,
    pub infer_ms: f64,
}

/// `M^r`: the local map rendered at `t_init`.
pub fn render_local_map(
    map: &LHMap,
    t_init: &Pose,
    cam: &CameraModel,
    k: usize,
) -> Result<DepthImage, PipelineError> {
    let local = query_local(map, t_init, k).map_err(|e| match e {
        MapError::EmptyMap => PipelineError::EmptyLocalMap,
        other => other.into(),
    })?;
    let m = render_depth(&local, t_init, cam);
    if m.valid_count() == 0 {
        return Err(PipelineError::EmptyLocalMap);
    }
    Ok(m)
}

fn check_image(img: &RgbImage, cam: &CameraModel) -> Result<(), PipelineError> {
    if img.height != cam.height || img.width != cam.width {
        return Err(PipelineError::ImageSize {
            expected: (cam.height, cam.width),
            got: (img.height, img.width),
        });
    }
    Ok(())
}

/// Regresses the correction for a prepared `M^r`.
pub fn regress_correction(
    model: &Model,
    img: &RgbImage,
    m_r: &DepthImage,
) -> Result<Pose, PipelineError> {
    model.check_input(img.height, img.width)?;
    let mut g = Graph::new();
    let i = g.input(image_tensor(img));
    let fi = model.net.encode_image(&mut g, &model.store, i)?;
    let d = g.input(depth_tensor(m_r, model.config().max_depth));
    let (pose, _, _) = model.net.regress(&mut g, &model.store, d, &fi)?;
    let q: [f64; 4] = g.value(pose.q).data().try_into().expect("quaternion node");
    let t: [f64; 3] = g.value(pose.t).data().try_into().expect("translation node");
    Ok(Pose::new(q, t)?)
}

pub fn localize_once(
    model: &Model,
    map: &LHMap,
    img: &RgbImage,
    t_init: &Pose,
    cam: &CameraModel,
    k: usize,
) -> Result<Localization, PipelineError> {
    check_image(img, cam)?;
    let start = Instant::now();
    let m_r = render_local_map(map, t_init, cam, k)?;
    let pre_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let correction = regress_correction(model, img, &m_r)?;
    let infer_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Localization {
        pose: compose(t_init, &correction),
        correction,
        m_r,
        pre_ms,
        infer_ms,
    })
}

/// Runs `iters` refinement steps, step `i` using `models[i]` with the
/// previous estimate as its initial pose.
#[allow(clippy::too_many_arguments)]
pub fn localize_iterative(
    models: &[&Model],
    map: &LHMap,
    img: &RgbImage,
    t_init: &Pose,
    cam: &CameraModel,
    iters: usize,
    gt: Option<&Pose>,
    k: usize,
) -> Result<LocalizationResult, PipelineError> {
    if iters > models.len() {
        return Err(PipelineError::MissingModel(models.len()));
    }
    let mut pose = *t_init;
    let mut trace = Vec::with_capacity(iters);
    let (mut pre, mut inf) = (0.0, 0.0);
    for model in &models[..iters] {
        let step = localize_once(model, map, img, &pose, cam, k)?;
        pose = step.pose;
        pre += step.pre_ms;
        inf += step.infer_ms;
        let t = pose.translation();
        trace.push(TraceEntry {
            pose_q: pose.quat(),
            pose_t: [t.x, t.y, t.z],
            transl_err: gt.map(|g| (pose.translation() - g.translation()).norm()),
            rot_err_deg: gt.map(|g| quat_geodesic_deg(pose.rotation(), g.rotation())),
            pre_ms: step.pre_ms,
            infer_ms: step.infer_ms,
        });
    }
    Ok(LocalizationResult {
        pose_est: pose,
        trace,
        pre_ms: pre,
        infer_ms: inf,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OnlineReport {
    pub epoch_losses: Vec<f64>,
    pub w_x: f64,
    pub w_q: f64,
}

/// Trains the regression network with the uncertainty-weighted loss.
/// Every epoch draws fresh initial poses `T_gt · noise` from `range`.
pub fn train_online(
    model: &mut Model,
    map: &LHMap,
    dataset: &[OfflineSample],
    cam: &CameraModel,
    range: &NoiseRange,
    cfg: &OnlineConfig,
) -> Result<OnlineReport, PipelineError> {
    if dataset.is_empty() || cfg.batch == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut grads = Gradients::zeros_like(&model.store);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let total_steps = cfg.epochs * order.len().div_ceil(cfg.batch);
    let mut step = 0usize;
    let mut report = OnlineReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch) {
            if let Some(min) = cfg.lr_min {
                adam.lr = cosine_lr(cfg.lr, min, step, total_steps);
            }
            step += 1;
            grads.zero();
            let mut used = 0usize;
            for &i in chunk {
                let s = &dataset[i];
                let t_init = compose(&s.t_gt, &sample_noise(range, &mut rng));
                let m_r = match render_local_map(map, &t_init, cam, cfg.k) {
                    Err(PipelineError::EmptyLocalMap) => continue,
                    r => r?,
                };
                let (_, loss) =
                    online_sample_loss(model, &mut grads, &s.image, &m_r, &t_init, &s.t_gt)?;
                if !loss.is_finite() {
                    return Err(PipelineError::Diverged {
                        epoch,
                        frame_id: s.frame_id,
                        loss,
                    });
                }
                sum += loss;
                used += 1;
            }
            if used > 0 {
                grads.scale(1.0 / used as f64);
                adam.step(&mut model.store, &grads);
                seen += used;
            }
        }
        let mean = sum / seen.max(1) as f64;
        info!("online epoch {epoch}: loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    (report.w_x, report.w_q) = model.uncertainty();
    Ok(report)
}

/// Forward + backward of one sample; returns `(L_t + L_q, total)` values and
/// accumulates parameter gradients.
fn online_sample_loss(
    model: &Model,
    grads: &mut Gradients,
    img: &RgbImage,
    m_r: &DepthImage,
    t_init: &Pose,
    t_gt: &Pose,
) -> Result<(f64, f64), PipelineError> {
    model.check_input(img.height, img.width)?;
    let mut g = Graph::new();
    let i = g.input(image_tensor(img));
    let fi = model.net.encode_image(&mut g, &model.store, i)?;
    let d = g.input(depth_tensor(m_r, model.config().max_depth));
    let (pose, _, _) = model.net.regress(&mut g, &model.store, d, &fi)?;
    let (q_gt, t_gt) = correction_target(t_init, t_gt);
    let lt = g.translation_loss(pose.t, t_gt);
    let lq = g.rotation_loss(pose.q, q_gt)?;
    let wx = g.param(&model.store, model.w_x);
    let wq = g.param(&model.store, model.w_q);
    let ut = g.uncertainty(lt, wx);
    let uq = g.uncertainty(lq, wq);
    let total = g.weighted_sum(&[(ut, 1.0), (uq, 1.0)]);
    let value = g.value(total).item();
    let raw = g.value(lt).item() + g.value(lq).item();
    if value.is_finite() {
        g.backward(total, grads);
    }
    Ok((raw, value))
}
