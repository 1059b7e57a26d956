//! Two-stage heat-map generation: heat scoring and TopN selection, re-posing
//! of the selection to the initial pose, training, and map export.

use log::{info, warn};
use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::geometry::{compose, invert, project_camera_point, CameraModel, DepthImage, Pose};
use crate::losses::{offline_total_loss, LossWeights};
use crate::mapstore::{build_lhmap, lift_local_map, LHMap, MapMeta};
use crate::model::Model;
use crate::nets::kernels;
use crate::nets::{cosine_lr, Adam};
use crate::nets::{
    depth_tensor, image_tensor, FeaturePyramid, Gradients, Graph, PoseVars, Tensor, Var,
};
use crate::synth::OfflineSample;

/// Frames with fewer valid depth pixels are not trained on.
pub const MIN_VALID_PIXELS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// When set, the learning rate follows a cosine decay down to this value.
    pub lr_min: Option<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub topn: usize,
    pub noise_level: u8,
    pub seed: u64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            epochs: 120,
            batch: 8,
            lr: 1e-4,
            lr_min: None,
            lambda: w.lambda,
            alpha: w.alpha,
            beta: w.beta,
            topn: 5000,
            noise_level: 1,
            seed: 0,
        }
    }
}

/// Masked per-pixel heat: `H` is bilinearly resized to the depth image and
/// summed over channels; pixels without depth get zero.
pub fn heat_value(h: &Tensor, d_gt: &DepthImage) -> Vec<f64> {
    let (c, hh, ww) = h.chw();
    let hw = d_gt.height * d_gt.width;
    let up = kernels::resize_forward(h.data(), c, hh, ww, d_gt.height, d_gt.width);
    let mut out = vec![0.0; hw];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&up[ch * hw..(ch + 1) * hw]) {
            *o += v;
        }
    }
    mask_heat(&mut out, d_gt);
    out
}

fn mask_heat(h: &mut [f64], d: &DepthImage) {
    for (v, &z) in h.iter_mut().zip(&d.values) {
        if z <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-major indices of the `min(n, valid)` valid pixels with the largest
/// heat, ties going to the smaller index. Returned in row-major order.
pub fn topn_indices(h: &[f64], d_gt: &DepthImage, n: usize) -> Vec<usize> {
    let mut valid: Vec<usize> = d_gt.valid_indices().collect();
    if n < valid.len() {
        valid.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
        valid.truncate(n);
        valid.sort_unstable();
    }
    valid
}

/// `M_c`: the depths of the TopN pixels, zero elsewhere.
pub fn topn_select(h: &[f64], d_gt: &DepthImage, n: usize) -> DepthImage {
    let mut m = DepthImage::zeros(d_gt.height, d_gt.width, d_gt.pose);
    for i in topn_indices(h, d_gt, n) {
        m.values[i] = d_gt.values[i];
    }
    m
}

/// Lifts the nonzero pixels of `m_c` (rendered at `t_gt`) and re-renders
/// them at `t_init`. Also returns, per output pixel, the source pixel of `m_c`.
pub fn repose_selection(
    m_c: &DepthImage,
    t_gt: &Pose,
    t_init: &Pose,
    cam: &CameraModel,
) -> (DepthImage, Vec<Option<usize>>) {
    let rel = if t_gt == t_init {
        Pose::identity()
    } else {
        compose(&invert(t_init), t_gt)
    };
    let r = rel.rotation_matrix();
    let t = *rel.translation();
    let mut out = DepthImage::zeros(cam.height, cam.width, *t_init);
    let mut source = vec![None; cam.pixel_count()];
    for idx in m_c.valid_indices() {
        let z = m_c.values[idx];
        let (row, col) = (
            (idx / m_c.width) as f64 + 0.5,
            (idx % m_c.width) as f64 + 0.5,
        );
        let p = Point3::new((col - cam.cx) / cam.fx * z, (row - cam.cy) / cam.fy * z, z);
        let q = Point3::from(r * p.coords + t);
        if let Some(ip) = project_camera_point(&q, cam) {
            let k = ip.row() * cam.width + ip.col();
            if out.values[k] == 0.0 || ip.z < out.values[k] {
                out.values[k] = ip.z;
                source[k] = Some(idx);
            }
        }
    }
    (out, source)
}

pub struct Stage1 {
    /// `H_c` at the heat-head resolution.
    pub heat: Var,
    /// Full-resolution channel sum of `H_c` (unmasked).
    pub score: Var,
    pub h: Vec<f64>,
    pub m_c: DepthImage,
    pub emb: Var,
    pub pose: PoseVars,
    pub image_features: FeaturePyramid,
}

pub struct Stage2 {
    pub m_init: DepthImage,
    pub heat: Var,
    pub emb: Var,
    pub pose: PoseVars,
}

fn depth_var(g: &mut Graph, model: &Model, d: &DepthImage) -> Var {
    g.input(depth_tensor(d, model.config().max_depth))
}

/// Heat of `D_gt`, TopN selection, and the stage-1 pose from the flow
/// embedding between `D_init` and the image.
pub fn stage1_forward(
    g: &mut Graph,
    model: &Model,
    s: &OfflineSample,
    topn: usize,
) -> Result<Stage1, PipelineError> {
    model.check_input(s.d_gt.height, s.d_gt.width)?;
    let (net, store) = (&model.net, &model.store);
    let d_gt = depth_var(g, model, &s.d_gt);
    let fd_gt = net.encode_depth(g, store, d_gt)?;
    let heat = net.heat_head(g, store, &fd_gt)?;
    let up = g.resize(heat, s.d_gt.height, s.d_gt.width);
    let score = g.channel_sum(up);
    let mut h = g.value(score).data().to_vec();
    mask_heat(&mut h, &s.d_gt);
    let m_c = topn_select(&h, &s.d_gt, topn);

    let img = g.input(image_tensor(&s.image));
    let image_features = net.encode_image(g, store, img)?;
    let d_init = depth_var(g, model, &s.d_init);
    let fd_init = net.encode_depth(g, store, d_init)?;
    let emb = net.flow_embedding(g, store, &fd_init, &image_features)?;
    let pose = net.attention_pose_head(g, store, emb, heat)?;
    Ok(Stage1 {
        heat,
        score,
        h,
        m_c,
        emb,
        pose,
        image_features,
    })
}

/// Re-poses `M_c` to `T_init` and regresses the stage-2 pose from it. The
/// re-posed depths reach the heat scores through a straight-through path.
pub fn stage2_forward(
    g: &mut Graph,
    model: &Model,
    s: &OfflineSample,
    s1: &Stage1,
    cam: &CameraModel,
) -> Result<Stage2, PipelineError> {
    if s1.m_c.valid_count() == 0 {
        return Err(PipelineError::DegenerateSample(s.frame_id));
    }
    let (net, store) = (&model.net, &model.store);
    let (m_init, source) = repose_selection(&s1.m_c, &s.t_gt, &s.t_init, cam);
    let values = depth_tensor(&m_init, model.config().max_depth);
    let depth = g.straight_through(values, s1.score, source)?;
    let fm = net.encode_depth(g, store, depth)?;
    let heat = net.heat_head(g, store, &fm)?;
    let emb = net.flow_embedding(g, store, &fm, &s1.image_features)?;
    let pose = net.attention_pose_head(g, store, emb, heat)?;
    Ok(Stage2 {
        m_init,
        heat,
        emb,
        pose,
    })
}

/// `(q, t)` of `ΔT = T_init⁻¹ · T_gt`.
pub fn correction_target(t_init: &Pose, t_gt: &Pose) -> ([f64; 4], [f64; 3]) {
    let d = compose(&invert(t_init), t_gt);
    let t = d.translation();
    (d.quat(), [t.x, t.y, t.z])
}

/// `L_t + λ L_q` against the correction target.
pub fn pose_loss_var(
    g: &mut Graph,
    pose: &PoseVars,
    target: &([f64; 4], [f64; 3]),
    lambda: f64,
) -> Result<Var, PipelineError> {
    let lt = g.translation_loss(pose.t, target.1);
    let lq = g.rotation_loss(pose.q, target.0)?;
    Ok(g.weighted_sum(&[(lt, 1.0), (lq, lambda)]))
}

/// Per-sample training objective: returns `(total, L_p0, L_p1)`.
pub fn offline_sample_loss(
    g: &mut Graph,
    model: &Model,
    s: &OfflineSample,
    cam: &CameraModel,
    cfg: &OfflineConfig,
) -> Result<(Var, f64, f64), PipelineError> {
    let s1 = stage1_forward(g, model, s, cfg.topn)?;
    let s2 = stage2_forward(g, model, s, &s1, cam)?;
    let target = correction_target(&s.t_init, &s.t_gt);
    let lp0 = pose_loss_var(g, &s1.pose, &target, cfg.lambda)?;
    let lp1 = pose_loss_var(g, &s2.pose, &target, cfg.lambda)?;
    let (v0, v1) = (g.value(lp0).item(), g.value(lp1).item());
    offline_total_loss(v0, v1, cfg.alpha, cfg.beta)?;
    let total = g.weighted_sum(&[(lp0, cfg.alpha), (lp1, cfg.beta)]);
    Ok((total, v0, v1))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped: Vec<u64>,
}

fn validate_common(cfg_lambda: f64, batch: usize) -> Result<(), PipelineError> {
    if cfg_lambda < 1.0 {
        return Err(crate::error::LossError::LambdaBelowOne(cfg_lambda).into());
    }
    if batch == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(())
}

/// Optimizes `α·L_p0 + β·L_p1` with Adam, averaging gradients over each
/// batch. Frames too sparse to select from are skipped with a warning.
pub fn train_offline(
    model: &mut Model,
    dataset: &[OfflineSample],
    cam: &CameraModel,
    cfg: &OfflineConfig,
) -> Result<TrainReport, PipelineError> {
    validate_common(cfg.lambda, cfg.batch)?;
    LossWeights {
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        beta: cfg.beta,
        ..LossWeights::default()
    }
    .validate()?;
    let usable: Vec<&OfflineSample> = dataset
        .iter()
        .filter(|s| {
            let ok = s.d_gt.valid_count() >= MIN_VALID_PIXELS;
            if !ok {
                warn!(
                    "frame {}: fewer than {MIN_VALID_PIXELS} valid pixels, skipped",
                    s.frame_id
                );
            }
            ok
        })
        .collect();
    let mut report = TrainReport {
        skipped: dataset
            .iter()
            .filter(|s| s.d_gt.valid_count() < MIN_VALID_PIXELS)
            .map(|s| s.frame_id)
            .collect(),
        ..TrainReport::default()
    };
    if usable.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut grads = Gradients::zeros_like(&model.store);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let total_steps = cfg.epochs * order.len().div_ceil(cfg.batch);
    let mut step = 0usize;
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
                let s = usable[i];
                let mut g = Graph::new();
                let (total, _, _) = match offline_sample_loss(&mut g, model, s, cam, cfg) {
                    Err(PipelineError::DegenerateSample(id)) => {
                        warn!("frame {id}: empty selection, skipped");
                        continue;
                    }
                    r => r?,
                };
                let loss = g.value(total).item();
                if !loss.is_finite() {
                    return Err(PipelineError::Diverged {
                        epoch,
                        frame_id: s.frame_id,
                        loss,
                    });
                }
                g.backward(total, &mut grads);
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
        info!("offline epoch {epoch}: loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// Heat scores of `D_gt` only, without the pose branch.
pub fn heat_grid(model: &Model, d_gt: &DepthImage) -> Result<Vec<f64>, PipelineError> {
    model.check_input(d_gt.height, d_gt.width)?;
    let mut g = Graph::new();
    let d = depth_var(&mut g, model, d_gt);
    let f = model.net.encode_depth(&mut g, &model.store, d)?;
    let heat = model.net.heat_head(&mut g, &model.store, &f)?;
    Ok(heat_value(g.value(heat), d_gt))
}

/// Runs selection on every frame at its ground-truth pose and unites the
/// lifted selections into a map.
pub fn export_lhmap(
    model: &Model,
    dataset: &[OfflineSample],
    cam: &CameraModel,
    topn: usize,
) -> Result<LHMap, PipelineError> {
    let mut frames: Vec<&OfflineSample> = dataset.iter().collect();
    frames.sort_by_key(|s| s.frame_id);
    let mut records = Vec::with_capacity(frames.len());
    for s in frames {
        let h = heat_grid(model, &s.d_gt)?;
        let m_c = topn_select(&h, &s.d_gt, topn);
        records.push(lift_local_map(s.frame_id, &m_c, &s.t_gt, cam, &h)?);
    }
    Ok(build_lhmap(
        records,
        MapMeta {
            camera: *cam,
            budget: topn as u32,
        },
    )?)
}
