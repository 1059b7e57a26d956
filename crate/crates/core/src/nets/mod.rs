//! Trainable components: feature-pyramid encoders, coarse-to-fine
//! correlation flow embedding, heat head, and the spatial-attention pose head.
//!
//! All components record onto a [`Graph`] so one forward pass serves both
//! inference and training. Pyramid level `l` sits at `1/2^(l+1)` of the input
//! resolution.

pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::geometry::DepthImage;
use crate::raster::RgbImage;
pub use graph::{Graph, Var};
pub use params::{cosine_lr, stable_hash, Adam, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

const LEAK: f64 = 0.1;
const NORM_EPS: f64 = 1e-6;
const COORD_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channels per pyramid level; its length is the pyramid depth.
    pub channels: Vec<usize>,
    pub heat_channels: usize,
    pub corr_radius: usize,
    /// Pyramid level at which the flow embedding is emitted.
    pub regression_level: usize,
    pub estimator_width: usize,
    pub mlp_hidden: usize,
    /// Depths are divided by this and clipped to `[0, 1]`.
    pub max_depth: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            heat_channels: 8,
            corr_radius: 4,
            regression_level: 1,
            estimator_width: 32,
            mlp_hidden: 256,
            max_depth: 80.0,
        }
    }
}

impl NetConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn hash(&self) -> u64 {
        stable_hash(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Required divisor of input height and width.
    pub fn divisor(&self) -> usize {
        1 << self.levels()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_kaiming(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, ShapeError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_kaiming(format!("{name}.w"), &[n_out, n_in], n_in, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[n_out]));
        Self { w, b }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, ShapeError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

/// Strided convolutional encoder producing one feature grid per level.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<(Conv, Conv)>,
    in_channels: usize,
    divisor: usize,
}

/// Graph-bound feature maps, finest level first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        cfg: &NetConfig,
        rng: &mut R,
    ) -> Self {
        let mut cin = in_channels;
        let blocks = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let down = Conv::new(store, &format!("{name}.l{l}.down"), cin, c, 3, 2, rng);
                let refine = Conv::new(store, &format!("{name}.l{l}.conv"), c, c, 3, 1, rng);
                cin = c;
                (down, refine)
            })
            .collect();
        Self {
            blocks,
            in_channels,
            divisor: cfg.divisor(),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<FeaturePyramid, ShapeError> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(ShapeError::Mismatch {
                op: "encoder",
                expected: vec![self.in_channels, 0, 0],
                got: s,
            });
        }
        if !s[1].is_multiple_of(self.divisor)
            || !s[2].is_multiple_of(self.divisor)
            || s[1] == 0
            || s[2] == 0
        {
            return Err(ShapeError::Indivisible {
                op: "encoder",
                dims: s[1..].to_vec(),
                divisor: self.divisor,
            });
        }
        let mut levels = Vec::with_capacity(self.blocks.len());
        let mut cur = x;
        for (down, refine) in &self.blocks {
            let y = down.forward(g, store, cur)?;
            let y = g.leaky_relu(y, LEAK);
            let y = refine.forward(g, store, y)?;
            cur = g.leaky_relu(y, LEAK);
            levels.push(cur);
        }
        Ok(FeaturePyramid { levels })
    }
}

/// Coarse-to-fine correlation network in the PWC style: correlate at the
/// coarsest level, estimate a flow, upsample it, warp the finer features and
/// correlate again until the regression level.
#[derive(Debug, Clone)]
pub struct FlowEstimator {
    stages: Vec<FlowStage>,
    radius: usize,
    coarsest: usize,
    regression_level: usize,
}

#[derive(Debug, Clone, Copy)]
struct FlowStage {
    hidden: Conv,
    out: Conv,
}

impl FlowEstimator {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Self {
        let corr = kernels::correlation_channels(cfg.corr_radius);
        let coarsest = cfg.levels() - 1;
        let stages = (cfg.regression_level..=coarsest)
            .rev()
            .map(|l| {
                let is_first = l == coarsest;
                let cin = corr + cfg.channels[l] + COORD_CHANNELS + if is_first { 0 } else { 2 };
                let cout = if l == cfg.regression_level {
                    cfg.heat_channels
                } else {
                    2
                };
                let out = Conv::new(
                    store,
                    &format!("flow.l{l}.out"),
                    cfg.estimator_width,
                    cout,
                    3,
                    1,
                    rng,
                );
                if l != cfg.regression_level {
                    // start from a near-zero flow so the first warps are identities
                    store.get_mut(out.w).scale(0.01);
                }
                FlowStage {
                    hidden: Conv::new(
                        store,
                        &format!("flow.l{l}.hidden"),
                        cin,
                        cfg.estimator_width,
                        3,
                        1,
                        rng,
                    ),
                    out,
                }
            })
            .collect();
        Self {
            stages,
            radius: cfg.corr_radius,
            coarsest,
            regression_level: cfg.regression_level,
        }
    }

    /// `a` is the depth-side pyramid, `b` the image-side pyramid.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        a: &FeaturePyramid,
        b: &FeaturePyramid,
    ) -> Result<Var, ShapeError> {
        if a.levels.len() != b.levels.len() || a.levels.len() <= self.coarsest {
            return Err(ShapeError::Mismatch {
                op: "flow_embedding",
                expected: vec![a.levels.len()],
                got: vec![b.levels.len()],
            });
        }
        for (&la, &lb) in a.levels.iter().zip(&b.levels) {
            if g.value(la).shape() != g.value(lb).shape() {
                return Err(ShapeError::Mismatch {
                    op: "flow_embedding",
                    expected: g.value(la).shape().to_vec(),
                    got: g.value(lb).shape().to_vec(),
                });
            }
        }
        let mut flow: Option<Var> = None;
        let mut out = None;
        for (stage, l) in self
            .stages
            .iter()
            .zip((self.regression_level..=self.coarsest).rev())
        {
            let fa = a.levels[l];
            let (_, h, w) = g.value(fa).chw();
            let up = match flow {
                Some(f) => {
                    let r = g.resize(f, h, w);
                    Some(g.scale(r, 2.0))
                }
                None => None,
            };
            let fb = match up {
                Some(u) => g.warp(b.levels[l], u)?,
                None => b.levels[l],
            };
            let na = g.channel_normalize(fa, NORM_EPS);
            let nb = g.channel_normalize(fb, NORM_EPS);
            let corr = g.correlation(na, nb, self.radius)?;
            let corr = g.leaky_relu(corr, LEAK);
            let xy = g.input(coordinate_grid(h, w));
            let mut parts = vec![corr, fa, xy];
            parts.extend(up);
            let x = g.concat(&parts)?;
            let hdn = stage.hidden.forward(g, store, x)?;
            let hdn = g.leaky_relu(hdn, LEAK);
            let y = stage.out.forward(g, store, hdn)?;
            if l == self.regression_level {
                out = Some(y);
            } else {
                flow = Some(y);
            }
        }
        Ok(out.expect("regression level is always visited"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeatHead {
    hidden: Conv,
    out: Conv,
}

impl HeatHead {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Self {
        Self {
            hidden: Conv::new(
                store,
                "heat.hidden",
                cfg.channels[0],
                cfg.channels[0],
                3,
                1,
                rng,
            ),
            out: Conv::new(
                store,
                "heat.out",
                cfg.channels[0],
                cfg.heat_channels,
                1,
                1,
                rng,
            ),
        }
    }

    /// Nonnegative `C`-channel scores at level-0 resolution.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: &FeaturePyramid,
    ) -> Result<Var, ShapeError> {
        let x = self.hidden.forward(g, store, f.levels[0])?;
        let x = g.leaky_relu(x, LEAK);
        let x = self.out.forward(g, store, x)?;
        Ok(g.softplus(x))
    }
}

#[derive(Debug, Clone)]
pub struct PoseHead {
    mlp_q: [Dense; 3],
    mlp_t: [Dense; 3],
}

/// Graph handles of a regressed pose.
#[derive(Debug, Clone, Copy)]
pub struct PoseVars {
    /// Unit quaternion `(w, x, y, z)`.
    pub q: Var,
    pub t: Var,
    /// Pooled cost-volume vector fed to the MLPs.
    pub pooled: Var,
}

impl PoseHead {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Self {
        let (c, hdn) = (cfg.heat_channels, cfg.mlp_hidden);
        let mut mlp = |name: &str, out: usize| {
            [
                Dense::new(store, &format!("{name}.0"), c, hdn, rng),
                Dense::new(store, &format!("{name}.1"), hdn, hdn, rng),
                Dense::new(store, &format!("{name}.2"), hdn, out, rng),
            ]
        };
        let mlp_q = mlp("pose.q", 4);
        let mlp_t = mlp("pose.t", 3);
        // start near the identity correction
        for last in [mlp_q[2], mlp_t[2]] {
            store.get_mut(last.w).scale(0.01);
        }
        store.get_mut(mlp_q[2].b).data_mut()[0] = 1.0;
        Self { mlp_q, mlp_t }
    }

    /// Upsamples `e` to the resolution of `h`, pools it with per-channel
    /// spatial softmax weights of `h`, and regresses `(q, t)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e: Var,
        h: Var,
    ) -> Result<PoseVars, ShapeError> {
        let (ce, _, _) = g.value(e).chw();
        let (ch, hh, hw) = g.value(h).chw();
        if ce != ch {
            return Err(ShapeError::Mismatch {
                op: "attention_pose_head",
                expected: vec![ch],
                got: vec![ce],
            });
        }
        let e_up = g.resize(e, hh, hw);
        let pooled = g.attention_pool(e_up, h)?;
        let run = |g: &mut Graph, mlp: &[Dense; 3]| -> Result<Var, ShapeError> {
            let x = mlp[0].forward(g, store, pooled)?;
            let x = g.relu(x);
            let x = mlp[1].forward(g, store, x)?;
            let x = g.relu(x);
            mlp[2].forward(g, store, x)
        };
        let q_raw = run(g, &self.mlp_q)?;
        let q = g.quat_normalize(q_raw)?;
        let t = run(g, &self.mlp_t)?;
        Ok(PoseVars { q, t, pooled })
    }
}

/// The full regression network shared by the offline and online pipelines.
#[derive(Debug, Clone)]
pub struct PoseNet {
    pub config: NetConfig,
    pub image_encoder: Encoder,
    pub depth_encoder: Encoder,
    pub flow: FlowEstimator,
    pub heat: HeatHead,
    pub pose: PoseHead,
}

impl PoseNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let image_encoder = Encoder::new(store, "image", 3, &config, rng);
        let depth_encoder = Encoder::new(store, "depth", 1, &config, rng);
        let flow = FlowEstimator::new(store, &config, rng);
        let heat = HeatHead::new(store, &config, rng);
        let pose = PoseHead::new(store, &config, rng);
        Self {
            config,
            image_encoder,
            depth_encoder,
            flow,
            heat,
            pose,
        }
    }

    pub fn image_tensor(&self, img: &RgbImage) -> Tensor {
        image_tensor(img)
    }

    pub fn depth_tensor(&self, d: &DepthImage) -> Tensor {
        depth_tensor(d, self.config.max_depth)
    }

    pub fn encode_image(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        img: Var,
    ) -> Result<FeaturePyramid, ShapeError> {
        self.image_encoder.forward(g, store, img)
    }

    pub fn encode_depth(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        depth: Var,
    ) -> Result<FeaturePyramid, ShapeError> {
        self.depth_encoder.forward(g, store, depth)
    }

    pub fn flow_embedding(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        depth_side: &FeaturePyramid,
        image_side: &FeaturePyramid,
    ) -> Result<Var, ShapeError> {
        self.flow.forward(g, store, depth_side, image_side)
    }

    pub fn heat_head(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: &FeaturePyramid,
    ) -> Result<Var, ShapeError> {
        self.heat.forward(g, store, f)
    }

    pub fn attention_pose_head(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e: Var,
        h: Var,
    ) -> Result<PoseVars, ShapeError> {
        self.pose.forward(g, store, e, h)
    }

    /// Depth image + RGB image → pose, sharing the depth features between the
    /// heat head and the flow embedding (the online arrangement).
    pub fn regress(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        depth: Var,
        image_features: &FeaturePyramid,
    ) -> Result<(PoseVars, Var, Var), ShapeError> {
        let fd = self.encode_depth(g, store, depth)?;
        let heat = self.heat_head(g, store, &fd)?;
        let emb = self.flow_embedding(g, store, &fd, image_features)?;
        let pose = self.attention_pose_head(g, store, emb, heat)?;
        Ok((pose, heat, emb))
    }
}

/// `[3, H, W]` tensor with values mapped from `[0, 1]` to `[-1, 1]`.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    let hw = img.height * img.width;
    let mut data = vec![0.0; 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            data[c * hw + i] = (img.data[i * 3 + c] as f64 - 0.5) * 2.0;
        }
    }
    Tensor::new(vec![3, img.height, img.width], data).expect("sized")
}

/// `[1, H, W]` tensor of depths divided by `max_depth`, clipped to `[0, 1]`.
pub fn depth_tensor(d: &DepthImage, max_depth: f64) -> Tensor {
    let data = d
        .values
        .iter()
        .map(|&z| (z / max_depth).clamp(0.0, 1.0))
        .collect();
    Tensor::new(vec![1, d.height, d.width], data).expect("sized")
}

/// `[2, H, W]` pixel-center coordinates scaled to `[-1, 1]` (x, then y).
pub fn coordinate_grid(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(2 * h * w);
    for _ in 0..h {
        data.extend((0..w).map(|c| (2 * c + 1) as f64 / w as f64 - 1.0));
    }
    for r in 0..h {
        let y = (2 * r + 1) as f64 / h as f64 - 1.0;
        data.extend(std::iter::repeat_n(y, w));
    }
    Tensor::new(vec![2, h, w], data).expect("sized")
}

/// Per-channel spatial softmax weights of a `[C, H, W]` heat tensor.
pub fn attention_weights(h: &Tensor) -> Tensor {
    let (c, hh, ww) = h.chw();
    Tensor::new(
        vec![c, hh, ww],
        kernels::spatial_softmax(h.data(), c, hh * ww),
    )
    .expect("sized")
}
