//! Metrics, failure accounting, timing, KITTI-format ingestion, plots and
//! the key=value run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::geometry::{project_point, quat_geodesic_deg, CameraModel, PointCloud, Pose};
use crate::mapstore::{voxel_downsample, LHMap};
use crate::model::Model;
use crate::offline::OfflineConfig;
use crate::online::{localize_iterative, localize_once, LocalizationResult, OnlineConfig};
use crate::raster::RgbImage;
use crate::synth::OfflineSample;

/// Frames with a translation error strictly above this count as failures.
pub const FAILURE_THRESHOLD_M: f64 = 4.0;
/// Voxel size used when aggregating KITTI scans.
pub const KITTI_VOXEL_M: f64 = 0.1;
pub const CDF_FILE: &str = "error_cdf.png";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `(translation error in m, rotation error in degrees)`.
pub fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    (
        (est.translation() - gt.translation()).norm(),
        quat_geodesic_deg(est.rotation(), gt.rotation()),
    )
}

/// Percentage of errors strictly above [`FAILURE_THRESHOLD_M`].
pub fn failure_rate(errors: &[f64]) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let failed = errors.iter().filter(|&&e| e > FAILURE_THRESHOLD_M).count();
    Ok(100.0 * failed as f64 / errors.len() as f64)
}

/// Median with the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn variance(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64)
}

fn max(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame_id: u64,
    pub transl_err_m: f64,
    pub rot_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub transl_median_m: f64,
    pub rot_median_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub pre_ms: f64,
    pub infer_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameError>,
    pub transl_mean_m: Option<f64>,
    pub transl_median_m: Option<f64>,
    pub transl_max_m: Option<f64>,
    pub rot_mean_deg: Option<f64>,
    pub rot_median_deg: Option<f64>,
    pub rot_max_deg: Option<f64>,
    pub failure_rate_pct: Option<f64>,
    pub iterations: Vec<IterationSummary>,
    pub timing: Option<TimingSummary>,
    pub map_bytes: Option<u64>,
}

impl EvalReport {
    /// Aggregates per-frame errors; aggregates are absent for an empty list.
    pub fn from_frames(
        frames: Vec<FrameError>,
        iterations: Vec<IterationSummary>,
        timing: Option<TimingSummary>,
        map_bytes: Option<u64>,
    ) -> Self {
        let t: Vec<f64> = frames.iter().map(|f| f.transl_err_m).collect();
        let r: Vec<f64> = frames.iter().map(|f| f.rot_err_deg).collect();
        Self {
            transl_mean_m: mean(&t),
            transl_median_m: median(&t),
            transl_max_m: max(&t),
            rot_mean_deg: mean(&r),
            rot_median_deg: median(&r),
            rot_max_deg: max(&r),
            failure_rate_pct: failure_rate(&t).ok(),
            frames,
            iterations,
            timing,
            map_bytes,
        }
    }

    pub fn transl_errors(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.transl_err_m).collect()
    }

    pub fn rot_errors(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.rot_err_deg).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Localizes every sample from its `t_init` with `iters` refinement steps
/// and collects the errors of the final estimate.
pub fn evaluate(
    models: &[&Model],
    map: &LHMap,
    samples: &[OfflineSample],
    cam: &CameraModel,
    iters: usize,
    k: usize,
) -> Result<(EvalReport, Vec<LocalizationResult>), EvalError> {
    let mut results = Vec::with_capacity(samples.len());
    let mut frames = Vec::with_capacity(samples.len());
    let mut per_iter = vec![(Vec::new(), Vec::new()); iters];
    let (mut pre, mut inf) = (Vec::new(), Vec::new());
    for s in samples {
        let r = localize_iterative(
            models,
            map,
            &s.image,
            &s.t_init,
            cam,
            iters,
            Some(&s.t_gt),
            k,
        )?;
        for (i, entry) in r.trace.iter().enumerate() {
            per_iter[i].0.push(entry.transl_err.unwrap_or(f64::NAN));
            per_iter[i].1.push(entry.rot_err_deg.unwrap_or(f64::NAN));
        }
        let (te, re) = pose_errors(&r.pose_est, &s.t_gt);
        frames.push(FrameError {
            frame_id: s.frame_id,
            transl_err_m: te,
            rot_err_deg: re,
        });
        pre.push(r.pre_ms);
        inf.push(r.infer_ms);
        results.push(r);
    }
    let iterations = per_iter
        .iter()
        .enumerate()
        .filter_map(|(i, (t, r))| {
            Some(IterationSummary {
                iteration: i + 1,
                transl_median_m: median(t)?,
                rot_median_deg: median(r)?,
            })
        })
        .collect();
    let timing = mean(&pre).zip(mean(&inf)).map(|(p, i)| TimingSummary {
        pre_ms: p,
        infer_ms: i,
        total_ms: p + i,
    });
    let report =
        EvalReport::from_frames(frames, iterations, timing, Some(map.encoded_len() as u64));
    Ok((report, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub reps: usize,
    pub frames: usize,
    pub pre_ms_mean: f64,
    pub pre_ms_var: f64,
    pub infer_ms_mean: f64,
    pub infer_ms_var: f64,
    pub total_ms_mean: f64,
    pub total_ms_var: f64,
}

impl Timing {
    pub fn summary(&self) -> TimingSummary {
        TimingSummary {
            pre_ms: self.pre_ms_mean,
            infer_ms: self.infer_ms_mean,
            total_ms: self.total_ms_mean,
        }
    }
}

/// Batch-1 wall-clock timing of map rendering and network inference over
/// `reps` passes through `samples`.
pub fn benchmark_timing(
    model: &Model,
    map: &LHMap,
    samples: &[OfflineSample],
    cam: &CameraModel,
    reps: usize,
    k: usize,
) -> Result<Timing, EvalError> {
    if reps == 0 || samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut pre, mut inf, mut tot) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..reps {
        for s in samples {
            let r = localize_once(model, map, &s.image, &s.t_init, cam, k)?;
            pre.push(r.pre_ms);
            inf.push(r.infer_ms);
            tot.push(r.pre_ms + r.infer_ms);
        }
    }
    let (pm, im) = (mean(&pre).unwrap_or(0.0), mean(&inf).unwrap_or(0.0));
    Ok(Timing {
        reps,
        frames: samples.len(),
        pre_ms_mean: pm,
        pre_ms_var: variance(&pre).unwrap_or(0.0),
        infer_ms_mean: im,
        infer_ms_var: variance(&inf).unwrap_or(0.0),
        total_ms_mean: pm + im,
        total_ms_var: variance(&tot).unwrap_or(0.0),
    })
}

/// Parses one KITTI pose line: a row-major 3x4 `[R | t]` camera-to-world.
pub fn parse_pose_line(line: &str) -> Result<Pose, String> {
    let vals = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| format!("bad number {tok:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != 12 {
        return Err(format!("expected 12 values, found {}", vals.len()));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    let r = Matrix3::new(
        vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
    );
    let t = Vector3::new(vals[3], vals[7], vals[11]);
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > 1e-4 || r.determinant() <= 0.0 {
        return Err("rotation block is not a proper rotation".into());
    }
    let rot = Rotation3::from_matrix(&r);
    Ok(Pose::from_parts(
        UnitQuaternion::from_rotation_matrix(&rot),
        t,
    ))
}

/// Reads a KITTI odometry pose file; blank lines are skipped.
pub fn read_kitti_poses(path: &Path) -> Result<Vec<Pose>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pose = parse_pose_line(line).map_err(|msg| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

/// Reads a KITTI velodyne scan (little-endian `f32` x, y, z, reflectance).
pub fn read_velodyne(path: &Path) -> Result<Vec<Point3<f64>>, EvalError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(EvalError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{} bytes is not a whole number of points", bytes.len()),
        });
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    Ok(bytes
        .chunks_exact(16)
        .map(|c| Point3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
        .filter(|p| p.coords.iter().all(|v| v.is_finite()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KittiFrame {
    pub index: usize,
    pub pose: Pose,
    pub scan: PathBuf,
    /// Left color image, when present on disk.
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct KittiSequence {
    pub map: PointCloud,
    pub frames: Vec<KittiFrame>,
}

/// Reads the `Tr` velodyne-to-camera transform from a KITTI `calib.txt`.
fn read_velo_to_cam(path: &Path) -> Result<Pose, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            return parse_pose_line(rest).map_err(|msg| EvalError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            });
        }
    }
    Err(EvalError::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no Tr entry".into(),
    })
}

/// Loads `poses/<seq>.txt` and `sequences/<seq>/velodyne/NNNNNN.bin` under
/// `dir`, voxel-downsamples each scan at [`KITTI_VOXEL_M`] and places it in
/// the world with its camera pose (and `calib.txt`'s `Tr` when present).
pub fn ingest_kitti(dir: &Path, sequence: &str) -> Result<KittiSequence, EvalError> {
    let poses = read_kitti_poses(&dir.join("poses").join(format!("{sequence}.txt")))?;
    let seq_dir = dir.join("sequences").join(sequence);
    let calib = seq_dir.join("calib.txt");
    let velo_to_cam = if calib.exists() {
        read_velo_to_cam(&calib)?
    } else {
        Pose::identity()
    };
    let mut points = Vec::new();
    let mut frames = Vec::with_capacity(poses.len());
    for (index, pose) in poses.into_iter().enumerate() {
        let scan = seq_dir.join("velodyne").join(format!("{index:06}.bin"));
        if !scan.exists() {
            return Err(EvalError::MissingScan {
                frame: index,
                path: scan,
            });
        }
        let local = voxel_downsample(&PointCloud::new(read_velodyne(&scan)?), KITTI_VOXEL_M);
        let to_world = crate::geometry::compose(&pose, &velo_to_cam);
        points.extend(local.points.iter().map(|p| to_world.transform(p)));
        let image = seq_dir.join("image_2").join(format!("{index:06}.png"));
        frames.push(KittiFrame {
            index,
            pose,
            scan,
            image: image.exists().then_some(image),
        });
    }
    Ok(KittiSequence {
        map: PointCloud::new(points),
        frames,
    })
}

/// Inputs for one registration overlay.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub frame_id: u64,
    pub image: RgbImage,
    pub points: PointCloud,
    pub est: Pose,
    pub gt: Pose,
    pub cam: CameraModel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotFiles {
    pub overlays: Vec<PathBuf>,
    /// Absent when the report has no frames.
    pub cdf: Option<PathBuf>,
}

/// Blue-to-red ramp over `[0, 1]`.
fn depth_color(s: f64) -> [f32; 3] {
    let s = s.clamp(0.0, 1.0) as f32;
    [s, 1.0 - (2.0 * s - 1.0).abs(), 1.0 - s]
}

/// Projects `points` at `pose` over `image`, coloring each by depth. Returns
/// the image and the pixel of every drawn point.
pub fn draw_overlay(
    image: &RgbImage,
    points: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    max_depth: f64,
) -> (RgbImage, Vec<(usize, usize)>) {
    let mut out = image.clone();
    let mut drawn = Vec::new();
    for p in &points.points {
        if let Some(ip) = project_point(p, pose, cam) {
            out.set(ip.row(), ip.col(), depth_color(ip.z / max_depth));
            drawn.push((ip.row(), ip.col()));
        }
    }
    (out, drawn)
}

fn side_by_side(a: &RgbImage, b: &RgbImage) -> RgbImage {
    let gap = 2;
    let mut out = RgbImage::filled(a.height, a.width + gap + b.width, [1.0; 3]);
    for r in 0..a.height {
        for c in 0..a.width {
            out.set(r, c, a.get(r, c));
        }
        for c in 0..b.width {
            out.set(r, a.width + gap + c, b.get(r, c));
        }
    }
    out
}

const CDF_W: usize = 320;
const CDF_H: usize = 240;
const CDF_MARGIN: usize = 20;

/// Empirical CDF curves of translation (blue) and rotation (red) errors,
/// each normalized to its own maximum.
fn render_cdf(report: &EvalReport) -> RgbImage {
    let mut img = RgbImage::filled(CDF_H, CDF_W, [1.0; 3]);
    let (x0, y0) = (CDF_MARGIN, CDF_H - CDF_MARGIN);
    let (pw, ph) = (CDF_W - 2 * CDF_MARGIN, CDF_H - 2 * CDF_MARGIN);
    for c in x0..=x0 + pw {
        img.set(y0, c, [0.0; 3]);
    }
    for r in y0 - ph..=y0 {
        img.set(r, x0, [0.0; 3]);
    }
    for (errors, color) in [
        (report.transl_errors(), [0.1, 0.2, 0.9]),
        (report.rot_errors(), [0.9, 0.1, 0.1]),
    ] {
        let mut e = errors;
        e.sort_by(f64::total_cmp);
        let top = e.last().copied().filter(|m| *m > 0.0).unwrap_or(1.0);
        let n = e.len() as f64;
        for c in 0..=pw {
            let x = top * c as f64 / pw as f64;
            let frac = e.partition_point(|&v| v <= x) as f64 / n;
            let r = y0 - (frac * ph as f64).round() as usize;
            img.set(r, x0 + c, color);
            if r + 1 < y0 {
                img.set(r + 1, x0 + c, color);
            }
        }
    }
    img
}

fn write_png(img: &RgbImage, path: &Path) -> Result<(), EvalError> {
    img.to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes `overlay_<frame>.png` (estimate left, ground truth right) for every
/// overlay and `error_cdf.png` when the report has frames.
pub fn emit_plots(
    report: &EvalReport,
    overlays: &[Overlay],
    out_dir: &Path,
    max_depth: f64,
) -> Result<PlotFiles, EvalError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = PlotFiles::default();
    for o in overlays {
        let (est, _) = draw_overlay(&o.image, &o.points, &o.est, &o.cam, max_depth);
        let (gt, _) = draw_overlay(&o.image, &o.points, &o.gt, &o.cam, max_depth);
        let path = out_dir.join(format!("overlay_{:06}.png", o.frame_id));
        write_png(&side_by_side(&est, &gt), &path)?;
        files.overlays.push(path);
    }
    if report.frames.is_empty() {
        log::warn!("no frames in report, skipping {CDF_FILE}");
    } else {
        let path = out_dir.join(CDF_FILE);
        write_png(&render_cdf(report), &path)?;
        files.cdf = Some(path);
    }
    Ok(files)
}

/// Settings read from a `key = value` file. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch",
    "lr",
    "lr_min",
    "lambda",
    "alpha",
    "beta",
    "topn",
    "noise_level",
    "seed",
    "k",
];

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, EvalError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| EvalError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(EvalError::UnknownConfigKey(key.to_string()));
            }
            let value = value.trim();
            let numeric = value.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false);
            if !numeric {
                return Err(parse_err(format!("{key}: {value:?} is not a number")));
            }
            if let Some(int_key) = ["epochs", "batch", "topn", "noise_level", "seed", "k"]
                .iter()
                .find(|k| **k == key)
            {
                value
                    .parse::<u64>()
                    .map_err(|_| parse_err(format!("{int_key}: {value:?} is not an integer")))?;
            }
            entries.insert(key.to_string(), value.to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.entries.get(key).and_then(|v| v.parse().ok())
    }

    pub fn noise_level(&self) -> Option<u8> {
        self.get("noise_level")
    }

    pub fn apply_offline(&self, cfg: &mut OfflineConfig) {
        if let Some(v) = self.get("epochs") {
            cfg.epochs = v;
        }
        if let Some(v) = self.get("batch") {
            cfg.batch = v;
        }
        if let Some(v) = self.get("lr") {
            cfg.lr = v;
        }
        if let Some(v) = self.get("lr_min") {
            cfg.lr_min = Some(v);
        }
        if let Some(v) = self.get("lambda") {
            cfg.lambda = v;
        }
        if let Some(v) = self.get("alpha") {
            cfg.alpha = v;
        }
        if let Some(v) = self.get("beta") {
            cfg.beta = v;
        }
        if let Some(v) = self.get("topn") {
            cfg.topn = v;
        }
        if let Some(v) = self.get("noise_level") {
            cfg.noise_level = v;
        }
        if let Some(v) = self.get("seed") {
            cfg.seed = v;
        }
    }

    pub fn apply_online(&self, cfg: &mut OnlineConfig) {
        if let Some(v) = self.get("epochs") {
            cfg.epochs = v;
        }
        if let Some(v) = self.get("batch") {
            cfg.batch = v;
        }
        if let Some(v) = self.get("lr") {
            cfg.lr = v;
        }
        if let Some(v) = self.get("lr_min") {
            cfg.lr_min = Some(v);
        }
        if let Some(v) = self.get("k") {
            cfg.k = v;
        }
        if let Some(v) = self.get("seed") {
            cfg.seed = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pose_error_examples() {
        let p = Pose::from_translation([1.0, 2.0, 3.0]);
        assert_eq!(pose_errors(&p, &p), (0.0, 0.0));
        let q = Pose::from_translation([4.0, 6.0, 3.0]);
        assert!((pose_errors(&p, &q).0 - 5.0).abs() < 1e-12);
        let rz = Pose::from_rotation(UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            FRAC_PI_2,
        ));
        let (t, r) = pose_errors(&rz, &Pose::identity());
        assert_eq!(t, 0.0);
        assert!((r - 90.0).abs() < 1e-9);
    }

    #[test]
    fn failure_rate_examples() {
        assert_eq!(failure_rate(&[0.2; 5]).unwrap(), 0.0);
        assert_eq!(failure_rate(&[3.9, 4.1]).unwrap(), 50.0);
        assert_eq!(failure_rate(&[4.0]).unwrap(), 0.0);
        assert!(matches!(failure_rate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn report_aggregates_match_recomputation() {
        let frames: Vec<FrameError> = [(0.5, 1.0), (5.0, 0.2), (1.5, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, &(t, r))| FrameError {
                frame_id: i as u64,
                transl_err_m: t,
                rot_err_deg: r,
            })
            .collect();
        let rep = EvalReport::from_frames(frames, vec![], None, Some(10));
        assert!((rep.transl_mean_m.unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.transl_median_m, Some(1.5));
        assert_eq!(rep.transl_max_m, Some(5.0));
        assert_eq!(rep.rot_median_deg, Some(1.0));
        assert!((rep.failure_rate_pct.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!(rep.transl_median_m <= rep.transl_max_m);
    }

    #[test]
    fn empty_report_has_absent_aggregates() {
        let rep = EvalReport::from_frames(vec![], vec![], None, None);
        assert_eq!(rep.transl_median_m, None);
        assert_eq!(rep.failure_rate_pct, None);
    }

    #[test]
    fn identity_pose_line() {
        let p = parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert_eq!(p.quat(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.translation(), &Vector3::zeros());
    }

    #[test]
    fn pose_line_with_rotation_and_translation() {
        // 90 degrees about y
        let p = parse_pose_line("0 0 1 1.5 0 1 0 -2 -1 0 0 3").unwrap();
        let m = p.rotation_matrix();
        let expected = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert!((m - expected).abs().max() < 1e-12);
        assert_eq!(p.translation(), &Vector3::new(1.5, -2.0, 3.0));
    }

    #[test]
    fn malformed_pose_lines() {
        assert!(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1").is_err());
        assert!(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 x").is_err());
        assert!(parse_pose_line("2 0 0 0 0 1 0 0 0 0 1 0").is_err());
        assert!(parse_pose_line("-1 0 0 0 0 1 0 0 0 0 1 0").is_err());
        assert!(parse_pose_line("1 0 0 NaN 0 1 0 0 0 0 1 0").is_err());
    }

    #[test]
    fn config_parses_and_applies() {
        let text = "# desk run\nepochs = 3\nlr=0.001 # fast\n\ntopn = 1500\nlambda = 5\nk = 2\n";
        let cfg = RunConfig::parse(text, Path::new("run.cfg")).unwrap();
        let mut off = OfflineConfig::default();
        cfg.apply_offline(&mut off);
        assert_eq!(
            (off.epochs, off.lr, off.topn, off.lambda),
            (3, 0.001, 1500, 5.0)
        );
        assert_eq!(off.batch, OfflineConfig::default().batch);
        let mut on = OnlineConfig::default();
        cfg.apply_online(&mut on);
        assert_eq!((on.epochs, on.lr, on.k), (3, 0.001, 2));
    }

    #[test]
    fn config_errors() {
        let p = Path::new("run.cfg");
        assert!(matches!(
            RunConfig::parse("epochs = 3\ngamma = 1\n", p),
            Err(EvalError::UnknownConfigKey(k)) if k == "gamma"
        ));
        assert!(matches!(
            RunConfig::parse("epochs = 3\nlr 0.1\n", p),
            Err(EvalError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("\n\nbatch = 2.5\n", p),
            Err(EvalError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            RunConfig::parse("lr = fast\n", p),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }
}
