//! Seeded synthetic worlds: facade-and-ground point clouds with albedo, a
//! smooth forward trajectory, and pseudo-RGB renders of the points.

use std::io::Cursor;
use std::path::Path;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MapError, SynthError};
use crate::geometry::{
    compose, render_depth, render_depth_indexed, sample_noise, CameraModel, DepthImage, NoiseRange,
    PointCloud, Pose,
};
use crate::mapstore::{self, KeyframeRecord, VERSION_ALBEDO};
use crate::raster::RgbImage;

pub const MIN_VISIBLE: usize = 500;
pub const MAX_TRIES: usize = 1000;
pub const BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];
/// Camera height above the ground plane (world `y` points down).
pub const CAMERA_HEIGHT: f64 = 1.6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub map: PointCloud,
    pub albedo: Vec<[f32; 3]>,
    pub trajectory: Vec<Pose>,
    pub cam: CameraModel,
    pub seed: u64,
}

/// One training frame.
#[derive(Debug, Clone)]
pub struct OfflineSample {
    pub frame_id: u64,
    pub image: RgbImage,
    pub d_gt: DepthImage,
    pub d_init: DepthImage,
    pub t_gt: Pose,
    pub t_init: Pose,
}

struct Facade {
    origin: Vector3<f64>,
    along: Vector3<f64>,
    length: f64,
    height: f64,
    color: [f64; 3],
    cell: f64,
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.random_range(0.15..0.95),
        rng.random_range(0.15..0.95),
        rng.random_range(0.15..0.95),
    ]
}

fn facades<R: Rng>(rng: &mut R, extent: f64, path_len: f64) -> Vec<Facade> {
    let mut out = Vec::new();
    let z_end = path_len + extent * 0.5;
    for side in [-1.0, 1.0] {
        let mut z = -extent * 0.1;
        while z < z_end {
            let length = rng.random_range(4.0..12.0_f64).min(z_end - z + 1.0);
            let offset = rng.random_range(3.5..7.0);
            out.push(Facade {
                origin: Vector3::new(side * offset, CAMERA_HEIGHT, z),
                along: Vector3::z(),
                length,
                height: rng.random_range(3.0..9.0),
                color: random_color(rng),
                cell: rng.random_range(0.6..1.5),
            });
            if rng.random_bool(0.8) {
                let depth = rng.random_range(0.5..2.5);
                out.push(Facade {
                    origin: Vector3::new(side * offset, CAMERA_HEIGHT, z + length),
                    along: Vector3::new(-side, 0.0, 0.0),
                    length: depth,
                    height: rng.random_range(2.0..6.0),
                    color: random_color(rng),
                    cell: 0.5,
                });
            }
            z += length + rng.random_range(0.0..2.0);
        }
    }
    // posts and parked boxes along the curb, facing the street
    for side in [-1.0, 1.0] {
        let mut z = -extent * 0.1 + rng.random_range(0.0..3.0);
        while z < z_end {
            let x = side * rng.random_range(2.2..3.2);
            let (width, height) = if rng.random_bool(0.3) {
                (rng.random_range(1.5..2.0), rng.random_range(1.2..1.6))
            } else {
                (rng.random_range(0.3..0.6), rng.random_range(1.0..3.0))
            };
            out.push(Facade {
                origin: Vector3::new(x - width * 0.5, CAMERA_HEIGHT, z),
                along: Vector3::x(),
                length: width,
                height,
                color: random_color(rng),
                cell: 0.25,
            });
            z += rng.random_range(3.0..6.0);
        }
    }
    // a few free-standing panels in the far field
    for _ in 0..rng.random_range(2..5) {
        let x = rng.random_range(-2.5..2.5);
        let z = rng.random_range(path_len + 4.0..z_end + 2.0);
        out.push(Facade {
            origin: Vector3::new(x - 1.0, CAMERA_HEIGHT, z),
            along: Vector3::x(),
            length: rng.random_range(1.0..3.0),
            height: rng.random_range(1.0..4.0),
            color: random_color(rng),
            cell: 0.4,
        });
    }
    out
}

fn textured(color: [f64; 3], a: f64, b: f64, cell: f64, jitter: f64) -> [f32; 3] {
    let checker = ((a / cell).floor() as i64 + (b / cell).floor() as i64).rem_euclid(2) as f64;
    let stripe = 0.5 + 0.5 * (a * 3.1).sin() * (b * 2.3).cos();
    let k = 0.55 + 0.3 * checker + 0.15 * stripe + jitter;
    color.map(|c| (c * k).clamp(0.0, 1.0) as f32)
}

fn trajectory<R: Rng>(rng: &mut R, n_frames: usize, path_len: f64) -> Vec<Pose> {
    let step = if n_frames > 1 {
        path_len / (n_frames - 1) as f64
    } else {
        0.0
    };
    let amp = rng.random_range(2.0..6.0_f64).to_radians();
    let freq = rng.random_range(0.05..0.2);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut pos = Vector3::new(rng.random_range(-0.5..0.5), 0.0, 0.0);
    (0..n_frames)
        .map(|i| {
            let s = i as f64 * step;
            let yaw = amp * (freq * s + phase).sin();
            let pose = Pose::from_parts(
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw),
                pos,
            );
            pos += Vector3::new(yaw.sin(), 0.0, yaw.cos()) * step;
            pose
        })
        .collect()
}

fn sample_points<R: Rng>(
    rng: &mut R,
    n_points: usize,
    extent: f64,
    path_len: f64,
    walls: &[Facade],
) -> (Vec<Point3<f64>>, Vec<[f32; 3]>) {
    let n_ground = n_points * 3 / 10;
    let area: Vec<f64> = walls.iter().map(|f| f.length * f.height).collect();
    let total: f64 = area.iter().sum();
    let mut points = Vec::with_capacity(n_points);
    let mut albedo = Vec::with_capacity(n_points);
    let ground = [0.35, 0.35, 0.38];
    for _ in 0..n_ground {
        let x = rng.random_range(-6.0..6.0);
        let z = rng.random_range(-extent * 0.1..path_len + extent * 0.5);
        points.push(Point3::new(x, CAMERA_HEIGHT, z));
        let lane = if (x.abs() - 1.8).abs() < 0.12 && (z * 0.5).fract() < 0.6 {
            2.2
        } else {
            1.0
        };
        let c = textured(ground, x, z, 1.0, rng.random_range(-0.08..0.08));
        albedo.push(c.map(|v| (v * lane as f32).min(1.0)));
    }
    for _ in n_ground..n_points {
        let mut pick = rng.random_range(0.0..total);
        let mut idx = 0;
        while idx + 1 < walls.len() && pick >= area[idx] {
            pick -= area[idx];
            idx += 1;
        }
        let f = &walls[idx];
        let a = rng.random_range(0.0..f.length);
        let b = rng.random_range(0.0..f.height);
        points.push(Point3::from(f.origin + f.along * a - Vector3::y() * b));
        albedo.push(textured(
            f.color,
            a,
            b,
            f.cell,
            rng.random_range(-0.05..0.05),
        ));
    }
    (points, albedo)
}

/// The 64x128 camera used for desk-scale runs.
pub fn desk_camera() -> CameraModel {
    CameraModel::new(60.0, 60.0, 64.0, 32.0, 64, 128).expect("valid intrinsics")
}

/// Generates a scene whose every trajectory pose sees at least
/// [`MIN_VISIBLE`] depth pixels. `extent` scales the street layout in meters.
pub fn gen_scene(
    seed: u64,
    n_points: usize,
    extent: f64,
    n_frames: usize,
    cam: CameraModel,
) -> Result<SyntheticScene, SynthError> {
    if n_points < 1000
        || n_frames < 1
        || extent.is_nan()
        || extent <= 0.0
        || cam.validate().is_err()
    {
        return Err(SynthError::BadParameters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path_len = extent * 0.5;
    for _ in 0..MAX_TRIES {
        let walls = facades(&mut rng, extent, path_len);
        let (points, albedo) = sample_points(&mut rng, n_points, extent, path_len, &walls);
        let map = PointCloud::new(points);
        let traj = trajectory(&mut rng, n_frames, path_len);
        if traj
            .iter()
            .all(|p| render_depth(&map, p, &cam).valid_count() >= MIN_VISIBLE)
        {
            return Ok(SyntheticScene {
                map,
                albedo,
                trajectory: traj,
                cam,
                seed,
            });
        }
    }
    Err(SynthError::RejectionFailed(MAX_TRIES))
}

/// Splats each visible point's albedo into its pixel, nearest depth wins,
/// gray elsewhere.
pub fn render_rgb(scene: &SyntheticScene, pose: &Pose) -> RgbImage {
    let (_, owner) = render_depth_indexed(scene.map.points.iter().copied(), pose, &scene.cam);
    let mut img = RgbImage::filled(scene.cam.height, scene.cam.width, BACKGROUND);
    for (k, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            img.set(k / scene.cam.width, k % scene.cam.width, scene.albedo[*i]);
        }
    }
    img
}

/// Renders the sample for trajectory frame `frame_id` with `noise` applied
/// in the camera frame: `T_init = T_gt · noise`.
pub fn make_sample(scene: &SyntheticScene, frame_id: usize, noise: &Pose) -> OfflineSample {
    let t_gt = scene.trajectory[frame_id];
    let t_init = compose(&t_gt, noise);
    OfflineSample {
        frame_id: frame_id as u64,
        image: render_rgb(scene, &t_gt),
        d_gt: render_depth(&scene.map, &t_gt, &scene.cam),
        d_init: render_depth(&scene.map, &t_init, &scene.cam),
        t_gt,
        t_init,
    }
}

/// One sample per trajectory frame with fresh noise drawn from `range`.
pub fn make_dataset(scene: &SyntheticScene, range: &NoiseRange, seed: u64) -> Vec<OfflineSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scene.trajectory.len())
        .map(|i| {
            let noise = sample_noise(range, &mut rng);
            make_sample(scene, i, &noise)
        })
        .collect()
}

/// Writes the scene in the map container with albedo records: the first
/// record carries every point (its frame id is the seed), the following
/// empty records carry the trajectory poses.
pub fn save_scene(scene: &SyntheticScene, path: &Path) -> Result<(), MapError> {
    let mut out = Vec::new();
    mapstore::write_header(
        &mut out,
        VERSION_ALBEDO,
        &scene.cam,
        scene.map.len() as u32,
        scene.trajectory.len() + 1,
    );
    let cloud = KeyframeRecord {
        frame_id: scene.seed,
        anchor: Pose::identity(),
        points: scene
            .map
            .points
            .iter()
            .map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect(),
        scores: vec![0.0; scene.map.len()],
    };
    mapstore::write_record(&mut out, &cloud, Some(&scene.albedo));
    for (i, pose) in scene.trajectory.iter().enumerate() {
        let r = KeyframeRecord {
            frame_id: i as u64,
            anchor: *pose,
            points: vec![],
            scores: vec![],
        };
        mapstore::write_record(&mut out, &r, Some(&[]));
    }
    std::fs::write(path, out).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a scene written by [`save_scene`]. Point coordinates come back at
/// single precision.
pub fn load_scene(path: &Path) -> Result<SyntheticScene, MapError> {
    let bytes = mapstore::read_file(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    let (version, cam, _, count) = mapstore::read_header(&mut cur)?;
    if version != VERSION_ALBEDO {
        return Err(MapError::UnsupportedVersion(version));
    }
    if count == 0 {
        return Err(MapError::EmptyMap);
    }
    let (cloud, albedo) = mapstore::read_record(&mut cur, true)?;
    let mut trajectory = Vec::with_capacity(count - 1);
    for _ in 1..count {
        trajectory.push(mapstore::read_record(&mut cur, true)?.0.anchor);
    }
    if cur.position() as usize != bytes.len() {
        return Err(MapError::TrailingBytes);
    }
    Ok(SyntheticScene {
        map: cloud.point_cloud(),
        albedo,
        trajectory,
        cam,
        seed: cloud.frame_id,
    })
}
