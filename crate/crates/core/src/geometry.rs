//! Rigid-body and pinhole-camera math.
//!
//! Poses are camera-to-world transforms: `pose.transform(p_cam)` yields the
//! world point. Camera frame convention is x right, y down, z forward.

use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Points closer than this to the camera plane are never projected.
pub const Z_MIN: f64 = 0.05;

/// Normalized-plane window and the image it is stretched onto.
pub const NORM_PLANE_X: f64 = 0.8;
pub const NORM_PLANE_Y: f64 = 0.4;
pub const NORM_PLANE_WIDTH: f64 = 768.0;
pub const NORM_PLANE_HEIGHT: f64 = 384.0;

/// A rigid transform stored as a unit quaternion plus translation.
///
/// The quaternion is kept on the `w >= 0` hemisphere so that equal rotations
/// have equal representations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a `(w, x, y, z)` quaternion, which is normalized.
    pub fn new(q: [f64; 4], t: [f64; 3]) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if !norm.is_finite() || norm < 1e-12 || t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose);
        }
        Ok(Self::from_parts(
            UnitQuaternion::from_quaternion(raw),
            Vector3::from(t),
        ))
    }

    /// Builds a pose from an already-unit, canonical `(w, x, y, z)`
    /// quaternion without renormalizing, so stored values keep their bits.
    pub fn from_unit(q: [f64; 4], t: [f64; 3]) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let off = (raw.norm() - 1.0).abs();
        if off.is_nan() || off > 1e-9 || q[0] < 0.0 || t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidPose);
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(raw),
            translation: Vector3::from(t),
        })
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        // renormalize explicitly; composition drifts the norm by a few ulps
        let rotation = UnitQuaternion::from_quaternion(rotation.into_inner());
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vector3::from(t))
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::from_parts(rotation, Vector3::zeros())
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn quat(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        invert(self)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// `a ∘ b`: maps a point through `b`, then through `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::from_parts(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert(p: &Pose) -> Pose {
    let r_inv = p.rotation.inverse();
    Pose::from_parts(r_inv, -(r_inv * p.translation))
}

/// Pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        height: usize,
        width: usize,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            height,
            width,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera)
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.coords.iter().all(|v| v.is_finite()))
    }
}

/// Row-major `height x width` grid of camera depths; zero marks "no point".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Camera pose the image was rendered at.
    pub pose: Pose,
}

impl DepthImage {
    pub fn zeros(height: usize, width: usize, pose: Pose) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            pose,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, z: f64) {
        self.values[row * self.width + col] = z;
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&z| z > 0.0).count()
    }

    /// Row-major indices of nonzero pixels.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &z)| z > 0.0)
            .map(|(i, _)| i)
    }
}

/// Result of projecting a world point into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    /// Column coordinate in pixels.
    pub u: f64,
    /// Row coordinate in pixels.
    pub v: f64,
    /// Camera-frame depth in meters.
    pub z: f64,
}

impl ImagePoint {
    pub fn col(&self) -> usize {
        self.u.floor() as usize
    }

    pub fn row(&self) -> usize {
        self.v.floor() as usize
    }
}

/// Projects a camera-frame point; `None` if behind the near plane or off-image.
#[inline]
pub fn project_camera_point(p_cam: &Point3<f64>, cam: &CameraModel) -> Option<ImagePoint> {
    let z = p_cam.z;
    if z.is_nan() || z <= Z_MIN {
        return None;
    }
    let u = cam.fx * p_cam.x / z + cam.cx;
    let v = cam.fy * p_cam.y / z + cam.cy;
    if u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64 {
        Some(ImagePoint { u, v, z })
    } else {
        None
    }
}

pub fn project_point(p_world: &Point3<f64>, pose: &Pose, cam: &CameraModel) -> Option<ImagePoint> {
    let (r, t) = world_to_camera(pose);
    project_camera_point(&Point3::from(r * p_world.coords + t), cam)
}

fn world_to_camera(pose: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
    let inv = invert(pose);
    (inv.rotation_matrix(), *inv.translation())
}

pub fn unproject(
    u: f64,
    v: f64,
    z: f64,
    pose: &Pose,
    cam: &CameraModel,
) -> Result<Point3<f64>, GeometryError> {
    if z <= 0.0 || !z.is_finite() {
        return Err(GeometryError::InvalidDepth(z));
    }
    let p_cam = Point3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
    Ok(pose.transform(&p_cam))
}

/// Z-buffer rendering: each pixel keeps the nearest depth among the points
/// that land in it.
pub fn render_depth(map: &PointCloud, pose: &Pose, cam: &CameraModel) -> DepthImage {
    render_depth_indexed(map.points.iter().copied(), pose, cam).0
}

/// Like [`render_depth`], also returning for each pixel the index (in
/// iteration order) of the winning point. Equal depths keep the earlier point.
pub fn render_depth_indexed(
    points: impl Iterator<Item = Point3<f64>>,
    pose: &Pose,
    cam: &CameraModel,
) -> (DepthImage, Vec<Option<usize>>) {
    let mut depth = DepthImage::zeros(cam.height, cam.width, *pose);
    let mut owner = vec![None; cam.pixel_count()];
    let (r, t) = world_to_camera(pose);
    for (idx, p) in points.enumerate() {
        let p_cam = Point3::from(r * p.coords + t);
        if let Some(ip) = project_camera_point(&p_cam, cam) {
            let k = ip.row() * cam.width + ip.col();
            let cur = depth.values[k];
            if cur == 0.0 || ip.z < cur {
                depth.values[k] = ip.z;
                owner[k] = Some(idx);
            }
        }
    }
    (depth, owner)
}

/// Translation / rotation bounds of a uniform pose perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRange {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
}

impl NoiseRange {
    pub const ZERO: NoiseRange = NoiseRange {
        max_translation: 0.0,
        max_rotation_deg: 0.0,
    };

    /// Iterative-refinement schedule: level 1 is the coarsest.
    pub fn level(level: u8) -> Result<Self, GeometryError> {
        let (t, r) = match level {
            1 => (2.0, 10.0),
            2 => (1.0, 2.0),
            3 => (0.6, 1.0),
            other => return Err(GeometryError::InvalidNoiseLevel(other)),
        };
        Ok(Self {
            max_translation: t,
            max_rotation_deg: r,
        })
    }
}

/// Rotation from intrinsic X-Y-Z Euler angles (radians).
pub fn euler_xyz(rx: f64, ry: f64, rz: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rx)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ry)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rz)
}

/// Decomposes a rotation into intrinsic X-Y-Z Euler angles (radians).
pub fn euler_xyz_angles(q: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    // R = Rx Ry Rz  =>  R[0][2] = sin(ry)
    let m = q.to_rotation_matrix().into_inner();
    let ry = m[(0, 2)].clamp(-1.0, 1.0).asin();
    let rx = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let rz = (-m[(0, 1)]).atan2(m[(0, 0)]);
    (rx, ry, rz)
}

/// Perturbation with components drawn uniformly inside `range`.
pub fn sample_noise<R: Rng + ?Sized>(range: &NoiseRange, rng: &mut R) -> Pose {
    let mut uniform = |half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };
    let t = [
        uniform(range.max_translation),
        uniform(range.max_translation),
        uniform(range.max_translation),
    ];
    let half = range.max_rotation_deg.to_radians();
    let (rx, ry, rz) = (uniform(half), uniform(half), uniform(half));
    Pose::from_parts(euler_xyz(rx, ry, rz), Vector3::from(t))
}

pub fn sample_pose_noise<R: Rng + ?Sized>(level: u8, rng: &mut R) -> Result<Pose, GeometryError> {
    Ok(sample_noise(&NoiseRange::level(level)?, rng))
}

/// Maps a camera point onto the fixed normalized-plane image
/// (`|x/z| < 0.8`, `|y/z| < 0.4` stretched onto 768x384).
pub fn normalized_plane_remap(p_cam: &Point3<f64>) -> Option<(f64, f64)> {
    if p_cam.z.is_nan() || p_cam.z <= Z_MIN {
        return None;
    }
    let xn = p_cam.x / p_cam.z;
    let yn = p_cam.y / p_cam.z;
    if !(xn > -NORM_PLANE_X && xn < NORM_PLANE_X && yn > -NORM_PLANE_Y && yn < NORM_PLANE_Y) {
        return None;
    }
    let u = (xn + NORM_PLANE_X) / (2.0 * NORM_PLANE_X) * NORM_PLANE_WIDTH;
    let v = (yn + NORM_PLANE_Y) / (2.0 * NORM_PLANE_Y) * NORM_PLANE_HEIGHT;
    Some((u, v))
}

/// Rotation angle of `q1⁻¹ ⊗ q2` in degrees, in `[0, 180]`.
pub fn quat_geodesic_deg(q1: &UnitQuaternion<f64>, q2: &UnitQuaternion<f64>) -> f64 {
    let d = q1.inverse() * q2;
    let q = d.quaternion();
    let v = (q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
    2.0 * v.atan2(q.w.abs()).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn cam100() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let t = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ];
        Pose::new(q, t).unwrap()
    }

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        quat_geodesic_deg(a.rotation(), b.rotation()).to_radians() < tol
            && (a.translation() - b.translation()).norm() < tol
    }

    #[test]
    fn canonical_hemisphere() {
        let p = Pose::new([-1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(p.quat(), [1.0, 0.0, 0.0, 0.0]);
        let p = Pose::new([-0.5, 0.5, 0.5, 0.5], [0.0; 3]).unwrap();
        assert!(p.quat()[0] >= 0.0);
        assert!(Pose::new([0.0; 4], [0.0; 3]).is_err());
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            assert!(pose_close(&compose(&Pose::identity(), &p), &p, 1e-12));
            assert!(pose_close(
                &compose(&p, &invert(&p)),
                &Pose::identity(),
                1e-9
            ));
            assert!(pose_close(&invert(&invert(&p)), &p, 1e-9));
        }
    }

    #[test]
    fn compose_rot_z90_twice() {
        let rz90 = Pose::from_rotation(UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            FRAC_PI_2,
        ));
        let c = compose(&rz90, &rz90);
        // matrix oracle: Rz(90)·Rz(90)
        let m = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = m * m;
        assert!((c.rotation_matrix() - expected).abs().max() < 1e-12);
        assert!(
            (quat_geodesic_deg(&UnitQuaternion::identity(), c.rotation()) - 180.0).abs() < 1e-9
        );
    }

    #[test]
    fn invert_matches_matrix_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(pose_close(
            &invert(&Pose::identity()),
            &Pose::identity(),
            0.0 + 1e-15
        ));
        let t = invert(&Pose::from_translation([1.0, 2.0, 3.0]));
        assert_eq!(t.translation(), &Vector3::new(-1.0, -2.0, -3.0));
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let oracle = p.to_matrix().try_inverse().unwrap();
            assert!((invert(&p).to_matrix() - oracle).abs().max() < 1e-9);
        }
    }

    #[test]
    fn project_examples() {
        let cam = cam100();
        let id = Pose::identity();
        let a = project_point(&Point3::new(0.0, 0.0, 5.0), &id, &cam).unwrap();
        assert_eq!((a.u, a.v, a.z), (50.0, 50.0, 5.0));
        let b = project_point(&Point3::new(1.0, 1.0, 4.0), &id, &cam).unwrap();
        assert_eq!((b.u, b.v, b.z), (75.0, 75.0, 4.0));
        assert!(project_point(&Point3::new(0.0, 0.0, -1.0), &id, &cam).is_none());
        assert!(project_point(&Point3::new(0.0, 0.0, 0.04), &id, &cam).is_none());
        // u exactly at width is outside
        assert!(project_point(&Point3::new(0.5, 0.0, 1.0), &id, &cam).is_none());
    }

    #[test]
    fn unproject_examples() {
        let cam = cam100();
        let p = unproject(50.0, 50.0, 5.0, &Pose::identity(), &cam).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 5.0));
        let p = unproject(
            50.0,
            50.0,
            5.0,
            &Pose::from_translation([0.0, 0.0, -2.0]),
            &cam,
        )
        .unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 3.0));
        assert!(matches!(
            unproject(1.0, 1.0, 0.0, &Pose::identity(), &cam),
            Err(GeometryError::InvalidDepth(_))
        ));
    }

    #[test]
    fn unproject_round_trip() {
        let cam = cam100();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let u = rng.random_range(0.0..100.0);
            let v = rng.random_range(0.0..100.0);
            let z = rng.random_range(0.1..50.0);
            let w = unproject(u, v, z, &pose, &cam).unwrap();
            let ip = project_point(&w, &pose, &cam).unwrap();
            assert!((ip.u - u).abs() < 1e-6 && (ip.v - v).abs() < 1e-6 && (ip.z - z).abs() < 1e-6);
        }
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let cam = cam100();
        let map = PointCloud::new(vec![Point3::new(0.0, 0.0, 8.0), Point3::new(0.0, 0.0, 4.0)]);
        let d = render_depth(&map, &Pose::identity(), &cam);
        assert_eq!(d.get(50, 50), 4.0);
        assert_eq!(d.valid_count(), 1);
        let empty = render_depth(&PointCloud::default(), &Pose::identity(), &cam);
        assert!(empty.values.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn noise_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for level in 1..=3u8 {
            let range = NoiseRange::level(level).unwrap();
            for _ in 0..500 {
                let n = sample_pose_noise(level, &mut rng).unwrap();
                assert!(n
                    .translation()
                    .iter()
                    .all(|v| v.abs() <= range.max_translation));
                let (rx, ry, rz) = euler_xyz_angles(n.rotation());
                for a in [rx, ry, rz] {
                    assert!(a.to_degrees().abs() <= range.max_rotation_deg + 1e-9);
                }
            }
        }
        assert!(sample_pose_noise(0, &mut rng).is_err());
        assert!(sample_pose_noise(4, &mut rng).is_err());
        let a = sample_pose_noise(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_pose_noise(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_mean_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sum = Vector3::zeros();
        let n = 10_000;
        for _ in 0..n {
            sum += sample_pose_noise(3, &mut rng).unwrap().translation();
        }
        let mean = sum / n as f64;
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }

    #[test]
    fn euler_round_trip() {
        let q = euler_xyz(0.1, -0.2, 0.15);
        let (a, b, c) = euler_xyz_angles(&q);
        assert!((a - 0.1).abs() < 1e-12 && (b + 0.2).abs() < 1e-12 && (c - 0.15).abs() < 1e-12);
    }

    #[test]
    fn normalized_plane() {
        assert_eq!(
            normalized_plane_remap(&Point3::new(0.0, 0.0, 1.0)),
            Some((384.0, 192.0))
        );
        assert_eq!(normalized_plane_remap(&Point3::new(0.8001, 0.0, 1.0)), None);
        assert_eq!(normalized_plane_remap(&Point3::new(0.8, 0.0, 1.0)), None);
        assert_eq!(normalized_plane_remap(&Point3::new(0.0, 0.0, -1.0)), None);
        let e = 1e-9;
        let (u, v) = normalized_plane_remap(&Point3::new(-0.8 + e, -0.4 + e, 1.0)).unwrap();
        assert!(u.abs() < 1e-6 && v.abs() < 1e-6);
    }

    #[test]
    fn geodesic_examples() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        assert!(quat_geodesic_deg(&q, &q).abs() < 1e-9);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert!(quat_geodesic_deg(&q, &neg).abs() < 1e-9);
        let z90 = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let expected = 2.0 * (45f64.to_radians().sin().abs()).atan2(45f64.to_radians().cos().abs());
        assert!(
            (quat_geodesic_deg(&UnitQuaternion::identity(), &z90) - expected.to_degrees()).abs()
                < 1e-9
        );
        assert!((quat_geodesic_deg(&UnitQuaternion::identity(), &z90) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1.0, 5.0, 5.0, 10, 10).is_err());
        assert!(CameraModel::new(1.0, 1.0, 10.0, 5.0, 10, 10).is_err());
        assert!(CameraModel::new(1.0, 1.0, 5.0, 5.0, 10, 10).is_ok());
    }
}
