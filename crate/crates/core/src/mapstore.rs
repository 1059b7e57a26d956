//! Keyframe heat maps: lifting selected depths to world points, the binary
//! container format, local-map retrieval and voxel downsampling.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Point3;

use crate::error::MapError;
use crate::geometry::{unproject, CameraModel, DepthImage, PointCloud, Pose};

pub const MAGIC: [u8; 4] = *b"LHM1";
pub const VERSION: u32 = 1;
/// Records that also carry a per-point RGB albedo.
pub const VERSION_ALBEDO: u32 = 2;
pub const HEADER_BYTES: usize = 4 + 4 + 6 * 8 + 4 + 4;
pub const RECORD_HEADER_BYTES: usize = 8 + 4 * 8 + 3 * 8 + 4;
pub const POINT_BYTES: usize = 3 * 4 + 4;
pub const ALBEDO_BYTES: usize = 3 * 4;

/// Points selected from one keyframe, in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeRecord {
    pub frame_id: u64,
    /// Ground-truth camera pose the points were lifted at.
    pub anchor: Pose,
    pub points: Vec<[f32; 3]>,
    pub scores: Vec<f32>,
}

impl KeyframeRecord {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn world_points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.points
            .iter()
            .map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64))
    }

    pub fn point_cloud(&self) -> PointCloud {
        PointCloud::new(self.world_points().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMeta {
    pub camera: CameraModel,
    /// Per-record point budget.
    pub budget: u32,
}

/// Ordered union of keyframe records.
#[derive(Debug, Clone, PartialEq)]
pub struct LHMap {
    pub meta: MapMeta,
    records: Vec<KeyframeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct MapStat {
    pub records: usize,
    pub points: usize,
    pub bytes: usize,
}

/// One world point per nonzero pixel of `m`, unprojected at the pixel center
/// through `anchor`. `scores` is a row-major per-pixel grid.
pub fn lift_local_map(
    frame_id: u64,
    m: &DepthImage,
    anchor: &Pose,
    cam: &CameraModel,
    scores: &[f64],
) -> Result<KeyframeRecord, MapError> {
    if scores.len() != m.values.len() {
        return Err(MapError::ScoreMismatch(frame_id));
    }
    let mut points = Vec::new();
    let mut kept = Vec::new();
    for idx in m.valid_indices() {
        let (row, col) = (idx / m.width, idx % m.width);
        let p = unproject(
            col as f64 + 0.5,
            row as f64 + 0.5,
            m.values[idx],
            anchor,
            cam,
        )?;
        points.push([p.x as f32, p.y as f32, p.z as f32]);
        kept.push(scores[idx] as f32);
    }
    Ok(KeyframeRecord {
        frame_id,
        anchor: *anchor,
        points,
        scores: kept,
    })
}

fn check_record(r: &KeyframeRecord, budget: u32) -> Result<(), MapError> {
    if r.points.len() != r.scores.len() || r.scores.iter().any(|s| !s.is_finite()) {
        return Err(MapError::ScoreMismatch(r.frame_id));
    }
    if r.points.len() > budget as usize {
        return Err(MapError::OverBudget {
            frame_id: r.frame_id,
            count: r.points.len(),
            budget: budget as usize,
        });
    }
    Ok(())
}

/// Unites `records` into a map. Records must be sorted by strictly
/// increasing frame id and respect the point budget.
pub fn build_lhmap(records: Vec<KeyframeRecord>, meta: MapMeta) -> Result<LHMap, MapError> {
    for (i, r) in records.iter().enumerate() {
        check_record(r, meta.budget)?;
        if i > 0 && records[i - 1].frame_id >= r.frame_id {
            return Err(MapError::FrameOrder(r.frame_id));
        }
    }
    Ok(LHMap { meta, records })
}

impl LHMap {
    pub fn records(&self) -> &[KeyframeRecord] {
        &self.records
    }

    pub fn total_points(&self) -> usize {
        self.records.iter().map(|r| r.len()).sum()
    }

    /// Size of the encoded file in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES
            + self
                .records
                .iter()
                .map(|r| RECORD_HEADER_BYTES + r.len() * POINT_BYTES)
                .sum::<usize>()
    }

    pub fn stat(&self) -> MapStat {
        MapStat {
            records: self.records.len(),
            points: self.total_points(),
            bytes: self.encoded_len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        write_header(
            &mut out,
            VERSION,
            &self.meta.camera,
            self.meta.budget,
            self.records.len(),
        );
        for r in &self.records {
            write_record(&mut out, r, None);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut cur = Cursor::new(bytes);
        let (version, camera, budget, count) = read_header(&mut cur)?;
        if version != VERSION {
            return Err(MapError::UnsupportedVersion(version));
        }
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            records.push(read_record(&mut cur, false)?.0);
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(MapError::TrailingBytes);
        }
        build_lhmap(records, MapMeta { camera, budget })
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        fs::write(path, self.to_bytes()).map_err(|source| MapError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, MapError> {
    fs::read(path).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_header(
    out: &mut Vec<u8>,
    version: u32,
    cam: &CameraModel,
    budget: u32,
    count: usize,
) {
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LE>(version).unwrap();
    for v in [
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.height as f64,
        cam.width as f64,
    ] {
        out.write_f64::<LE>(v).unwrap();
    }
    out.write_u32::<LE>(budget).unwrap();
    out.write_u32::<LE>(count as u32).unwrap();
}

pub(crate) fn write_record(out: &mut Vec<u8>, r: &KeyframeRecord, albedo: Option<&[[f32; 3]]>) {
    out.write_u64::<LE>(r.frame_id).unwrap();
    for v in r.anchor.quat() {
        out.write_f64::<LE>(v).unwrap();
    }
    for v in r.anchor.translation().iter() {
        out.write_f64::<LE>(*v).unwrap();
    }
    out.write_u32::<LE>(r.points.len() as u32).unwrap();
    for (i, (p, s)) in r.points.iter().zip(&r.scores).enumerate() {
        for v in p {
            out.write_f32::<LE>(*v).unwrap();
        }
        out.write_f32::<LE>(*s).unwrap();
        if let Some(a) = albedo {
            for v in a[i] {
                out.write_f32::<LE>(v).unwrap();
            }
        }
    }
}

fn truncated(what: &'static str) -> impl FnOnce(std::io::Error) -> MapError {
    move |_| MapError::Truncated(what)
}

pub(crate) fn read_header(
    cur: &mut Cursor<&[u8]>,
) -> Result<(u32, CameraModel, u32, usize), MapError> {
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != MAGIC {
        return Err(MapError::BadMagic(magic));
    }
    let version = cur.read_u32::<LE>().map_err(truncated("version"))?;
    if version != VERSION && version != VERSION_ALBEDO {
        return Err(MapError::UnsupportedVersion(version));
    }
    let mut c = [0.0; 6];
    for v in &mut c {
        *v = cur.read_f64::<LE>().map_err(truncated("camera"))?;
    }
    let dims_ok = |v: f64| v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64;
    if !dims_ok(c[4]) || !dims_ok(c[5]) {
        return Err(crate::error::GeometryError::InvalidCamera.into());
    }
    let camera = CameraModel::new(c[0], c[1], c[2], c[3], c[4] as usize, c[5] as usize)?;
    let budget = cur.read_u32::<LE>().map_err(truncated("budget"))?;
    let count = cur.read_u32::<LE>().map_err(truncated("record count"))? as usize;
    Ok((version, camera, budget, count))
}

pub(crate) fn read_record(
    cur: &mut Cursor<&[u8]>,
    with_albedo: bool,
) -> Result<(KeyframeRecord, Vec<[f32; 3]>), MapError> {
    let frame_id = cur.read_u64::<LE>().map_err(truncated("frame id"))?;
    let mut q = [0.0; 4];
    for v in &mut q {
        *v = cur.read_f64::<LE>().map_err(truncated("anchor"))?;
    }
    let mut t = [0.0; 3];
    for v in &mut t {
        *v = cur.read_f64::<LE>().map_err(truncated("anchor"))?;
    }
    let anchor = Pose::from_unit(q, t)?;
    let n = cur.read_u32::<LE>().map_err(truncated("point count"))? as usize;
    let per_point = POINT_BYTES + if with_albedo { ALBEDO_BYTES } else { 0 };
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n * per_point > remaining {
        return Err(MapError::Truncated("points"));
    }
    let mut points = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut albedo = Vec::new();
    let mut f = || cur.read_f32::<LE>().map_err(truncated("points"));
    for _ in 0..n {
        points.push([f()?, f()?, f()?]);
        scores.push(f()?);
        if with_albedo {
            albedo.push([f()?, f()?, f()?]);
        }
    }
    Ok((
        KeyframeRecord {
            frame_id,
            anchor,
            points,
            scores,
        },
        albedo,
    ))
}

/// World points of the `k` records whose anchors are nearest to `t_init`
/// (ties go to the smaller frame id), concatenated in map order.
pub fn query_local(map: &LHMap, t_init: &Pose, k: usize) -> Result<PointCloud, MapError> {
    if map.records.is_empty() {
        return Err(MapError::EmptyMap);
    }
    let chosen = nearest_records(map, t_init, k.max(1));
    Ok(PointCloud::new(
        chosen
            .into_iter()
            .flat_map(|i| map.records[i].world_points())
            .collect(),
    ))
}

/// Indices of the `k` nearest records, ascending.
pub fn nearest_records(map: &LHMap, t_init: &Pose, k: usize) -> Vec<usize> {
    let t = t_init.translation();
    let mut order: Vec<(f64, u64, usize)> = map
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.anchor.translation() - t).norm(), r.frame_id, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = order.into_iter().take(k).map(|x| x.2).collect();
    idx.sort_unstable();
    idx
}

/// Replaces the points of every occupied `res`-sized voxel by their
/// centroid. Output is ordered by voxel index.
pub fn voxel_downsample(pc: &PointCloud, res: f64) -> PointCloud {
    assert!(res > 0.0, "voxel resolution must be positive");
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in &pc.points {
        let key = voxel_key(p, res);
        let e = cells.entry(key).or_insert(([0.0; 3], 0));
        e.0[0] += p.x;
        e.0[1] += p.y;
        e.0[2] += p.z;
        e.1 += 1;
    }
    PointCloud::new(
        cells
            .into_values()
            .map(|(s, n)| {
                let n = n as f64;
                Point3::new(s[0] / n, s[1] / n, s[2] / n)
            })
            .collect(),
    )
}

pub fn voxel_key(p: &Point3<f64>, res: f64) -> [i64; 3] {
    [
        (p.x / res).floor() as i64,
        (p.y / res).floor() as i64,
        (p.z / res).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_depth, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 40.0, 80, 100).unwrap()
    }

    fn meta(budget: u32) -> MapMeta {
        MapMeta {
            camera: cam(),
            budget,
        }
    }

    fn record(frame_id: u64, n: usize, rng: &mut ChaCha8Rng) -> KeyframeRecord {
        KeyframeRecord {
            frame_id,
            anchor: Pose::new(
                [1.0, rng.random(), rng.random(), rng.random()],
                [rng.random(), rng.random(), rng.random()],
            )
            .unwrap(),
            points: (0..n)
                .map(|_| [rng.random(), rng.random(), rng.random()])
                .collect(),
            scores: (0..n).map(|_| rng.random()).collect(),
        }
    }

    fn sparse_depth(rng: &mut ChaCha8Rng) -> DepthImage {
        let mut d = DepthImage::zeros(80, 100, Pose::identity());
        for v in d.values.iter_mut() {
            if rng.random_bool(0.2) {
                *v = rng.random_range(1.0..30.0);
            }
        }
        d
    }

    #[test]
    fn lift_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sparse_depth(&mut rng);
        let scores = vec![0.5; d.values.len()];
        let a = lift_local_map(0, &d, &Pose::identity(), &cam(), &scores).unwrap();
        let b = lift_local_map(
            0,
            &d,
            &Pose::from_translation([10.0, 0.0, 0.0]),
            &cam(),
            &scores,
        )
        .unwrap();
        assert_eq!(a.len(), d.valid_count());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((q[0] - (p[0] + 10.0)).abs() < 1e-4);
            assert_eq!(q[1], p[1]);
            assert_eq!(q[2], p[2]);
        }
    }

    #[test]
    fn lift_then_render_reproduces_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = sparse_depth(&mut rng);
        let anchor = Pose::new([0.9, 0.1, -0.2, 0.05], [3.0, -1.0, 2.0]).unwrap();
        let r = lift_local_map(4, &d, &anchor, &cam(), &vec![1.0; d.values.len()]).unwrap();
        let back = render_depth(&r.point_cloud(), &anchor, &cam());
        for (a, b) in d.values.iter().zip(&back.values) {
            assert_eq!(*a > 0.0, *b > 0.0);
            assert!((a - b).abs() <= 1e-5 * a.max(1.0));
        }
    }

    #[test]
    fn build_enforces_order_and_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs = vec![record(1, 5, &mut rng), record(1, 5, &mut rng)];
        assert!(matches!(
            build_lhmap(recs, meta(10)),
            Err(MapError::FrameOrder(1))
        ));
        let recs = vec![record(2, 5, &mut rng), record(1, 5, &mut rng)];
        assert!(matches!(
            build_lhmap(recs, meta(10)),
            Err(MapError::FrameOrder(1))
        ));
        let recs = vec![record(1, 11, &mut rng)];
        assert!(matches!(
            build_lhmap(recs, meta(10)),
            Err(MapError::OverBudget { count: 11, .. })
        ));
        let recs = vec![record(0, 5000, &mut rng), record(7, 5000, &mut rng)];
        assert_eq!(build_lhmap(recs, meta(5000)).unwrap().total_points(), 10000);
    }

    #[test]
    fn round_trip_and_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = build_lhmap(vec![record(3, 5000, &mut rng)], meta(5000)).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(bytes.len(), 64 + 68 + 5000 * 16);
        assert_eq!(bytes.len(), map.stat().bytes);
        assert_eq!(LHMap::from_bytes(&bytes).unwrap(), map);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = build_lhmap(vec![record(3, 10, &mut rng)], meta(10)).unwrap();
        let bytes = map.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            LHMap::from_bytes(&bad),
            Err(MapError::BadMagic(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            LHMap::from_bytes(&bad),
            Err(MapError::UnsupportedVersion(9))
        ));
        for cut in [2, 10, 60, 70, bytes.len() - 1] {
            assert!(matches!(
                LHMap::from_bytes(&bytes[..cut]),
                Err(MapError::Truncated(_))
            ));
        }
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            LHMap::from_bytes(&bad),
            Err(MapError::TrailingBytes)
        ));
    }

    #[test]
    fn query_picks_nearest_anchor() {
        let mk = |id, x: f64, n| KeyframeRecord {
            frame_id: id,
            anchor: Pose::from_translation([x, 0.0, 0.0]),
            points: vec![[x as f32, 0.0, 1.0]; n],
            scores: vec![1.0; n],
        };
        let map = build_lhmap(vec![mk(0, 0.0, 2), mk(1, 10.0, 3)], meta(10)).unwrap();
        let q = |x, k| query_local(&map, &Pose::from_translation([x, 0.0, 0.0]), k).unwrap();
        assert_eq!(q(2.0, 1).len(), 2);
        assert_eq!(q(10.0, 1).len(), 3);
        assert_eq!(q(5.0, 1).len(), 2);
        assert_eq!(q(5.0, 5).len(), 5);
        let empty = build_lhmap(vec![], meta(10)).unwrap();
        assert!(matches!(
            query_local(&empty, &Pose::identity(), 1),
            Err(MapError::EmptyMap)
        ));
    }

    #[test]
    fn voxel_centroid() {
        let pc = PointCloud::new(vec![
            Point3::new(0.01, 0.01, 0.01),
            Point3::new(0.03, 0.05, 0.07),
        ]);
        let out = voxel_downsample(&pc, 0.1);
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Point3::new(0.02, 0.03, 0.04)).norm() < 1e-12);
        let spread = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.25, 0.25, 0.25),
        ]);
        assert_eq!(voxel_downsample(&spread, 0.1).len(), 2);
    }
}
