//! Pinhole projection of BEV trajectories into the first frame's image plane,
//! plus keyframe densification.
//!
//! Conventions fixed here and used everywhere else in the crate:
//! - BEV coordinates live in the ego frame at t0 (x right, y forward, meters).
//! - BEV points lift to 3D on the ground plane, z = 0.
//! - The camera maps world to camera coordinates as `p_cam = R * p + B`;
//!   camera axes are x right, y down, z forward.
//! - Every trajectory point of a clip is projected with the *first frame's*
//!   camera; ego camera motion over the clip is deliberately not compensated.

use crate::error::{Error, Result};

/// Points with camera-space depth at or below this are rejected as invisible.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "intrinsics require finite fx,fy > 0, got fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// The 3x3 matrix K with bottom row (0, 0, 1).
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraExtrinsics {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

/// Orthonormality tolerance for the rotation matrix.
const ROTATION_TOL: f64 = 1e-9;

impl CameraExtrinsics {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        for row in &rotation {
            for v in row {
                if !v.is_finite() {
                    return Err(Error::invalid("rotation has non-finite entries"));
                }
            }
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation has non-finite entries"));
        }
        // R * R^T must be the identity and det(R) must be +1.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ROTATION_TOL {
                    return Err(Error::invalid(format!(
                        "rotation not orthonormal: (R R^T)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid(format!("rotation determinant {det} != +1")));
        }
        Ok(CameraExtrinsics {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    /// `R * p + B`.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let b = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + b[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + b[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + b[2],
        ]
    }

    /// Inverse map `R^T * (p_cam - B)`; used by round-trip checks.
    pub fn to_world(&self, p_cam: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let b = &self.translation;
        let d = [p_cam[0] - b[0], p_cam[1] - b[1], p_cam[2] - b[2]];
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// A per-vehicle point sequence in ground-plane coordinates (meters).
/// `vehicle_id` 0 is the ego vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBev {
    pub points: Vec<[f64; 2]>,
    pub vehicle_id: u32,
}

impl TrajectoryBev {
    pub fn new(points: Vec<[f64; 2]>, vehicle_id: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("trajectory must have at least one point"));
        }
        if !points.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::invalid("trajectory has non-finite coordinates"));
        }
        Ok(TrajectoryBev { points, vehicle_id })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Projection of a [`TrajectoryBev`] into pixel coordinates. Points flagged
/// invisible carry NaN coordinates and must never be read.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryImage {
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl TrajectoryImage {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lift ground-plane points to 3D with z = 0.
pub fn lift_bev_to_3d(traj: &TrajectoryBev) -> Result<Vec<[f64; 3]>> {
    if traj.points.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    if !traj
        .points
        .iter()
        .all(|p| p[0].is_finite() && p[1].is_finite())
    {
        return Err(Error::invalid("trajectory has non-finite coordinates"));
    }
    Ok(traj.points.iter().map(|p| [p[0], p[1], 0.0]).collect())
}

/// Project 3D points through the first frame's camera. A point is visible
/// when its camera depth exceeds [`DEPTH_EPSILON`] and the projected pixel,
/// after rounding, lies inside `[0, W) x [0, H)`.
pub fn project_trajectory(
    points3d: &[[f64; 3]],
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    image_size: (usize, usize),
) -> TrajectoryImage {
    let (width, height) = image_size;
    let mut points = Vec::with_capacity(points3d.len());
    let mut visible = Vec::with_capacity(points3d.len());
    for &p in points3d {
        let cam = extr.to_camera(p);
        if cam[2] <= DEPTH_EPSILON {
            points.push([f64::NAN, f64::NAN]);
            visible.push(false);
            continue;
        }
        let u = intr.fx * (cam[0] / cam[2]) + intr.cx;
        let v = intr.fy * (cam[1] / cam[2]) + intr.cy;
        let (ur, vr) = (u.round(), v.round());
        let in_bounds =
            ur >= 0.0 && ur < width as f64 && vr >= 0.0 && vr < height as f64;
        if in_bounds {
            points.push([u, v]);
            visible.push(true);
        } else {
            points.push([f64::NAN, f64::NAN]);
            visible.push(false);
        }
    }
    TrajectoryImage { points, visible }
}

/// Densify a keyframe-annotated trajectory to the target timestamps by
/// per-coordinate linear interpolation. Exact key times reproduce key points
/// bit-for-bit; target times outside the key span are an error.
pub fn interpolate_keyframes(
    key_points: &TrajectoryBev,
    key_times: &[f64],
    target_times: &[f64],
) -> Result<TrajectoryBev> {
    if key_times.len() != key_points.points.len() {
        return Err(Error::invalid(format!(
            "key point count {} != key time count {}",
            key_points.points.len(),
            key_times.len()
        )));
    }
    if key_times.len() < 2 {
        return Err(Error::invalid("need at least 2 keyframes"));
    }
    if !key_times.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("key times must be strictly increasing"));
    }
    let (lo, hi) = (key_times[0], *key_times.last().unwrap());
    let mut out = Vec::with_capacity(target_times.len());
    for &t in target_times {
        if !(lo..=hi).contains(&t) {
            return Err(Error::Extrapolation { t, lo, hi });
        }
        // Bracketing interval: largest i with key_times[i] <= t.
        let i = match key_times.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(exact) => {
                out.push(key_points.points[exact]);
                continue;
            }
            Err(ins) => ins - 1,
        };
        let (t0, t1) = (key_times[i], key_times[i + 1]);
        let (p0, p1) = (key_points.points[i], key_points.points[i + 1]);
        let w = (t - t0) / (t1 - t0);
        let mut p = [p0[0] + (p1[0] - p0[0]) * w, p0[1] + (p1[1] - p0[1]) * w];
        // Keep interpolants inside the bracketing keys' bounding box even
        // under floating-point rounding.
        for c in 0..2 {
            p[c] = p[c].clamp(p0[c].min(p1[c]), p0[c].max(p1[c]));
        }
        out.push(p);
    }
    TrajectoryBev::new(out, key_points.vehicle_id)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Camera parameter file: `key value` lines, `#` comments. Keys: fx fy cx cy,
/// r00..r22 row-major, t0 t1 t2.
pub fn parse_camera_file(text: &str) -> Result<(CameraIntrinsics, CameraExtrinsics)> {
    let mut values = std::collections::BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        let value = parts
            .next()
            .ok_or_else(|| Error::format(format!("camera file line {}: missing value", lineno + 1)))?;
        if parts.next().is_some() {
            return Err(Error::format(format!(
                "camera file line {}: trailing tokens",
                lineno + 1
            )));
        }
        let value: f64 = value.parse().map_err(|_| {
            Error::format(format!("camera file line {}: bad number {value:?}", lineno + 1))
        })?;
        if values.insert(key.to_string(), value).is_some() {
            return Err(Error::format(format!("duplicate camera key {key}")));
        }
    }
    let get = |k: &str| -> Result<f64> {
        values
            .get(k)
            .copied()
            .ok_or_else(|| Error::format(format!("camera file missing key {k}")))
    };
    let intr = CameraIntrinsics::new(get("fx")?, get("fy")?, get("cx")?, get("cy")?)?;
    let mut rot = [[0.0; 3]; 3];
    for (i, row) in rot.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = get(&format!("r{i}{j}"))?;
        }
    }
    let trans = [get("t0")?, get("t1")?, get("t2")?];
    let extr = CameraExtrinsics::new(rot, trans)?;
    Ok((intr, extr))
}

pub fn format_camera_file(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> String {
    let mut s = String::from("# pinhole camera parameters\n");
    s.push_str(&format!("fx {:?}\nfy {:?}\ncx {:?}\ncy {:?}\n", intr.fx, intr.fy, intr.cx, intr.cy));
    for (i, row) in extr.rotation().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            s.push_str(&format!("r{i}{j} {v:?}\n"));
        }
    }
    for (i, v) in extr.translation().iter().enumerate() {
        s.push_str(&format!("t{i} {v:?}\n"));
    }
    s
}

/// One trajectory record: `vehicle_id t x y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajRecord {
    pub vehicle_id: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Trajectory file: one `vehicle_id t x y` record per line, `#` comments.
pub fn parse_traj_file(text: &str) -> Result<Vec<TrajRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format(format!(
                "trajectory file line {}: expected `vehicle_id t x y`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let vehicle_id: u32 = fields[0].parse().map_err(|_| {
            Error::format(format!("trajectory file line {}: bad vehicle id", lineno + 1))
        })?;
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::format(format!("trajectory file line {}: bad number {s:?}", lineno + 1)))
        };
        out.push(TrajRecord {
            vehicle_id,
            t: num(fields[1])?,
            x: num(fields[2])?,
            y: num(fields[3])?,
        });
    }
    Ok(out)
}

pub fn format_traj_file(records: &[TrajRecord]) -> String {
    let mut s = String::from("# vehicle_id t x y\n");
    for r in records {
        s.push_str(&format!("{} {:?} {:?} {:?}\n", r.vehicle_id, r.t, r.x, r.y));
    }
    s
}

/// Group records into per-vehicle (times, trajectory) pairs, preserving the
/// order vehicles first appear in the file.
pub fn group_traj_records(records: &[TrajRecord]) -> Result<Vec<(Vec<f64>, TrajectoryBev)>> {
    let mut order = Vec::new();
    let mut by_id: std::collections::BTreeMap<u32, (Vec<f64>, Vec<[f64; 2]>)> =
        std::collections::BTreeMap::new();
    for r in records {
        if !by_id.contains_key(&r.vehicle_id) {
            order.push(r.vehicle_id);
        }
        let entry = by_id.entry(r.vehicle_id).or_default();
        entry.0.push(r.t);
        entry.1.push([r.x, r.y]);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let (times, points) = by_id.remove(&id).unwrap();
        out.push((times, TrajectoryBev::new(points, id)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::dd;
    use proptest::prelude::*;

    fn ident_extr(b: [f64; 3]) -> CameraExtrinsics {
        CameraExtrinsics::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], b).unwrap()
    }

    #[test]
    fn lift_maps_origin_to_origin() {
        let traj = TrajectoryBev::new(vec![[0.0, 0.0]], 0).unwrap();
        assert_eq!(lift_bev_to_3d(&traj).unwrap(), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn lift_is_definitional() {
        let traj = TrajectoryBev::new(vec![[3.5, -2.0]], 1).unwrap();
        assert_eq!(lift_bev_to_3d(&traj).unwrap(), vec![[3.5, -2.0, 0.0]]);
    }

    #[test]
    fn lift_preserves_length_25() {
        let pts: Vec<[f64; 2]> = (0..25).map(|i| [i as f64, 0.5 * i as f64]).collect();
        let traj = TrajectoryBev::new(pts, 0).unwrap();
        assert_eq!(lift_bev_to_3d(&traj).unwrap().len(), 25);
    }

    #[test]
    fn lift_rejects_non_finite() {
        let traj = TrajectoryBev {
            points: vec![[f64::NAN, 0.0]],
            vehicle_id: 0,
        };
        assert!(lift_bev_to_3d(&traj).is_err());
    }

    #[test]
    fn project_unit_depth_on_axis() {
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let extr = ident_extr([0.0, 0.0, 1.0]);
        let out = project_trajectory(&[[0.0, 0.0, 0.0]], &intr, &extr, (4, 4));
        assert!(out.visible[0]);
        assert_eq!(out.points[0], [0.0, 0.0]);
    }

    #[test]
    fn project_matches_worked_example() {
        // fx=fy=100, cx=cy=50, B=(0,0,2), point (1,0,0): u = 100*0.5+50 = 100, v = 50.
        let intr = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let extr = ident_extr([0.0, 0.0, 2.0]);
        let out = project_trajectory(&[[1.0, 0.0, 0.0]], &intr, &extr, (256, 256));
        assert!(out.visible[0]);
        let oracle = dd::project_point_dd(
            &intr.matrix(),
            extr.rotation(),
            extr.translation(),
            [1.0, 0.0, 0.0],
        )
        .unwrap();
        assert!((out.points[0][0] - 100.0).abs() < 1e-12);
        assert!((out.points[0][1] - 50.0).abs() < 1e-12);
        assert!((out.points[0][0] - oracle[0]).abs() < 1e-9);
        assert!((out.points[0][1] - oracle[1]).abs() < 1e-9);
    }

    #[test]
    fn project_rejects_behind_camera() {
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let extr = ident_extr([0.0, 0.0, -1.0]);
        let out = project_trajectory(&[[0.0, 0.0, 0.0]], &intr, &extr, (4, 4));
        assert!(!out.visible[0]);
        assert!(out.points[0][0].is_nan());
    }

    #[test]
    fn intrinsics_reject_nonpositive_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn extrinsics_reject_non_orthonormal() {
        let r = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraExtrinsics::new(r, [0.0; 3]).is_err());
        // Determinant -1 (reflection) is also rejected.
        let r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(CameraExtrinsics::new(r, [0.0; 3]).is_err());
    }

    #[test]
    fn interpolate_midpoint() {
        let keys = TrajectoryBev::new(vec![[0.0, 0.0], [10.0, 0.0]], 0).unwrap();
        let out = interpolate_keyframes(&keys, &[0.0, 1.0], &[0.5]).unwrap();
        assert_eq!(out.points, vec![[5.0, 0.0]]);
    }

    #[test]
    fn interpolate_2hz_keys_to_10hz() {
        // 2 Hz keys over 2 s (5 keys) densified to 10 Hz (21 samples).
        let key_times: Vec<f64> = (0..5).map(|i| i as f64 * 0.5).collect();
        let keys = TrajectoryBev::new(
            key_times.iter().map(|&t| [t * 2.0, 1.0 + t]).collect(),
            3,
        )
        .unwrap();
        let target: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let out = interpolate_keyframes(&keys, &key_times, &target).unwrap();
        assert_eq!(out.len(), 21);
        assert_eq!(out.vehicle_id, 3);
    }

    #[test]
    fn interpolate_piecewise_example() {
        let keys =
            TrajectoryBev::new(vec![[0.0, 0.0], [4.0, 4.0], [4.0, 8.0]], 0).unwrap();
        let out = interpolate_keyframes(&keys, &[0.0, 2.0, 4.0], &[3.0]).unwrap();
        let expect = dd::lerp_piecewise_dd(
            &[0.0, 2.0, 4.0],
            &[[0.0, 0.0], [4.0, 4.0], [4.0, 8.0]],
            3.0,
        );
        assert_eq!(out.points[0], [4.0, 6.0]);
        assert!((out.points[0][0] - expect[0]).abs() < 1e-12);
        assert!((out.points[0][1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn interpolate_rejects_extrapolation() {
        let keys = TrajectoryBev::new(vec![[0.0, 0.0], [1.0, 1.0]], 0).unwrap();
        let err = interpolate_keyframes(&keys, &[0.0, 1.0], &[1.5]).unwrap_err();
        assert!(matches!(err, Error::Extrapolation { .. }));
    }

    #[test]
    fn camera_file_roundtrip() {
        let intr = CameraIntrinsics::new(48.0, 48.5, 32.0, 31.5).unwrap();
        let extr = CameraExtrinsics::new(
            [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
            [0.1, 2.5, 2.0],
        )
        .unwrap();
        let text = format_camera_file(&intr, &extr);
        let (i2, e2) = parse_camera_file(&text).unwrap();
        assert_eq!(intr, i2);
        assert_eq!(extr, e2);
    }

    #[test]
    fn camera_file_rejects_missing_key() {
        assert!(parse_camera_file("fx 1.0\nfy 1.0\n").is_err());
    }

    #[test]
    fn traj_file_roundtrip_and_grouping() {
        let records = vec![
            TrajRecord { vehicle_id: 0, t: 0.0, x: 0.5, y: 4.25 },
            TrajRecord { vehicle_id: 0, t: 0.1, x: 0.5, y: 4.5 },
            TrajRecord { vehicle_id: 2, t: 0.0, x: -1.0, y: 9.0 },
        ];
        let text = format_traj_file(&records);
        let parsed = parse_traj_file(&text).unwrap();
        assert_eq!(records, parsed);
        let grouped = group_traj_records(&parsed).unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].1.vehicle_id, 0);
        assert_eq!(grouped[0].1.len(), 2);
        assert_eq!(grouped[1].1.vehicle_id, 2);
    }

    proptest! {
        /// Scaling fx, fy by a power of two scales (u - cx, v - cy) exactly
        /// when cx = cy = 0, and to 1e-12 relative otherwise.
        #[test]
        fn projection_equivariance(
            x in -20.0f64..20.0, y in -20.0f64..20.0,
            z in 0.5f64..50.0, fx in 10.0f64..500.0, fy in 10.0f64..500.0,
        ) {
            let extr = ident_extr([0.0, 0.0, 0.0]);
            let size = (1_000_000, 1_000_000);
            let p = [[x, y, z]];
            let intr0 = CameraIntrinsics::new(fx, fy, 0.0, 0.0).unwrap();
            let intr2 = CameraIntrinsics::new(2.0 * fx, 2.0 * fy, 0.0, 0.0).unwrap();
            let a = project_trajectory(&p, &intr0, &extr, size);
            let b = project_trajectory(&p, &intr2, &extr, size);
            if a.visible[0] && b.visible[0] {
                prop_assert_eq!(2.0 * a.points[0][0], b.points[0][0]);
                prop_assert_eq!(2.0 * a.points[0][1], b.points[0][1]);
            }
            let cx = 320.0;
            let intr0 = CameraIntrinsics::new(fx, fy, cx, cx).unwrap();
            let intr2 = CameraIntrinsics::new(2.0 * fx, 2.0 * fy, cx, cx).unwrap();
            let a = project_trajectory(&p, &intr0, &extr, size);
            let b = project_trajectory(&p, &intr2, &extr, size);
            if a.visible[0] && b.visible[0] {
                let da = [a.points[0][0] - cx, a.points[0][1] - cx];
                let db = [b.points[0][0] - cx, b.points[0][1] - cx];
                for c in 0..2 {
                    prop_assert!((2.0 * da[c] - db[c]).abs() <= 1e-12 * db[c].abs().max(1.0));
                }
            }
        }

        /// Back-projecting a visible pixel at its known depth recovers the
        /// BEV point within 1e-9 m.
        #[test]
        fn projection_round_trip(
            x in -20.0f64..20.0, y in -2.0f64..20.0,
            fx in 20.0f64..200.0, cx in 0.0f64..64.0,
            ty in 0.5f64..5.0, tz in 0.5f64..5.0,
        ) {
            let intr = CameraIntrinsics::new(fx, fx, cx, cx).unwrap();
            // Ground-to-camera frame used by the synthetic world.
            let extr = CameraExtrinsics::new(
                [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
                [0.0, ty, tz],
            ).unwrap();
            let p3 = [x, y, 0.0];
            let out = project_trajectory(&[p3], &intr, &extr, (100_000, 100_000));
            if out.visible[0] {
                let cam = extr.to_camera(p3);
                let (u, v) = (out.points[0][0], out.points[0][1]);
                let xr = (u - intr.cx) / intr.fx * cam[2];
                let yr = (v - intr.cy) / intr.fy * cam[2];
                let w = extr.to_world([xr, yr, cam[2]]);
                prop_assert!((w[0] - x).abs() < 1e-9);
                prop_assert!((w[1] - y).abs() < 1e-9);
            }
        }

        /// Interpolation is exact on keys and stays within the bracketing box.
        #[test]
        fn interpolation_convexity(
            xs in proptest::collection::vec(-50.0f64..50.0, 4),
            ys in proptest::collection::vec(-50.0f64..50.0, 4),
            frac in 0.0f64..1.0,
        ) {
            let key_times = [0.0, 1.0, 2.5, 4.0];
            let pts: Vec<[f64; 2]> = xs.iter().zip(&ys).map(|(&x, &y)| [x, y]).collect();
            let keys = TrajectoryBev::new(pts.clone(), 0).unwrap();
            // Keys reproduce bit-for-bit.
            let exact = interpolate_keyframes(&keys, &key_times, &key_times).unwrap();
            prop_assert_eq!(&exact.points, &pts);
            // Interior point lies in its bracketing bounding box.
            let t = 1.0 + frac * 1.5;
            let out = interpolate_keyframes(&keys, &key_times, &[t]).unwrap();
            let p = out.points[0];
            for c in 0..2 {
                let (a, b) = (pts[1][c], pts[2][c]);
                prop_assert!(p[c] >= a.min(b) && p[c] <= a.max(b));
            }
        }

        /// A visible point stays visible at larger depth while it remains in
        /// bounds (pixel moves toward the principal point).
        #[test]
        fn visibility_monotone_in_depth(
            x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.1f64..20.0,
            scale in 1.0f64..10.0,
        ) {
            let intr = CameraIntrinsics::new(50.0, 50.0, 32.0, 32.0).unwrap();
            let extr = ident_extr([0.0, 0.0, 0.0]);
            let near = project_trajectory(&[[x, y, z]], &intr, &extr, (64, 64));
            if near.visible[0] {
                let far = project_trajectory(&[[x, y, z * scale]], &intr, &extr, (64, 64));
                prop_assert!(far.visible[0]);
            }
        }
    }
}
