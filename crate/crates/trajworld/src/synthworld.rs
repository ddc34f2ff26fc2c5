//! Procedural synthetic driving-like scenes with exact ground truth.
//!
//! Vehicles are axis-oriented rectangles with flat per-vehicle colors moving
//! on a checkerboard ground plane. The camera is pinned to the first-frame
//! pose (matching the projection convention used for trajectory videos), so
//! the background is static and ego motion appears as a marker rectangle
//! following the ego trajectory. Rendering shares the exact pinhole geometry
//! of [`crate::geometry`], so rendered vehicle centers coincide with
//! projected trajectory points by construction.

use crate::error::{Error, Result};
use crate::geometry::{
    format_camera_file, format_traj_file, parse_camera_file, parse_traj_file, CameraExtrinsics,
    CameraIntrinsics, TrajRecord, TrajectoryBev,
};
use crate::harness::vten;
use crate::nn::seeded_rng;
use crate::rasterizer::{VideoShape, VideoTensor};
use crate::vocab::{label_id, maneuver_from_label, Maneuver, TextMode};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneCamera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

/// One synthetic clip with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub video: VideoTensor,
    pub ego_traj: TrajectoryBev,
    pub other_trajs: Vec<TrajectoryBev>,
    pub camera: SceneCamera,
    pub label: usize,
    pub seed: u64,
}

impl SceneSample {
    pub fn ego_maneuver(&self) -> Maneuver {
        maneuver_from_label(self.label).expect("scene labels are always labeled ids")
    }

    /// Label under an arbitrary text mode (pure function of the maneuver).
    pub fn label_for_mode(&self, mode: TextMode) -> usize {
        label_id(mode, self.ego_maneuver())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    #[serde(default = "d_frames")]
    pub t: usize,
    #[serde(default = "d_hw")]
    pub h: usize,
    #[serde(default = "d_hw")]
    pub w: usize,
    #[serde(default = "d_rate")]
    pub frame_rate: f64,
    /// Inclusive range of other-vehicle counts.
    #[serde(default = "d_count")]
    pub vehicle_count: (usize, usize),
    /// Speed range in m/s.
    #[serde(default = "d_speed")]
    pub speed_range: (f64, f64),
    #[serde(default = "d_maneuvers")]
    pub maneuvers: Vec<Maneuver>,
    #[serde(default)]
    pub ground_texture_seed: u64,
    /// Curvature bound for turning maneuvers (rad/s at unit speed scale).
    #[serde(default = "d_turn")]
    pub max_turn_rate: f64,
}

fn d_frames() -> usize {
    25
}
fn d_hw() -> usize {
    64
}
fn d_rate() -> f64 {
    10.0
}
fn d_count() -> (usize, usize) {
    (1, 2)
}
fn d_speed() -> (f64, f64) {
    (0.8, 2.5)
}
fn d_maneuvers() -> Vec<Maneuver> {
    crate::vocab::MANEUVERS.to_vec()
}
fn d_turn() -> f64 {
    0.45
}

impl Default for WorldConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 || self.h < 16 || self.w < 16 {
            return Err(Error::config("world needs t >= 2 and at least 16x16 frames"));
        }
        if self.vehicle_count.0 > self.vehicle_count.1 {
            return Err(Error::config("vehicle count range is empty"));
        }
        if !(self.speed_range.0 > 0.0 && self.speed_range.0 <= self.speed_range.1) {
            return Err(Error::config("speed range is empty or non-positive"));
        }
        if self.maneuvers.is_empty() {
            return Err(Error::config("maneuver set is empty"));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::config("frame rate must be positive"));
        }
        Ok(())
    }

    /// The fixed first-frame camera: above and slightly behind the BEV
    /// origin, looking along +y.
    pub fn camera(&self) -> SceneCamera {
        let intr = CameraIntrinsics::new(
            0.75 * self.w as f64,
            0.75 * self.w as f64,
            self.w as f64 / 2.0,
            self.h as f64 / 2.0,
        )
        .expect("static camera intrinsics");
        // World x -> camera x, world up (z) -> camera -y, world forward (y)
        // -> camera z; camera center at (0, -CAM_BACK, CAM_HEIGHT).
        let extr = CameraExtrinsics::new(
            [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
            [0.0, CAM_HEIGHT, CAM_BACK],
        )
        .expect("static camera extrinsics");
        SceneCamera {
            intrinsics: intr,
            extrinsics: extr,
        }
    }
}

const CAM_HEIGHT: f64 = 2.5;
const CAM_BACK: f64 = 3.0;

/// Vehicle footprints in meters (width along x, length along y). Kept short
/// relative to camera distance so the perspective bias between a rectangle's
/// image centroid and its projected center stays under a pixel.
const OTHER_SIZE: (f64, f64) = (2.0, 3.2);
const EGO_SIZE: (f64, f64) = (1.5, 2.0);

/// Flat color of a vehicle rectangle; id 0 is the ego marker.
pub fn vehicle_color(vehicle_id: u32) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 5] = [
        [0.88, 0.08, 0.08], // red
        [0.10, 0.22, 0.92], // blue
        [0.95, 0.88, 0.10], // yellow
        [0.80, 0.10, 0.80], // magenta
        [0.08, 0.82, 0.80], // cyan
    ];
    if vehicle_id == 0 {
        [0.96, 0.55, 0.05] // ego marker orange
    } else {
        PALETTE[(vehicle_id as usize - 1) % PALETTE.len()]
    }
}

fn checker_colors(texture_seed: u64) -> ([f32; 3], [f32; 3], [f32; 3]) {
    let mut rng = seeded_rng(texture_seed, "ground-texture");
    let a = 0.30 + rng.random_range(0.0..0.08);
    let b = 0.44 + rng.random_range(0.0..0.08);
    let sky = 0.62 + rng.random_range(0.0..0.08);
    ([a, a, a], [b, b, b], [sky, sky, sky + 0.05])
}

/// World ground-plane point seen by each pixel of the fixed camera (NaN where
/// the ray does not hit the ground ahead).
fn ground_map(config: &WorldConfig) -> Vec<[f64; 2]> {
    let cam = config.camera();
    let (fx, fy, cx, cy) = (
        cam.intrinsics.fx,
        cam.intrinsics.fy,
        cam.intrinsics.cx,
        cam.intrinsics.cy,
    );
    let mut map = Vec::with_capacity(config.h * config.w);
    for iy in 0..config.h {
        for ix in 0..config.w {
            let dv = iy as f64 - cy;
            if dv <= 1e-9 {
                map.push([f64::NAN, f64::NAN]);
                continue;
            }
            // Ray-ground intersection for the camera at (0, -CAM_BACK,
            // CAM_HEIGHT) looking along +y.
            let t = CAM_HEIGHT * fy / dv;
            let gx = (ix as f64 - cx) / fx * t;
            let gy = -CAM_BACK + t;
            map.push([gx, gy]);
        }
    }
    map
}

fn render_background(config: &WorldConfig, ground: &[[f64; 2]]) -> Vec<f32> {
    let (dark, light, sky) = checker_colors(config.ground_texture_seed);
    let mut frame = vec![0.0f32; config.h * config.w * 3];
    for (i, g) in ground.iter().enumerate() {
        let color = if g[0].is_nan() {
            sky
        } else {
            let cell = (g[0] / 2.0).floor() as i64 + (g[1] / 2.0).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                dark
            } else {
                light
            }
        };
        frame[i * 3..i * 3 + 3].copy_from_slice(&color);
    }
    frame
}

struct VehicleTrack {
    traj: TrajectoryBev,
    size: (f64, f64),
    color: [f32; 3],
}

fn render_video(config: &WorldConfig, vehicles: &[VehicleTrack]) -> Result<VideoTensor> {
    let ground = ground_map(config);
    let background = render_background(config, &ground);
    let mut data = Vec::with_capacity(config.t * background.len());
    for t in 0..config.t {
        let mut frame = background.clone();
        // Painter's order: far (large y) first, near last.
        let mut order: Vec<usize> = (0..vehicles.len()).collect();
        order.sort_by(|&a, &b| {
            vehicles[b].traj.points[t][1]
                .partial_cmp(&vehicles[a].traj.points[t][1])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &vi in &order {
            let v = &vehicles[vi];
            let [vx, vy] = v.traj.points[t];
            let (hw, hl) = (v.size.0 / 2.0, v.size.1 / 2.0);
            for (i, g) in ground.iter().enumerate() {
                if g[0].is_nan() {
                    continue;
                }
                if (g[0] - vx).abs() <= hw && (g[1] - vy).abs() <= hl {
                    frame[i * 3..i * 3 + 3].copy_from_slice(&v.color);
                }
            }
        }
        data.extend_from_slice(&frame);
    }
    VideoTensor::new(
        VideoShape {
            t: config.t,
            h: config.h,
            w: config.w,
            c: 3,
            frame_rate: config.frame_rate,
        },
        data,
    )
}

/// Smooth kinematic trajectory for a maneuver: constant speed, bounded
/// curvature, heading initially along +y.
fn maneuver_trajectory(
    maneuver: Maneuver,
    start: [f64; 2],
    speed: f64,
    turn_rate: f64,
    t_count: usize,
    dt: f64,
) -> Vec<[f64; 2]> {
    (0..t_count)
        .map(|i| {
            let t = i as f64 * dt;
            match maneuver {
                Maneuver::Stop => start,
                Maneuver::Forward => [start[0], start[1] + speed * t],
                Maneuver::Reverse => [start[0], start[1] - speed * t],
                Maneuver::TurnLeft => {
                    let r = speed / turn_rate;
                    [
                        start[0] - r * (1.0 - (turn_rate * t).cos()),
                        start[1] + r * (turn_rate * t).sin(),
                    ]
                }
                Maneuver::TurnRight => {
                    let r = speed / turn_rate;
                    [
                        start[0] + r * (1.0 - (turn_rate * t).cos()),
                        start[1] + r * (turn_rate * t).sin(),
                    ]
                }
            }
        })
        .collect()
}

/// All projected points visible with a small margin, so strokes and
/// rectangles stay on screen.
fn fully_visible(points: &[[f64; 2]], config: &WorldConfig, margin: f64) -> bool {
    let cam = config.camera();
    let p3: Vec<[f64; 3]> = points.iter().map(|p| [p[0], p[1], 0.0]).collect();
    let img = crate::geometry::project_trajectory(
        &p3,
        &cam.intrinsics,
        &cam.extrinsics,
        (config.w, config.h),
    );
    img.visible.iter().enumerate().all(|(i, &v)| {
        v && {
            let [u, w] = img.points[i];
            u >= margin
                && u <= config.w as f64 - 1.0 - margin
                && w >= margin
                && w <= config.h as f64 - 1.0 - margin
        }
    })
}

fn rects_overlap(a: &[[f64; 2]], sa: (f64, f64), b: &[[f64; 2]], sb: (f64, f64)) -> bool {
    const MARGIN: f64 = 0.4;
    a.iter().zip(b).any(|(pa, pb)| {
        (pa[0] - pb[0]).abs() < (sa.0 + sb.0) / 2.0 + MARGIN
            && (pa[1] - pb[1]).abs() < (sa.1 + sb.1) / 2.0 + MARGIN
    })
}

/// A generated sample plus generation metadata that is not part of the
/// sample contract (readable maneuver names for meta.json).
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub sample: SceneSample,
    pub other_maneuvers: Vec<Maneuver>,
}

const MAX_TRIES: usize = 96;

/// Deterministically generate one scene from (seed, config).
pub fn generate_scene(seed: u64, config: &WorldConfig) -> Result<GeneratedScene> {
    config.validate()?;
    let mut rng = seeded_rng(seed, "scene");
    let dt = 1.0 / config.frame_rate;

    // Ego marker trajectory.
    let mut tries = 0;
    let (ego_points, ego_maneuver) = loop {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(Error::Generation(format!(
                "could not place a visible ego trajectory after {MAX_TRIES} tries (seed {seed})"
            )));
        }
        let maneuver = *config.maneuvers.choose(&mut rng).unwrap();
        let start = [rng.random_range(-2.0..2.0), rng.random_range(5.0..8.0)];
        let speed = rng.random_range(config.speed_range.0..=config.speed_range.1);
        let turn = rng.random_range(0.6 * config.max_turn_rate..=config.max_turn_rate);
        let pts = maneuver_trajectory(maneuver, start, speed, turn, config.t, dt);
        if fully_visible(&pts, config, 2.0) {
            break (pts, maneuver);
        }
    };
    let ego_traj = TrajectoryBev::new(ego_points, 0)?;

    // Other vehicles, non-overlapping with everything placed so far.
    let n_other = rng.random_range(config.vehicle_count.0..=config.vehicle_count.1);
    let mut others: Vec<TrajectoryBev> = Vec::with_capacity(n_other);
    let mut other_maneuvers = Vec::with_capacity(n_other);
    for k in 0..n_other {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > MAX_TRIES {
                return Err(Error::Generation(format!(
                    "could not place vehicle {} without overlap after {MAX_TRIES} tries (seed {seed})",
                    k + 1
                )));
            }
            let maneuver = *config.maneuvers.choose(&mut rng).unwrap();
            let start = [rng.random_range(-4.5..4.5), rng.random_range(7.5..13.5)];
            let speed = rng.random_range(config.speed_range.0..=config.speed_range.1);
            let turn = rng.random_range(0.6 * config.max_turn_rate..=config.max_turn_rate);
            let pts = maneuver_trajectory(maneuver, start, speed, turn, config.t, dt);
            if !fully_visible(&pts, config, 2.0) {
                continue;
            }
            if rects_overlap(&pts, OTHER_SIZE, &ego_traj.points, EGO_SIZE) {
                continue;
            }
            if others
                .iter()
                .any(|o| rects_overlap(&pts, OTHER_SIZE, &o.points, OTHER_SIZE))
            {
                continue;
            }
            others.push(TrajectoryBev::new(pts, (k + 1) as u32)?);
            other_maneuvers.push(maneuver);
            break;
        }
    }

    let mut tracks = vec![VehicleTrack {
        traj: ego_traj.clone(),
        size: EGO_SIZE,
        color: vehicle_color(0),
    }];
    for o in &others {
        tracks.push(VehicleTrack {
            traj: o.clone(),
            size: OTHER_SIZE,
            color: vehicle_color(o.vehicle_id),
        });
    }
    let video = render_video(config, &tracks)?;
    Ok(GeneratedScene {
        sample: SceneSample {
            video,
            ego_traj,
            other_trajs: others,
            camera: config.camera(),
            label: label_id(TextMode::SceneDescription, ego_maneuver),
            seed,
        },
        other_maneuvers,
    })
}

/// Seed-deterministic disjoint exhaustive split of sample ids.
pub fn split_dataset(ids: &[usize], ratios: (f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if (ratios.0 + ratios.1 - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 {
        return Err(Error::config(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = ids.to_vec();
    use rand::seq::SliceRandom;
    order.shuffle(&mut seeded_rng(seed, "split"));
    let n_train = (ids.len() as f64 * ratios.0).round() as usize;
    let eval = order.split_off(n_train.min(order.len()));
    Ok((order, eval))
}

// ---------------------------------------------------------------------------
// Dataset directory layout
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    id: usize,
    seed: u64,
    label: usize,
    ego_maneuver: Maneuver,
    other_maneuvers: Vec<Maneuver>,
    t: usize,
    h: usize,
    w: usize,
    frame_rate: f64,
}

fn traj_to_records(traj: &TrajectoryBev, frame_rate: f64) -> Vec<TrajRecord> {
    traj.points
        .iter()
        .enumerate()
        .map(|(i, p)| TrajRecord {
            vehicle_id: traj.vehicle_id,
            t: i as f64 / frame_rate,
            x: p[0],
            y: p[1],
        })
        .collect()
}

/// Write `scenes/<id>/{video.vten, ego.traj, other_<k>.traj, camera.txt,
/// meta.json}` under the dataset root.
pub fn save_scene(root: &Path, id: usize, scene: &GeneratedScene) -> Result<()> {
    let dir = root.join("scenes").join(id.to_string());
    std::fs::create_dir_all(&dir)?;
    let s = &scene.sample;
    vten::write_video(&dir.join("video.vten"), &s.video)?;
    let rate = s.video.frame_rate();
    std::fs::write(
        dir.join("ego.traj"),
        format_traj_file(&traj_to_records(&s.ego_traj, rate)),
    )?;
    for o in &s.other_trajs {
        std::fs::write(
            dir.join(format!("other_{}.traj", o.vehicle_id)),
            format_traj_file(&traj_to_records(o, rate)),
        )?;
    }
    std::fs::write(
        dir.join("camera.txt"),
        format_camera_file(&s.camera.intrinsics, &s.camera.extrinsics),
    )?;
    let shape = s.video.shape();
    let meta = SceneMeta {
        id,
        seed: s.seed,
        label: s.label,
        ego_maneuver: s.ego_maneuver(),
        other_maneuvers: scene.other_maneuvers.clone(),
        t: shape.t,
        h: shape.h,
        w: shape.w,
        frame_rate: rate,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_scene(root: &Path, id: usize) -> Result<SceneSample> {
    let dir = root.join("scenes").join(id.to_string());
    let meta: SceneMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let video = vten::read_video(&dir.join("video.vten"), meta.frame_rate)?;
    let ego_records = parse_traj_file(&std::fs::read_to_string(dir.join("ego.traj"))?)?;
    let ego_traj = TrajectoryBev::new(
        ego_records.iter().map(|r| [r.x, r.y]).collect(),
        0,
    )?;
    let mut other_trajs = Vec::new();
    for k in 1..=64usize {
        let path = dir.join(format!("other_{k}.traj"));
        if !path.exists() {
            break;
        }
        let records = parse_traj_file(&std::fs::read_to_string(path)?)?;
        other_trajs.push(TrajectoryBev::new(
            records.iter().map(|r| [r.x, r.y]).collect(),
            k as u32,
        )?);
    }
    let (intrinsics, extrinsics) =
        parse_camera_file(&std::fs::read_to_string(dir.join("camera.txt"))?)?;
    Ok(SceneSample {
        video,
        ego_traj,
        other_trajs,
        camera: SceneCamera {
            intrinsics,
            extrinsics,
        },
        label: meta.label,
        seed: meta.seed,
    })
}

/// Scene ids present under a dataset root, ascending.
pub fn scan_scene_ids(root: &Path) -> Result<Vec<usize>> {
    let scenes = root.join("scenes");
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&scenes)? {
        let entry = entry?;
        if let Ok(id) = entry.file_name().to_string_lossy().parse::<usize>() {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}
