//! Evaluation metrics: PSNR, one-step latent prediction error, and the
//! pixel-space trajectory-following error driven by color-key tracking.

use super::dataset::EncodedScene;
use super::train::{eval_step_losses, TrainConfig, WorldModel};
use crate::error::{Error, Result};
use crate::geometry::project_trajectory;
use crate::nn::{self};
use crate::rasterizer::VideoTensor;
use crate::synthworld::{vehicle_color, SceneSample};
use crate::tensor::Tensor;
use crate::vocab::label_id;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// PSNR in dB for signals in [0, 1].
pub fn psnr_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        return f64::INFINITY;
    }
    10.0 * (1.0 / mse).log10()
}

pub fn video_mse(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid("video_mse: shape mismatch"));
    }
    let n = a.data().len() as f64;
    let mut acc = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = (x - y) as f64;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Color-key segmentation: centroid of pixels within `threshold` (Euclidean
/// RGB distance) of the key color, requiring at least 2 matching pixels.
pub fn track_color_centroid(
    video: &VideoTensor,
    t: usize,
    key: [f32; 3],
    threshold: f32,
) -> Option<[f64; 2]> {
    let (h, w) = (video.height(), video.width());
    let t2 = threshold * threshold;
    let mut sum = [0.0f64; 2];
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let px = video.pixel(t, y, x);
            let d2: f32 = px
                .iter()
                .zip(key.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if d2 <= t2 {
                sum[0] += x as f64;
                sum[1] += y as f64;
                count += 1;
            }
        }
    }
    (count >= 2).then(|| [sum[0] / count as f64, sum[1] / count as f64])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VehicleFollow {
    pub vehicle_id: u32,
    pub mean_px: Option<f64>,
    pub tracked_frames: usize,
    pub skipped_frames: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajFollowReport {
    /// Mean of per-vehicle mean distances (vehicles weighted equally).
    pub mean_px: f64,
    pub ego_px: Option<f64>,
    /// Mean over non-ego vehicles' means.
    pub other_px: Option<f64>,
    pub per_vehicle: Vec<VehicleFollow>,
    pub tracked_pairs: usize,
    pub skipped_pairs: usize,
}

pub const TRACKER_THRESHOLD: f32 = 0.30;

/// Mean pixel distance between color-keyed vehicle centroids in a generated
/// video and the projected conditioned trajectories. Vehicles untrackable in
/// a frame are skipped and counted; no trackable vehicle anywhere is a
/// metric-undefined error.
pub fn traj_follow_error(generated: &VideoTensor, sample: &SceneSample) -> Result<TrajFollowReport> {
    let gshape = generated.shape();
    let sshape = sample.video.shape();
    if (gshape.t, gshape.h, gshape.w, gshape.c) != (sshape.t, sshape.h, sshape.w, sshape.c) {
        return Err(Error::invalid(format!(
            "generated dims {gshape:?} do not match sample dims {sshape:?}"
        )));
    }
    let size = (gshape.w, gshape.h);
    let mut per_vehicle = Vec::new();
    let (mut tracked_pairs, mut skipped_pairs) = (0usize, 0usize);
    for traj in std::iter::once(&sample.ego_traj).chain(sample.other_trajs.iter()) {
        let p3: Vec<[f64; 3]> = traj.points.iter().map(|p| [p[0], p[1], 0.0]).collect();
        let img = project_trajectory(
            &p3,
            &sample.camera.intrinsics,
            &sample.camera.extrinsics,
            size,
        );
        let key = vehicle_color(traj.vehicle_id);
        let mut dist_sum = 0.0;
        let (mut tracked, mut skipped) = (0usize, 0usize);
        for t in 0..gshape.t {
            if !img.visible[t] {
                continue;
            }
            match track_color_centroid(generated, t, key, TRACKER_THRESHOLD) {
                Some(c) => {
                    let [u, v] = img.points[t];
                    dist_sum += ((c[0] - u).powi(2) + (c[1] - v).powi(2)).sqrt();
                    tracked += 1;
                }
                None => skipped += 1,
            }
        }
        tracked_pairs += tracked;
        skipped_pairs += skipped;
        per_vehicle.push(VehicleFollow {
            vehicle_id: traj.vehicle_id,
            mean_px: (tracked > 0).then(|| dist_sum / tracked as f64),
            tracked_frames: tracked,
            skipped_frames: skipped,
        });
    }
    if tracked_pairs == 0 {
        return Err(Error::MetricUndefined(
            "no vehicle trackable in any frame".into(),
        ));
    }
    let vehicle_means: Vec<f64> = per_vehicle.iter().filter_map(|v| v.mean_px).collect();
    let mean_px = vehicle_means.iter().sum::<f64>() / vehicle_means.len() as f64;
    let ego_px = per_vehicle
        .iter()
        .find(|v| v.vehicle_id == 0)
        .and_then(|v| v.mean_px);
    let other_means: Vec<f64> = per_vehicle
        .iter()
        .filter(|v| v.vehicle_id != 0)
        .filter_map(|v| v.mean_px)
        .collect();
    let other_px = (!other_means.is_empty())
        .then(|| other_means.iter().sum::<f64>() / other_means.len() as f64);
    Ok(TrajFollowReport {
        mean_px,
        ego_px,
        other_px,
        per_vehicle,
        tracked_pairs,
        skipped_pairs,
    })
}

/// Mean one-step noise-prediction error (masked diffusion loss) over samples
/// at a fixed timestep grid with per-(sample, t) seeded noise. Also returns
/// the mean control-similarity loss.
pub fn latent_mse(
    scenes: &[EncodedScene],
    model: &WorldModel,
    config: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if scenes.is_empty() {
        return Err(Error::invalid("latent_mse needs a nonempty eval set"));
    }
    let sched = config.diffusion.schedule()?;
    let steps = sched.num_steps;
    let t_grid = [steps.div_ceil(4), steps.div_ceil(2), (3 * steps).div_ceil(4)];
    let (mut diff_sum, mut traj_sum, mut count) = (0.0, 0.0, 0usize);
    for (i, scene) in scenes.iter().enumerate() {
        let label = label_id(config.diffusion.text_mode, scene.maneuver);
        for &t in &t_grid {
            let mut rng = nn::seeded_rng(seed, &format!("latent-mse-{i}-{t}"));
            let eps = Tensor::from_vec(
                scene.z_vid.data.shape(),
                (0..scene.z_vid.data.numel())
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect(),
            );
            let (d, tr) = eval_step_losses(scene, label, t.max(1), &eps, model, &sched, config)?;
            diff_sum += d;
            traj_sum += tr;
            count += 1;
        }
    }
    Ok((diff_sum / count as f64, traj_sum / count as f64))
}

/// Pooled reconstruction PSNR of the codec over scene videos.
pub fn codec_psnr(
    videos: &[VideoTensor],
    codec: &crate::latent_codec::CodecParams,
) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::invalid("codec_psnr needs at least one video"));
    }
    let mut mse_sum = 0.0;
    for v in videos {
        let z = crate::latent_codec::encode(v, codec)?;
        let out = crate::latent_codec::decode(&z, codec)?;
        mse_sum += video_mse(v, &out)?;
    }
    Ok(psnr_db(mse_sum / videos.len() as f64))
}
