//! Experiment runners: full evaluation, text-mode comparison, and the
//! other-trajectory ablation.

use super::dataset::{encode_scenes, trajectory_videos, Dataset, EncodedScene};
use super::metrics::{codec_psnr, latent_mse, traj_follow_error};
use super::report::{config_hash, ControllabilitySummary, EvalReport};
use super::train::{train_world_model, TrainConfig, WorldModel};
use crate::controllability::{discrimination_test, DiscriminationSetup};
use crate::diffusion_core::{sample, DiffusionConfig, SamplerTrace, TrajectoryCondition};
use crate::error::{Error, Result};
use crate::geometry::TrajectoryBev;
use crate::latent_codec::CodecParams;
use crate::nn::derive_seed;
use crate::rasterizer::{RasterStyle, VideoShape, VideoTensor};
use crate::synthworld::SceneSample;
use crate::vocab::TextMode;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_psnr")]
    pub n_psnr: usize,
    #[serde(default = "d_latent")]
    pub n_latent: usize,
    #[serde(default = "d_follow")]
    pub n_traj_follow: usize,
    #[serde(default = "d_disc")]
    pub n_discrimination: usize,
}

fn d_psnr() -> usize {
    48
}
fn d_latent() -> usize {
    128
}
fn d_follow() -> usize {
    48
}
fn d_disc() -> usize {
    200
}

impl Default for EvalConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Trajectory overrides for sampling (novel-trajectory generation).
#[derive(Default, Clone, Debug)]
pub struct SampleOverrides {
    pub ego_traj: Option<TrajectoryBev>,
    /// Replaces all other-vehicle trajectories when set.
    pub other_trajs: Option<Vec<TrajectoryBev>>,
}

/// Generate a video for a scene under a model. Returns the generated video
/// and the conditioned sample (with any overrides applied) for scoring.
pub fn sample_scene(
    scene: &SceneSample,
    overrides: &SampleOverrides,
    model: &WorldModel,
    codec: &CodecParams,
    dcfg: &DiffusionConfig,
    style: &RasterStyle,
    seed: u64,
    trace: Option<&mut SamplerTrace>,
) -> Result<(VideoTensor, SceneSample)> {
    let mut conditioned = scene.clone();
    if let Some(ego) = &overrides.ego_traj {
        if ego.len() != scene.video.frames() {
            return Err(Error::invalid(format!(
                "override ego trajectory has {} points, clip has {} frames",
                ego.len(),
                scene.video.frames()
            )));
        }
        conditioned.ego_traj = TrajectoryBev::new(ego.points.clone(), 0)?;
    }
    if let Some(others) = &overrides.other_trajs {
        for o in others {
            if o.len() != scene.video.frames() {
                return Err(Error::invalid(
                    "override other trajectory length != clip frames",
                ));
            }
        }
        conditioned.other_trajs = others.clone();
    }
    let (ego_video, other_video) = trajectory_videos(&conditioned, style)?;
    let shape = scene.video.shape();
    let t_c = dcfg.t_c;
    if t_c >= shape.t {
        return Err(Error::config(format!(
            "T_c = {t_c} must be below clip length {}",
            shape.t
        )));
    }
    let per_frame = shape.h * shape.w * shape.c;
    let context = VideoTensor::new(
        VideoShape { t: t_c, ..shape },
        scene.video.data()[..t_c * per_frame].to_vec(),
    )?;
    let traj = TrajectoryCondition {
        ego: &ego_video,
        other: &other_video,
        use_ego: dcfg.use_ego_traj,
        use_other: dcfg.use_other_traj,
    };
    let label = conditioned.label_for_mode(dcfg.text_mode);
    let sched = dcfg.schedule()?;
    let video = sample(
        &context,
        &traj,
        label,
        &model.denoiser,
        codec,
        &sched,
        seed,
        trace,
    )?;
    Ok((video, conditioned))
}

/// Full evaluation: codec PSNR, one-step latent MSE, trajectory-following
/// error over sampled videos, and the discrimination test.
pub fn run_evaluation(
    dataset: &Dataset,
    codec: &CodecParams,
    model: &WorldModel,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
) -> Result<EvalReport> {
    let style = RasterStyle::default();
    let (_, eval_ids) = dataset.split()?;
    if eval_ids.is_empty() {
        return Err(Error::invalid("eval split is empty"));
    }
    let dcfg = &train_config.diffusion;

    // Codec reconstruction PSNR.
    let psnr_ids = &eval_ids[..eval_config.n_psnr.min(eval_ids.len())];
    let videos: Result<Vec<VideoTensor>> =
        psnr_ids.iter().map(|&id| Ok(dataset.load(id)?.video)).collect();
    let psnr = codec_psnr(&videos?, codec)?;

    // One-step latent prediction error.
    let latent_ids = &eval_ids[..eval_config.n_latent.min(eval_ids.len())];
    let encoded = encode_scenes(dataset, latent_ids, codec, &style)?;
    let (lmse, ctrl_sim) = latent_mse(&encoded, model, train_config, eval_config.seed)?;

    // Trajectory following on sampled videos.
    let follow_ids = &eval_ids[..eval_config.n_traj_follow.min(eval_ids.len())];
    let mut follow_means = Vec::new();
    let mut ego_means = Vec::new();
    let mut other_means = Vec::new();
    for (i, &id) in follow_ids.iter().enumerate() {
        let scene = dataset.load(id)?;
        let (generated, conditioned) = sample_scene(
            &scene,
            &SampleOverrides::default(),
            model,
            codec,
            dcfg,
            &style,
            derive_seed(eval_config.seed, &format!("eval-sample-{i}")),
            None,
        )?;
        let report = traj_follow_error(&generated, &conditioned)?;
        follow_means.push(report.mean_px);
        if let Some(e) = report.ego_px {
            ego_means.push(e);
        }
        if let Some(o) = report.other_px {
            other_means.push(o);
        }
    }
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let follow = mean_of(&follow_means);

    // Discrimination test at mid-schedule.
    let disc_ids = &eval_ids[..eval_config.n_discrimination.min(eval_ids.len())];
    let disc_encoded: Vec<EncodedScene> = if disc_ids.len() <= latent_ids.len() {
        encoded[..disc_ids.len()].to_vec()
    } else {
        encode_scenes(dataset, disc_ids, codec, &style)?
    };
    let eval_latents: Vec<_> = disc_encoded
        .iter()
        .map(|e| e.latents_for_mode(dcfg.text_mode))
        .collect();
    let sched = dcfg.schedule()?;
    let setup = DiscriminationSetup {
        denoiser: &model.denoiser,
        head: &model.head,
        sched: &sched,
        t_eval: (sched.num_steps / 2).max(1),
        t_c: dcfg.t_c,
        x0_mode: train_config.x0_mode,
        head_target: train_config.head_target,
        config_hash: config_hash(&(train_config, eval_config)),
    };
    let disc = discrimination_test(&setup, &eval_latents, derive_seed(eval_config.seed, "disc"))?;

    let report = EvalReport {
        psnr_db: psnr,
        latent_mse: lmse,
        control_similarity: ctrl_sim,
        traj_follow_error_px: follow,
        traj_follow_ego_px: (!ego_means.is_empty()).then(|| mean_of(&ego_means)),
        traj_follow_other_px: (!other_means.is_empty()).then(|| mean_of(&other_means)),
        controllability: ControllabilitySummary {
            matched_mean: disc.matched_mean,
            irrelevant_mean: disc.irrelevant_mean,
            win_rate: disc.win_rate,
            n: disc.n,
        },
        n_psnr: psnr_ids.len(),
        n_latent: latent_ids.len(),
        n_traj_follow: follow_ids.len(),
        config_hash: config_hash(&(train_config, eval_config)),
        seed: eval_config.seed,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextModeRow {
    pub mode: TextMode,
    pub latent_mse: f64,
    pub control_similarity: f64,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextModeTable {
    pub rows: Vec<TextModeRow>,
    /// The none mode's latent_mse is strictly worse than every labeled mode.
    pub none_strictly_worst: bool,
    pub seed: u64,
    pub config_hash: String,
}

/// Train and evaluate one model per text mode under shared seeds.
pub fn run_text_mode_experiment(
    train_scenes: &[EncodedScene],
    eval_scenes: &[EncodedScene],
    base: &TrainConfig,
    modes: &[TextMode],
    eval_seed: u64,
) -> Result<TextModeTable> {
    if modes.is_empty() {
        return Err(Error::config("text-mode experiment needs at least one mode"));
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut config = base.clone();
        config.diffusion.text_mode = mode;
        let model = train_world_model(train_scenes, &config)?;
        let (lmse, sim) = latent_mse(eval_scenes, &model, &config, eval_seed)?;
        rows.push(TextModeRow {
            mode,
            latent_mse: lmse,
            control_similarity: sim,
            final_train_loss: model.epoch_losses.last().map(|l| l.0).unwrap_or(f64::NAN),
        });
    }
    let none = rows.iter().find(|r| r.mode == TextMode::None);
    let none_strictly_worst = match none {
        Some(nrow) => rows
            .iter()
            .filter(|r| r.mode != TextMode::None)
            .all(|r| r.latent_mse < nrow.latent_mse),
        None => false,
    };
    Ok(TextModeTable {
        rows,
        none_strictly_worst,
        seed: base.seed,
        config_hash: config_hash(&(base, modes, eval_seed)),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationOutcome {
    /// Mean other-vehicle follow error with other-trajectory conditioning.
    pub with_other_px: f64,
    /// Same metric for the model trained and sampled without it.
    pub without_other_px: f64,
    pub n_scenes: usize,
    pub seed: u64,
}

/// Train a matched pair of models (with and without other-vehicle trajectory
/// conditioning, same seeds) and compare other-vehicle follow error on eval
/// scenes.
pub fn run_ablation_experiment(
    train_scenes: &[EncodedScene],
    dataset: &Dataset,
    eval_ids: &[usize],
    codec: &CodecParams,
    base: &TrainConfig,
    eval_seed: u64,
) -> Result<AblationOutcome> {
    let style = RasterStyle::default();
    let mut off_config = base.clone();
    off_config.diffusion.use_other_traj = false;
    let model_on = train_world_model(train_scenes, base)?;
    let model_off = train_world_model(train_scenes, &off_config)?;

    let eval_one = |model: &WorldModel, cfg: &TrainConfig| -> Result<f64> {
        let mut means = Vec::new();
        for (i, &id) in eval_ids.iter().enumerate() {
            let scene = dataset.load(id)?;
            if scene.other_trajs.is_empty() {
                continue;
            }
            let (generated, conditioned) = sample_scene(
                &scene,
                &SampleOverrides::default(),
                model,
                codec,
                &cfg.diffusion,
                &style,
                derive_seed(eval_seed, &format!("ablation-{i}")),
                None,
            )?;
            match traj_follow_error(&generated, &conditioned) {
                Ok(r) => {
                    if let Some(o) = r.other_px {
                        means.push(o);
                    }
                }
                Err(Error::MetricUndefined(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if means.is_empty() {
            return Err(Error::MetricUndefined(
                "no other vehicle trackable in any ablation eval scene".into(),
            ));
        }
        Ok(means.iter().sum::<f64>() / means.len() as f64)
    };

    let with_other_px = eval_one(&model_on, base)?;
    let without_other_px = eval_one(&model_off, &off_config)?;
    Ok(AblationOutcome {
        with_other_px,
        without_other_px,
        n_scenes: eval_ids.len(),
        seed: base.seed,
    })
}

// Model directory layout: denoiser + head + the training config.

pub fn save_world_model(dir: &std::path::Path, model: &WorldModel, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::diffusion_core::save_denoiser(dir, &model.denoiser)?;
    crate::controllability::save_head(dir, &model.head)?;
    std::fs::write(dir.join("train.json"), serde_json::to_string_pretty(config)?)?;
    let losses: Vec<[f64; 2]> = model.epoch_losses.iter().map(|&(a, b)| [a, b]).collect();
    std::fs::write(dir.join("losses.json"), serde_json::to_string_pretty(&losses)?)?;
    Ok(())
}

pub fn load_world_model(dir: &std::path::Path) -> Result<(WorldModel, TrainConfig)> {
    let denoiser = crate::diffusion_core::load_denoiser(dir)?;
    let head = crate::controllability::load_head(dir)?;
    let config: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join("train.json"))?)?;
    let losses: Vec<[f64; 2]> = std::fs::read_to_string(dir.join("losses.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();
    Ok((
        WorldModel {
            denoiser,
            head,
            epoch_losses: losses.into_iter().map(|[a, b]| (a, b)).collect(),
        },
        config,
    ))
}
