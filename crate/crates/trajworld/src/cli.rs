//! Command-line entry point: dataset generation, projection/rasterization
//! utilities, training, sampling and evaluation.
//!
//! Configs are JSON files; flags override config fields. All outputs land
//! under the command's `--out` path; inputs are never mutated. Exit codes:
//! 0 success, 2 config/usage error, 3 training divergence, 4 metric
//! undefined.

use crate::controllability::{discrimination_test, ControlHeadParams, DiscriminationSetup};
use crate::diffusion_core::DiffusionConfig;
use crate::error::{Error, Result};
use crate::harness::{
    self, codec_training_videos, encode_scenes, generate_dataset, load_traj_for_frames,
    run_text_mode_experiment, sample_scene, Dataset, DatasetConfig, EvalConfig, SampleOverrides,
    TrainConfig,
};
use crate::latent_codec::{load_codec, save_codec, train_codec, CodecTrainConfig};
use crate::rasterizer::{rasterize_trajectory_video, write_image_sequence, RasterStyle};
use crate::synthworld::load_scene;
use crate::vocab::TextMode;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "trajworld",
    version,
    about = "Trajectory-conditioned driving world model at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    GenData(GenDataArgs),
    /// Project a BEV trajectory file into image coordinates.
    Project(ProjectArgs),
    /// Rasterize a BEV trajectory file into a trajectory video.
    Rasterize(RasterizeArgs),
    /// Train the shared video codec by reconstruction.
    TrainCodec(TrainCodecArgs),
    /// Train the world model (denoiser + control head) on a dataset.
    TrainModel(TrainModelArgs),
    /// Generate a video for one scene, optionally with novel trajectories.
    Sample(SampleArgs),
    /// Evaluate a trained model: PSNR, latent MSE, trajectory following,
    /// controllability.
    Evaluate(EvaluateArgs),
    /// Train one model per text mode and compare latent MSE.
    TextModes(TextModesArgs),
    /// Run the trajectory-controllability discrimination test.
    Controllability(ControllabilityArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Dataset config JSON (world, count, split).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the config's scene count.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// Camera parameter file.
    #[arg(long)]
    pub camera: PathBuf,
    /// Trajectory file (vehicle_id t x y records).
    #[arg(long)]
    pub traj: PathBuf,
    /// Image size as WxH.
    #[arg(long)]
    pub size: String,
    /// Output text dump path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    /// Image size as WxH.
    #[arg(long)]
    pub size: String,
    /// Frame count; defaults to the trajectory's record count.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 2)]
    pub line_width: u32,
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    /// Output directory (video.vten plus optional image sequence).
    #[arg(long)]
    pub out: PathBuf,
    /// Also export per-frame PGM images.
    #[arg(long, default_value_t = false)]
    pub pgm: bool,
}

#[derive(Args, Debug)]
pub struct TrainCodecArgs {
    /// Dataset root (from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Codec training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on training scenes.
    #[arg(long)]
    pub max_scenes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained codec directory.
    #[arg(long)]
    pub codec: PathBuf,
    /// World-model training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_scenes: Option<usize>,
    /// Drop ego-trajectory conditioning (ablation).
    #[arg(long, default_value_t = false)]
    pub no_ego_traj: bool,
    /// Drop other-vehicle-trajectory conditioning (ablation).
    #[arg(long, default_value_t = false)]
    pub no_other_traj: bool,
    /// Text mode override (none, instruction, scene-description,
    /// action-description).
    #[arg(long)]
    pub text_mode: Option<String>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Scene directory (data/scenes/<id>).
    #[arg(long)]
    pub scene: PathBuf,
    /// Trained model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    /// Diffusion config JSON (defaults to the model's training config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Novel ego trajectory file.
    #[arg(long)]
    pub ego_traj: Option<PathBuf>,
    /// Novel other-vehicle trajectory files (repeatable).
    #[arg(long)]
    pub other_traj: Vec<PathBuf>,
    #[arg(long, default_value_t = false)]
    pub no_ego_traj: bool,
    #[arg(long, default_value_t = false)]
    pub no_other_traj: bool,
    /// Also export per-frame PPM images.
    #[arg(long, default_value_t = false)]
    pub ppm: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    /// Eval config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report output path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TextModesArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    /// Base training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated modes (default: all four).
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_scenes: Option<usize>,
    /// Eval scenes for the per-mode latent MSE.
    #[arg(long, default_value_t = 64)]
    pub eval_scenes: usize,
}

#[derive(Args, Debug)]
pub struct ControllabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub codec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Eval sample count.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Score with a freshly initialized (untrained) model and head instead:
    /// the no-signal null.
    #[arg(long, default_value_t = false)]
    pub untrained: bool,
}

/// Parse argv and run; returns the process exit code.
pub fn dispatch(args: &[String]) -> i32 {
    init_thread_pool();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/help text; --help and --version are
            // successful exits.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Cap worker parallelism via TRAJWORLD_THREADS (default: machine cores).
fn init_thread_pool() {
    if let Ok(v) = std::env::var("TRAJWORLD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool already exists (tests).
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("bad config {}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| Error::config(format!("size must be WxH, got {s:?}")))?;
    let w = w
        .parse()
        .map_err(|_| Error::config(format!("bad width in {s:?}")))?;
    let h = h
        .parse()
        .map_err(|_| Error::config(format!("bad height in {s:?}")))?;
    Ok((w, h))
}

fn parse_text_mode(s: &str) -> Result<TextMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::config(format!("unknown text mode {s:?}")))
}

fn scene_from_dir(dir: &Path) -> Result<(PathBuf, usize)> {
    let id: usize = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::config(format!("{} is not a scene directory", dir.display())))?;
    let root = dir
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| Error::config("scene path must be <root>/scenes/<id>"))?;
    Ok((root.to_path_buf(), id))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut config: DatasetConfig = load_json_config(&a.config)?;
            if let Some(c) = a.count {
                config.count = c;
            }
            generate_dataset(&a.out, &config, a.seed)?;
            println!(
                "generated {} scenes under {}",
                config.count,
                a.out.display()
            );
            Ok(())
        }
        Command::Project(a) => {
            let (intr, extr) =
                crate::geometry::parse_camera_file(&std::fs::read_to_string(&a.camera)?)?;
            let (w, h) = parse_size(&a.size)?;
            let records = crate::geometry::parse_traj_file(&std::fs::read_to_string(&a.traj)?)?;
            let grouped = crate::geometry::group_traj_records(&records)?;
            let mut dump = String::from("# vehicle_id index u v visible\n");
            for (_, traj) in &grouped {
                let p3 = crate::geometry::lift_bev_to_3d(traj)?;
                let img = crate::geometry::project_trajectory(&p3, &intr, &extr, (w, h));
                for i in 0..img.len() {
                    if img.visible[i] {
                        dump.push_str(&format!(
                            "{} {} {:?} {:?} 1\n",
                            traj.vehicle_id, i, img.points[i][0], img.points[i][1]
                        ));
                    } else {
                        dump.push_str(&format!("{} {} nan nan 0\n", traj.vehicle_id, i));
                    }
                }
            }
            match &a.out {
                Some(p) => std::fs::write(p, dump)?,
                None => print!("{dump}"),
            }
            Ok(())
        }
        Command::Rasterize(a) => {
            let (intr, extr) =
                crate::geometry::parse_camera_file(&std::fs::read_to_string(&a.camera)?)?;
            let (w, h) = parse_size(&a.size)?;
            let records = crate::geometry::parse_traj_file(&std::fs::read_to_string(&a.traj)?)?;
            let grouped = crate::geometry::group_traj_records(&records)?;
            let (_, traj) = grouped
                .into_iter()
                .next()
                .ok_or_else(|| Error::config("trajectory file has no records"))?;
            let frames = a.frames.unwrap_or(traj.len());
            if frames != traj.len() {
                return Err(Error::config(format!(
                    "trajectory has {} points but --frames asked for {frames}",
                    traj.len()
                )));
            }
            let style = RasterStyle::new(a.line_width, a.intensity)?;
            let p3 = crate::geometry::lift_bev_to_3d(&traj)?;
            let img = crate::geometry::project_trajectory(&p3, &intr, &extr, (w, h));
            let video = rasterize_trajectory_video(&img, h, w, &style, a.frame_rate)?;
            std::fs::create_dir_all(&a.out)?;
            harness::vten::write_video(&a.out.join("video.vten"), &video)?;
            if a.pgm {
                write_image_sequence(&video, &a.out.join("frames"))?;
            }
            println!("rasterized {} frames to {}", frames, a.out.display());
            Ok(())
        }
        Command::TrainCodec(a) => {
            let mut config: CodecTrainConfig = load_json_config(&a.config)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
            let dataset = Dataset::open(&a.data)?;
            let (train_ids, _) = dataset.split()?;
            let ids: Vec<usize> = match a.max_scenes {
                Some(cap) => train_ids.into_iter().take(cap).collect(),
                None => train_ids,
            };
            let videos = codec_training_videos(
                &dataset,
                &ids,
                config.arch.in_channels,
                &RasterStyle::default(),
            )?;
            let (params, losses) = train_codec(&videos, &config)?;
            save_codec(&a.out, &params)?;
            std::fs::write(
                a.out.join("codec.losses.json"),
                serde_json::to_string_pretty(&losses)?,
            )?;
            println!(
                "codec trained on {} videos, final epoch loss {:.6}",
                videos.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::TrainModel(a) => {
            let mut config: TrainConfig = load_json_config(&a.config)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
            if let Some(m) = a.max_scenes {
                config.max_scenes = Some(m);
            }
            if a.no_ego_traj {
                config.diffusion.use_ego_traj = false;
            }
            if a.no_other_traj {
                config.diffusion.use_other_traj = false;
            }
            if let Some(mode) = &a.text_mode {
                config.diffusion.text_mode = parse_text_mode(mode)?;
            }
            let dataset = Dataset::open(&a.data)?;
            let codec = load_codec(&a.codec)?;
            let (train_ids, _) = dataset.split()?;
            let ids: Vec<usize> = match config.max_scenes {
                Some(cap) => train_ids.into_iter().take(cap).collect(),
                None => train_ids,
            };
            let encoded = encode_scenes(&dataset, &ids, &codec, &RasterStyle::default())?;
            let model = harness::train_world_model(&encoded, &config)?;
            harness::save_world_model(&a.out, &model, &config)?;
            let (d, t) = model
                .epoch_losses
                .last()
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            println!(
                "model trained on {} scenes, final losses diffusion {d:.6} traj {t:.6}",
                encoded.len()
            );
            Ok(())
        }
        Command::Sample(a) => {
            let (root, id) = scene_from_dir(&a.scene)?;
            let scene = load_scene(&root, id)?;
            let codec = load_codec(&a.codec)?;
            let (model, train_config) = harness::load_world_model(&a.model)?;
            let mut dcfg: DiffusionConfig = match &a.config {
                Some(_) => load_json_config(&a.config)?,
                None => train_config.diffusion.clone(),
            };
            if a.no_ego_traj {
                dcfg.use_ego_traj = false;
            }
            if a.no_other_traj {
                dcfg.use_other_traj = false;
            }
            let seed = a.seed.unwrap_or(dcfg.seed);
            let shape = scene.video.shape();
            let mut overrides = SampleOverrides::default();
            if let Some(path) = &a.ego_traj {
                overrides.ego_traj = Some(load_traj_for_frames(path, shape.t, shape.frame_rate)?);
            }
            if !a.other_traj.is_empty() {
                let mut others = Vec::new();
                for (k, path) in a.other_traj.iter().enumerate() {
                    let mut tr = load_traj_for_frames(path, shape.t, shape.frame_rate)?;
                    tr.vehicle_id = (k + 1) as u32;
                    others.push(tr);
                }
                overrides.other_trajs = Some(others);
            }
            let (video, conditioned) = sample_scene(
                &scene,
                &overrides,
                &model,
                &codec,
                &dcfg,
                &RasterStyle::default(),
                seed,
                None,
            )?;
            std::fs::create_dir_all(&a.out)?;
            harness::vten::write_video(&a.out.join("video.vten"), &video)?;
            if a.ppm {
                write_image_sequence(&video, &a.out.join("frames"))?;
            }
            // Score against the conditioned trajectories when trackable.
            match harness::traj_follow_error(&video, &conditioned) {
                Ok(report) => {
                    std::fs::write(
                        a.out.join("follow.json"),
                        serde_json::to_string_pretty(&report)?,
                    )?;
                    println!(
                        "sampled scene {id}: traj_follow_error {:.3} px",
                        report.mean_px
                    );
                }
                Err(Error::MetricUndefined(msg)) => {
                    println!("sampled scene {id}: follow metric undefined ({msg})");
                }
                Err(e) => return Err(e),
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let mut eval_config: EvalConfig = load_json_config(&a.config)?;
            if let Some(s) = a.seed {
                eval_config.seed = s;
            }
            let dataset = Dataset::open(&a.data)?;
            let codec = load_codec(&a.codec)?;
            let (model, train_config) = harness::load_world_model(&a.model)?;
            let report =
                harness::run_evaluation(&dataset, &codec, &model, &train_config, &eval_config)?;
            if let Some(parent) = a.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "psnr {:.2} dB | latent_mse {:.5} | traj_follow {:.3} px | win_rate {:.3}",
                report.psnr_db,
                report.latent_mse,
                report.traj_follow_error_px,
                report.controllability.win_rate
            );
            Ok(())
        }
        Command::TextModes(a) => {
            let mut config: TrainConfig = load_json_config(&a.config)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
            if let Some(m) = a.max_scenes {
                config.max_scenes = Some(m);
            }
            let modes: Vec<TextMode> = match &a.modes {
                Some(list) => list
                    .split(',')
                    .map(|m| parse_text_mode(m.trim()))
                    .collect::<Result<_>>()?,
                None => crate::vocab::TEXT_MODES.to_vec(),
            };
            let dataset = Dataset::open(&a.data)?;
            let codec = load_codec(&a.codec)?;
            let (train_ids, eval_ids) = dataset.split()?;
            let train_ids: Vec<usize> = match config.max_scenes {
                Some(cap) => train_ids.into_iter().take(cap).collect(),
                None => train_ids,
            };
            let eval_ids: Vec<usize> = eval_ids.into_iter().take(a.eval_scenes).collect();
            let style = RasterStyle::default();
            let train_scenes = encode_scenes(&dataset, &train_ids, &codec, &style)?;
            let eval_scenes = encode_scenes(&dataset, &eval_ids, &codec, &style)?;
            let table = run_text_mode_experiment(
                &train_scenes,
                &eval_scenes,
                &config,
                &modes,
                crate::nn::derive_seed(config.seed, "text-mode-eval"),
            )?;
            if let Some(parent) = a.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&a.out, serde_json::to_string_pretty(&table)?)?;
            for row in &table.rows {
                println!(
                    "{:<20} latent_mse {:.6}",
                    row.mode.to_string(),
                    row.latent_mse
                );
            }
            if table.rows.iter().any(|r| r.mode == TextMode::None) && !table.none_strictly_worst {
                println!("warning: the none mode was not strictly worst on latent_mse");
            }
            Ok(())
        }
        Command::Controllability(a) => {
            let dataset = Dataset::open(&a.data)?;
            let codec = load_codec(&a.codec)?;
            let (mut model, train_config) = harness::load_world_model(&a.model)?;
            if a.untrained {
                // No-signal null: freshly initialized denoiser and head with
                // the same architectures.
                let seed = a.seed.unwrap_or(0);
                model.denoiser = crate::diffusion_core::DenoiserParams::init(
                    model.denoiser.arch.clone(),
                    crate::nn::derive_seed(seed, "untrained-denoiser"),
                );
                model.head = ControlHeadParams::init(
                    model.head.arch.clone(),
                    crate::nn::derive_seed(seed, "untrained-head"),
                );
            }
            let (_, eval_ids) = dataset.split()?;
            let ids: Vec<usize> = eval_ids.into_iter().take(a.n).collect();
            let encoded = encode_scenes(&dataset, &ids, &codec, &RasterStyle::default())?;
            let eval_latents: Vec<_> = encoded
                .iter()
                .map(|e| e.latents_for_mode(train_config.diffusion.text_mode))
                .collect();
            let sched = train_config.diffusion.schedule()?;
            let setup = DiscriminationSetup {
                denoiser: &model.denoiser,
                head: &model.head,
                sched: &sched,
                t_eval: (sched.num_steps / 2).max(1),
                t_c: train_config.diffusion.t_c,
                x0_mode: train_config.x0_mode,
                head_target: train_config.head_target,
                config_hash: harness::config_hash(&train_config),
            };
            let report = discrimination_test(&setup, &eval_latents, a.seed.unwrap_or(0))?;
            if let Some(parent) = a.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "matched {:.5} | irrelevant {:.5} | win_rate {:.3} over {} samples{}",
                report.matched_mean,
                report.irrelevant_mean,
                report.win_rate,
                report.n,
                if a.untrained { " (untrained null)" } else { "" }
            );
            Ok(())
        }
    }
}
