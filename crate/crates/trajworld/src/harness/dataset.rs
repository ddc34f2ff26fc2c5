//! Dataset generation, loading, and pre-encoding for training.

use crate::controllability::SampleLatents;
use crate::diffusion_core::encode_conditioning;
use crate::error::{Error, Result};
use crate::geometry::project_trajectory;
use crate::latent_codec::{encode, CodecParams, Provenance};
use crate::nn::derive_seed;
use crate::rasterizer::{
    compose_other_vehicles, rasterize_trajectory_video, RasterStyle, VideoShape, VideoTensor,
};
use crate::synthworld::{
    generate_scene, load_scene, save_scene, scan_scene_ids, split_dataset, SceneSample, WorldConfig,
};
use crate::vocab::TextMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// gen-data configuration (JSON on disk).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default = "default_count")]
    pub count: usize,
    /// (train, eval) ratios, summing to 1.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
}

fn default_count() -> usize {
    2000
}
fn default_split() -> (f64, f64) {
    (0.8, 0.2)
}

impl Default for DatasetConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// dataset.json written at the dataset root: everything needed to reproduce
/// and to recompute the split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub seed: u64,
}

pub fn scene_seed(base: u64, id: usize) -> u64 {
    derive_seed(base, &format!("scene-{id}"))
}

/// Generate `config.count` scenes under `root` (parallel by id, each scene
/// deterministic from its derived seed) and write the manifest.
pub fn generate_dataset(root: &Path, config: &DatasetConfig, seed: u64) -> Result<()> {
    config.world.validate()?;
    std::fs::create_dir_all(root)?;
    let results: Result<Vec<()>> = (0..config.count)
        .into_par_iter()
        .map(|id| {
            let scene = generate_scene(scene_seed(seed, id), &config.world)?;
            save_scene(root, id, &scene)
        })
        .collect();
    results?;
    let manifest = DatasetManifest {
        config: config.clone(),
        seed,
    };
    std::fs::write(
        root.join("dataset.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// A dataset rooted in a directory, with its manifest loaded.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub ids: Vec<usize>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(root.join("dataset.json"))?)?;
        let ids = scan_scene_ids(root)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            ids,
        })
    }

    /// Seed-deterministic (train, eval) id lists from the manifest split.
    pub fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        split_dataset(
            &self.ids,
            self.manifest.config.split,
            derive_seed(self.manifest.seed, "split"),
        )
    }

    pub fn load(&self, id: usize) -> Result<SceneSample> {
        load_scene(&self.root, id)
    }
}

/// Rasterize the ego trajectory video and the composed other-vehicle
/// trajectory video of a scene (both single-channel).
pub fn trajectory_videos(
    sample: &SceneSample,
    style: &RasterStyle,
) -> Result<(VideoTensor, VideoTensor)> {
    let shape = sample.video.shape();
    let size = (shape.w, shape.h);
    let project = |traj: &crate::geometry::TrajectoryBev| {
        let p3: Vec<[f64; 3]> = traj.points.iter().map(|p| [p[0], p[1], 0.0]).collect();
        project_trajectory(
            &p3,
            &sample.camera.intrinsics,
            &sample.camera.extrinsics,
            size,
        )
    };
    let ego = rasterize_trajectory_video(
        &project(&sample.ego_traj),
        shape.h,
        shape.w,
        style,
        shape.frame_rate,
    )?;
    let traj_shape = VideoShape {
        t: shape.t,
        h: shape.h,
        w: shape.w,
        c: 1,
        frame_rate: shape.frame_rate,
    };
    let others: Result<Vec<VideoTensor>> = sample
        .other_trajs
        .iter()
        .map(|o| {
            rasterize_trajectory_video(&project(o), shape.h, shape.w, style, shape.frame_rate)
        })
        .collect();
    let other = compose_other_vehicles(&others?, traj_shape)?;
    Ok((ego, other))
}

/// A scene's pre-encoded latents plus label metadata.
#[derive(Clone, Debug)]
pub struct EncodedScene {
    pub id: usize,
    pub z_vid: crate::latent_codec::LatentTensor,
    pub z_ego: crate::latent_codec::LatentTensor,
    pub z_other: crate::latent_codec::LatentTensor,
    pub maneuver: crate::vocab::Maneuver,
}

impl EncodedScene {
    pub fn latents_for_mode(&self, mode: TextMode) -> SampleLatents {
        SampleLatents {
            z_vid: self.z_vid.clone(),
            z_ego: self.z_ego.clone(),
            z_other: self.z_other.clone(),
            label: crate::vocab::label_id(mode, self.maneuver),
        }
    }
}

/// Load and encode scenes (scene video + both trajectory videos) through the
/// frozen codec, in parallel with deterministic output order.
pub fn encode_scenes(
    dataset: &Dataset,
    ids: &[usize],
    codec: &CodecParams,
    style: &RasterStyle,
) -> Result<Vec<EncodedScene>> {
    ids.par_iter()
        .map(|&id| {
            let sample = dataset.load(id)?;
            let (ego_video, other_video) = trajectory_videos(&sample, style)?;
            let z_vid = encode(&sample.video, codec)?;
            let z_ego = encode_conditioning(&ego_video, codec, Provenance::EgoTraj)?;
            let z_other = encode_conditioning(&other_video, codec, Provenance::OtherTraj)?;
            Ok(EncodedScene {
                id,
                z_vid,
                z_ego,
                z_other,
                maneuver: sample.ego_maneuver(),
            })
        })
        .collect()
}

/// Assemble the codec training corpus from scenes: the scene video plus both
/// trajectory videos (broadcast to codec channels) per scene.
pub fn codec_training_videos(
    dataset: &Dataset,
    ids: &[usize],
    in_channels: usize,
    style: &RasterStyle,
) -> Result<Vec<VideoTensor>> {
    let per_scene: Result<Vec<Vec<VideoTensor>>> = ids
        .par_iter()
        .map(|&id| {
            let sample = dataset.load(id)?;
            let (ego, other) = trajectory_videos(&sample, style)?;
            Ok(vec![
                sample.video,
                ego.broadcast_channels(in_channels)?,
                other.broadcast_channels(in_channels)?,
            ])
        })
        .collect();
    Ok(per_scene?.into_iter().flatten().collect())
}

/// Read one vehicle's trajectory from a .traj file and resample it onto the
/// clip's frame grid (linear keyframe interpolation; exact when times match).
pub fn load_traj_for_frames(
    path: &Path,
    frames: usize,
    frame_rate: f64,
) -> Result<crate::geometry::TrajectoryBev> {
    let records = crate::geometry::parse_traj_file(&std::fs::read_to_string(path)?)?;
    let grouped = crate::geometry::group_traj_records(&records)?;
    let (times, traj) = grouped
        .into_iter()
        .next()
        .ok_or_else(|| Error::format(format!("{}: no trajectory records", path.display())))?;
    let targets: Vec<f64> = (0..frames).map(|i| i as f64 / frame_rate).collect();
    if times.len() == frames && times.iter().zip(&targets).all(|(a, b)| a == b) {
        return Ok(traj);
    }
    crate::geometry::interpolate_keyframes(&traj, &times, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_codec::{micro_arch, CodecParams};
    use crate::vocab::Maneuver;

    fn tiny_dataset(dir: &Path) -> Dataset {
        let config = DatasetConfig {
            world: WorldConfig {
                t: 5,
                h: 32,
                w: 32,
                ..WorldConfig::default()
            },
            count: 6,
            split: (0.5, 0.5),
        };
        generate_dataset(dir, &config, 3).unwrap();
        Dataset::open(dir).unwrap()
    }

    #[test]
    fn generate_open_split_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        assert_eq!(ds.ids, vec![0, 1, 2, 3, 4, 5]);
        let (train, eval) = ds.split().unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(eval.len(), 3);
        let (t2, e2) = ds.split().unwrap();
        assert_eq!(train, t2);
        assert_eq!(eval, e2);
        let sample = ds.load(train[0]).unwrap();
        assert_eq!(sample.video.frames(), 5);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            world: WorldConfig {
                t: 4,
                h: 32,
                w: 32,
                ..WorldConfig::default()
            },
            count: 3,
            split: (0.8, 0.2),
        };
        generate_dataset(dir_a.path(), &config, 11).unwrap();
        generate_dataset(dir_b.path(), &config, 11).unwrap();
        for id in 0..3 {
            let a = std::fs::read(dir_a.path().join(format!("scenes/{id}/video.vten"))).unwrap();
            let b = std::fs::read(dir_b.path().join(format!("scenes/{id}/video.vten"))).unwrap();
            assert_eq!(a, b, "scene {id} video differs");
        }
    }

    #[test]
    fn trajectory_videos_have_single_channel_and_full_length() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let sample = ds.load(0).unwrap();
        let (ego, other) = trajectory_videos(&sample, &RasterStyle::default()).unwrap();
        assert_eq!(ego.channels(), 1);
        assert_eq!(other.channels(), 1);
        assert_eq!(ego.frames(), 5);
        assert_eq!(other.frames(), 5);
        assert!(ego.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn encode_scenes_produces_aligned_latents() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            world: WorldConfig {
                t: 4,
                h: 16,
                w: 16,
                ..WorldConfig::default()
            },
            count: 2,
            split: (0.5, 0.5),
        };
        generate_dataset(dir.path(), &config, 5).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let codec = CodecParams::init(micro_arch(), 1).unwrap();
        let encoded = encode_scenes(&ds, &ds.ids, &codec, &RasterStyle::default()).unwrap();
        assert_eq!(encoded.len(), 2);
        for e in &encoded {
            assert_eq!(e.z_vid.data.shape(), e.z_ego.data.shape());
            assert_eq!(e.z_vid.data.shape(), e.z_other.data.shape());
            assert_eq!(e.z_vid.data.shape(), &[4, 4, 4, 4]);
        }
        let lat = encoded[0].latents_for_mode(TextMode::None);
        assert_eq!(lat.label, crate::vocab::LABEL_NONE);
    }

    #[test]
    fn traj_file_resampling_exact_on_matching_grid() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let path = dir.path().join("scenes/0/ego.traj");
        let sample = ds.load(0).unwrap();
        let back = load_traj_for_frames(&path, 5, 10.0).unwrap();
        assert_eq!(back, sample.ego_traj);
        // Coarser keys interpolate onto the frame grid.
        std::fs::write(
            dir.path().join("novel.traj"),
            "0 0.0 0.0 6.0\n0 0.4 2.0 6.0\n",
        )
        .unwrap();
        let novel = load_traj_for_frames(&dir.path().join("novel.traj"), 5, 10.0).unwrap();
        assert_eq!(novel.len(), 5);
        assert_eq!(novel.points[0], [0.0, 6.0]);
        assert_eq!(novel.points[4], [2.0, 6.0]);
        assert_eq!(novel.points[2], [1.0, 6.0]);
    }

    #[test]
    fn maneuvers_recoverable_from_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        for &id in &ds.ids {
            let sample = ds.load(id).unwrap();
            let m = sample.ego_maneuver();
            assert!(crate::vocab::MANEUVERS.contains(&m));
            assert_ne!(sample.label_for_mode(TextMode::ActionDescription), sample.label);
            assert_eq!(
                maneuver_of(sample.label_for_mode(TextMode::ActionDescription)),
                Some(m)
            );
        }
    }

    fn maneuver_of(label: usize) -> Option<Maneuver> {
        crate::vocab::maneuver_from_label(label)
    }
}
