//! Training loops (codec, then world model + control head), evaluation
//! metrics, experiment runners and the VTEN tensor container.

pub mod dataset;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod train;
pub mod vten;

pub use dataset::{
    codec_training_videos, encode_scenes, generate_dataset, load_traj_for_frames,
    trajectory_videos, Dataset, DatasetConfig, DatasetManifest, EncodedScene,
};
pub use experiments::{
    load_world_model, run_ablation_experiment, run_evaluation, run_text_mode_experiment,
    sample_scene, save_world_model, AblationOutcome, EvalConfig, SampleOverrides, TextModeRow,
    TextModeTable,
};
pub use metrics::{
    codec_psnr, latent_mse, psnr_db, track_color_centroid, traj_follow_error, video_mse,
    TrajFollowReport, VehicleFollow, TRACKER_THRESHOLD,
};
pub use report::{config_hash, ControllabilitySummary, EvalReport};
pub use train::{train_world_model, LossWeights, TrainConfig, WorldModel};
