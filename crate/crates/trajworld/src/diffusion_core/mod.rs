//! Masked latent diffusion: DDPM schedule and forward process, context-mask
//! replacement, trajectory/text fusion, the conditional denoiser, the masked
//! diffusion loss and the ancestral sampler.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{
    fuse_conditions, load_denoiser, predict_noise, save_denoiser, DenoiserArch, DenoiserParams,
};
pub use sampler::{
    encode_conditioning, reverse_step_mean, sample, SamplerTrace, TrajectoryCondition,
};
pub use schedule::{
    apply_context_mask, diffusion_loss, make_schedule, q_sample, ConditioningMask, NoiseSchedule,
};

pub(crate) use denoiser::{fuse_forward, trunk_forward};
#[cfg(test)]
pub(crate) use denoiser::pidx;

use serde::{Deserialize, Serialize};

/// Schedule and run configuration (JSON on disk; CLI flags override fields).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    #[serde(default = "default_num_steps")]
    pub num_steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    /// Count of clean context frames (the paper default keeps one).
    #[serde(default = "default_t_c")]
    pub t_c: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_text_mode")]
    pub text_mode: crate::vocab::TextMode,
    #[serde(default = "default_true")]
    pub use_ego_traj: bool,
    #[serde(default = "default_true")]
    pub use_other_traj: bool,
}

fn default_num_steps() -> usize {
    200
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.1
}
fn default_t_c() -> usize {
    1
}
fn default_text_mode() -> crate::vocab::TextMode {
    crate::vocab::TextMode::SceneDescription
}
fn default_true() -> bool {
    true
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> crate::error::Result<NoiseSchedule> {
        make_schedule(self.num_steps, self.beta_start, self.beta_end)
    }
}
