//! Evaluation report schema and config hashing.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hex SHA-256 of a value's canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControllabilitySummary {
    pub matched_mean: f64,
    pub irrelevant_mean: f64,
    pub win_rate: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: f64,
    /// Mean one-step masked noise-prediction error on eval.
    pub latent_mse: f64,
    /// Mean control-similarity loss on eval (same pass as latent_mse).
    pub control_similarity: f64,
    pub traj_follow_error_px: f64,
    pub traj_follow_ego_px: Option<f64>,
    pub traj_follow_other_px: Option<f64>,
    pub controllability: ControllabilitySummary,
    pub n_psnr: usize,
    pub n_latent: usize,
    pub n_traj_follow: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let finite = self.psnr_db.is_finite()
            && self.latent_mse.is_finite()
            && self.traj_follow_error_px.is_finite()
            && self.controllability.matched_mean.is_finite()
            && self.controllability.irrelevant_mean.is_finite();
        if !finite {
            return Err(Error::invalid("eval report has non-finite metrics"));
        }
        if !(0.0..=1.0).contains(&self.controllability.win_rate) {
            return Err(Error::invalid("win_rate outside [0, 1]"));
        }
        Ok(())
    }
}
