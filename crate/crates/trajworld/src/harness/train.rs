//! World-model training: the denoiser and the control head optimize
//! l_diff + w * l_traj jointly on pre-encoded latents, with the codec frozen.

use super::dataset::EncodedScene;
use crate::controllability::{
    concat_channel_latents, head_forward, ControlHeadArch, ControlHeadParams, HeadTarget, X0Mode,
};
use crate::diffusion_core::{
    fuse_forward, q_sample, trunk_forward, ConditioningMask, DenoiserArch, DenoiserParams,
    DiffusionConfig, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::nn::{self, AdamW, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::label_id;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default = "tenth")]
    pub traj: f64,
}

fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            diffusion: 1.0,
            traj: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    /// Denoiser sizes; latent channel count and num_steps are filled from
    /// the codec and schedule at training time.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_emb")]
    pub emb_dim: usize,
    #[serde(default = "default_qk")]
    pub attn_qk: usize,
    #[serde(default = "default_v")]
    pub attn_v: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_head_target")]
    pub head_target: HeadTarget,
    #[serde(default = "default_x0")]
    pub x0_mode: X0Mode,
    /// Cap on training scenes (None = all).
    #[serde(default)]
    pub max_scenes: Option<usize>,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-5
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    2
}
fn default_hidden() -> usize {
    32
}
fn default_emb() -> usize {
    16
}
fn default_qk() -> usize {
    8
}
fn default_v() -> usize {
    16
}
fn default_head_hidden() -> usize {
    32
}
fn default_head_target() -> HeadTarget {
    HeadTarget::Ego
}
fn default_x0() -> X0Mode {
    X0Mode::Literal
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("rates must be nonnegative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if self.loss_weights.diffusion < 0.0 || self.loss_weights.traj < 0.0 {
            return Err(Error::config("loss weights must be >= 0"));
        }
        Ok(())
    }

    pub fn denoiser_arch(&self, latent_channels: usize) -> DenoiserArch {
        DenoiserArch {
            latent_channels,
            hidden: self.hidden,
            emb_dim: self.emb_dim,
            attn_qk: self.attn_qk,
            attn_v: self.attn_v,
            vocab_size: crate::vocab::VOCAB_SIZE,
            num_steps: self.diffusion.num_steps,
            kt: 3,
            ks: 3,
        }
    }
}

/// Trained world model: denoiser plus control head and loss history.
pub struct WorldModel {
    pub denoiser: DenoiserParams,
    pub head: ControlHeadParams,
    /// Per-epoch (mean diffusion loss, mean trajectory loss).
    pub epoch_losses: Vec<(f64, f64)>,
}

struct StepLosses {
    diffusion: f64,
    traj: f64,
}

/// One training step's tape: returns losses and gradients for all params
/// (denoiser tensors then head tensors).
#[allow(clippy::too_many_arguments)]
fn joint_pass(
    scene: &EncodedScene,
    label: usize,
    t: usize,
    eps: &Tensor,
    tensors: &[Tensor],
    arch: &DenoiserArch,
    head_arch: &ControlHeadArch,
    sched: &NoiseSchedule,
    config: &TrainConfig,
    want_grads: bool,
) -> Result<(StepLosses, Option<Vec<Tensor>>)> {
    let mask = ConditioningMask::new(config.diffusion.t_c, scene.z_vid.frames())?;
    let z_noise = q_sample(&scene.z_vid, t, eps, sched)?;
    let z = crate::diffusion_core::apply_context_mask(&z_noise, &scene.z_vid, &mask)?;

    let n_den = arch.param_specs().len();
    let mut tape = Tape::new();
    let zv = tape.constant(z.data.clone());
    let latent_shape = scene.z_vid.data.shape().to_vec();
    let ego = if config.diffusion.use_ego_traj {
        tape.constant(scene.z_ego.data.clone())
    } else {
        tape.constant(Tensor::zeros(&latent_shape))
    };
    let other = if config.diffusion.use_other_traj {
        tape.constant(scene.z_other.data.clone())
    } else {
        tape.constant(Tensor::zeros(&latent_shape))
    };
    let pv: Vec<Var> = tensors
        .iter()
        .map(|p| tape.leaf(p.clone(), want_grads))
        .collect();
    let (den_pv, head_pv) = pv.split_at(n_den);

    let fused = fuse_forward(&mut tape, zv, ego, other, den_pv, arch);
    let n_p = trunk_forward(&mut tape, fused, label, t, den_pv, arch);

    let (weights, denom) = mask.non_context_weights(&latent_shape);
    let l_diff = tape.weighted_sq_err(n_p, eps.clone(), Some(weights), denom);

    // Predicted video latents feed the control head; gradients flow into the
    // trunk through this branch as well.
    let zn = tape.constant(z_noise.data.clone());
    let z_p = match config.x0_mode {
        X0Mode::Literal => tape.sub(zn, n_p),
        X0Mode::DdpmX0 => {
            let ab = sched.alpha_bar(t);
            let scaled = tape.scale(n_p, (1.0 - ab).sqrt());
            let diff = tape.sub(zn, scaled);
            tape.scale(diff, 1.0 / ab.sqrt())
        }
    };
    let z_traj_p = head_forward(&mut tape, z_p, head_pv, head_arch);
    let target = match config.head_target {
        HeadTarget::Ego => scene.z_ego.clone(),
        HeadTarget::EgoOther => concat_channel_latents(&scene.z_ego, &scene.z_other)?,
    };
    let n_target = target.data.numel() as f64;
    let l_traj = tape.weighted_sq_err(z_traj_p, target.data, None, n_target);

    let weighted_diff = tape.scale(l_diff, config.loss_weights.diffusion);
    let weighted_traj = tape.scale(l_traj, config.loss_weights.traj);
    let total = tape.add(weighted_diff, weighted_traj);

    let losses = StepLosses {
        diffusion: tape.value(l_diff).item(),
        traj: tape.value(l_traj).item(),
    };
    if !want_grads {
        return Ok((losses, None));
    }
    let grads = tape.backward(total);
    let out = pv
        .iter()
        .zip(tensors)
        .map(|(v, p)| nn::grad_or_zeros(&grads, *v, p.shape()))
        .collect();
    Ok((losses, Some(out)))
}

/// Train the denoiser and control head jointly on pre-encoded scenes.
pub fn train_world_model(
    data: &[EncodedScene],
    config: &TrainConfig,
) -> Result<WorldModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("world-model training set is empty"));
    }
    let data: &[EncodedScene] = match config.max_scenes {
        Some(cap) if cap < data.len() => &data[..cap],
        _ => data,
    };
    let sched = config.diffusion.schedule()?;
    let latent_channels = data[0].z_vid.channels();
    let arch = config.denoiser_arch(latent_channels);
    let head_arch =
        ControlHeadArch::for_target(latent_channels, config.head_target, config.head_hidden);
    let denoiser = DenoiserParams::init(arch.clone(), config.seed);
    let head = ControlHeadParams::init(head_arch.clone(), nn::derive_seed(config.seed, "head"));

    let mut tensors: Vec<Tensor> = denoiser
        .tensors
        .iter()
        .chain(head.tensors.iter())
        .cloned()
        .collect();
    let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay, &shapes);

    let mut order_rng = nn::seeded_rng(config.seed, "wm-order");
    let mut t_rng = nn::seeded_rng(config.seed, "wm-t");
    let mut eps_rng = nn::seeded_rng(config.seed, "wm-eps");
    let latent_numel = data[0].z_vid.data.numel();
    let latent_shape = data[0].z_vid.data.shape().to_vec();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut ep_diff, mut ep_traj) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            for &idx in batch {
                let scene = &data[idx];
                let label = label_id(config.diffusion.text_mode, scene.maneuver);
                let t = t_rng.random_range(1..=sched.num_steps);
                let eps = Tensor::from_vec(
                    &latent_shape,
                    (0..latent_numel)
                        .map(|_| eps_rng.sample(rand_distr::StandardNormal))
                        .collect(),
                );
                let (losses, grads) = joint_pass(
                    scene, label, t, &eps, &tensors, &arch, &head_arch, &sched, config, true,
                )?;
                if !losses.diffusion.is_finite() || !losses.traj.is_finite() {
                    return Err(Error::Training {
                        step,
                        reason: format!(
                            "loss became non-finite (diffusion {}, traj {})",
                            losses.diffusion, losses.traj
                        ),
                    });
                }
                ep_diff += losses.diffusion;
                ep_traj += losses.traj;
                for (a, g) in acc.iter_mut().zip(grads.unwrap()) {
                    for (o, &x) in a.data_mut().iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
                step += 1;
            }
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut() {
                for v in a.data_mut() {
                    *v *= inv;
                }
            }
            opt.step(&mut tensors, &acc);
        }
        epoch_losses.push((ep_diff / data.len() as f64, ep_traj / data.len() as f64));
    }

    let n_den = arch.param_specs().len();
    let head_tensors = tensors.split_off(n_den);
    Ok(WorldModel {
        denoiser: DenoiserParams {
            arch,
            tensors,
        },
        head: ControlHeadParams {
            arch: head_arch,
            tensors: head_tensors,
        },
        epoch_losses,
    })
}

/// Evaluation-time single-step losses (no gradients) for latent-MSE metrics.
pub fn eval_step_losses(
    scene: &EncodedScene,
    label: usize,
    t: usize,
    eps: &Tensor,
    model: &WorldModel,
    sched: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let tensors: Vec<Tensor> = model
        .denoiser
        .tensors
        .iter()
        .chain(model.head.tensors.iter())
        .cloned()
        .collect();
    let (losses, _) = joint_pass(
        scene,
        label,
        t,
        eps,
        &tensors,
        &model.denoiser.arch,
        &model.head.arch,
        sched,
        config,
        false,
    )?;
    Ok((losses.diffusion, losses.traj))
}
