//! Trajectory-controllability head and metric.
//!
//! Predicted video latents are recovered from the noise prediction, decoded
//! to predicted trajectory latents by a small per-position two-layer
//! perceptron, and scored against the conditional trajectory latents with
//! mean squared difference. The same score doubles as the head's training
//! loss and as the evaluation metric; a matched-vs-irrelevant discrimination
//! test aggregates it over an eval split.

use crate::diffusion_core::{
    apply_context_mask, fuse_conditions, predict_noise, q_sample, ConditioningMask,
    DenoiserParams, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::latent_codec::{LatentTensor, Provenance};
use crate::nn::{self, init_params, unflatten_params, Init, ParamSpec, Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which trajectory latents the head reconstructs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadTarget {
    Ego,
    EgoOther,
}

/// How predicted video latents are recovered from the noise prediction.
/// `Literal` follows the metric's defining formula (z_noise - n_p);
/// `DdpmX0` applies the standard DDPM x0 rescaling for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Mode {
    Literal,
    DdpmX0,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlHeadArch {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
}

impl ControlHeadArch {
    pub fn for_target(latent_channels: usize, target: HeadTarget, hidden: usize) -> Self {
        let out = match target {
            HeadTarget::Ego => latent_channels,
            HeadTarget::EgoOther => 2 * latent_channels,
        };
        ControlHeadArch {
            in_channels: latent_channels,
            hidden,
            out_channels: out,
        }
    }

    /// w1, b1, w2, b2. Hidden activation is ReLU (an exact identity map is
    /// constructible, which smooth activations cannot do).
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                "head.w1",
                &[self.in_channels, self.hidden],
                Init::KaimingUniform {
                    fan_in: self.in_channels,
                },
            ),
            ParamSpec::new("head.b1", &[self.hidden], Init::Zeros),
            ParamSpec::new(
                "head.w2",
                &[self.hidden, self.out_channels],
                Init::KaimingUniform {
                    fan_in: self.hidden,
                },
            ),
            ParamSpec::new("head.b2", &[self.out_channels], Init::Zeros),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ControlHeadParams {
    pub arch: ControlHeadArch,
    pub tensors: Vec<Tensor>,
}

impl ControlHeadParams {
    pub fn init(arch: ControlHeadArch, seed: u64) -> Self {
        let mut rng = nn::seeded_rng(seed, "control-head-init");
        let tensors = init_params(&arch.param_specs(), &mut rng);
        ControlHeadParams { arch, tensors }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Eq-style recovery of predicted video latents: z_noise - n_p, elementwise
/// and exact.
pub fn predicted_video_latents(
    z_vid_noise: &LatentTensor,
    n_p: &LatentTensor,
) -> Result<LatentTensor> {
    z_vid_noise
        .data
        .check_same_shape(&n_p.data, "predicted_video_latents")?;
    let data = z_vid_noise
        .data
        .data()
        .iter()
        .zip(n_p.data.data())
        .map(|(&z, &n)| z - n)
        .collect();
    Ok(LatentTensor {
        data: Tensor::from_vec(z_vid_noise.data.shape(), data),
        provenance: Provenance::Predicted,
        frame_rate: z_vid_noise.frame_rate,
    })
}

/// Secondary mode: standard DDPM x0 estimate
/// (z_noise - sqrt(1-abar_t) n_p) / sqrt(abar_t).
pub fn predicted_video_latents_x0(
    z_vid_noise: &LatentTensor,
    n_p: &LatentTensor,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<LatentTensor> {
    z_vid_noise
        .data
        .check_same_shape(&n_p.data, "predicted_video_latents_x0")?;
    let ab = sched.alpha_bar(t);
    let (c_eps, c_inv) = ((1.0 - ab).sqrt(), 1.0 / ab.sqrt());
    let data = z_vid_noise
        .data
        .data()
        .iter()
        .zip(n_p.data.data())
        .map(|(&z, &n)| c_inv * (z - c_eps * n))
        .collect();
    Ok(LatentTensor {
        data: Tensor::from_vec(z_vid_noise.data.shape(), data),
        provenance: Provenance::Predicted,
        frame_rate: z_vid_noise.frame_rate,
    })
}

/// Tape form of the head (used by joint training): per latent position,
/// relu(x W1 + b1) W2 + b2.
pub(crate) fn head_forward(tape: &mut Tape, z: Var, pv: &[Var], arch: &ControlHeadArch) -> Var {
    let shape = tape.value(z).shape().to_vec();
    let n: usize = shape[..3].iter().product();
    let flat = tape.reshape(z, &[n, arch.in_channels]);
    let h = tape.matmul(flat, pv[0], false, false);
    let h = tape.add_bias(h, pv[1]);
    let h = tape.relu(h);
    let out = tape.matmul(h, pv[2], false, false);
    let out = tape.add_bias(out, pv[3]);
    let mut out_shape = shape[..3].to_vec();
    out_shape.push(arch.out_channels);
    tape.reshape(out, &out_shape)
}

/// Decode predicted video latents to predicted trajectory latents.
pub fn decode_traj_latents(
    z_vid_p: &LatentTensor,
    head: &ControlHeadParams,
) -> Result<LatentTensor> {
    if z_vid_p.channels() != head.arch.in_channels {
        return Err(Error::invalid(format!(
            "head expects {} input channels, got {}",
            head.arch.in_channels,
            z_vid_p.channels()
        )));
    }
    let mut tape = Tape::new();
    let z = tape.constant(z_vid_p.data.clone());
    let pv: Vec<Var> = head
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let out = head_forward(&mut tape, z, &pv, &head.arch);
    Ok(LatentTensor {
        data: tape.value(out).clone(),
        provenance: Provenance::Predicted,
        frame_rate: z_vid_p.frame_rate,
    })
}

/// Control latent similarity: mean squared difference. Doubles as the head's
/// training loss and the controllability metric.
pub fn traj_similarity(z_traj_p: &LatentTensor, z_traj: &LatentTensor) -> Result<f64> {
    z_traj_p
        .data
        .check_same_shape(&z_traj.data, "traj_similarity")?;
    let n = z_traj_p.data.numel() as f64;
    let mut acc = 0.0;
    for (&a, &b) in z_traj_p.data.data().iter().zip(z_traj.data.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Channel-concatenate ego and other trajectory latents (EgoOther target).
pub fn concat_channel_latents(a: &LatentTensor, b: &LatentTensor) -> Result<LatentTensor> {
    if a.data.shape()[..3] != b.data.shape()[..3] {
        return Err(Error::invalid("concat: latents must share T' x H' x W'"));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let lead: usize = a.data.shape()[..3].iter().product();
    let mut data = Vec::with_capacity(lead * (ca + cb));
    for i in 0..lead {
        data.extend_from_slice(&a.data.data()[i * ca..(i + 1) * ca]);
        data.extend_from_slice(&b.data.data()[i * cb..(i + 1) * cb]);
    }
    let mut shape = a.data.shape()[..3].to_vec();
    shape.push(ca + cb);
    Ok(LatentTensor {
        data: Tensor::from_vec(&shape, data),
        provenance: a.provenance,
        frame_rate: a.frame_rate,
    })
}

/// Pre-encoded latents of one evaluation sample.
#[derive(Clone, Debug)]
pub struct SampleLatents {
    pub z_vid: LatentTensor,
    pub z_ego: LatentTensor,
    pub z_other: LatentTensor,
    pub label: usize,
}

impl SampleLatents {
    pub fn head_target(&self, target: HeadTarget) -> Result<LatentTensor> {
        match target {
            HeadTarget::Ego => Ok(self.z_ego.clone()),
            HeadTarget::EgoOther => concat_channel_latents(&self.z_ego, &self.z_other),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerSampleScore {
    pub index: usize,
    pub irrelevant_index: usize,
    pub matched: f64,
    pub irrelevant: f64,
    pub win: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub matched_mean: f64,
    pub irrelevant_mean: f64,
    pub win_rate: f64,
    pub n: usize,
    pub t_eval: usize,
    pub seed: u64,
    pub config_hash: String,
    pub per_sample: Vec<PerSampleScore>,
}

/// Everything the discrimination test needs besides the eval samples.
pub struct DiscriminationSetup<'a> {
    pub denoiser: &'a DenoiserParams,
    pub head: &'a ControlHeadParams,
    pub sched: &'a NoiseSchedule,
    /// Single denoise step at this timestep (default: num_steps / 2).
    pub t_eval: usize,
    pub t_c: usize,
    pub x0_mode: X0Mode,
    pub head_target: HeadTarget,
    pub config_hash: String,
}

/// For each sample, score the decoded prediction against its own trajectory
/// latents and against an irrelevant sample's (seeded derangement); a win is
/// matched < irrelevant.
pub fn discrimination_test(
    setup: &DiscriminationSetup,
    eval: &[SampleLatents],
    seed: u64,
) -> Result<DiscriminationReport> {
    if eval.is_empty() {
        return Err(Error::invalid(
            "discrimination test needs a nonempty eval set",
        ));
    }
    let n = eval.len();
    let mut rng = nn::seeded_rng(seed, "discrimination-shift");
    use rand::Rng;
    let shift = if n > 1 { rng.random_range(1..n) } else { 0 };
    let mut per_sample = Vec::with_capacity(n);
    let (mut matched_sum, mut irrelevant_sum, mut wins) = (0.0, 0.0, 0usize);
    for (i, item) in eval.iter().enumerate() {
        let j = (i + shift) % n;
        let t_frames = item.z_vid.frames();
        let mask = ConditioningMask::new(setup.t_c, t_frames)?;
        let mut eps_rng = nn::seeded_rng(seed, &format!("disc-eps-{i}"));
        let eps = Tensor::from_vec(
            item.z_vid.data.shape(),
            (0..item.z_vid.data.numel())
                .map(|_| eps_rng.sample(rand_distr::StandardNormal))
                .collect(),
        );
        let z_noise = q_sample(&item.z_vid, setup.t_eval, &eps, setup.sched)?;
        let z = apply_context_mask(&z_noise, &item.z_vid, &mask)?;
        let fused = fuse_conditions(&z, &item.z_ego, &item.z_other, setup.denoiser)?;
        let n_p = predict_noise(&fused, item.label, setup.t_eval, setup.denoiser)?;
        let z_p = match setup.x0_mode {
            X0Mode::Literal => predicted_video_latents(&z_noise, &n_p)?,
            X0Mode::DdpmX0 => {
                predicted_video_latents_x0(&z_noise, &n_p, setup.sched, setup.t_eval)?
            }
        };
        let z_traj_p = decode_traj_latents(&z_p, setup.head)?;
        let matched = traj_similarity(&z_traj_p, &item.head_target(setup.head_target)?)?;
        let irrelevant = traj_similarity(&z_traj_p, &eval[j].head_target(setup.head_target)?)?;
        let win = matched < irrelevant;
        matched_sum += matched;
        irrelevant_sum += irrelevant;
        wins += win as usize;
        per_sample.push(PerSampleScore {
            index: i,
            irrelevant_index: j,
            matched,
            irrelevant,
            win,
        });
    }
    Ok(DiscriminationReport {
        matched_mean: matched_sum / n as f64,
        irrelevant_mean: irrelevant_sum / n as f64,
        win_rate: wins as f64 / n as f64,
        n,
        t_eval: setup.t_eval,
        seed,
        config_hash: setup.config_hash.clone(),
        per_sample,
    })
}

// Serialization: VTEN weights + JSON descriptor, like the other models.

#[derive(Serialize, Deserialize)]
struct HeadDescriptor {
    arch: ControlHeadArch,
    param_count: usize,
}

pub fn save_head(dir: &Path, params: &ControlHeadParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let flat = nn::flatten_params(&params.tensors);
    crate::harness::vten::write_vten_f64_file(&dir.join("head.vten"), &[flat.len()], &flat)?;
    let desc = HeadDescriptor {
        arch: params.arch.clone(),
        param_count: flat.len(),
    };
    std::fs::write(
        dir.join("head.arch.json"),
        serde_json::to_string_pretty(&desc)?,
    )?;
    Ok(())
}

pub fn load_head(dir: &Path) -> Result<ControlHeadParams> {
    let desc: HeadDescriptor =
        serde_json::from_str(&std::fs::read_to_string(dir.join("head.arch.json"))?)?;
    let (dims, flat) = crate::harness::vten::read_vten_f64_file(&dir.join("head.vten"))?;
    if dims.iter().product::<usize>() != desc.param_count {
        return Err(Error::format("head parameter file length mismatch"));
    }
    let tensors = unflatten_params(&desc.arch.param_specs(), &flat)?;
    Ok(ControlHeadParams {
        arch: desc.arch,
        tensors,
    })
}
