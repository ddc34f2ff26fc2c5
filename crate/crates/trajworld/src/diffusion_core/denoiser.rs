//! Conditional denoiser: channel fusion of video and trajectory latents,
//! then a small trunk (3D conv blocks around one full space-time attention
//! layer) conditioned on learned timestep and text-label embeddings.

use crate::error::{Error, Result};
use crate::latent_codec::{LatentTensor, Provenance};
use crate::nn::{
    self, init_params, param_count, positional_encoding, unflatten_params, Conv3dConf, Init,
    ParamSpec, Tape, TemporalPad, Var,
};
use crate::tensor::Tensor;
use crate::vocab::VOCAB_SIZE;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub latent_channels: usize,
    pub hidden: usize,
    pub emb_dim: usize,
    pub attn_qk: usize,
    pub attn_v: usize,
    pub vocab_size: usize,
    pub num_steps: usize,
    pub kt: usize,
    pub ks: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        DenoiserArch {
            latent_channels: 8,
            hidden: 32,
            emb_dim: 16,
            attn_qk: 8,
            attn_v: 16,
            vocab_size: VOCAB_SIZE,
            num_steps: 200,
            kt: 3,
            ks: 3,
        }
    }
}

impl DenoiserArch {
    pub fn fusion_conf(&self) -> Conv3dConf {
        Conv3dConf {
            in_ch: 3 * self.latent_channels,
            out_ch: self.latent_channels,
            kt: self.kt,
            ks: self.ks,
            stride: 1,
            tpad: TemporalPad::Same,
        }
    }

    fn conv_conf(&self, in_ch: usize, out_ch: usize) -> Conv3dConf {
        Conv3dConf {
            in_ch,
            out_ch,
            kt: self.kt,
            ks: self.ks,
            stride: 1,
            tpad: TemporalPad::Same,
        }
    }

    /// Parameter order is fixed; indices below must match `param_specs`.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = self.latent_channels;
        let h = self.hidden;
        let fusion = self.fusion_conf();
        let conv1 = self.conv_conf(c, h);
        let conv2 = self.conv_conf(h, h);
        let conv3 = self.conv_conf(h, h);
        vec![
            ParamSpec::new("fusion.weight", &fusion.weight_shape(), Init::KaimingUniform { fan_in: fusion.k() }),
            ParamSpec::new("fusion.bias", &[c], Init::Zeros),
            ParamSpec::new("conv1.weight", &conv1.weight_shape(), Init::KaimingUniform { fan_in: conv1.k() }),
            ParamSpec::new("conv1.bias", &[h], Init::Zeros),
            ParamSpec::new("time.table", &[self.num_steps, self.emb_dim], Init::Uniform { scale: 0.1 }),
            ParamSpec::new("time.proj", &[self.emb_dim, h], Init::KaimingUniform { fan_in: self.emb_dim }),
            ParamSpec::new("text.table", &[self.vocab_size, self.emb_dim], Init::Uniform { scale: 0.1 }),
            ParamSpec::new("text.proj", &[self.emb_dim, h], Init::KaimingUniform { fan_in: self.emb_dim }),
            ParamSpec::new("conv2.weight", &conv2.weight_shape(), Init::KaimingUniform { fan_in: conv2.k() }),
            ParamSpec::new("conv2.bias", &[h], Init::Zeros),
            ParamSpec::new("attn.wq", &[h, self.attn_qk], Init::KaimingUniform { fan_in: h }),
            ParamSpec::new("attn.wk", &[h, self.attn_qk], Init::KaimingUniform { fan_in: h }),
            ParamSpec::new("attn.wv", &[h, self.attn_v], Init::KaimingUniform { fan_in: h }),
            ParamSpec::new("attn.wo", &[self.attn_v, h], Init::KaimingUniform { fan_in: self.attn_v }),
            ParamSpec::new("conv3.weight", &conv3.weight_shape(), Init::KaimingUniform { fan_in: conv3.k() }),
            ParamSpec::new("conv3.bias", &[h], Init::Zeros),
            // Zero-initialized head: the untrained model predicts zero noise.
            ParamSpec::new("head.weight", &[h, c], Init::Zeros),
            ParamSpec::new("head.bias", &[c], Init::Zeros),
        ]
    }
}

pub(crate) mod pidx {
    pub const FUSION_W: usize = 0;
    pub const FUSION_B: usize = 1;
    pub const CONV1_W: usize = 2;
    pub const CONV1_B: usize = 3;
    pub const TIME_TABLE: usize = 4;
    pub const TIME_PROJ: usize = 5;
    pub const TEXT_TABLE: usize = 6;
    pub const TEXT_PROJ: usize = 7;
    pub const CONV2_W: usize = 8;
    pub const CONV2_B: usize = 9;
    pub const ATTN_WQ: usize = 10;
    pub const ATTN_WK: usize = 11;
    pub const ATTN_WV: usize = 12;
    pub const ATTN_WO: usize = 13;
    pub const CONV3_W: usize = 14;
    pub const CONV3_B: usize = 15;
    pub const HEAD_W: usize = 16;
    pub const HEAD_B: usize = 17;
}

#[derive(Clone, Debug)]
pub struct DenoiserParams {
    pub arch: DenoiserArch,
    pub tensors: Vec<Tensor>,
}

impl DenoiserParams {
    pub fn init(arch: DenoiserArch, seed: u64) -> Self {
        let mut rng = nn::seeded_rng(seed, "denoiser-init");
        let tensors = init_params(&arch.param_specs(), &mut rng);
        DenoiserParams { arch, tensors }
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.arch.param_specs())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }
}

fn check_latent_channels(z: &LatentTensor, c: usize, what: &str) -> Result<()> {
    if z.channels() != c {
        return Err(Error::invalid(format!(
            "{what}: expected {c} channels, got {}",
            z.channels()
        )));
    }
    Ok(())
}

/// Channel-concatenate video latents with ego/other trajectory latents and
/// fuse back to latent width with a 3D convolution (tape form).
pub(crate) fn fuse_forward(
    tape: &mut Tape,
    z: Var,
    z_ego: Var,
    z_other: Var,
    pv: &[Var],
    arch: &DenoiserArch,
) -> Var {
    let cat = tape.concat_last(&[z, z_ego, z_other]);
    let f = tape.conv3d(cat, pv[pidx::FUSION_W], arch.fusion_conf());
    tape.add_bias(f, pv[pidx::FUSION_B])
}

/// Denoiser trunk on fused latents (tape form). `t` is 1-based.
pub(crate) fn trunk_forward(
    tape: &mut Tape,
    fused: Var,
    text_label: usize,
    t: usize,
    pv: &[Var],
    arch: &DenoiserArch,
) -> Var {
    let shape = tape.value(fused).shape().to_vec();
    let (tt, hh, ww) = (shape[0], shape[1], shape[2]);
    let n = tt * hh * ww;
    let h = arch.hidden;

    let x = tape.conv3d(fused, pv[pidx::CONV1_W], arch.conv_conf_pub(arch.latent_channels, h));
    let x = tape.add_bias(x, pv[pidx::CONV1_B]);
    // Timestep and text-label embeddings enter as per-channel biases.
    let temb = tape.gather_rows(pv[pidx::TIME_TABLE], &[t - 1]);
    let tproj = tape.matmul(temb, pv[pidx::TIME_PROJ], false, false);
    let tvec = tape.reshape(tproj, &[h]);
    let x = tape.add_bias(x, tvec);
    let lemb = tape.gather_rows(pv[pidx::TEXT_TABLE], &[text_label]);
    let lproj = tape.matmul(lemb, pv[pidx::TEXT_PROJ], false, false);
    let lvec = tape.reshape(lproj, &[h]);
    let x = tape.add_bias(x, lvec);
    let x = tape.silu(x);

    // Conv block with residual.
    let c2 = tape.conv3d(x, pv[pidx::CONV2_W], arch.conv_conf_pub(h, h));
    let c2 = tape.add_bias(c2, pv[pidx::CONV2_B]);
    let c2 = tape.silu(c2);
    let x = tape.add(x, c2);

    // One single-head attention layer over all space-time tokens, with a
    // fixed sinusoidal positional encoding on the attention input.
    let tokens = tape.reshape(x, &[n, h]);
    let pe = tape.constant(positional_encoding(tt, hh, ww, h));
    let a_in = tape.add(tokens, pe);
    let q = tape.matmul(a_in, pv[pidx::ATTN_WQ], false, false);
    let k = tape.matmul(a_in, pv[pidx::ATTN_WK], false, false);
    let v = tape.matmul(a_in, pv[pidx::ATTN_WV], false, false);
    let scores = tape.matmul(q, k, false, true);
    let scaled = tape.scale(scores, 1.0 / (arch.attn_qk as f64).sqrt());
    let p = tape.softmax_rows(scaled);
    let mix = tape.matmul(p, v, false, false);
    let attn_out = tape.matmul(mix, pv[pidx::ATTN_WO], false, false);
    let tokens = tape.add(tokens, attn_out);
    let x = tape.reshape(tokens, &[tt, hh, ww, h]);

    let c3 = tape.conv3d(x, pv[pidx::CONV3_W], arch.conv_conf_pub(h, h));
    let c3 = tape.add_bias(c3, pv[pidx::CONV3_B]);
    let c3 = tape.silu(c3);
    let x = tape.add(x, c3);

    // Linear head back to latent channels.
    let flat = tape.reshape(x, &[n, h]);
    let out = tape.matmul(flat, pv[pidx::HEAD_W], false, false);
    let out = tape.add_bias(out, pv[pidx::HEAD_B]);
    tape.reshape(out, &[tt, hh, ww, arch.latent_channels])
}

impl DenoiserArch {
    pub(crate) fn conv_conf_pub(&self, in_ch: usize, out_ch: usize) -> Conv3dConf {
        self.conv_conf(in_ch, out_ch)
    }
}

/// Eq-style fusion entry point: z_vid_f = 3d_conv(concat([z, z_traj])).
pub fn fuse_conditions(
    z: &LatentTensor,
    z_traj_ego: &LatentTensor,
    z_traj_other: &LatentTensor,
    params: &DenoiserParams,
) -> Result<LatentTensor> {
    let c = params.arch.latent_channels;
    check_latent_channels(z, c, "fuse z")?;
    check_latent_channels(z_traj_ego, c, "fuse ego")?;
    check_latent_channels(z_traj_other, c, "fuse other")?;
    if z.data.shape()[..3] != z_traj_ego.data.shape()[..3]
        || z.data.shape()[..3] != z_traj_other.data.shape()[..3]
    {
        return Err(Error::invalid(
            "fuse_conditions: latents must share T' x H' x W'",
        ));
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.data.clone());
    let ev = tape.constant(z_traj_ego.data.clone());
    let ov = tape.constant(z_traj_other.data.clone());
    let pv: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let fused = fuse_forward(&mut tape, zv, ev, ov, &pv, &params.arch);
    Ok(LatentTensor {
        data: tape.value(fused).clone(),
        provenance: Provenance::Fused,
        frame_rate: z.frame_rate,
    })
}

/// Predict the noise added to the video latents from fused latents, a text
/// label and a timestep.
pub fn predict_noise(
    z_vid_f: &LatentTensor,
    text_label: usize,
    t: usize,
    params: &DenoiserParams,
) -> Result<LatentTensor> {
    let arch = &params.arch;
    check_latent_channels(z_vid_f, arch.latent_channels, "predict_noise")?;
    if text_label >= arch.vocab_size {
        return Err(Error::UnknownLabel(text_label));
    }
    if t < 1 || t > arch.num_steps {
        return Err(Error::invalid(format!(
            "timestep {t} out of 1..={}",
            arch.num_steps
        )));
    }
    let mut tape = Tape::new();
    let fv = tape.constant(z_vid_f.data.clone());
    let pv: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let out = trunk_forward(&mut tape, fv, text_label, t, &pv, arch);
    Ok(LatentTensor {
        data: tape.value(out).clone(),
        provenance: Provenance::Predicted,
        frame_rate: z_vid_f.frame_rate,
    })
}

// Serialization mirrors the codec: VTEN f64 weights + JSON descriptor.

#[derive(Serialize, Deserialize)]
struct DenoiserDescriptor {
    arch: DenoiserArch,
    param_count: usize,
}

pub fn save_denoiser(dir: &Path, params: &DenoiserParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let flat = nn::flatten_params(&params.tensors);
    crate::harness::vten::write_vten_f64_file(&dir.join("denoiser.vten"), &[flat.len()], &flat)?;
    let desc = DenoiserDescriptor {
        arch: params.arch.clone(),
        param_count: flat.len(),
    };
    std::fs::write(
        dir.join("denoiser.arch.json"),
        serde_json::to_string_pretty(&desc)?,
    )?;
    Ok(())
}

pub fn load_denoiser(dir: &Path) -> Result<DenoiserParams> {
    let desc: DenoiserDescriptor =
        serde_json::from_str(&std::fs::read_to_string(dir.join("denoiser.arch.json"))?)?;
    let (dims, flat) = crate::harness::vten::read_vten_f64_file(&dir.join("denoiser.vten"))?;
    if dims.iter().product::<usize>() != desc.param_count {
        return Err(Error::format("denoiser parameter file length mismatch"));
    }
    let tensors = unflatten_params(&desc.arch.param_specs(), &flat)?;
    Ok(DenoiserParams {
        arch: desc.arch,
        tensors,
    })
}

#[cfg(test)]
pub(crate) fn micro_arch(latent_channels: usize, num_steps: usize) -> DenoiserArch {
    DenoiserArch {
        latent_channels,
        hidden: 10,
        emb_dim: 6,
        attn_qk: 4,
        attn_v: 6,
        vocab_size: VOCAB_SIZE,
        num_steps,
        kt: 3,
        ks: 3,
    }
}
