//! Shared spatio-temporal autoencoder.
//!
//! One deterministic 3D-convolutional encoder/decoder pair maps both scene
//! videos and trajectory videos into a single latent space: same parameters,
//! same code path, same shapes. Temporal convolutions are causal and the
//! temporal factor is 1, so latent frame t corresponds to video frame t
//! exactly and encoding the first T_c frames of a clip reproduces the first
//! T_c latent frames of the full clip bit-for-bit. Latents are standardized
//! per channel with statistics measured after training.

use crate::error::{Error, Result};
use crate::harness::vten;
use crate::nn::{
    self, init_params, param_count, unflatten_params, Conv3dConf, Init, ParamSpec, Tape,
    TemporalPad, Var,
};
use crate::rasterizer::{VideoShape, VideoTensor};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Where a latent tensor came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Scene,
    EgoTraj,
    OtherTraj,
    Fused,
    Predicted,
}

/// A (T', H', W', C') latent with provenance. T' = T (temporal factor 1),
/// H' = H/s, W' = W/s for spatial factor s.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub data: Tensor,
    pub provenance: Provenance,
    pub frame_rate: f64,
}

impl LatentTensor {
    pub fn new(data: Tensor, provenance: Provenance, frame_rate: f64) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::invalid("latents are rank-4 (T',H',W',C')"));
        }
        if !data.all_finite() {
            return Err(Error::invalid("latent has non-finite values"));
        }
        Ok(LatentTensor {
            data,
            provenance,
            frame_rate,
        })
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[3]
    }

    /// Raw values of latent frame t (0-based).
    pub fn frame(&self, t: usize) -> &[f64] {
        let sz: usize = self.data.shape()[1..].iter().product();
        &self.data.data()[t * sz..(t + 1) * sz]
    }
}

/// One convolution layer of the codec. Encoder layers downsample spatially by
/// `stride`; decoder layers optionally upsample 2x first. Activations are
/// SiLU everywhere except the last encoder layer (linear) and the last
/// decoder layer (sigmoid, bounding output to [0,1]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kt: usize,
    pub ks: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub upsample: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecArch {
    pub in_channels: usize,
    pub latent_channels: usize,
    pub spatial_factor: usize,
    pub temporal_pad: TemporalPad,
    pub encoder: Vec<ConvLayerSpec>,
    pub decoder: Vec<ConvLayerSpec>,
}

impl Default for CodecArch {
    /// Desk-scale default: 64x64x3 video -> 8x8x8 latent (spatial factor 8).
    fn default() -> Self {
        CodecArch {
            in_channels: 3,
            latent_channels: 8,
            spatial_factor: 8,
            temporal_pad: TemporalPad::Causal,
            encoder: vec![
                ConvLayerSpec { out_channels: 12, kt: 1, ks: 3, stride: 2, upsample: false },
                ConvLayerSpec { out_channels: 12, kt: 3, ks: 3, stride: 2, upsample: false },
                ConvLayerSpec { out_channels: 8, kt: 3, ks: 3, stride: 2, upsample: false },
            ],
            decoder: vec![
                ConvLayerSpec { out_channels: 12, kt: 3, ks: 3, stride: 1, upsample: true },
                ConvLayerSpec { out_channels: 12, kt: 1, ks: 3, stride: 1, upsample: true },
                ConvLayerSpec { out_channels: 3, kt: 1, ks: 3, stride: 1, upsample: true },
            ],
        }
    }
}

impl CodecArch {
    pub fn validate(&self) -> Result<()> {
        let enc_factor: usize = self.encoder.iter().map(|l| l.stride).product();
        if enc_factor != self.spatial_factor {
            return Err(Error::config(format!(
                "encoder strides multiply to {enc_factor}, expected spatial factor {}",
                self.spatial_factor
            )));
        }
        let dec_factor: usize = 1 << self.decoder.iter().filter(|l| l.upsample).count();
        if dec_factor != self.spatial_factor {
            return Err(Error::config(format!(
                "decoder upsamples to factor {dec_factor}, expected {}",
                self.spatial_factor
            )));
        }
        match (self.encoder.last(), self.decoder.last()) {
            (Some(e), Some(d)) => {
                if e.out_channels != self.latent_channels {
                    return Err(Error::config("last encoder layer must emit latent_channels"));
                }
                if d.out_channels != self.in_channels {
                    return Err(Error::config("last decoder layer must emit in_channels"));
                }
            }
            _ => return Err(Error::config("encoder and decoder need at least one layer")),
        }
        Ok(())
    }

    /// Parameter descriptor: per layer a conv weight and a bias, encoder
    /// first, then decoder.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |tag: &str, idx: usize, conf: &Conv3dConf| {
            specs.push(ParamSpec::new(
                format!("{tag}{idx}.weight"),
                &conf.weight_shape(),
                Init::KaimingUniform { fan_in: conf.k() },
            ));
            specs.push(ParamSpec::new(
                format!("{tag}{idx}.bias"),
                &[conf.out_ch],
                Init::Zeros,
            ));
        };
        for (i, conf) in self.encoder_confs().iter().enumerate() {
            push("enc", i, conf);
        }
        for (i, conf) in self.decoder_confs().iter().enumerate() {
            push("dec", i, conf);
        }
        specs
    }

    pub fn encoder_confs(&self) -> Vec<Conv3dConf> {
        let mut in_ch = self.in_channels;
        self.encoder
            .iter()
            .map(|l| {
                let conf = Conv3dConf {
                    in_ch,
                    out_ch: l.out_channels,
                    kt: l.kt,
                    ks: l.ks,
                    stride: l.stride,
                    tpad: self.temporal_pad,
                };
                in_ch = l.out_channels;
                conf
            })
            .collect()
    }

    pub fn decoder_confs(&self) -> Vec<Conv3dConf> {
        let mut in_ch = self.latent_channels;
        self.decoder
            .iter()
            .map(|l| {
                let conf = Conv3dConf {
                    in_ch,
                    out_ch: l.out_channels,
                    kt: l.kt,
                    ks: l.ks,
                    stride: 1,
                    tpad: self.temporal_pad,
                };
                in_ch = l.out_channels;
                conf
            })
            .collect()
    }
}

/// Trained codec: architecture, flat parameters and latent statistics.
#[derive(Clone, Debug)]
pub struct CodecParams {
    pub arch: CodecArch,
    pub tensors: Vec<Tensor>,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
}

impl CodecParams {
    pub fn init(arch: CodecArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = nn::seeded_rng(seed, "codec-init");
        let tensors = init_params(&arch.param_specs(), &mut rng);
        let c = arch.latent_channels;
        Ok(CodecParams {
            arch,
            tensors,
            latent_mean: vec![0.0; c],
            latent_std: vec![1.0; c],
        })
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.arch.param_specs())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Builds the encoder (or decoder) on a tape for both inference and training.
pub(crate) fn codec_part_forward(
    tape: &mut Tape,
    x: Var,
    param_vars: &[Var],
    arch: &CodecArch,
    decode: bool,
) -> Var {
    let confs = if decode {
        arch.decoder_confs()
    } else {
        arch.encoder_confs()
    };
    let offset = if decode { 2 * arch.encoder.len() } else { 0 };
    let layers = if decode { &arch.decoder } else { &arch.encoder };
    let mut h = x;
    for (i, conf) in confs.iter().enumerate() {
        if decode && layers[i].upsample {
            h = tape.upsample2x(h);
        }
        h = tape.conv3d(h, param_vars[offset + 2 * i], *conf);
        h = tape.add_bias(h, param_vars[offset + 2 * i + 1]);
        let last = i + 1 == confs.len();
        h = match (decode, last) {
            (false, false) => tape.silu(h),
            (false, true) => h, // latent head is linear
            (true, false) => tape.silu(h),
            (true, true) => tape.sigmoid_op(h), // bounded output in (0,1)
        };
    }
    h
}

fn check_encode_input(video: &VideoTensor, arch: &CodecArch) -> Result<()> {
    let s = video.shape();
    if s.c != arch.in_channels {
        return Err(Error::invalid(format!(
            "encode expects {} channels, got {}",
            arch.in_channels, s.c
        )));
    }
    if s.h % arch.spatial_factor != 0 || s.w % arch.spatial_factor != 0 {
        return Err(Error::invalid(format!(
            "video {}x{} not divisible by spatial factor {}",
            s.h, s.w, arch.spatial_factor
        )));
    }
    Ok(())
}

/// Encode a video into the shared latent space (standardized channels).
pub fn encode(video: &VideoTensor, params: &CodecParams) -> Result<LatentTensor> {
    check_encode_input(video, &params.arch)?;
    let s = video.shape();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_f32(&[s.t, s.h, s.w, s.c], video.data()));
    let pv: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let z = codec_part_forward(&mut tape, x, &pv, &params.arch, false);
    let mut raw = tape.value(z).clone();
    let c = params.arch.latent_channels;
    for chunk in raw.data_mut().chunks_mut(c) {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = (*v - params.latent_mean[i]) / params.latent_std[i];
        }
    }
    LatentTensor::new(raw, Provenance::Scene, s.frame_rate)
}

/// Decode latents back to a video in [0, 1].
pub fn decode(latent: &LatentTensor, params: &CodecParams) -> Result<VideoTensor> {
    let shape = latent.data.shape();
    if shape.len() != 4 || shape[3] != params.arch.latent_channels {
        return Err(Error::invalid(format!(
            "latent shape {shape:?} does not match descriptor (C'={})",
            params.arch.latent_channels
        )));
    }
    let c = params.arch.latent_channels;
    let mut denorm = latent.data.clone();
    for chunk in denorm.data_mut().chunks_mut(c) {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = *v * params.latent_std[i] + params.latent_mean[i];
        }
    }
    let mut tape = Tape::new();
    let z = tape.constant(denorm);
    let pv: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let y = codec_part_forward(&mut tape, z, &pv, &params.arch, true);
    let out = tape.value(y);
    let os = out.shape();
    VideoTensor::new(
        VideoShape {
            t: os[0],
            h: os[1],
            w: os[2],
            c: os[3],
            frame_rate: latent.frame_rate,
        },
        out.to_f32_vec(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    #[serde(default)]
    pub arch: CodecArch,
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_weight_decay() -> f64 {
    1e-5
}

fn default_batch() -> usize {
    2
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        CodecTrainConfig {
            arch: CodecArch::default(),
            learning_rate: 2e-3,
            weight_decay: 1e-5,
            epochs: 6,
            batch_size: 2,
            seed: 0,
        }
    }
}

/// Reconstruction loss (and gradients when `want_grads`) for one video.
fn recon_pass(
    video: &VideoTensor,
    tensors: &[Tensor],
    arch: &CodecArch,
    want_grads: bool,
) -> (f64, Option<Vec<Tensor>>) {
    let s = video.shape();
    let target = Tensor::from_f32(&[s.t, s.h, s.w, s.c], video.data());
    let mut tape = Tape::new();
    let x = tape.constant(target.clone());
    let pv: Vec<Var> = tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), want_grads))
        .collect();
    let z = codec_part_forward(&mut tape, x, &pv, arch, false);
    let y = codec_part_forward(&mut tape, z, &pv, arch, true);
    let n = target.numel() as f64;
    let loss = tape.weighted_sq_err(y, target, None, n);
    let loss_val = tape.value(loss).item();
    if !want_grads {
        return (loss_val, None);
    }
    let grads = tape.backward(loss);
    let out = pv
        .iter()
        .zip(tensors)
        .map(|(v, t)| nn::grad_or_zeros(&grads, *v, t.shape()))
        .collect();
    (loss_val, Some(out))
}

/// Reconstruction MSE of one video under given parameters (no gradients).
pub fn reconstruction_loss(video: &VideoTensor, params: &CodecParams) -> f64 {
    recon_pass(video, &params.tensors, &params.arch, false).0
}

/// Train the codec by reconstruction on a mixed set of scene and trajectory
/// videos. Returns the trained parameters (with latent statistics) and the
/// per-epoch mean losses.
pub fn train_codec(
    videos: &[VideoTensor],
    config: &CodecTrainConfig,
) -> Result<(CodecParams, Vec<f64>)> {
    if videos.is_empty() {
        return Err(Error::invalid("codec training set is empty"));
    }
    for v in videos {
        check_encode_input(v, &config.arch)?;
    }
    let mut params = CodecParams::init(config.arch.clone(), config.seed)?;
    let specs = config.arch.param_specs();
    let shapes: Vec<Vec<usize>> = specs.iter().map(|s| s.shape.clone()).collect();
    let mut opt = nn::AdamW::new(config.learning_rate, config.weight_decay, &shapes);
    let mut order_rng = nn::seeded_rng(config.seed, "codec-order");
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut acc: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (loss, grads) = recon_pass(&videos[idx], &params.tensors, &config.arch, true);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        step,
                        reason: format!("reconstruction loss became {loss}"),
                    });
                }
                batch_loss += loss;
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
            epoch_sum += batch_loss;
            opt.step(&mut params.tensors, &acc);
        }
        epoch_losses.push(epoch_sum / videos.len() as f64);
    }
    compute_latent_stats(&mut params, videos)?;
    Ok((params, epoch_losses))
}

/// Per-channel mean/std of raw encoder outputs over a video set, stored into
/// the params so encode/decode standardize symmetrically.
fn compute_latent_stats(params: &mut CodecParams, videos: &[VideoTensor]) -> Result<()> {
    let c = params.arch.latent_channels;
    params.latent_mean = vec![0.0; c];
    params.latent_std = vec![1.0; c];
    let mut sum = vec![0.0f64; c];
    let mut sumsq = vec![0.0f64; c];
    let mut count = 0usize;
    for v in videos {
        let z = encode(v, params)?; // stats are identity here, so raw values
        for chunk in z.data.data().chunks(c) {
            for (i, &val) in chunk.iter().enumerate() {
                sum[i] += val;
                sumsq[i] += val * val;
            }
        }
        count += z.data.numel() / c;
    }
    let n = count as f64;
    for i in 0..c {
        let mean = sum[i] / n;
        let var = (sumsq[i] / n - mean * mean).max(0.0);
        params.latent_mean[i] = mean;
        params.latent_std[i] = var.sqrt().max(1e-6);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Serialization: VTEN parameter file + JSON architecture descriptor side-file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CodecDescriptor {
    arch: CodecArch,
    latent_mean: Vec<f64>,
    latent_std: Vec<f64>,
    param_count: usize,
}

pub fn save_codec(dir: &Path, params: &CodecParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let flat = nn::flatten_params(&params.tensors);
    vten::write_vten_f64_file(&dir.join("codec.vten"), &[flat.len()], &flat)?;
    let desc = CodecDescriptor {
        arch: params.arch.clone(),
        latent_mean: params.latent_mean.clone(),
        latent_std: params.latent_std.clone(),
        param_count: flat.len(),
    };
    std::fs::write(
        dir.join("codec.arch.json"),
        serde_json::to_string_pretty(&desc)?,
    )?;
    Ok(())
}

pub fn load_codec(dir: &Path) -> Result<CodecParams> {
    let desc: CodecDescriptor =
        serde_json::from_str(&std::fs::read_to_string(dir.join("codec.arch.json"))?)?;
    desc.arch.validate()?;
    let (dims, flat) = vten::read_vten_f64_file(&dir.join("codec.vten"))?;
    if dims.iter().product::<usize>() != desc.param_count {
        return Err(Error::format("codec parameter file length mismatch"));
    }
    let tensors = unflatten_params(&desc.arch.param_specs(), &flat)?;
    Ok(CodecParams {
        arch: desc.arch,
        tensors,
        latent_mean: desc.latent_mean,
        latent_std: desc.latent_std,
    })
}

#[cfg(test)]
pub(crate) fn micro_arch() -> CodecArch {
    CodecArch {
        in_channels: 3,
        latent_channels: 4,
        spatial_factor: 4,
        temporal_pad: TemporalPad::Causal,
        encoder: vec![
            ConvLayerSpec { out_channels: 6, kt: 1, ks: 3, stride: 2, upsample: false },
            ConvLayerSpec { out_channels: 4, kt: 3, ks: 3, stride: 2, upsample: false },
        ],
        decoder: vec![
            ConvLayerSpec { out_channels: 6, kt: 3, ks: 3, stride: 1, upsample: true },
            ConvLayerSpec { out_channels: 3, kt: 1, ks: 3, stride: 1, upsample: true },
        ],
    }
}
