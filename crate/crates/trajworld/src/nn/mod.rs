//! Minimal neural-network stack: tensors ride on [`crate::tensor::Tensor`],
//! [`tape`] provides reverse-mode autodiff, [`kernels`] the dense compute,
//! [`adamw`] the optimizer and [`gradcheck`] finite-difference verification.
//! Everything runs in f64 and is deterministic for a fixed seed regardless
//! of thread count.

pub mod adamw;
pub mod gradcheck;
pub mod kernels;
pub mod tape;

pub use adamw::AdamW;
pub use kernels::{Conv3dConf, TemporalPad};
pub use tape::{grad_or_zeros, Tape, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

/// Derive an independent RNG seed from a base seed and a purpose tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn seeded_rng(base: u64, tag: &str) -> rand_chacha::ChaCha12Rng {
    rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(base, tag))
}

/// Weight initialization families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)).
    KaimingUniform { fan_in: usize },
    /// Uniform(-scale, +scale).
    Uniform { scale: f64 },
    Zeros,
}

/// One named parameter tensor in a model descriptor.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Materialize a parameter list from specs and a seeded RNG.
pub fn init_params(specs: &[ParamSpec], rng: &mut impl Rng) -> Vec<Tensor> {
    specs
        .iter()
        .map(|spec| match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Uniform { scale } => random_uniform(&spec.shape, scale, rng),
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                random_uniform(&spec.shape, bound, rng)
            }
        })
        .collect()
}

fn random_uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

pub fn param_count(specs: &[ParamSpec]) -> usize {
    specs.iter().map(|s| s.numel()).sum()
}

/// Flatten parameters into one vector in spec order.
pub fn flatten_params(tensors: &[Tensor]) -> Vec<f64> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.numel()).sum());
    for t in tensors {
        out.extend_from_slice(t.data());
    }
    out
}

/// Rebuild parameter tensors from a flat vector; the count must match the
/// descriptor exactly.
pub fn unflatten_params(specs: &[ParamSpec], flat: &[f64]) -> Result<Vec<Tensor>> {
    let expect = param_count(specs);
    if flat.len() != expect {
        return Err(Error::invalid(format!(
            "parameter vector length {} does not match descriptor count {expect}",
            flat.len()
        )));
    }
    let mut tensors = Vec::with_capacity(specs.len());
    let mut off = 0;
    for spec in specs {
        let n = spec.numel();
        tensors.push(Tensor::from_vec(&spec.shape, flat[off..off + n].to_vec()));
        off += n;
    }
    Ok(tensors)
}

/// Fixed 3D sinusoidal positional encoding over (T, H, W) token grids,
/// `dim` channels. Deterministic; not a learned parameter.
pub fn positional_encoding(t: usize, h: usize, w: usize, dim: usize) -> Tensor {
    let n = t * h * w;
    let mut data = vec![0.0; n * dim];
    let third = dim / 3;
    for (axis, extent) in [(0usize, t), (1, h), (2, w)] {
        let d0 = axis * third;
        let d1 = if axis == 2 { dim } else { (axis + 1) * third };
        for tt in 0..t {
            for yy in 0..h {
                for xx in 0..w {
                    let pos = [tt, yy, xx][axis] as f64;
                    let row = ((tt * h) + yy) * w + xx;
                    for (j, d) in (d0..d1).enumerate() {
                        let freq = 1.0 / 100.0f64.powf(2.0 * (j / 2) as f64 / extent.max(2) as f64);
                        let v = if j % 2 == 0 {
                            (pos * freq).sin()
                        } else {
                            (pos * freq).cos()
                        };
                        data[row * dim + d] = v;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, dim], data)
}
