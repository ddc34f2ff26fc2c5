//! DDPM noise schedule, forward process, conditioning mask and the masked
//! diffusion loss.

use crate::error::{Error, Result};
use crate::latent_codec::LatentTensor;
use crate::tensor::Tensor;

/// Per-step beta/alpha/alpha-bar arrays of a variance-preserving DDPM with a
/// linear beta schedule. Timesteps are 1-based: step t uses index t-1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub num_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_steps < 1 {
        return Err(Error::config("num_steps must be >= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "betas must satisfy 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = if num_steps == 1 {
        vec![beta_start]
    } else {
        (0..num_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(num_steps);
    let mut prod = 1.0f64;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        num_steps,
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.num_steps {
            return Err(Error::invalid(format!(
                "timestep {t} out of 1..={}",
                self.num_steps
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// alpha_bar at t-1, with the DDPM convention alpha_bar(0) = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bars[t - 2]
        }
    }

    /// Posterior variance beta-tilde_t = (1 - abar_{t-1})/(1 - abar_t) * beta_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }
}

/// Forward process: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
pub fn q_sample(
    z0: &LatentTensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<LatentTensor> {
    sched.check_t(t)?;
    z0.data.check_same_shape(eps, "q_sample")?;
    let ab = sched.alpha_bar(t);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0
        .data
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| c0 * z + c1 * e)
        .collect();
    Ok(LatentTensor {
        data: Tensor::from_vec(z0.data.shape(), data),
        provenance: z0.provenance,
        frame_rate: z0.frame_rate,
    })
}

/// Per-frame context mask: 1 for frames t <= T_c (1-based), 0 after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditioningMask {
    t_c: usize,
    len: usize,
}

impl ConditioningMask {
    pub fn new(t_c: usize, len: usize) -> Result<Self> {
        if !(1 <= t_c && t_c < len) {
            return Err(Error::invalid(format!(
                "need 1 <= T_c < T, got T_c={t_c}, T={len}"
            )));
        }
        Ok(ConditioningMask { t_c, len })
    }

    pub fn t_c(&self) -> usize {
        self.t_c
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based frame query.
    pub fn is_context(&self, t: usize) -> bool {
        t >= 1 && t <= self.t_c
    }

    pub fn frame_values(&self) -> Vec<f64> {
        (1..=self.len)
            .map(|t| if self.is_context(t) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Per-element loss weights (1 - M_t) for a (T, ...) tensor shape, and
    /// the count of weighted elements.
    pub fn non_context_weights(&self, shape: &[usize]) -> (Vec<f64>, f64) {
        let per_frame: usize = shape[1..].iter().product();
        let mut w = Vec::with_capacity(shape[0] * per_frame);
        for t in 1..=shape[0] {
            let v = if self.is_context(t) { 0.0 } else { 1.0 };
            w.extend(std::iter::repeat_n(v, per_frame));
        }
        let count = ((self.len - self.t_c) * per_frame) as f64;
        (w, count)
    }
}

/// z = M * z_clean + (1 - M) * z_noise, framewise and bit-exact on the
/// context frames.
pub fn apply_context_mask(
    z_noise: &LatentTensor,
    z_clean: &LatentTensor,
    mask: &ConditioningMask,
) -> Result<LatentTensor> {
    z_noise.data.check_same_shape(&z_clean.data, "apply_context_mask")?;
    if z_noise.data.shape()[0] != mask.len() {
        return Err(Error::invalid(format!(
            "mask length {} != latent frames {}",
            mask.len(),
            z_noise.data.shape()[0]
        )));
    }
    let per_frame: usize = z_noise.data.shape()[1..].iter().product();
    let mut out = z_noise.data.clone();
    out.data_mut()[..mask.t_c() * per_frame]
        .copy_from_slice(&z_clean.data.data()[..mask.t_c() * per_frame]);
    Ok(LatentTensor {
        data: out,
        provenance: z_noise.provenance,
        frame_rate: z_noise.frame_rate,
    })
}

/// Masked diffusion loss: mean squared noise-prediction error over the
/// non-context frames (weight 1 - M_t), zero iff n_p = n_a there.
pub fn diffusion_loss(n_p: &Tensor, n_a: &Tensor, mask: &ConditioningMask) -> Result<f64> {
    n_p.check_same_shape(n_a, "diffusion_loss")?;
    if n_p.shape()[0] != mask.len() {
        return Err(Error::invalid("mask length != latent frames"));
    }
    let per_frame: usize = n_p.shape()[1..].iter().product();
    let mut acc = 0.0;
    for t in mask.t_c()..mask.len() {
        let a = &n_p.data()[t * per_frame..(t + 1) * per_frame];
        let b = &n_a.data()[t * per_frame..(t + 1) * per_frame];
        for (&x, &y) in a.iter().zip(b) {
            let d = x - y;
            acc += d * d;
        }
    }
    Ok(acc / ((mask.len() - mask.t_c()) * per_frame) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_codec::Provenance;
    use crate::nn::seeded_rng;
    use crate::oracles::dd::product_dd;
    use rand::Rng;

    fn latent(shape: &[usize], data: Vec<f64>) -> LatentTensor {
        LatentTensor::new(Tensor::from_vec(shape, data), Provenance::Scene, 10.0).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars, vec![0.5]);
        assert_eq!(s.alphas, vec![0.5]);
    }

    #[test]
    fn thousand_step_alpha_bar_matches_high_precision_product() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let oracle = product_dd(&s.alphas);
        let rel = (s.alpha_bars[999] - oracle).abs() / oracle.abs();
        assert!(rel < 1e-12, "rel error {rel}");
        // Frozen from the double-double oracle at development time.
        let pinned = 4.0358297653756815e-5;
        assert!((oracle - pinned).abs() / pinned < 1e-12, "oracle {oracle:e}");
    }

    #[test]
    fn alpha_bars_strictly_decreasing_and_bounded() {
        for (n, b0, b1) in [(1usize, 0.3, 0.3), (10, 1e-3, 0.5), (200, 1e-4, 0.1)] {
            let s = make_schedule(n, b0, b1).unwrap();
            assert_eq!(s.alpha_bars[0], s.alphas[0]);
            for w in s.alpha_bars.windows(2) {
                assert!(w[1] < w[0]);
            }
            assert!(s.alpha_bars.iter().all(|&a| a > 0.0 && a < 1.0));
        }
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn q_sample_zero_eps_scales_exactly() {
        let s = make_schedule(100, 1e-3, 0.1).unwrap();
        let z0 = latent(&[2, 1, 1, 2], vec![1.0, -2.0, 0.5, 3.0]);
        let eps = Tensor::zeros(&[2, 1, 1, 2]);
        let t = 40;
        let out = q_sample(&z0, t, &eps, &s).unwrap();
        let c = s.alpha_bar(t).sqrt();
        for (o, z) in out.data.data().iter().zip(z0.data.data()) {
            assert_eq!(*o, c * z);
        }
    }

    #[test]
    fn q_sample_low_noise_limit_stays_near_z0() {
        let s = make_schedule(10, 1e-6, 1e-6).unwrap();
        let z0 = latent(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let mut rng = seeded_rng(1, "eps");
        let eps = Tensor::from_vec(
            &[1, 1, 1, 4],
            (0..4).map(|_| rng.sample(rand_distr::StandardNormal)).collect(),
        );
        let out = q_sample(&z0, 10, &eps, &s).unwrap();
        let bound = (1.0 - s.alpha_bar(10)).sqrt() * eps.data().iter().map(|e| e.abs()).fold(0.0, f64::max);
        for (o, z) in out.data.data().iter().zip(z0.data.data()) {
            assert!((o - z).abs() <= bound + 1e-2 * z.abs());
        }
    }

    #[test]
    fn q_sample_monte_carlo_matches_moments() {
        let s = make_schedule(200, 1e-4, 0.1).unwrap();
        let z0 = latent(&[1, 1, 1, 1], vec![0.8]);
        let n = 100_000;
        for t in [20usize, 100, 200] {
            let mut rng = seeded_rng(t as u64, "mc");
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let eps = Tensor::from_vec(&[1, 1, 1, 1], vec![rng.sample(rand_distr::StandardNormal)]);
                let v = q_sample(&z0, t, &eps, &s).unwrap().data.data()[0];
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            let var = sumsq / n as f64 - mean * mean;
            let expect_mean = s.alpha_bar(t).sqrt() * 0.8;
            let expect_var = 1.0 - s.alpha_bar(t);
            let se_mean = (expect_var / n as f64).sqrt();
            let se_var = expect_var * (2.0 / n as f64).sqrt();
            assert!((mean - expect_mean).abs() <= 3.0 * se_mean, "t={t} mean");
            assert!((var - expect_var).abs() <= 3.0 * se_var, "t={t} var");
        }
    }

    #[test]
    fn mask_boundary_and_idempotence() {
        let t = 5;
        let shape = [t, 1, 1, 2];
        let mut rng = seeded_rng(9, "m");
        let z_clean = latent(&shape, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
        let z_noise = latent(&shape, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
        // T_c = T-1: only the last frame differs from clean.
        let mask = ConditioningMask::new(t - 1, t).unwrap();
        let out = apply_context_mask(&z_noise, &z_clean, &mask).unwrap();
        assert_eq!(&out.data.data()[..8], &z_clean.data.data()[..8]);
        assert_eq!(&out.data.data()[8..], &z_noise.data.data()[8..]);
        // z_noise == z_clean: mix is the identity.
        let same = apply_context_mask(&z_clean, &z_clean, &mask).unwrap();
        assert_eq!(same.data, z_clean.data);
    }

    #[test]
    fn mask_paper_default_tc1_of_25() {
        let mask = ConditioningMask::new(1, 25).unwrap();
        let v = mask.frame_values();
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn mask_rejects_degenerate_bounds() {
        assert!(ConditioningMask::new(0, 5).is_err());
        assert!(ConditioningMask::new(5, 5).is_err());
    }

    #[test]
    fn loss_zero_on_equal_and_ignores_context_frames() {
        let shape = [3, 1, 1, 2];
        let mask = ConditioningMask::new(1, 3).unwrap();
        let a = Tensor::from_vec(&shape, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(diffusion_loss(&a, &a, &mask).unwrap(), 0.0);
        // Error confined to frame 1 (context) contributes nothing.
        let mut b = a.clone();
        b.data_mut()[0] += 100.0;
        b.data_mut()[1] -= 50.0;
        assert_eq!(diffusion_loss(&b, &a, &mask).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_independent_reduction() {
        let shape = [4, 2, 1, 3];
        let mut rng = seeded_rng(33, "loss");
        let n: usize = shape.iter().product();
        let a = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect());
        let b = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mask = ConditioningMask::new(2, 4).unwrap();
        let got = diffusion_loss(&a, &b, &mask).unwrap();
        // Brute-force oracle over explicit indices.
        let per_frame = 6;
        let mut acc = 0.0;
        let mut cnt = 0;
        for t in 0..4 {
            if t < 2 {
                continue;
            }
            for i in 0..per_frame {
                let d = a.data()[t * per_frame + i] - b.data()[t * per_frame + i];
                acc += d * d;
                cnt += 1;
            }
        }
        let oracle = acc / cnt as f64;
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }
}
