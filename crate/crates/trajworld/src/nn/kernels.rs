//! Dense numeric kernels: GEMM variants, 3D convolution via im2col, nearest
//! upsampling. All kernels are deterministic regardless of thread count:
//! parallelism is only over disjoint output rows/frames and every inner
//! reduction runs in a fixed order.

use crate::tensor::Tensor;
use rayon::prelude::*;

fn row_chunk(m: usize) -> usize {
    let threads = rayon::current_num_threads().max(1);
    (m / (threads * 4)).max(16)
}

/// out = a (m,k) · b (k,n). `out` is overwritten.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(row_chunk(m) * n)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let row0 = chunk_idx * row_chunk(m);
            for (r, out_row) in out_chunk.chunks_mut(n).enumerate() {
                let i = row0 + r;
                out_row.fill(0.0);
                let a_row = &a[i * k..(i + 1) * k];
                for (kk, &av) in a_row.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let b_row = &b[kk * n..(kk + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        });
}

/// out = a (m,k) · bᵀ where b is (n,k). `out` is overwritten.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(row_chunk(m) * n)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let row0 = chunk_idx * row_chunk(m);
            for (r, out_row) in out_chunk.chunks_mut(n).enumerate() {
                let i = row0 + r;
                let a_row = &a[i * k..(i + 1) * k];
                for (j, o) in out_row.iter_mut().enumerate() {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&x, &y) in a_row.iter().zip(b_row) {
                        acc += x * y;
                    }
                    *o = acc;
                }
            }
        });
}

/// out += aᵀ · b where a is (k,m) and b is (k,n); out is (m,n).
pub fn matmul_tn_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(row_chunk(m) * n)
        .enumerate()
        .for_each(|(chunk_idx, out_chunk)| {
            let row0 = chunk_idx * row_chunk(m);
            for (r, out_row) in out_chunk.chunks_mut(n).enumerate() {
                let i = row0 + r;
                for kk in 0..k {
                    let av = a[kk * m + i];
                    if av == 0.0 {
                        continue;
                    }
                    let b_row = &b[kk * n..(kk + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        });
}

/// Temporal padding mode for 3D convolutions. `Causal` pads only the past so
/// output frame t depends on input frames <= t; `Same` pads symmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TemporalPad {
    Causal,
    Same,
}

/// 3D convolution configuration. Temporal stride is always 1 (the codec's
/// factor-1 temporal mapping); spatial kernel is square with zero "same"
/// padding. Weight layout: (kt*ks*ks*in_ch, out_ch), index order
/// (dt, dy, dx, cin).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dConf {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kt: usize,
    pub ks: usize,
    pub stride: usize,
    pub tpad: TemporalPad,
}

impl Conv3dConf {
    pub fn k(&self) -> usize {
        self.kt * self.ks * self.ks * self.in_ch
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.k(), self.out_ch]
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> [usize; 4] {
        assert_eq!(in_shape.len(), 4, "conv3d expects (T,H,W,C)");
        assert_eq!(in_shape[3], self.in_ch);
        let p = self.ks / 2;
        let h2 = (in_shape[1] + 2 * p - self.ks) / self.stride + 1;
        let w2 = (in_shape[2] + 2 * p - self.ks) / self.stride + 1;
        [in_shape[0], h2, w2, self.out_ch]
    }

    fn t_offset(&self) -> usize {
        match self.tpad {
            TemporalPad::Causal => self.kt - 1,
            TemporalPad::Same => self.kt / 2,
        }
    }
}

/// Gather the im2col block for one output frame into `col` (h2*w2 rows, K).
fn im2col_frame(input: &Tensor, conf: &Conv3dConf, t_out: usize, h2: usize, w2: usize, col: &mut [f64]) {
    let shape = input.shape();
    let (t_in, h, w, cin) = (shape[0], shape[1], shape[2], shape[3]);
    let data = input.data();
    let p = (conf.ks / 2) as i64;
    let toff = conf.t_offset() as i64;
    let k = conf.k();
    col.fill(0.0);
    for y2 in 0..h2 {
        for x2 in 0..w2 {
            let row = (y2 * w2 + x2) * k;
            let mut idx = row;
            for dt in 0..conf.kt {
                let tt = t_out as i64 + dt as i64 - toff;
                if tt < 0 || tt >= t_in as i64 {
                    idx += conf.ks * conf.ks * cin;
                    continue;
                }
                for dy in 0..conf.ks {
                    let yy = (y2 * conf.stride) as i64 + dy as i64 - p;
                    if yy < 0 || yy >= h as i64 {
                        idx += conf.ks * cin;
                        continue;
                    }
                    for dx in 0..conf.ks {
                        let xx = (x2 * conf.stride) as i64 + dx as i64 - p;
                        if xx >= 0 && xx < w as i64 {
                            let src = (((tt as usize * h) + yy as usize) * w + xx as usize) * cin;
                            col[idx..idx + cin].copy_from_slice(&data[src..src + cin]);
                        }
                        idx += cin;
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward(input: &Tensor, weight: &Tensor, conf: &Conv3dConf) -> Tensor {
    let out_shape = conf.out_shape(input.shape());
    let (t, h2, w2) = (out_shape[0], out_shape[1], out_shape[2]);
    let m = h2 * w2;
    let k = conf.k();
    assert_eq!(weight.shape(), conf.weight_shape());
    let frames: Vec<Vec<f64>> = (0..t)
        .into_par_iter()
        .map(|t_out| {
            let mut col = vec![0.0; m * k];
            im2col_frame(input, conf, t_out, h2, w2, &mut col);
            let mut out = vec![0.0; m * conf.out_ch];
            // Frames already run in parallel; keep the inner GEMM sequential.
            gemm_nn_seq(&col, weight.data(), m, k, conf.out_ch, &mut out);
            out
        })
        .collect();
    let mut data = Vec::with_capacity(t * m * conf.out_ch);
    for f in frames {
        data.extend_from_slice(&f);
    }
    Tensor::from_vec(&out_shape, data)
}

fn gemm_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        out_row.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Gradients of a 3D convolution w.r.t. its input and weight.
pub fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    conf: &Conv3dConf,
) -> (Tensor, Tensor) {
    let out_shape = conf.out_shape(input.shape());
    assert_eq!(dout.shape(), out_shape);
    let (t, h2, w2) = (out_shape[0], out_shape[1], out_shape[2]);
    let m = h2 * w2;
    let k = conf.k();
    let shape_in = input.shape().to_vec();
    let (h, w, cin) = (shape_in[1], shape_in[2], shape_in[3]);

    let mut dweight = Tensor::zeros(&conf.weight_shape());
    let mut dinput = Tensor::zeros(&shape_in);
    let mut col = vec![0.0; m * k];
    let mut dcol = vec![0.0; m * k];
    let p = (conf.ks / 2) as i64;
    let toff = conf.t_offset() as i64;

    for t_out in 0..t {
        let dout_frame = &dout.data()[t_out * m * conf.out_ch..(t_out + 1) * m * conf.out_ch];
        im2col_frame(input, conf, t_out, h2, w2, &mut col);
        matmul_tn_acc(&col, dout_frame, m, k, conf.out_ch, dweight.data_mut());
        matmul_nt(dout_frame, weight.data(), m, conf.out_ch, k, &mut dcol);
        // col2im: scatter-add dcol back onto the input grid.
        let din = dinput.data_mut();
        for y2 in 0..h2 {
            for x2 in 0..w2 {
                let row = (y2 * w2 + x2) * k;
                let mut idx = row;
                for dt in 0..conf.kt {
                    let tt = t_out as i64 + dt as i64 - toff;
                    if tt < 0 || tt >= shape_in[0] as i64 {
                        idx += conf.ks * conf.ks * cin;
                        continue;
                    }
                    for dy in 0..conf.ks {
                        let yy = (y2 * conf.stride) as i64 + dy as i64 - p;
                        if yy < 0 || yy >= h as i64 {
                            idx += conf.ks * cin;
                            continue;
                        }
                        for dx in 0..conf.ks {
                            let xx = (x2 * conf.stride) as i64 + dx as i64 - p;
                            if xx >= 0 && xx < w as i64 {
                                let dst =
                                    (((tt as usize * h) + yy as usize) * w + xx as usize) * cin;
                                for c in 0..cin {
                                    din[dst + c] += dcol[idx + c];
                                }
                            }
                            idx += cin;
                        }
                    }
                }
            }
        }
    }
    (dinput, dweight)
}

/// Nearest-neighbor 2x spatial upsampling of a (T,H,W,C) tensor.
pub fn upsample2x_forward(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[t, 2 * h, 2 * w, c]);
    let src = input.data();
    let dst = out.data_mut();
    for tt in 0..t {
        for y in 0..2 * h {
            for x in 0..2 * w {
                let d = ((tt * 2 * h + y) * 2 * w + x) * c;
                let sidx = ((tt * h + y / 2) * w + x / 2) * c;
                dst[d..d + c].copy_from_slice(&src[sidx..sidx + c]);
            }
        }
    }
    out
}

pub fn upsample2x_backward(dout: &Tensor, in_shape: &[usize]) -> Tensor {
    let (t, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut din = Tensor::zeros(in_shape);
    let g = dout.data();
    let d = din.data_mut();
    for tt in 0..t {
        for y in 0..2 * h {
            for x in 0..2 * w {
                let gidx = ((tt * 2 * h + y) * 2 * w + x) * c;
                let didx = ((tt * h + y / 2) * w + x / 2) * c;
                for cc in 0..c {
                    d[didx + cc] += g[gidx + cc];
                }
            }
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive_matmul(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut out);
        assert_eq!(out, expect);

        // NT: b stored transposed.
        let mut bt = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        matmul_nt(&a, &bt, m, k, n, &mut out);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        // TN: a stored transposed, accumulating.
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut acc = vec![1.0; m * n];
        matmul_tn_acc(&at, &b, k, m, n, &mut acc);
        for (x, y) in acc.iter().zip(&expect) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_identity_kernel_passes_input_through() {
        // 1x1x1 kernel with identity channel map.
        let conf = Conv3dConf {
            in_ch: 3,
            out_ch: 3,
            kt: 1,
            ks: 1,
            stride: 1,
            tpad: TemporalPad::Same,
        };
        let mut w = Tensor::zeros(&conf.weight_shape());
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = Tensor::from_vec(&[2, 2, 2, 3], (0..24).map(|i| i as f64).collect());
        let y = conv3d_forward(&x, &w, &conf);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv3d_causal_ignores_future_frames() {
        let conf = Conv3dConf {
            in_ch: 1,
            out_ch: 1,
            kt: 3,
            ks: 1,
            stride: 1,
            tpad: TemporalPad::Causal,
        };
        // Weight taps (dt=0 past-2, dt=1 past-1, dt=2 current).
        let w = Tensor::from_vec(&[3, 1], vec![0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(&[4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv3d_forward(&x, &w, &conf);
        assert_eq!(y.data(), x.data());
        // Past-1 tap shifts the sequence.
        let w = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, 0.0]);
        let y = conv3d_forward(&x, &w, &conf);
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv3d_stride2_halves_spatial_dims() {
        let conf = Conv3dConf {
            in_ch: 2,
            out_ch: 4,
            kt: 3,
            ks: 3,
            stride: 2,
            tpad: TemporalPad::Causal,
        };
        let x = Tensor::zeros(&[5, 16, 16, 2]);
        let w = Tensor::zeros(&conf.weight_shape());
        let y = conv3d_forward(&x, &w, &conf);
        assert_eq!(y.shape(), &[5, 8, 8, 4]);
    }

    #[test]
    fn conv3d_backward_matches_finite_differences() {
        let conf = Conv3dConf {
            in_ch: 2,
            out_ch: 3,
            kt: 3,
            ks: 3,
            stride: 2,
            tpad: TemporalPad::Causal,
        };
        let mut x = Tensor::from_vec(
            &[3, 4, 4, 2],
            (0..96).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect(),
        );
        let mut w = Tensor::from_vec(
            &conf.weight_shape(),
            (0..conf.k() * 3)
                .map(|i| ((i * 61 % 23) as f64 - 11.0) / 40.0)
                .collect(),
        );
        // Loss = 0.5 * sum(y^2); dL/dy = y.
        let y = conv3d_forward(&x, &w, &conf);
        let (dx, dw) = conv3d_backward(&x, &w, &y, &conf);
        let loss = |x: &Tensor, w: &Tensor| -> f64 {
            0.5 * conv3d_forward(x, w, &conf).sq_norm()
        };
        let h = 1e-5;
        for probe in [0usize, 17, 40, 95] {
            let orig = x.data()[probe];
            x.data_mut()[probe] = orig + h;
            let lp = loss(&x, &w);
            x.data_mut()[probe] = orig - h;
            let lm = loss(&x, &w);
            x.data_mut()[probe] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (dx.data()[probe] - fd).abs() / fd.abs().max(1e-6) < 1e-6,
                "dx[{probe}] {} vs fd {}",
                dx.data()[probe],
                fd
            );
        }
        for probe in [0usize, 13, 77, conf.k() * 3 - 1] {
            let orig = w.data()[probe];
            w.data_mut()[probe] = orig + h;
            let lp = loss(&x, &w);
            w.data_mut()[probe] = orig - h;
            let lm = loss(&x, &w);
            w.data_mut()[probe] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (dw.data()[probe] - fd).abs() / fd.abs().max(1e-6) < 1e-6,
                "dw[{probe}] {} vs fd {}",
                dw.data()[probe],
                fd
            );
        }
    }

    #[test]
    fn upsample_roundtrip_shapes_and_grads() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = upsample2x_forward(&x);
        assert_eq!(y.shape(), &[1, 4, 4, 1]);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[3], 2.0);
        let din = upsample2x_backward(&Tensor::full(&[1, 4, 4, 1], 1.0), &[1, 2, 2, 1]);
        assert!(din.data().iter().all(|&g| g == 4.0));
    }
}
