//! Minimal reverse-mode automatic differentiation over [`Tensor`].
//!
//! A [`Tape`] records one forward pass eagerly (values are computed as ops
//! are pushed) and walks the graph backwards on demand. Models rebuild the
//! tape every step; parameters live outside as plain tensors and enter as
//! gradient-requiring leaves.

use super::kernels::{
    conv3d_backward, conv3d_forward, matmul_nn, matmul_nt, matmul_tn_acc, upsample2x_backward,
    upsample2x_forward, Conv3dConf,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    /// x (..., C) + bias (C), broadcast over all leading dims.
    AddBias(Var, Var),
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv3d {
        input: Var,
        weight: Var,
        conf: Conv3dConf,
    },
    Upsample2x(Var),
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Select rows of a (V, D) table.
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    /// Concatenate along the last dim; all parts share leading dims.
    ConcatLast(Vec<Var>),
    Reshape(Var),
    /// sum_i w_i * (pred_i - target_i)^2 / denom, target constant.
    WeightedSqErr {
        pred: Var,
        target: Tensor,
        weights: Option<Vec<f64>>,
        denom: f64,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_elem(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, self.needs(a) || self.needs(b), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip_elem(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, self.needs(a) || self.needs(b), Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let value = zip_elem(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, self.needs(a) || self.needs(b), Op::MulElem(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, self.needs(a), Op::Scale(a, c))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        let c = *xv.shape().last().expect("add_bias needs a trailing dim");
        assert_eq!(bv.numel(), c, "bias length must equal trailing dim");
        let mut value = xv.clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(value, self.needs(x) || self.needs(bias), Op::AddBias(x, bias))
    }

    /// 2D matrix product with optional transposes: op(a) (m,k) · op(b) (k,n).
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let ashape = self.value(a).shape().to_vec();
        let bshape = self.value(b).shape().to_vec();
        assert_eq!(ashape.len(), 2);
        assert_eq!(bshape.len(), 2);
        let (m, k) = if ta {
            (ashape[1], ashape[0])
        } else {
            (ashape[0], ashape[1])
        };
        let (kb, n) = if tb {
            (bshape[1], bshape[0])
        } else {
            (bshape[0], bshape[1])
        };
        assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
        let mut out = Tensor::zeros(&[m, n]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        match (ta, tb) {
            (false, false) => matmul_nn(av, bv, m, k, n, out.data_mut()),
            (false, true) => matmul_nt(av, bv, m, k, n, out.data_mut()),
            (true, false) => matmul_tn_acc(av, bv, k, m, n, out.data_mut()),
            (true, true) => panic!("matmul TT is not used"),
        }
        self.push(
            out,
            self.needs(a) || self.needs(b),
            Op::Matmul { a, b, ta, tb, m, k, n },
        )
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, conf: Conv3dConf) -> Var {
        let value = conv3d_forward(self.value(input), self.value(weight), &conf);
        self.push(
            value,
            self.needs(input) || self.needs(weight),
            Op::Conv3d { input, weight, conf },
        )
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let value = upsample2x_forward(self.value(x));
        self.push(value, self.needs(x), Op::Upsample2x(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, self.needs(x), Op::Silu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, self.needs(x), Op::Relu(x))
    }

    pub fn sigmoid_op(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, self.needs(x), Op::Sigmoid(x))
    }

    /// Row-wise softmax of a (N, M) tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape().len(), 2);
        let m = xv.shape()[1];
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(value, self.needs(x), Op::SoftmaxRows(x))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        assert_eq!(tv.shape().len(), 2);
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < v, "gather index {i} out of table size {v}");
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec(&[indices.len(), d], data);
        self.push(
            value,
            self.needs(table),
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Concatenate along the trailing dimension.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(&s[..s.len() - 1], lead.as_slice(), "concat leading dims differ");
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut shape = lead;
        shape.push(total);
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::from_vec(&shape, data),
            needs,
            Op::ConcatLast(parts.to_vec()),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        self.push(value, self.needs(x), Op::Reshape(x))
    }

    /// Weighted mean squared error against a constant target:
    /// sum_i w_i (pred_i - target_i)^2 / denom.
    pub fn weighted_sq_err(
        &mut self,
        pred: Var,
        target: Tensor,
        weights: Option<Vec<f64>>,
        denom: f64,
    ) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        if let Some(w) = &weights {
            assert_eq!(w.len(), pv.numel());
        }
        assert!(denom > 0.0);
        let mut acc = 0.0;
        for (i, (&p, &t)) in pv.data().iter().zip(target.data()).enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            let d = p - t;
            acc += w * d * d;
        }
        let value = Tensor::scalar(acc / denom);
        self.push(
            value,
            self.needs(pred),
            Op::WeightedSqErr {
                pred,
                target,
                weights,
                denom,
            },
        )
    }

    /// Run reverse-mode accumulation from a scalar root. Returns per-node
    /// gradients (None where no gradient flows).
    pub fn backward(&self, root: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::MulElem(a, b) => {
                    let da = zip_elem(&g, self.value(*b), |x, y| x * y);
                    let db = zip_elem(&g, self.value(*a), |x, y| x * y);
                    self.accumulate(&mut grads, *a, da);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.accumulate(&mut grads, *a, g.map(|x| c * x));
                }
                Op::AddBias(x, bias) => {
                    let c = self.value(*bias).numel();
                    let mut db = Tensor::zeros(&[c]);
                    for chunk in g.data().chunks(c) {
                        for (o, &v) in db.data_mut().iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    self.accumulate(&mut grads, *x, g.clone());
                    self.accumulate(&mut grads, *bias, db);
                }
                Op::Matmul { a, b, ta, tb, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let gv = g.data();
                    match (ta, tb) {
                        (false, false) => {
                            if self.needs(*a) {
                                let mut da = Tensor::zeros(&[m, k]);
                                matmul_nt(gv, bv, m, n, k, da.data_mut());
                                self.accumulate(&mut grads, *a, da);
                            }
                            if self.needs(*b) {
                                let mut db = Tensor::zeros(&[k, n]);
                                matmul_tn_acc(av, gv, m, k, n, db.data_mut());
                                self.accumulate(&mut grads, *b, db);
                            }
                        }
                        (false, true) => {
                            // C = A · Bᵀ, A (m,k), B (n,k).
                            if self.needs(*a) {
                                let mut da = Tensor::zeros(&[m, k]);
                                matmul_nn(gv, bv, m, n, k, da.data_mut());
                                self.accumulate(&mut grads, *a, da);
                            }
                            if self.needs(*b) {
                                let mut db = Tensor::zeros(&[n, k]);
                                matmul_tn_acc(gv, av, m, n, k, db.data_mut());
                                self.accumulate(&mut grads, *b, db);
                            }
                        }
                        (true, false) => {
                            // C = Aᵀ · B, A (k,m), B (k,n).
                            if self.needs(*a) {
                                let mut da = Tensor::zeros(&[k, m]);
                                matmul_nt(bv, gv, k, n, m, da.data_mut());
                                self.accumulate(&mut grads, *a, da);
                            }
                            if self.needs(*b) {
                                let mut db = Tensor::zeros(&[k, n]);
                                matmul_nn(av, gv, k, m, n, db.data_mut());
                                self.accumulate(&mut grads, *b, db);
                            }
                        }
                        (true, true) => unreachable!(),
                    }
                }
                Op::Conv3d { input, weight, conf } => {
                    let (din, dw) =
                        conv3d_backward(self.value(*input), self.value(*weight), &g, conf);
                    self.accumulate(&mut grads, *input, din);
                    self.accumulate(&mut grads, *weight, dw);
                }
                Op::Upsample2x(x) => {
                    let din = upsample2x_backward(&g, self.value(*x).shape());
                    self.accumulate(&mut grads, *x, din);
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let da = zip_elem(&g, xv, |gv, v| {
                        let s = sigmoid(v);
                        gv * s * (1.0 + v * (1.0 - s))
                    });
                    self.accumulate(&mut grads, *x, da);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let da = zip_elem(&g, xv, |gv, v| if v > 0.0 { gv } else { 0.0 });
                    self.accumulate(&mut grads, *x, da);
                }
                Op::Sigmoid(x) => {
                    let yv = &node.value;
                    let da = zip_elem(&g, yv, |gv, y| gv * y * (1.0 - y));
                    self.accumulate(&mut grads, *x, da);
                }
                Op::SoftmaxRows(x) => {
                    let p = &node.value;
                    let mcols = p.shape()[1];
                    let mut da = Tensor::zeros(&[p.shape()[0], mcols]);
                    for ((prow, grow), orow) in p
                        .data()
                        .chunks(mcols)
                        .zip(g.data().chunks(mcols))
                        .zip(da.data_mut().chunks_mut(mcols))
                    {
                        let dot: f64 = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        for ((o, &pv), &gv) in orow.iter_mut().zip(prow).zip(grow) {
                            *o = pv * (gv - dot);
                        }
                    }
                    self.accumulate(&mut grads, *x, da);
                }
                Op::GatherRows { table, indices } => {
                    let tv = self.value(*table);
                    let d = tv.shape()[1];
                    let mut dt = Tensor::zeros(&[tv.shape()[0], d]);
                    for (r, &i) in indices.iter().enumerate() {
                        let src = &g.data()[r * d..(r + 1) * d];
                        let dst = &mut dt.data_mut()[i * d..(i + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    self.accumulate(&mut grads, *table, dt);
                }
                Op::ConcatLast(parts) => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = node.value.numel() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let s = self.value(p).shape().to_vec();
                        let w = *s.last().unwrap();
                        let mut dp = Tensor::zeros(&s);
                        for r in 0..rows {
                            dp.data_mut()[r * w..(r + 1) * w].copy_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        self.accumulate(&mut grads, p, dp);
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    self.accumulate(&mut grads, *x, g.clone().reshaped(&shape));
                }
                Op::WeightedSqErr {
                    pred,
                    target,
                    weights,
                    denom,
                } => {
                    let scale = 2.0 * g.item() / denom;
                    let pv = self.value(*pred);
                    let mut dp = Tensor::zeros(&pv.shape().to_vec());
                    for (i, ((o, &p), &t)) in dp
                        .data_mut()
                        .iter_mut()
                        .zip(pv.data())
                        .zip(target.data())
                        .enumerate()
                    {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        *o = scale * w * (p - t);
                    }
                    self.accumulate(&mut grads, *pred, dp);
                }
            }
            grads[id] = Some(g);
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (o, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *o += d;
                }
            }
            slot => *slot = Some(delta),
        }
    }
}

/// Extract the gradient of `v` from a backward result, as zeros when absent.
pub fn grad_or_zeros(grads: &[Option<Tensor>], v: Var, shape: &[usize]) -> Tensor {
    match &grads[v.0] {
        Some(g) => g.clone(),
        None => Tensor::zeros(shape),
    }
}

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn zip_elem(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise op shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::central_difference;

    /// A composite graph touching most ops: conv, attention-style matmuls,
    /// softmax, gather, concat, bias, silu — all gradients vs central FD.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let conf = Conv3dConf {
            in_ch: 2,
            out_ch: 3,
            kt: 3,
            ks: 3,
            stride: 1,
            tpad: super::super::kernels::TemporalPad::Same,
        };
        let x = Tensor::from_vec(
            &[2, 3, 3, 2],
            (0..36).map(|i| ((i * 29 % 13) as f64 - 6.0) / 6.0).collect(),
        );
        let params = vec![
            Tensor::from_vec(
                &conf.weight_shape(),
                (0..conf.k() * 3)
                    .map(|i| ((i * 53 % 31) as f64 - 15.0) / 60.0)
                    .collect(),
            ),
            Tensor::from_vec(&[3], vec![0.05, -0.1, 0.2]),
            Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64 - 6.0) / 12.0).collect()),
            Tensor::from_vec(&[4, 2], (0..8).map(|i| (i as f64 - 4.0) / 8.0).collect()),
            Tensor::from_vec(&[5, 3], (0..15).map(|i| (i as f64 - 7.0) / 15.0).collect()),
        ];
        let target = Tensor::from_vec(&[36, 2], (0..72).map(|i| (i as f64) / 72.0).collect());

        let forward = |params: &[Tensor]| -> (Tape, Var, Vec<Var>) {
            let mut tape = Tape::new();
            let xin = tape.constant(x.clone());
            let pv: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
            let h = tape.conv3d(xin, pv[0], conf);
            let h = tape.add_bias(h, pv[1]);
            let h = tape.silu(h);
            let tokens = tape.reshape(h, &[18, 3]);
            let emb = tape.gather_rows(pv[4], &[1, 3]);
            let erow = tape.reshape(emb, &[2, 3]);
            let q = tape.matmul(tokens, pv[2], false, false); // (18,4)
            let scores = tape.matmul(q, q, false, true); // (18,18)
            let scaled = tape.scale(scores, 0.5);
            let p = tape.softmax_rows(scaled);
            let mixed = tape.matmul(p, q, false, false); // (18,4)
            let out = tape.matmul(mixed, pv[3], false, false); // (18,2)
            // Fold the gathered embedding rows in so the table gets grads.
            let etok = tape.matmul(erow, pv[2], false, false); // (2,4)
            let cross = tape.matmul(mixed, etok, false, true); // (18,2)
            let both = tape.concat_last(&[out, cross]); // (18,4)
            let folded = tape.reshape(both, &[36, 2]);
            let half = tape.scale(folded, 0.7);
            let loss = tape.weighted_sq_err(half, target.clone(), None, 36.0);
            (tape, loss, pv)
        };

        let (tape, loss, pvars) = forward(&params);
        let grads = tape.backward(loss);

        let mut eval = |ps: &[Tensor]| -> f64 {
            let (tape, loss, _) = forward(ps);
            tape.value(loss).item()
        };
        for (pi, pvar) in pvars.iter().enumerate() {
            let g = grads[pvar.index()].as_ref().expect("param grad missing");
            let numel = params[pi].numel();
            for probe in [0, numel / 2, numel - 1] {
                let fd = central_difference(&mut eval, &params, pi, probe, 1e-5);
                let an = g.data()[probe];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "param {pi}[{probe}]: analytic {an} fd {fd}");
            }
        }
    }

    #[test]
    fn relu_and_sigmoid_gradients() {
        let x = Tensor::from_vec(&[4], vec![-1.5, -0.1, 0.2, 2.0]);
        let target = Tensor::zeros(&[4]);
        let forward = |ps: &[Tensor]| -> (Tape, Var, Var) {
            let mut tape = Tape::new();
            let p = tape.leaf(ps[0].clone(), true);
            let r = tape.relu(p);
            let s = tape.sigmoid_op(r);
            let loss = tape.weighted_sq_err(s, target.clone(), None, 4.0);
            (tape, loss, p)
        };
        let params = vec![x];
        let (tape, loss, pvar) = forward(&params);
        let grads = tape.backward(loss);
        let g = grads[pvar.index()].as_ref().unwrap();
        let mut eval = |ps: &[Tensor]| {
            let (tape, loss, _) = forward(ps);
            tape.value(loss).item()
        };
        for probe in 0..4 {
            let fd = central_difference(&mut eval, &params, 0, probe, 1e-6);
            assert!((g.data()[probe] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn weighted_sq_err_respects_weights() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]), true);
        let target = Tensor::zeros(&[3]);
        let loss = tape.weighted_sq_err(p, target, Some(vec![0.0, 1.0, 0.0]), 1.0);
        assert_eq!(tape.value(loss).item(), 4.0);
        let grads = tape.backward(loss);
        assert_eq!(grads[p.index()].as_ref().unwrap().data(), &[0.0, 4.0, 0.0]);
    }
}
