//! Computation tape: forward ops record nodes, `backward` replays the
//! derivative rules in reverse.

use super::gemm::gemm;
use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    /// `[m, k] * [k, n]`
    Matmul(Var, Var),
    /// `[rows, cols] + [cols]`, broadcast over rows.
    BiasAdd(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    /// `[b, c, h, w] -> [b, c]`, mean over the spatial dims.
    GlobalAvgPool(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Mean over rows of `-log softmax(logits)[target]`; caches the softmax.
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

/// Records a single forward computation; dropped (or reused via [`Tape::new`]
/// per step) once gradients have been read back.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register an input or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] call.
    /// Zero for leaves the loss does not reach.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let data = match &node.grad {
            Some(g) => g.clone(),
            None => vec![0.0; node.value.numel()],
        };
        Tensor {
            shape: node.value.shape().to_vec(),
            data,
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var) -> Op,
    ) -> Result<Var, TensorError> {
        self.same_shape(op, a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(make(a, b), Tensor { shape, data }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.nodes[a.0].value.data().iter().map(|&x| c * x).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, c), Tensor { shape, data })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| x.max(0.0))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), Tensor { shape, data })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| softplus(x))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Softplus(a), Tensor { shape, data })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        gemm(
            false,
            false,
            m,
            k,
            n,
            1.0,
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            0.0,
            &mut data,
        );
        Ok(self.push(
            Op::Matmul(a, b),
            Tensor {
                shape: vec![m, n],
                data,
            },
        ))
    }

    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (rows, cols) = (sa[0], sa[1]);
        let mut data = self.nodes[a.0].value.data().to_vec();
        let b = self.nodes[bias.0].value.data();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += b[c];
            }
        }
        Ok(self.push(
            Op::BiasAdd(a, bias),
            Tensor {
                shape: vec![rows, cols],
                data,
            },
        ))
    }

    /// 2-d convolution of `[b, c_in, h, w]` with `[c_out, c_in, kh, kw]` plus
    /// a per-channel bias, zero padding, no dilation. Implemented as
    /// per-sample im2col followed by one gemm.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeom::resolve(
            self.shape(input),
            self.shape(weight),
            self.shape(bias),
            stride,
            pad,
        )?;
        let x = self.nodes[input.0].value.data();
        let w = self.nodes[weight.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let mut out = vec![0.0; geom.batch * geom.c_out * geom.out_hw()];
        let mut col = vec![0.0; geom.col_len()];
        for i in 0..geom.batch {
            geom.im2col(&x[i * geom.in_len()..(i + 1) * geom.in_len()], &mut col);
            let o = &mut out[i * geom.c_out * geom.out_hw()..(i + 1) * geom.c_out * geom.out_hw()];
            // [c_out, ck2] * [ck2, oh*ow]
            gemm(
                false,
                false,
                geom.c_out,
                geom.ck2(),
                geom.out_hw(),
                1.0,
                w,
                &col,
                0.0,
                o,
            );
            for c in 0..geom.c_out {
                for p in 0..geom.out_hw() {
                    o[c * geom.out_hw() + p] += b[c];
                }
            }
        }
        let shape = vec![geom.batch, geom.c_out, geom.out_h, geom.out_w];
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            Tensor { shape, data: out },
        ))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "global_avg_pool",
                shape: s.to_vec(),
                reason: "expected [batch, channels, h, w]".into(),
            });
        }
        let (batch, ch, hw) = (s[0], s[1], s[2] * s[3]);
        let x = self.nodes[a.0].value.data();
        let mut data = vec![0.0; batch * ch];
        for i in 0..batch * ch {
            let sum: f64 = x[i * hw..(i + 1) * hw].iter().sum();
            data[i] = sum / hw as f64;
        }
        Ok(self.push(
            Op::GlobalAvgPool(a),
            Tensor {
                shape: vec![batch, ch],
                data,
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel() as f64;
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::MeanAll(a), Tensor::scalar(s / n))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, stabilized by
    /// max-subtraction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::InvalidShape {
                op: "softmax_cross_entropy",
                shape: s.to_vec(),
                reason: format!("expected [batch={}, classes] logits", targets.len()),
            });
        }
        let (batch, classes) = (s[0], s[1]);
        for &t in targets {
            if t >= classes {
                return Err(TensorError::TargetOutOfRange { target: t, classes });
            }
        }
        let x = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for r in 0..batch {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..classes {
                let e = (row[c] - max).exp();
                probs[r * classes + c] = e;
                sum += e;
            }
            for c in 0..classes {
                probs[r * classes + c] /= sum;
            }
            // -log softmax[t] = log(sum exp shifted) - shifted[t]
            total += sum.ln() - (row[targets[r]] - max);
        }
        let value = Tensor::scalar(total / batch as f64);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            value,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.same_shape("mse", pred, target)?;
        let p = self.nodes[pred.0].value.data();
        let t = self.nodes[target.0].value.data();
        let n = p.len() as f64;
        let s: f64 = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(s / n)))
    }

    /// Populate gradients of everything reachable from `loss`, which must be
    /// a single-element tensor. Each node is visited exactly once, in reverse
    /// insertion order; a value consumed by several ops receives the sum of
    /// their partials.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                numel: self.nodes[loss.0].value.numel(),
            });
        }
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.value.numel()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = self.nodes[i].grad.take().unwrap();
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Split borrows by taking the op out while distributing partials.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(self.nodes[a.0].grad.as_mut().unwrap(), g);
                add_into(self.nodes[b.0].grad.as_mut().unwrap(), g);
            }
            Op::Sub(a, b) => {
                add_into(self.nodes[a.0].grad.as_mut().unwrap(), g);
                for (acc, &gv) in self.nodes[b.0].grad.as_mut().unwrap().iter_mut().zip(g) {
                    *acc -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bd = self.nodes[b.0].value.data().to_vec();
                for ((acc, &gv), &bv) in self.nodes[a.0]
                    .grad
                    .as_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(g)
                    .zip(&bd)
                {
                    *acc += gv * bv;
                }
                let ad = self.nodes[a.0].value.data().to_vec();
                for ((acc, &gv), &av) in self.nodes[b.0]
                    .grad
                    .as_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(g)
                    .zip(&ad)
                {
                    *acc += gv * av;
                }
            }
            Op::Scale(a, c) => {
                for (acc, &gv) in self.nodes[a.0].grad.as_mut().unwrap().iter_mut().zip(g) {
                    *acc += c * gv;
                }
            }
            Op::Relu(a) => {
                let a = *a;
                let xd = &self.nodes[a.0].value;
                let dg: Vec<f64> = g
                    .iter()
                    .zip(xd.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                add_into(self.nodes[a.0].grad.as_mut().unwrap(), &dg);
            }
            Op::Softplus(a) => {
                let a = *a;
                let dg: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[a.0].value.data())
                    .map(|(&gv, &x)| gv * sigmoid(x))
                    .collect();
                add_into(self.nodes[a.0].grad.as_mut().unwrap(), &dg);
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let sa = self.nodes[a.0].value.shape().to_vec();
                let sb = self.nodes[b.0].value.shape().to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA += g * B^T
                let bd = self.nodes[b.0].value.data().to_vec();
                gemm(
                    false,
                    true,
                    m,
                    n,
                    k,
                    1.0,
                    g,
                    &bd,
                    1.0,
                    self.nodes[a.0].grad.as_mut().unwrap(),
                );
                // dB += A^T * g
                let ad = self.nodes[a.0].value.data().to_vec();
                gemm(
                    true,
                    false,
                    k,
                    m,
                    n,
                    1.0,
                    &ad,
                    g,
                    1.0,
                    self.nodes[b.0].grad.as_mut().unwrap(),
                );
            }
            Op::BiasAdd(a, bias) => {
                add_into(self.nodes[a.0].grad.as_mut().unwrap(), g);
                let cols = self.nodes[bias.0].value.numel();
                let db = self.nodes[bias.0].grad.as_mut().unwrap();
                for (i, &gv) in g.iter().enumerate() {
                    db[i % cols] += gv;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                self.conv2d_backward(*input, *weight, *bias, *stride, *pad, g);
            }
            Op::GlobalAvgPool(a) => {
                let a = *a;
                let s = self.nodes[a.0].value.shape().to_vec();
                let hw = s[2] * s[3];
                let da = self.nodes[a.0].grad.as_mut().unwrap();
                for i in 0..s[0] * s[1] {
                    let gv = g[i] / hw as f64;
                    for p in 0..hw {
                        da[i * hw + p] += gv;
                    }
                }
            }
            Op::SumAll(a) => {
                for acc in self.nodes[a.0].grad.as_mut().unwrap().iter_mut() {
                    *acc += g[0];
                }
            }
            Op::MeanAll(a) => {
                let a = *a;
                let n = self.nodes[a.0].value.numel() as f64;
                for acc in self.nodes[a.0].grad.as_mut().unwrap().iter_mut() {
                    *acc += g[0] / n;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let batch = targets.len();
                let classes = probs.len() / batch;
                let dl = self.nodes[logits.0].grad.as_mut().unwrap();
                for r in 0..batch {
                    for c in 0..classes {
                        let ind = if c == targets[r] { 1.0 } else { 0.0 };
                        dl[r * classes + c] += g[0] * (probs[r * classes + c] - ind) / batch as f64;
                    }
                }
            }
            Op::Mse(pred, target) => {
                let (pred, target) = (*pred, *target);
                let n = self.nodes[pred.0].value.numel() as f64;
                let diff: Vec<f64> = self.nodes[pred.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[target.0].value.data())
                    .map(|(&p, &t)| 2.0 * (p - t) / n)
                    .collect();
                let dp = self.nodes[pred.0].grad.as_mut().unwrap();
                for (acc, &d) in dp.iter_mut().zip(&diff) {
                    *acc += g[0] * d;
                }
                let dt = self.nodes[target.0].grad.as_mut().unwrap();
                for (acc, &d) in dt.iter_mut().zip(&diff) {
                    *acc -= g[0] * d;
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        g: &[f64],
    ) {
        let geom = ConvGeom::resolve(
            self.nodes[input.0].value.shape(),
            self.nodes[weight.0].value.shape(),
            self.nodes[bias.0].value.shape(),
            stride,
            pad,
        )
        .expect("shapes validated in forward");
        let x = self.nodes[input.0].value.data().to_vec();
        let w = self.nodes[weight.0].value.data().to_vec();
        let mut col = vec![0.0; geom.col_len()];
        let mut dcol = vec![0.0; geom.col_len()];
        for i in 0..geom.batch {
            let go = &g[i * geom.c_out * geom.out_hw()..(i + 1) * geom.c_out * geom.out_hw()];
            // db[o] += sum over spatial positions
            {
                let db = self.nodes[bias.0].grad.as_mut().unwrap();
                for c in 0..geom.c_out {
                    db[c] += go[c * geom.out_hw()..(c + 1) * geom.out_hw()]
                        .iter()
                        .sum::<f64>();
                }
            }
            // dW += go * col^T
            geom.im2col(&x[i * geom.in_len()..(i + 1) * geom.in_len()], &mut col);
            gemm(
                false,
                true,
                geom.c_out,
                geom.out_hw(),
                geom.ck2(),
                1.0,
                go,
                &col,
                1.0,
                self.nodes[weight.0].grad.as_mut().unwrap(),
            );
            // dcol = W^T * go, then scatter back to input positions
            gemm(
                true,
                false,
                geom.ck2(),
                geom.c_out,
                geom.out_hw(),
                1.0,
                &w,
                go,
                0.0,
                &mut dcol,
            );
            let dx = &mut self.nodes[input.0].grad.as_mut().unwrap()
                [i * geom.in_len()..(i + 1) * geom.in_len()];
            geom.col2im(&dcol, dx);
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Resolved conv shapes shared by forward and backward.
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn resolve(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        if input.len() != 4 || weight.len() != 4 || bias.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        let (batch, c_in, h, w) = (input[0], input[1], input[2], input[3]);
        let (c_out, kc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if kc != c_in || bias[0] != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::ConvGeometry {
                input: input.to_vec(),
                kernel: weight.to_vec(),
                stride,
                pad,
            });
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    fn ck2(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn col_len(&self) -> usize {
        self.ck2() * self.out_hw()
    }

    /// Unfold one sample `[c_in, h, w]` into `[c_in*kh*kw, out_h*out_w]`,
    /// zero-filling padded positions.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let mut row = 0;
        for c in 0..self.c_in {
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            let v = if ih >= 0
                                && (ih as usize) < self.h
                                && iw >= 0
                                && (iw as usize) < self.w
                            {
                                x[c * self.h * self.w + ih as usize * self.w + iw as usize]
                            } else {
                                0.0
                            };
                            col[row * self.out_hw() + oh * self.out_w + ow] = v;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: accumulate column gradients back onto
    /// input positions (padded positions are discarded).
    fn col2im(&self, dcol: &[f64], dx: &mut [f64]) {
        let mut row = 0;
        for c in 0..self.c_in {
            for kh in 0..self.kh {
                for kw in 0..self.kw {
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            if ih >= 0
                                && (ih as usize) < self.h
                                && iw >= 0
                                && (iw as usize) < self.w
                            {
                                dx[c * self.h * self.w + ih as usize * self.w + iw as usize] +=
                                    dcol[row * self.out_hw() + oh * self.out_w + ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = t(&[3, 3], &[0.3, -1.2, 4.0, 2.2, 0.0, -7.5, 1.1, 9.9, 0.5]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let i = tape.leaf(eye);
        let av = tape.leaf(a.clone());
        let prod = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(prod).data(), a.data());
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn conv2d_ones() {
        // 4x4 ones, 2x2 ones kernel, stride 1, no pad -> 3x3 of fours
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 1, 4, 4], 1.0));
        let w = tape.leaf(Tensor::full(vec![1, 1, 2, 2], 1.0));
        let b = tape.leaf(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv2d_kernel_must_fit() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]));
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 5, 5]));
        let b = tape.leaf(Tensor::zeros(vec![1]));
        assert!(matches!(
            tape.conv2d(x, w, b, 1, 0),
            Err(TensorError::ConvGeometry { .. })
        ));
    }

    #[test]
    fn backward_square() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[6.0]);
    }

    #[test]
    fn backward_product() {
        // f(x, y) = x*y at (2, 5) -> grads (5, 2)
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let p = tape.mul(x, y).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(x).data(), &[5.0]);
        assert_eq!(tape.grad(y).data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![3]));
        let y = tape.relu(x);
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarLoss { numel: 3 })
        ));
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let unused = tape.leaf(Tensor::scalar(9.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused).data(), &[0.0]);
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 2], &[0.0, 0.0]));
        let ce = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_no_overflow() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 2], &[1000.0, 0.0]));
        let ce = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let v = tape.value(ce).item().unwrap();
        assert!(v.is_finite());
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_closed_form() {
        // logits [1, 2], target 1 -> log(1 + e^-1)
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let ce = tape.softmax_cross_entropy(logits, &[1]).unwrap();
        let expected = (-1.0f64).exp().ln_1p();
        assert!((tape.value(ce).item().unwrap() - expected).abs() < 1e-12);
        // frozen closed-form value
        assert!((tape.value(ce).item().unwrap() - 0.313_261_687_518_222_84).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 2], &[0.0, 0.0]));
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[2]),
            Err(TensorError::TargetOutOfRange {
                target: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2], &[0.0, 0.0]));
        let q = tape.leaf(t(&[2], &[2.0, 4.0]));
        let same = tape.mse(p, p).unwrap();
        assert_eq!(tape.value(same).item().unwrap(), 0.0);
        let loss = tape.mse(p, q).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 10.0);
    }

    #[test]
    fn mse_gradient_closed_form() {
        // d mse / d pred = 2 (pred - target) / n
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2], &[1.0, -3.0]));
        let q = tape.leaf(t(&[2], &[2.0, 4.0]));
        let loss = tape.mse(p, q).unwrap();
        tape.backward(loss).unwrap();
        let gp = tape.grad(p);
        assert!((gp.data()[0] - 2.0 * (1.0 - 2.0) / 2.0).abs() < 1e-15);
        assert!((gp.data()[1] - 2.0 * (-3.0 - 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_linearity_over_graph_sum() {
        // backward(f + g) == backward(f) + backward(g) on shared leaves
        let xv = t(&[2, 2], &[0.4, -1.1, 2.3, 0.9]);

        let grads = |build_sum: bool| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone());
            let f = {
                let sq = tape.mul(x, x).unwrap();
                tape.sum_all(sq)
            };
            let g = {
                let r = tape.relu(x);
                tape.mean_all(r)
            };
            if build_sum {
                let s = tape.add(f, g).unwrap();
                tape.backward(s).unwrap();
                (tape.grad(x).data().to_vec(), vec![])
            } else {
                tape.backward(f).unwrap();
                let gf = tape.grad(x).data().to_vec();
                let mut tape2 = Tape::new();
                let x2 = tape2.leaf(xv.clone());
                let r = tape2.relu(x2);
                let g2 = tape2.mean_all(r);
                tape2.backward(g2).unwrap();
                (gf, tape2.grad(x2).data().to_vec())
            }
        };

        let (summed, _) = grads(true);
        let (gf, gg) = grads(false);
        for i in 0..4 {
            assert!((summed[i] - (gf[i] + gg[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn ops_are_bit_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[2, 1, 4, 4], &(0..32).map(|i| (i as f64).sin()).collect::<Vec<_>>()));
            let w = tape.leaf(t(&[3, 1, 3, 3], &(0..27).map(|i| (i as f64).cos()).collect::<Vec<_>>()));
            let b = tape.leaf(t(&[3], &[0.1, -0.2, 0.3]));
            let c = tape.conv2d(x, w, b, 2, 1).unwrap();
            let r = tape.relu(c);
            let p = tape.global_avg_pool(r).unwrap();
            let loss = tape.mean_all(p);
            tape.backward(loss).unwrap();
            (
                tape.value(loss).item().unwrap().to_bits(),
                tape.grad(w).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softplus_is_stable_and_positive() {
        assert!(softplus(-50.0) > 0.0);
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0).is_finite());
    }
}

#[cfg(test)]
mod fd_tests {
    use super::super::check::assert_grad_matches_fd;
    use super::*;

    fn seeded(shape: &[usize], scale: f64, phase: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| scale * (0.7 * i as f64 + phase).sin())
            .collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn fd_add_sub_mul_scale() {
        let a = seeded(&[2, 3], 1.0, 0.1);
        let b = seeded(&[2, 3], 0.8, 1.3);
        assert_grad_matches_fd(
            &[a, b],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let y = tape.leaf(ins[1].clone());
                let s = tape.add(x, y).unwrap();
                let d = tape.sub(s, y).unwrap();
                let m = tape.mul(d, s).unwrap();
                let sc = tape.scale(m, -1.7);
                (tape.sum_all(sc), vec![x, y])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_relu_away_from_kink() {
        // Offsets keep every activation at least 0.05 from zero, where the FD
        // probe (h = 1e-5) cannot straddle the kink.
        let a = seeded(&[7], 1.0, 0.4);
        assert_grad_matches_fd(
            &[a],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let r = tape.relu(x);
                (tape.sum_all(r), vec![x])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_softplus() {
        let a = seeded(&[6], 3.0, 0.9);
        assert_grad_matches_fd(
            &[a],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let s = tape.softplus(x);
                (tape.mean_all(s), vec![x])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_matmul_bias_add() {
        let x = seeded(&[3, 4], 1.0, 0.2);
        let w = seeded(&[4, 2], 0.5, 2.1);
        let b = seeded(&[2], 0.3, 0.7);
        assert_grad_matches_fd(
            &[x, w, b],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let w = tape.leaf(ins[1].clone());
                let b = tape.leaf(ins[2].clone());
                let h = tape.matmul(x, w).unwrap();
                let h = tape.bias_add(h, b).unwrap();
                let sq = tape.mul(h, h).unwrap();
                (tape.mean_all(sq), vec![x, w, b])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_conv2d_with_stride_and_pad() {
        let x = seeded(&[2, 2, 5, 5], 1.0, 0.3);
        let w = seeded(&[3, 2, 3, 3], 0.4, 1.9);
        let b = seeded(&[3], 0.2, 0.5);
        assert_grad_matches_fd(
            &[x, w, b],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let w = tape.leaf(ins[1].clone());
                let b = tape.leaf(ins[2].clone());
                let c = tape.conv2d(x, w, b, 2, 1).unwrap();
                let sq = tape.mul(c, c).unwrap();
                (tape.sum_all(sq), vec![x, w, b])
            },
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn fd_global_avg_pool() {
        let x = seeded(&[2, 3, 4, 4], 1.0, 0.6);
        assert_grad_matches_fd(
            &[x],
            |tape, ins| {
                let x = tape.leaf(ins[0].clone());
                let p = tape.global_avg_pool(x).unwrap();
                let sq = tape.mul(p, p).unwrap();
                (tape.sum_all(sq), vec![x])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_softmax_cross_entropy() {
        let logits = seeded(&[4, 3], 2.0, 1.1);
        assert_grad_matches_fd(
            &[logits],
            |tape, ins| {
                let l = tape.leaf(ins[0].clone());
                let ce = tape.softmax_cross_entropy(l, &[0, 2, 1, 2]).unwrap();
                (ce, vec![l])
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn fd_mse() {
        let p = seeded(&[5], 1.5, 0.8);
        let t = seeded(&[5], 1.5, 2.4);
        assert_grad_matches_fd(
            &[p, t],
            |tape, ins| {
                let p = tape.leaf(ins[0].clone());
                let t = tape.leaf(ins[1].clone());
                let l = tape.mse(p, t).unwrap();
                (l, vec![p, t])
            },
            1e-5,
            1e-6,
        );
    }
}
