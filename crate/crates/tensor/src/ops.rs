//! Forward definitions of every differentiable operator.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tape::{numel, Op, Tape, Var};

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Mode switch for batch normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push_checked(op_name, self.shape(a).to_vec(), value, op, rg)
    }

    fn map_unary(&mut self, op_name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.any_grad(&[x]);
        self.push_checked(op_name, self.shape(x).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a bias vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let last = *xs.last().unwrap_or(&0);
        if self.shape(bias) != [last] {
            return Err(mismatch("add_bias", &xs, self.shape(bias)));
        }
        let b = self.value(bias).to_vec();
        let value = self
            .value(x)
            .chunks(last.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(v, bb)| v + bb))
            .collect();
        let rg = self.any_grad(&[x, bias]);
        self.push_checked("add_bias", xs, value, Op::AddBias(x, bias), rg)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map_unary("affine", x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Result<Var> {
        self.affine(x, 1.0, shift)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Dense product of a `[m, k]` and a `[k, n]` matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg)
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for t in 0..batch {
            gemm_acc(
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.any_grad(&[a, b]);
        self.push_checked("bmm", vec![batch, m, n], out, Op::Bmm { a, b, batch, m, k, n }, rg)
    }

    /// Applies `x · w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return Err(mismatch("linear", &xs, &ws));
        }
        let rows = numel(&xs) / ws[0];
        let flat = self.reshape(x, &[rows, ws[0]])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_bias(y, b)?;
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        self.reshape(y, &out_shape)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary("relu", x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Parametric ReLU with a single learnable slope (`slope` has shape `[1]`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != [1] {
            return Err(mismatch("prelu", self.shape(x), self.shape(slope)));
        }
        let a = self.value(slope)[0];
        let value = self.value(x).iter().map(|&v| if v > 0.0 { v } else { a * v }).collect();
        let rg = self.any_grad(&[x, slope]);
        self.push_checked("prelu", self.shape(x).to_vec(), value, Op::Prelu(x, slope), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary("sigmoid", x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map_unary("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map_unary("log", x, Op::Log(x), f64::ln)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let rg = self.any_grad(&[x]);
        self.push_checked("sum", vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(mismatch("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let rg = self.any_grad(&[x]);
        self.push_checked("reshape", shape.to_vec(), value, Op::Reshape(x), rg)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of {} axes", xs.len())));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let value = permute_values(self.value(x), &xs, perm);
        let rg = self.any_grad(&[x]);
        self.push_checked("permute", out_shape, value, Op::Permute(x, perm.to_vec()), rg)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(invalid("concat", "no inputs")),
        };
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for rank {}", first.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.any_grad(xs);
        self.push_checked("concat", shape, out, Op::Concat(xs.to_vec(), axis), rg)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(invalid("narrow", format!("range {start}..{} on axis {axis} of {xs:?}", start + len)));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        let v = self.value(x);
        for o in 0..outer {
            let base = (o * xs[axis] + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        self.push_checked("narrow", shape, out, Op::Narrow { x, axis, start }, rg)
    }

    /// Selects rows (entries along axis 0); indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(invalid("gather_rows", "rank-0 input"));
        }
        let inner: usize = xs[1..].iter().product();
        if let Some(&bad) = indices.iter().find(|&&i| i >= xs[0]) {
            return Err(invalid("gather_rows", format!("index {bad} out of range {}", xs[0])));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&v[i * inner..(i + 1) * inner]);
        }
        let mut shape = xs;
        shape[0] = indices.len();
        let rg = self.any_grad(&[x]);
        self.push_checked("gather_rows", shape, out, Op::Gather(x, indices.to_vec()), rg)
    }

    /// Temporal convolution with "same" zero padding.
    /// `x: [B, C_in, L]`, `w: [C_out, C_in, K]` (K odd), `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || ws[2] % 2 == 0 || self.shape(b) != [ws[0]] {
            return Err(mismatch("conv1d", &xs, &ws));
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let pad = k / 2;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; batch * cout * len];
        for n in 0..batch {
            for o in 0..cout {
                let row = &mut out[(n * cout + o) * len..(n * cout + o + 1) * len];
                row.iter_mut().for_each(|r| *r = bv[o]);
                for c in 0..cin {
                    let xrow = &xv[(n * cin + c) * len..(n * cin + c + 1) * len];
                    for kk in 0..k {
                        let wk = wv[(o * cin + c) * k + kk];
                        for t in 0..len {
                            let src = t + kk;
                            if src >= pad && src - pad < len {
                                row[t] += wk * xrow[src - pad];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        self.push_checked("conv1d", vec![batch, cout, len], out, Op::Conv1d { x, w, b }, rg)
    }

    /// 2-D convolution with "same" zero padding.
    /// `x: [B, C_in, H, W]`, `w: [C_out, C_in, KH, KW]` (odd kernels), `b: [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4
            || ws.len() != 4
            || xs[1] != ws[1]
            || ws[2] % 2 == 0
            || ws[3] % 2 == 0
            || self.shape(b) != [ws[0]]
        {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let plane = h * wd;
        let mut out = vec![0.0; batch * cout * plane];
        for n in 0..batch {
            for o in 0..cout {
                let dst = &mut out[(n * cout + o) * plane..(n * cout + o + 1) * plane];
                dst.iter_mut().for_each(|r| *r = bv[o]);
                for c in 0..cin {
                    let src = &xv[(n * cin + c) * plane..(n * cin + c + 1) * plane];
                    for di in 0..kh {
                        for dj in 0..kw {
                            let wk = wv[((o * cin + c) * kh + di) * kw + dj];
                            for i in 0..h {
                                let si = i + di;
                                if si < ph || si - ph >= h {
                                    continue;
                                }
                                for j in 0..wd {
                                    let sj = j + dj;
                                    if sj >= pw && sj - pw < wd {
                                        dst[i * wd + j] += wk * src[(si - ph) * wd + sj - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        self.push_checked("conv2d", vec![batch, cout, h, wd], out, Op::Conv2d { x, w, b }, rg)
    }

    /// Batch normalization over axis 1 of `x: [B, C, ...]`.
    ///
    /// In [`BatchNormMode::Train`] the batch statistics are returned so the
    /// caller can update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(invalid("batch_norm", format!("need rank >= 2, got {xs:?}")));
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(mismatch("batch_norm", &xs, self.shape(gamma)));
        }
        let count = batch * inner;
        if count == 0 {
            return Err(invalid("batch_norm", "empty batch"));
        }
        let xv = self.value(x);
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for n in 0..batch {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        mean[c] += xv[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for n in 0..batch {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        var[c] += xv[base..base + inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                let unbiased: Vec<f64> = var
                    .iter()
                    .map(|v| if count > 1 { v / (count - 1) as f64 } else { 0.0 })
                    .collect();
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != ch || running_var.len() != ch {
                    return Err(mismatch("batch_norm", &[ch], &[running_mean.len(), running_var.len()]));
                }
                (running_mean.to_vec(), running_var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for n in 0..batch {
            for c in 0..ch {
                let base = (n * ch + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (xv[i] - mean[c]) * inv_std[c];
                    out[i] = gv[c] * xhat[i] + bv[c];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: stats.is_some(),
        };
        let y = self.push_checked("batch_norm", xs, out, op, rg)?;
        Ok((y, stats))
    }

    /// Inverted dropout. With `training == false` (or `p == 0`) this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.any_grad(&[x]);
        self.push_checked("dropout", self.shape(x).to_vec(), value, Op::Dropout(x, mask), rg)
    }

    /// Symmetric degree normalization of a stack of nonnegative adjacency
    /// matrices: `D^{-1/2} (E + I) D^{-1/2}` per frame, where `D` holds the
    /// row sums of `E + I`. Accepts `[N, N]` or `[T, N, N]`.
    pub fn gcn_normalize(&mut self, e: Var) -> Result<Var> {
        let es = self.shape(e).to_vec();
        let (frames, n) = match es.as_slice() {
            [a, b] if a == b => (1, *a),
            [t, a, b] if a == b => (*t, *a),
            _ => return Err(invalid("gcn_normalize", format!("expected square matrices, got {es:?}"))),
        };
        let ev = self.value(e);
        let mut out = vec![0.0; ev.len()];
        for t in 0..frames {
            let m = &ev[t * n * n..(t + 1) * n * n];
            let mut s = vec![0.0; n];
            for i in 0..n {
                let d = 1.0 + m[i * n..(i + 1) * n].iter().sum::<f64>();
                if d <= 0.0 || !d.is_finite() {
                    return Err(invalid("gcn_normalize", format!("non-positive degree {d} at node {i}")));
                }
                s[i] = 1.0 / d.sqrt();
            }
            let o = &mut out[t * n * n..(t + 1) * n * n];
            for i in 0..n {
                for j in 0..n {
                    let a = m[i * n + j] + if i == j { 1.0 } else { 0.0 };
                    o[i * n + j] = s[i] * a * s[j];
                }
            }
        }
        let rg = self.any_grad(&[e]);
        self.push_checked("gcn_normalize", es, out, Op::GcnNormalize(e), rg)
    }
}

/// `out += a · b` for row-major `a: [m, k]`, `b: [k, n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn permute_values(v: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total = v.len();
    let mut out = Vec::with_capacity(total);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        let src: usize = (0..rank).map(|d| idx[d] * in_strides[perm[d]]).sum();
        out.push(v[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
