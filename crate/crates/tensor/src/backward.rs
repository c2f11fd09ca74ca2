//! Vector-Jacobian products for each [`Op`].

use crate::ops::{gemm_acc, permute_values};
use crate::tape::{accumulate, grad_mut, Node, Op};

/// Pushes the gradient held by `node` into its inputs (all of which live in `before`).
pub(crate) fn propagate(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(before, *a, g.iter().copied());
            accumulate(before, *b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            accumulate(before, *a, g.iter().copied());
            accumulate(before, *b, g.iter().map(|v| -v));
        }
        Op::Mul(a, b) => {
            if a == b {
                let av = before[a.0].value.clone();
                accumulate(before, *a, g.iter().zip(&av).map(|(g, x)| 2.0 * g * x));
                return;
            }
            let bv = before[b.0].value.clone();
            accumulate(before, *a, g.iter().zip(&bv).map(|(g, y)| g * y));
            let av = before[a.0].value.clone();
            accumulate(before, *b, g.iter().zip(&av).map(|(g, x)| g * x));
        }
        Op::Div(a, b) => {
            let bv = before[b.0].value.clone();
            if a == b {
                // x / x is constant.
                return;
            }
            accumulate(before, *a, g.iter().zip(&bv).map(|(g, y)| g / y));
            let av = before[a.0].value.clone();
            accumulate(
                before,
                *b,
                g.iter().zip(av.iter().zip(&bv)).map(|(g, (x, y))| -g * x / (y * y)),
            );
        }
        Op::AddBias(x, b) => {
            accumulate(before, *x, g.iter().copied());
            let n = before[b.0].value.len();
            if let Some(gb) = grad_mut(before, *b) {
                for row in g.chunks(n.max(1)) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
        }
        Op::Affine(x, scale) => accumulate(before, *x, g.iter().map(|v| v * scale)),
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if before[a.0].requires_grad {
                let bt = transpose(&before[b.0].value, k, n);
                let mut da = vec![0.0; m * k];
                gemm_acc(g, &bt, &mut da, m, n, k);
                accumulate(before, *a, da);
            }
            if before[b.0].requires_grad {
                let at = transpose(&before[a.0].value, m, k);
                let mut db = vec![0.0; k * n];
                gemm_acc(&at, g, &mut db, k, m, n);
                accumulate(before, *b, db);
            }
        }
        Op::Bmm { a, b, batch, m, k, n } => {
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            if before[a.0].requires_grad {
                let bv = &before[b.0].value;
                let mut da = vec![0.0; batch * m * k];
                for t in 0..batch {
                    let bt = transpose(&bv[t * k * n..(t + 1) * k * n], k, n);
                    gemm_acc(&g[t * m * n..(t + 1) * m * n], &bt, &mut da[t * m * k..(t + 1) * m * k], m, n, k);
                }
                accumulate(before, *a, da);
            }
            if before[b.0].requires_grad {
                let av = &before[a.0].value;
                let mut db = vec![0.0; batch * k * n];
                for t in 0..batch {
                    let at = transpose(&av[t * m * k..(t + 1) * m * k], m, k);
                    gemm_acc(&at, &g[t * m * n..(t + 1) * m * n], &mut db[t * k * n..(t + 1) * k * n], k, m, n);
                }
                accumulate(before, *b, db);
            }
        }
        Op::Relu(x) => {
            let xv = before[x.0].value.clone();
            accumulate(before, *x, g.iter().zip(&xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }));
        }
        Op::Prelu(x, slope) => {
            let xv = before[x.0].value.clone();
            let a = before[slope.0].value[0];
            accumulate(before, *x, g.iter().zip(&xv).map(|(g, v)| if *v > 0.0 { *g } else { a * g }));
            let da: f64 = g.iter().zip(&xv).filter(|(_, v)| **v <= 0.0).map(|(g, v)| g * v).sum();
            accumulate(before, *slope, [da]);
        }
        Op::Sigmoid(x) => accumulate(before, *x, g.iter().zip(&node.value).map(|(g, y)| g * y * (1.0 - y))),
        Op::Tanh(x) => accumulate(before, *x, g.iter().zip(&node.value).map(|(g, y)| g * (1.0 - y * y))),
        Op::Exp(x) => accumulate(before, *x, g.iter().zip(&node.value).map(|(g, y)| g * y)),
        Op::Log(x) => {
            let xv = before[x.0].value.clone();
            accumulate(before, *x, g.iter().zip(&xv).map(|(g, v)| g / v));
        }
        Op::Sum(x) => {
            let n = before[x.0].value.len();
            let g0 = g[0];
            accumulate(before, *x, std::iter::repeat_n(g0, n));
        }
        Op::Reshape(x) => accumulate(before, *x, g.iter().copied()),
        Op::Permute(x, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let back = permute_values(g, &node.shape, &inv);
            accumulate(before, *x, back);
        }
        Op::Concat(xs, axis) => {
            let axis = *axis;
            let outer: usize = node.shape[..axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[axis] * inner;
            let mut offset = 0;
            for v in xs {
                let len = before[v.0].shape[axis] * inner;
                if let Some(gv) = grad_mut(before, *v) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + len];
                        for (acc, s) in gv[o * len..(o + 1) * len].iter_mut().zip(src) {
                            *acc += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let (axis, start) = (*axis, *start);
            let full = before[x.0].shape.clone();
            let outer: usize = full[..axis].iter().product();
            let inner: usize = full[axis + 1..].iter().product();
            let len = node.shape[axis] * inner;
            if let Some(gx) = grad_mut(before, *x) {
                for o in 0..outer {
                    let base = (o * full[axis] + start) * inner;
                    for (acc, s) in gx[base..base + len].iter_mut().zip(&g[o * len..(o + 1) * len]) {
                        *acc += s;
                    }
                }
            }
        }
        Op::Gather(x, indices) => {
            let inner: usize = node.shape[1..].iter().product();
            if let Some(gx) = grad_mut(before, *x) {
                for (r, &i) in indices.iter().enumerate() {
                    for (acc, s) in gx[i * inner..(i + 1) * inner].iter_mut().zip(&g[r * inner..(r + 1) * inner]) {
                        *acc += s;
                    }
                }
            }
        }
        Op::Conv1d { x, w, b } => conv1d_backward(g, *x, *w, *b, before),
        Op::Conv2d { x, w, b } => conv2d_backward(g, *x, *w, *b, before),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let shape = before[x.0].shape.clone();
            let (batch, ch) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let count = (batch * inner) as f64;
            let mut sum_g = vec![0.0; ch];
            let mut sum_gx = vec![0.0; ch];
            for n in 0..batch {
                for c in 0..ch {
                    let base = (n * ch + c) * inner;
                    for i in base..base + inner {
                        sum_g[c] += g[i];
                        sum_gx[c] += g[i] * xhat[i];
                    }
                }
            }
            accumulate(before, *gamma, sum_gx.clone());
            accumulate(before, *beta, sum_g.clone());
            let gv = before[gamma.0].value.clone();
            if let Some(gx) = grad_mut(before, *x) {
                for n in 0..batch {
                    for c in 0..ch {
                        let base = (n * ch + c) * inner;
                        let k = gv[c] * inv_std[c];
                        for i in base..base + inner {
                            gx[i] += if *batch_stats {
                                k / count * (count * g[i] - sum_g[c] - xhat[i] * sum_gx[c])
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
        }
        Op::Dropout(x, mask) => accumulate(before, *x, g.iter().zip(mask).map(|(g, m)| g * m)),
        Op::GcnNormalize(e) => {
            let shape = before[e.0].shape.clone();
            let n = *shape.last().unwrap();
            let frames = before[e.0].value.len() / (n * n).max(1);
            let ev = before[e.0].value.clone();
            let out = &node.value;
            let mut de = vec![0.0; ev.len()];
            for t in 0..frames {
                let off = t * n * n;
                let deg: Vec<f64> = (0..n)
                    .map(|i| 1.0 + ev[off + i * n..off + (i + 1) * n].iter().sum::<f64>())
                    .collect();
                // dL/dd_a = -1/(2 d_a) * (sum_j G_aj A_aj + sum_i G_ia A_ia)
                let mut dd = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let ga = g[off + i * n + j] * out[off + i * n + j];
                        dd[i] += ga;
                        dd[j] += ga;
                    }
                }
                for a in 0..n {
                    dd[a] *= -0.5 / deg[a];
                }
                for a in 0..n {
                    let sa = 1.0 / deg[a].sqrt();
                    for b in 0..n {
                        let sb = 1.0 / deg[b].sqrt();
                        de[off + a * n + b] = g[off + a * n + b] * sa * sb + dd[a];
                    }
                }
            }
            accumulate(before, *e, de);
        }
    }
}

fn transpose(v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

fn conv1d_backward(g: &[f64], x: crate::Var, w: crate::Var, b: crate::Var, before: &mut [Node]) {
    let xs = before[x.0].shape.clone();
    let ws = before[w.0].shape.clone();
    let (batch, cin, len) = (xs[0], xs[1], xs[2]);
    let (cout, k) = (ws[0], ws[2]);
    let pad = k / 2;
    let xv = before[x.0].value.clone();
    let wv = before[w.0].value.clone();
    let mut dx = vec![0.0; xv.len()];
    let mut dw = vec![0.0; wv.len()];
    let mut db = vec![0.0; cout];
    for n in 0..batch {
        for o in 0..cout {
            let grow = &g[(n * cout + o) * len..(n * cout + o + 1) * len];
            db[o] += grow.iter().sum::<f64>();
            for c in 0..cin {
                let xbase = (n * cin + c) * len;
                for kk in 0..k {
                    let widx = (o * cin + c) * k + kk;
                    let wk = wv[widx];
                    let mut acc = 0.0;
                    for t in 0..len {
                        let src = t + kk;
                        if src >= pad && src - pad < len {
                            acc += grow[t] * xv[xbase + src - pad];
                            dx[xbase + src - pad] += wk * grow[t];
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    accumulate(before, x, dx);
    accumulate(before, w, dw);
    accumulate(before, b, db);
}

fn conv2d_backward(g: &[f64], x: crate::Var, w: crate::Var, b: crate::Var, before: &mut [Node]) {
    let xs = before[x.0].shape.clone();
    let ws = before[w.0].shape.clone();
    let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * wd;
    let xv = before[x.0].value.clone();
    let wv = before[w.0].value.clone();
    let mut dx = vec![0.0; xv.len()];
    let mut dw = vec![0.0; wv.len()];
    let mut db = vec![0.0; cout];
    for n in 0..batch {
        for o in 0..cout {
            let gp = &g[(n * cout + o) * plane..(n * cout + o + 1) * plane];
            db[o] += gp.iter().sum::<f64>();
            for c in 0..cin {
                let xbase = (n * cin + c) * plane;
                for di in 0..kh {
                    for dj in 0..kw {
                        let widx = ((o * cin + c) * kh + di) * kw + dj;
                        let wk = wv[widx];
                        let mut acc = 0.0;
                        for i in 0..h {
                            let si = i + di;
                            if si < ph || si - ph >= h {
                                continue;
                            }
                            for j in 0..wd {
                                let sj = j + dj;
                                if sj >= pw && sj - pw < wd {
                                    let sidx = xbase + (si - ph) * wd + sj - pw;
                                    acc += gp[i * wd + j] * xv[sidx];
                                    dx[sidx] += wk * gp[i * wd + j];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    accumulate(before, x, dx);
    accumulate(before, w, dw);
    accumulate(before, b, db);
}
