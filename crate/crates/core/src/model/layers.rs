//! Graph convolution, temporal residual blocks, fusion and the decoder head.

use rand::Rng;
use trajrisk_tensor::{ParamStore, Session, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{init_batch_norm, init_conv1d, init_conv2d, init_linear, init_prelu};

use super::FusionMode;

pub const GCN_LAYERS: usize = 3;
pub const BN_EPS: f64 = 1e-5;
/// Output channels of the encoders: (μx, μy, σx, σy, ρ).
pub const PARAMS: usize = 5;
pub const RHO_SHRINK: f64 = 1.0 - 1e-9;

/// Widths of one encoder branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchDims {
    pub hidden: usize,
    pub tcn: [usize; 3],
    pub t_obs: usize,
    pub t_pred: usize,
}

pub fn init_branch<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: &BranchDims, rng: &mut R) {
    let d = dims.hidden;
    for l in 1..=GCN_LAYERS {
        store.insert(format!("{prefix}.gcn{l}.w"), Tensor::uniform(&[d, d], d, rng));
        init_prelu(store, &format!("{prefix}.gcn{l}.act"));
    }
    init_linear(store, &format!("{prefix}.time"), dims.t_obs, dims.t_pred, rng);
    let mut cin = d;
    for (b, &cout) in dims.tcn.iter().enumerate() {
        let p = format!("{prefix}.tcn{}", b + 1);
        init_conv1d(store, &format!("{p}.conv"), cin, cout, 3, rng);
        init_batch_norm(store, &format!("{p}.bn"), cout);
        init_prelu(store, &format!("{p}.act"));
        init_conv1d(store, &format!("{p}.res"), cin, cout, 1, rng);
        init_prelu(store, &format!("{p}.out"));
        cin = cout;
    }
}

/// Per frame `PReLU(D^-1/2 (E + I) D^-1/2 · H_t · W)` with `W` shared across frames.
/// `h: [T, V, d]`, `e: [T, V, V]`.
pub fn gcn_layer(s: &mut Session<'_>, h: Var, e: Var, prefix: &str) -> Result<Var> {
    let a = s.tape.gcn_normalize(e)?;
    let hw = s.linear(h, prefix, false)?;
    let y = s.tape.bmm(a, hw)?;
    Ok(s.prelu(y, &format!("{prefix}.act"))?)
}

/// One residual block on `[V, C, L]`.
pub fn tcn_block(s: &mut Session<'_>, x: Var, prefix: &str, dropout: f64) -> Result<Var> {
    let c = s.conv1d(x, &format!("{prefix}.conv"))?;
    let c = s.batch_norm(c, &format!("{prefix}.bn"), BN_EPS)?;
    let c = s.prelu(c, &format!("{prefix}.act"))?;
    let c = s.dropout(c, dropout)?;
    let r = s.conv1d(x, &format!("{prefix}.res"))?;
    let y = s.tape.add(c, r)?;
    Ok(s.prelu(y, &format!("{prefix}.out"))?)
}

/// `h: [T_obs, V, d]` to `[V, 5, T_pred]`; the time axis is remapped before the first block.
pub fn tcn_encode(s: &mut Session<'_>, h: Var, prefix: &str, dropout: f64) -> Result<Var> {
    let x = s.tape.permute(h, &[1, 2, 0])?;
    let mut x = s.linear(x, &format!("{prefix}.time"), true)?;
    for b in 1..=3 {
        x = tcn_block(s, x, &format!("{prefix}.tcn{b}"), dropout)?;
    }
    Ok(x)
}

/// Stacked GCN layers followed by the temporal encoder.
pub fn encode_branch(s: &mut Session<'_>, h: Var, e: Var, prefix: &str, dropout: f64) -> Result<Var> {
    let mut h = h;
    for l in 1..=GCN_LAYERS {
        h = gcn_layer(s, h, e, &format!("{prefix}.gcn{l}"))?;
    }
    tcn_encode(s, h, prefix, dropout)
}

pub fn init_fusion<R: Rng + ?Sized>(store: &mut ParamStore, n_cap: usize, m_cap: usize, rng: &mut R) {
    let fan_in = n_cap + m_cap;
    store.insert("fuse.w", Tensor::uniform(&[n_cap, n_cap + m_cap], fan_in, rng));
    store.insert("fuse.b", Tensor::uniform(&[n_cap], fan_in, rng));
}

/// 1×1 convolution over the node axis: `[V, c, L]` to `[n, c, L]`.
/// Node `v` feeds input channel `slots[v]` of the `fuse` kernel.
pub fn reduce_nodes(s: &mut Session<'_>, g: Var, slots: &[usize], n: usize) -> Result<Var> {
    let gs = s.tape.shape(g).to_vec();
    if gs.len() != 3 || gs[0] != slots.len() {
        return Err(Error::Shape {
            what: "scene-graph encoding",
            expected: vec![slots.len(), PARAMS, 0],
            got: gs,
        });
    }
    let w = s.param("fuse.w")?;
    let b = s.param("fuse.b")?;
    let (n_cap, width) = {
        let ws = s.tape.shape(w);
        (ws[0], ws[1])
    };
    if n > n_cap || slots.iter().any(|&k| k >= width) {
        return Err(Error::Config(format!(
            "fusion kernel is {n_cap}×{width}; cannot place {n} agents in slots {slots:?}"
        )));
    }
    let w = s.tape.narrow(w, 0, 0, n)?;
    let wt = s.tape.permute(w, &[1, 0])?;
    let wt = s.tape.gather_rows(wt, slots)?;
    let w = s.tape.permute(wt, &[1, 0])?;
    let flat = s.tape.reshape(g, &[gs[0], gs[1] * gs[2]])?;
    let y = s.tape.matmul(w, flat)?;
    let b = s.tape.narrow(b, 0, 0, n)?;
    let yt = s.tape.permute(y, &[1, 0])?;
    let yt = s.tape.add_bias(yt, b)?;
    let y = s.tape.permute(yt, &[1, 0])?;
    Ok(s.tape.reshape(y, &[n, gs[1], gs[2]])?)
}

/// Elementwise combination of `g_hrg` with the node-reduced scene encoding.
pub fn combine(s: &mut Session<'_>, g_hrg: Var, reduced: Var, mode: FusionMode) -> Result<Var> {
    if mode == FusionMode::HrgOnly {
        return Ok(g_hrg);
    }
    let (a, b) = (s.tape.shape(g_hrg).to_vec(), s.tape.shape(reduced).to_vec());
    if a != b {
        return Err(Error::Shape {
            what: "fusion",
            expected: a,
            got: b,
        });
    }
    let r = match mode {
        FusionMode::Residual => s.tape.add_scalar(reduced, 1.0)?,
        _ => reduced,
    };
    Ok(s.tape.mul(g_hrg, r)?)
}

/// Node reduction then [`combine`]. `g_hsg` may be absent only in `hrg_only` mode.
pub fn fuse(s: &mut Session<'_>, g_hrg: Var, g_hsg: Option<(Var, &[usize])>, mode: FusionMode) -> Result<Var> {
    if mode == FusionMode::HrgOnly {
        return Ok(g_hrg);
    }
    let (g, slots) = g_hsg.ok_or_else(|| Error::Config(format!("{mode} fusion needs a scene-graph encoding")))?;
    let n = s.tape.shape(g_hrg)[0];
    let reduced = reduce_nodes(s, g, slots, n)?;
    combine(s, g_hrg, reduced, mode)
}

pub fn init_decoder<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) {
    init_conv2d(store, "dec.c1", 1, 4, 3, rng);
    init_conv2d(store, "dec.c2", 4, 1, 3, rng);
    init_prelu(store, "dec.act");
    init_linear(store, "dec.out", PARAMS, PARAMS, rng);
}

/// `[N, 5, L]` to distribution parameters `[N, 5, L]`: μ raw, σ = exp, ρ = tanh.
pub fn decode(s: &mut Session<'_>, fused: Var) -> Result<Var> {
    let fs = s.tape.shape(fused).to_vec();
    if fs.len() != 3 || fs[1] != PARAMS {
        return Err(Error::Shape {
            what: "decoder input",
            expected: vec![fs.first().copied().unwrap_or(0), PARAMS, fs.get(2).copied().unwrap_or(0)],
            got: fs,
        });
    }
    let (n, l) = (fs[0], fs[2]);
    let x = s.tape.reshape(fused, &[n, 1, PARAMS, l])?;
    let x = s.conv2d(x, "dec.c1")?;
    let x = s.conv2d(x, "dec.c2")?;
    let x = s.prelu(x, "dec.act")?;
    let x = s.tape.reshape(x, &[n, PARAMS, l])?;
    let x = s.tape.permute(x, &[0, 2, 1])?;
    let x = s.linear(x, "dec.out", true)?;
    let raw = s.tape.permute(x, &[0, 2, 1])?;
    link(s, raw)
}

/// Channel-wise link functions on `[N, 5, L]`.
pub fn link(s: &mut Session<'_>, raw: Var) -> Result<Var> {
    let mu = s.tape.narrow(raw, 1, 0, 2)?;
    let sig = s.tape.narrow(raw, 1, 2, 2)?;
    let sig = s.tape.exp(sig)?;
    let rho = s.tape.narrow(raw, 1, 4, 1)?;
    let rho = s.tape.tanh(rho)?;
    // tanh rounds to ±1 for |raw| > 19; the shrink keeps |ρ| < 1 in floating point.
    let rho = s.tape.scale(rho, RHO_SHRINK)?;
    Ok(s.tape.concat(&[mu, sig, rho], 1)?)
}
