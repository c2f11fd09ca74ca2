use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use trajrisk_tensor::{ParamStore, Session, Var};

use crate::data::{occupied_region, SceneWindow};
use crate::error::Result;
use crate::geometry::Point;
use crate::nn::{init_mlp, mlp};
use crate::patterns::{assign_pattern, PatternModel};

use super::{agent_attributes, neighborhood, pair_factors, AgentAttributes, RiskMetricSwitches};

pub const ATTR_CHANNELS: [&str; 4] = ["lx", "ly", "vm", "va"];

const POS_SCALE: f64 = 10.0;
const SPEED_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrgDims {
    pub attr_hidden: [usize; 2],
    pub attr_out: usize,
    pub node_hidden: [usize; 2],
    pub node_out: usize,
    pub pair_hidden: [usize; 2],
}

impl Default for HrgDims {
    fn default() -> Self {
        Self {
            attr_hidden: [32, 64],
            attr_out: 128,
            node_hidden: [64, 64],
            node_out: 64,
            pair_hidden: [32, 32],
        }
    }
}

pub fn init_hrg<R: Rng + ?Sized>(store: &mut ParamStore, dims: &HrgDims, code_width: usize, rng: &mut R) {
    for ch in ATTR_CHANNELS {
        init_mlp(
            store,
            &format!("hrg.attr.{ch}"),
            &[2, dims.attr_hidden[0], dims.attr_hidden[1], dims.attr_out],
            rng,
        );
    }
    init_mlp(
        store,
        "hrg.node",
        &[4 * dims.attr_out, dims.node_hidden[0], dims.node_hidden[1], dims.node_out],
        rng,
    );
    init_mlp(
        store,
        "hrg.pair",
        &[2 * dims.node_out + 2 * code_width, dims.pair_hidden[0], dims.pair_hidden[1], 1],
        rng,
    );
}

/// Tape-independent inputs of the risk graph for a run of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct HrgFeatures {
    pub frames: usize,
    pub n: usize,
    /// Per channel, `[frames * n, 2]` rows of (own value, neighbor mean).
    pub attr_inputs: [Vec<f64>; 4],
    /// `[frames * n * n, 2 * code_width]` cluster one-hots of (i, j).
    pub codes: Vec<f64>,
    pub code_width: usize,
    /// `[frames * n * n]` product of enabled non-learned factors; zero on the diagonal.
    pub gate: Vec<f64>,
    pub attributes: Vec<Vec<AgentAttributes>>,
    pub frame_indices: Vec<i64>,
}

impl HrgFeatures {
    /// `frames` indexes window samples (observation frames are `0..t_obs`).
    /// `origin` is subtracted from positions before embedding.
    pub fn new(
        window: &SceneWindow,
        frames: Range<usize>,
        patterns: &PatternModel,
        switches: &RiskMetricSwitches,
        origin: Point,
    ) -> Result<Self> {
        let n = window.n_agents();
        let t = frames.len();
        let width = patterns.config.code_width();

        let mut codes = vec![0.0; t * n * n * 2 * width];
        if switches.mpr {
            let mut slot = Vec::with_capacity(n);
            for (i, tr) in window.tracks.iter().enumerate() {
                let c = assign_pattern(window.observed(i), tr.category, patterns)?;
                slot.push(patterns.config.code_offset(tr.category) + c);
            }
            for r in 0..t * n * n {
                let (i, j) = ((r / n) % n, r % n);
                codes[r * 2 * width + slot[i]] = 1.0;
                codes[r * 2 * width + width + slot[j]] = 1.0;
            }
        }

        let mut attr_inputs: [Vec<f64>; 4] = Default::default();
        let mut gate = vec![0.0; t * n * n];
        let mut attributes = Vec::with_capacity(t);
        let mut frame_indices = Vec::with_capacity(t);
        for (ti, k) in frames.enumerate() {
            let atts: Vec<AgentAttributes> = window
                .tracks
                .iter()
                .map(|tr| agent_attributes(&tr.samples, k, window.fps))
                .collect();
            let pos: Vec<Point> = atts.iter().map(AgentAttributes::position).collect();
            let scaled: Vec<[f64; 4]> = atts
                .iter()
                .map(|a| {
                    [
                        (a.lx - origin.x) / POS_SCALE,
                        (a.ly - origin.y) / POS_SCALE,
                        a.vm / SPEED_SCALE,
                        a.va / PI,
                    ]
                })
                .collect();
            let regions: Vec<_> = pos.iter().map(|&p| occupied_region(p, &window.map)).collect();
            for i in 0..n {
                let nb = neighborhood(i, &pos);
                for (c, input) in attr_inputs.iter_mut().enumerate() {
                    let own = scaled[i][c];
                    // Summing in sorted order makes the mean independent of neighbor order bit for bit.
                    let mut vals: Vec<f64> = nb.iter().map(|&j| scaled[j][c]).collect();
                    vals.sort_by(f64::total_cmp);
                    let agg = if vals.is_empty() {
                        own
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    };
                    input.extend_from_slice(&[own, agg]);
                }
                for j in 0..n {
                    if i != j {
                        let f = pair_factors(&atts[i], &atts[j], regions[i], regions[j]);
                        gate[(ti * n + i) * n + j] = f.gate(switches);
                    }
                }
            }
            frame_indices.push(window.tracks[0].samples[k].frame);
            attributes.push(atts);
        }
        Ok(Self {
            frames: t,
            n,
            attr_inputs,
            codes,
            code_width: width,
            gate,
            attributes,
            frame_indices,
        })
    }
}

/// Embedding of one attribute channel: rows of (own, neighbor mean) to 128.
pub fn embed_attribute(s: &mut Session<'_>, channel: &str, inputs: Var) -> Result<Var> {
    Ok(mlp(s, inputs, &format!("hrg.attr.{channel}"), 3)?)
}

pub fn node_embedding(s: &mut Session<'_>, r: [Var; 4]) -> Result<Var> {
    let cat = s.tape.concat(&r, 1)?;
    Ok(mlp(s, cat, "hrg.node", 3)?)
}

/// Learned moving-pattern relation in `(0, 1)` for rows of `[a_i, a_j, codes]`.
pub fn mpr(s: &mut Session<'_>, a_i: Var, a_j: Var, codes: Var) -> Result<Var> {
    let x = s.tape.concat(&[a_i, a_j, codes], 1)?;
    let logit = mlp(s, x, "hrg.pair", 3)?;
    Ok(s.tape.sigmoid(logit)?)
}

/// Node embeddings `[T, N, 64]` and risk edges `[T, N, N]` on the session tape.
pub fn hrg_forward(s: &mut Session<'_>, f: &HrgFeatures) -> Result<(Var, Var)> {
    let (t, n) = (f.frames, f.n);
    let rows = t * n;
    let mut r = Vec::with_capacity(4);
    for (c, ch) in ATTR_CHANNELS.iter().enumerate() {
        let x = s.tape.constant(f.attr_inputs[c].clone(), &[rows, 2])?;
        r.push(embed_attribute(s, ch, x)?);
    }
    let a = node_embedding(s, [r[0], r[1], r[2], r[3]])?;
    let d = s.tape.shape(a)[1];

    let idx_i: Vec<usize> = (0..rows * n).map(|p| p / n).collect();
    let idx_j: Vec<usize> = (0..rows * n).map(|p| (p / (n * n)) * n + p % n).collect();
    let a_i = s.tape.gather_rows(a, &idx_i)?;
    let a_j = s.tape.gather_rows(a, &idx_j)?;
    let codes = s.tape.constant(f.codes.clone(), &[rows * n, 2 * f.code_width])?;
    let m = mpr(s, a_i, a_j, codes)?;
    let gate = s.tape.constant(f.gate.clone(), &[rows * n, 1])?;
    let e = s.tape.mul(m, gate)?;
    let e = s.tape.reshape(e, &[t, n, n])?;
    let a = s.tape.reshape(a, &[t, n, d])?;
    Ok((a, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskGraph {
    pub frame_index: i64,
    pub n: usize,
    /// `n × 64`, row-major.
    pub node_embeddings: Vec<f64>,
    /// `n × n`, row-major; `e[i * n + j]` is the risk from `i` towards `j`.
    pub edge_matrix: Vec<f64>,
}

impl RiskGraph {
    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edge_matrix[i * self.n + j]
    }
}

/// Risk graphs for `frames` of `window` under frozen weights.
pub fn build_risk_graph(
    window: &SceneWindow,
    patterns: &PatternModel,
    store: &ParamStore,
    switches: &RiskMetricSwitches,
    frames: Range<usize>,
) -> Result<Vec<RiskGraph>> {
    let origin = scene_origin(window);
    let f = HrgFeatures::new(window, frames, patterns, switches, origin)?;
    let mut s = Session::new(store, false, 0);
    let (a, e) = hrg_forward(&mut s, &f)?;
    let (n, d) = (f.n, s.tape.shape(a)[2]);
    let av = s.tape.value(a);
    let ev = s.tape.value(e);
    Ok((0..f.frames)
        .map(|t| RiskGraph {
            frame_index: f.frame_indices[t],
            n,
            node_embeddings: av[t * n * d..(t + 1) * n * d].to_vec(),
            edge_matrix: ev[t * n * n..(t + 1) * n * n].to_vec(),
        })
        .collect())
}

/// Mean of the agents' last observed positions.
pub fn scene_origin(window: &SceneWindow) -> Point {
    let n = window.n_agents().max(1) as f64;
    let (mut xs, mut ys): (Vec<f64>, Vec<f64>) = (0..window.n_agents())
        .map(|i| {
            let p = window.last_observed(i);
            (p.x, p.y)
        })
        .unzip();
    // Sorted summation keeps the origin independent of agent order.
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    Point::new(xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n)
}
