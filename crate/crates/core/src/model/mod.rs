//! The forecasting network: GCN and TCN encoders over the risk graph and the
//! scene graph, fusion, bivariate-Gaussian decoding, loss and sampling.

mod forecast;
pub mod layers;
mod loss;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trajrisk_tensor::gradcheck::GradCheck;
use trajrisk_tensor::{ParamStore, Session, Var};

use crate::data::{AgentCategory, SceneWindow};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point};
use crate::hrg::{hrg_forward, init_hrg, scene_origin, HrgDims, HrgFeatures, RiskMetricSwitches};
use crate::hsg::{build_scene_graph, GrammarBasis, NodeKind, Roi};
use crate::patterns::{PatternConfig, PatternModel};

pub use forecast::{ForecastDistribution, Samples};
use layers::RHO_SHRINK;
pub use layers::{combine, decode, encode_branch, fuse, gcn_layer, link, reduce_nodes, tcn_block, tcn_encode, PARAMS};
pub use loss::{bgpd_nll, bivariate_density, point_nll};
pub use train::{config_hash, load_checkpoint, save_checkpoint, train, Checkpoint, EpochLog, TrainConfig, TrainState};

/// Scene coordinates fed to both encoders are `(p - origin) / COORD_SCALE`.
pub const COORD_SCALE: f64 = 10.0;

/// Last-step displacement (m) below which an agent keeps the world frame.
pub const HEADING_EPS: f64 = 1e-6;

/// Largest per-step heading change (rad) the kinematic prior extrapolates.
pub const MAX_TURN: f64 = std::f64::consts::FRAC_PI_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Dot,
    Residual,
    HrgOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Dot, FusionMode::Residual, FusionMode::HrgOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Dot => "dot",
            FusionMode::Residual => "residual",
            FusionMode::HrgOnly => "hrg_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dot" => Ok(FusionMode::Dot),
            "res" | "residual" => Ok(FusionMode::Residual),
            "hrg-only" | "hrg_only" => Ok(FusionMode::HrgOnly),
            _ => Err(format!("unknown fusion mode `{s}` (dot, res, hrg-only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionPrior {
    /// Hold the last observed position.
    Last,
    /// Repeat the last observed step.
    Velocity,
    /// Constant turn rate (up to [`MAX_TURN`] per step) and constant change of
    /// step length, stopping at rest.
    #[default]
    Kinematic,
}

impl MotionPrior {
    /// Positions after `1..=t_pred` steps from the observed track `obs` (at least two points).
    pub fn extrapolate(self, obs: &[Point], t_pred: usize) -> Vec<Point> {
        let n = obs.len();
        let last = obs[n - 1];
        let step = last - obs[n - 2];
        match self {
            MotionPrior::Last => vec![last; t_pred],
            MotionPrior::Velocity => (1..=t_pred).map(|k| last + step * k as f64).collect(),
            MotionPrior::Kinematic => {
                let len = step.norm();
                let (mut dlen, mut turn) = (0.0, 0.0);
                if n >= 3 {
                    let prev = obs[n - 2] - obs[n - 3];
                    dlen = len - prev.norm();
                    if len > HEADING_EPS && prev.norm() > HEADING_EPS {
                        turn = wrap_angle(step.angle() - prev.angle());
                    }
                    // A sharper change is a corner: continue straight at the new step.
                    if turn.abs() > MAX_TURN {
                        turn = 0.0;
                        dlen = 0.0;
                    }
                }
                let mut p = last;
                (1..=t_pred)
                    .map(|k| {
                        let l = (len + dlen * k as f64).max(0.0);
                        let a = step.angle() + turn * k as f64;
                        p = p + Point::new(a.cos(), a.sin()) * l;
                        p
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for MotionPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionPrior::Last => "last",
            MotionPrior::Velocity => "velocity",
            MotionPrior::Kinematic => "kinematic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Node width of both graph encoders; equals the HRG node embedding width.
    pub hidden: usize,
    /// Widths of the first two residual blocks; the last block emits 5 channels.
    pub tcn_channels: [usize; 2],
    pub dropout: f64,
    pub bn_momentum: f64,
    pub fusion: FusionMode,
    pub risk_metrics: RiskMetricSwitches,
    /// Node capacities of the fusion kernel.
    pub max_agents: usize,
    pub max_regions: usize,
    /// `full`, `argoverse`, or `map` for the grammar listed in the map file.
    pub grammar: String,
    pub roi: Option<Roi>,
    /// Extrapolation that predicted offsets are measured from.
    pub prior: MotionPrior,
    /// Express offsets along and across each agent's last heading.
    pub agent_frame: bool,
    pub hrg: HrgDims,
    pub patterns: PatternConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_obs: 4,
            t_pred: 6,
            hidden: 64,
            tcn_channels: [32, 32],
            dropout: 0.1,
            bn_momentum: 0.1,
            fusion: FusionMode::Dot,
            risk_metrics: RiskMetricSwitches::ALL_ON,
            max_agents: 32,
            max_regions: 32,
            grammar: "full".into(),
            roi: None,
            prior: MotionPrior::Kinematic,
            agent_frame: true,
            hrg: HrgDims::default(),
            patterns: PatternConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_obs < 2 || self.t_pred == 0 {
            return Err(Error::Config(format!(
                "t_obs must be at least 2 and t_pred positive (got {} / {})",
                self.t_obs, self.t_pred
            )));
        }
        if self.hrg.node_out != self.hidden {
            return Err(Error::Config(format!(
                "hrg.node_out ({}) must equal hidden ({})",
                self.hrg.node_out, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_agents == 0 {
            return Err(Error::Config("max_agents must be positive".into()));
        }
        if self.grammar != "map" && GrammarBasis::builtin(&self.grammar).is_none() {
            return Err(Error::Config(format!(
                "unknown grammar `{}` (full, argoverse, map)",
                self.grammar
            )));
        }
        Ok(())
    }

    fn branch_dims(&self) -> layers::BranchDims {
        layers::BranchDims {
            hidden: self.hidden,
            tcn: [self.tcn_channels[0], self.tcn_channels[1], PARAMS],
            t_obs: self.t_obs,
            t_pred: self.t_pred,
        }
    }
}

/// Constant scene-graph inputs of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct HsgInputs {
    pub v: usize,
    /// `[T_obs, V, 2]`, scaled like the risk-graph positions; padding rows are zero.
    pub coords: Vec<f64>,
    /// `[T_obs, V, V]`.
    pub edges: Vec<f64>,
    /// Fusion-kernel input channel of every node.
    pub slots: Vec<usize>,
}

/// Everything the network needs from a window, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    pub n: usize,
    pub t_pred: usize,
    pub categories: Vec<AgentCategory>,
    pub hrg: HrgFeatures,
    pub hsg: Option<HsgInputs>,
    /// `[N, T_pred, 2]` prior positions that μ is measured from.
    pub anchor: Vec<f64>,
    /// Per-agent `(cos, sin)` of the output frame rotation.
    pub frames: Vec<(f64, f64)>,
    /// `[N, T_pred, 2]` future positions, when the window carries them.
    pub truth: Option<Vec<f64>>,
}

impl PreparedWindow {
    /// Ground truth minus the anchor, in each agent's output frame.
    pub fn relative_truth(&self) -> Option<Vec<f64>> {
        let truth = self.truth.as_ref()?;
        let l = self.t_pred;
        let mut out = Vec::with_capacity(truth.len());
        for (i, &(c, s)) in self.frames.iter().enumerate() {
            for k in 0..l {
                let j = (i * l + k) * 2;
                let (dx, dy) = (truth[j] - self.anchor[j], truth[j + 1] - self.anchor[j + 1]);
                out.extend_from_slice(&[c * dx + s * dy, -s * dx + c * dy]);
            }
        }
        Some(out)
    }

    /// Relative parameters `[N, 5, T_pred]` to world coordinates.
    pub fn to_world(&self, rel: &[f64]) -> Result<ForecastDistribution> {
        let mut p = rel.to_vec();
        let l = self.t_pred;
        if p.len() != self.n * PARAMS * l {
            return Err(Error::Shape {
                what: "forecast parameters",
                expected: vec![self.n, PARAMS, l],
                got: vec![p.len()],
            });
        }
        for (i, &(c, s)) in self.frames.iter().enumerate() {
            for k in 0..l {
                let at = |ch: usize| (i * PARAMS + ch) * l + k;
                let (mx, my) = (p[at(0)], p[at(1)]);
                let (sx, sy, r) = (p[at(2)], p[at(3)], p[at(4)]);
                // R diag(sx, sy) [[1, r], [r, 1]] diag(sx, sy) R^T
                let (vx, vy, cxy) = (sx * sx, sy * sy, r * sx * sy);
                let wxx = c * c * vx - 2.0 * c * s * cxy + s * s * vy;
                let wyy = s * s * vx + 2.0 * c * s * cxy + c * c * vy;
                let wxy = c * s * (vx - vy) + (c * c - s * s) * cxy;
                let (wx, wy) = (wxx.sqrt(), wyy.sqrt());
                let j = (i * l + k) * 2;
                p[at(0)] = self.anchor[j] + c * mx - s * my;
                p[at(1)] = self.anchor[j + 1] + s * mx + c * my;
                p[at(2)] = wx;
                p[at(3)] = wy;
                p[at(4)] = (wxy / (wx * wy)).clamp(-RHO_SHRINK, RHO_SHRINK);
            }
        }
        ForecastDistribution::new(self.n, l, p)
    }
}

/// A configured network with its parameters and motion-pattern model.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub patterns: PatternModel,
}

impl Forecaster {
    pub fn new(config: ModelConfig, patterns: PatternModel, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_hrg(&mut store, &config.hrg, patterns.config.code_width(), &mut rng);
        let dims = config.branch_dims();
        layers::init_branch(&mut store, "enc.hrg", &dims, &mut rng);
        store.insert(
            "enc.hsg.lift.w",
            trajrisk_tensor::Tensor::uniform(&[2, config.hidden], 2, &mut rng),
        );
        layers::init_branch(&mut store, "enc.hsg", &dims, &mut rng);
        layers::init_fusion(&mut store, config.max_agents, config.max_regions, &mut rng);
        layers::init_decoder(&mut store, &mut rng);
        Ok(Self {
            config,
            store,
            patterns,
        })
    }

    pub fn basis(&self, window: &SceneWindow) -> GrammarBasis {
        match self.config.grammar.as_str() {
            "map" => window.map.grammar.clone(),
            name => GrammarBasis::builtin(name).unwrap_or_default(),
        }
    }

    pub fn prepare(&self, window: &SceneWindow) -> Result<PreparedWindow> {
        prepare_window(&self.config, &self.patterns, &self.basis(window), window)
    }

    /// Inference-mode distribution for `window`, in world coordinates.
    pub fn predict(&self, window: &SceneWindow) -> Result<ForecastDistribution> {
        let p = self.prepare(window)?;
        let mut s = Session::new(&self.store, false, 0);
        let out = forward(&mut s, &self.config, &p)?;
        p.to_world(s.tape.value(out))
    }
}

/// Builds the constant inputs of `window`; checks agent and region counts
/// against the fusion capacities.
pub fn prepare_window(
    config: &ModelConfig,
    patterns: &PatternModel,
    basis: &GrammarBasis,
    window: &SceneWindow,
) -> Result<PreparedWindow> {
    let (t_obs, t_pred) = (config.t_obs, config.t_pred);
    if window.t_obs != t_obs || window.t_pred != t_pred {
        return Err(Error::Config(format!(
            "window horizons {}/{} differ from the model's {t_obs}/{t_pred}",
            window.t_obs, window.t_pred
        )));
    }
    if window.len() < t_obs {
        return Err(Error::Validation(format!(
            "window holds {} frames, fewer than t_obs = {t_obs}",
            window.len()
        )));
    }
    let n = window.n_agents();
    if n == 0 || n > config.max_agents {
        return Err(Error::Config(format!(
            "window has {n} agents; the model supports 1..={}",
            config.max_agents
        )));
    }
    let origin = scene_origin(window);
    let hrg = HrgFeatures::new(window, 0..t_obs, patterns, &config.risk_metrics, origin)?;

    let hsg = if config.fusion == FusionMode::HrgOnly {
        None
    } else {
        let graphs = build_scene_graph(window, basis, config.roi.as_ref());
        let v = graphs[0].size();
        let m = v - n;
        if m > config.max_regions {
            return Err(Error::Config(format!(
                "window needs {m} region slots; the model supports {}",
                config.max_regions
            )));
        }
        let mut coords = Vec::with_capacity(t_obs * v * 2);
        let mut edges = Vec::with_capacity(t_obs * v * v);
        for g in &graphs {
            for (p, kind) in g.nodes.iter().zip(&g.node_kinds) {
                if *kind == NodeKind::Padding {
                    coords.extend_from_slice(&[0.0, 0.0]);
                } else {
                    coords.push((p.x - origin.x) / COORD_SCALE);
                    coords.push((p.y - origin.y) / COORD_SCALE);
                }
            }
            edges.extend_from_slice(&g.edges);
        }
        let slots = (0..v)
            .map(|u| if u < n { u } else { config.max_agents + u - n })
            .collect();
        Some(HsgInputs {
            v,
            coords,
            edges,
            slots,
        })
    };

    let mut anchor = Vec::with_capacity(n * t_pred * 2);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let obs: Vec<Point> = (0..t_obs).map(|k| window.position(i, k)).collect();
        let step = obs[t_obs - 1] - obs[t_obs - 2];
        let len = step.norm();
        frames.push(if config.agent_frame && len > HEADING_EPS {
            (step.x / len, step.y / len)
        } else {
            (1.0, 0.0)
        });
        for p in config.prior.extrapolate(&obs, t_pred) {
            anchor.extend_from_slice(&[p.x, p.y]);
        }
    }
    let truth = (window.len() >= t_obs + t_pred).then(|| {
        let mut t = Vec::with_capacity(n * t_pred * 2);
        for i in 0..n {
            for k in t_obs..t_obs + t_pred {
                let p = window.position(i, k);
                t.extend_from_slice(&[p.x, p.y]);
            }
        }
        t
    });
    Ok(PreparedWindow {
        n,
        t_pred,
        categories: window.tracks.iter().map(|t| t.category).collect(),
        hrg,
        hsg,
        anchor,
        frames,
        truth,
    })
}

/// Relative distribution parameters `[N, 5, T_pred]` on the session tape.
pub fn forward(s: &mut Session<'_>, config: &ModelConfig, p: &PreparedWindow) -> Result<Var> {
    let (a, e) = hrg_forward(s, &p.hrg)?;
    let g_hrg = encode_branch(s, a, e, "enc.hrg", config.dropout)?;
    let g_hsg = match (&p.hsg, config.fusion) {
        (Some(h), mode) if mode != FusionMode::HrgOnly => {
            let t = config.t_obs;
            let x = s.tape.constant(h.coords.clone(), &[t, h.v, 2])?;
            let x = s.linear(x, "enc.hsg.lift", false)?;
            let e = s.tape.constant(h.edges.clone(), &[t, h.v, h.v])?;
            Some((encode_branch(s, x, e, "enc.hsg", config.dropout)?, h.slots.as_slice()))
        }
        _ => None,
    };
    let fused = fuse(s, g_hrg, g_hsg, config.fusion)?;
    decode(s, fused)
}

/// Forward pass plus loss against the window's ground truth.
pub fn window_loss(s: &mut Session<'_>, config: &ModelConfig, p: &PreparedWindow) -> Result<Var> {
    window_loss_agents(s, config, p, 0..p.n)
}

/// Forward pass over the whole window; the loss covers the agents in `agents` only.
pub fn window_loss_agents(
    s: &mut Session<'_>,
    config: &ModelConfig,
    p: &PreparedWindow,
    agents: std::ops::Range<usize>,
) -> Result<Var> {
    let truth = p
        .relative_truth()
        .ok_or_else(|| Error::Validation("window has no ground-truth future".into()))?;
    if agents.is_empty() || agents.end > p.n {
        return Err(Error::Validation(format!("agent range {agents:?} outside 0..{}", p.n)));
    }
    let params = forward(s, config, p)?;
    if agents.len() == p.n {
        return bgpd_nll(s, params, &truth);
    }
    let params = s.tape.narrow(params, 0, agents.start, agents.len())?;
    let row = p.t_pred * 2;
    bgpd_nll(s, params, &truth[agents.start * row..agents.end * row])
}

/// Central-difference check of the training-mode loss gradient with respect
/// to every parameter of `model`. Dropout masks repeat across evaluations
/// because every pass uses the same session seed.
pub fn loss_gradcheck(model: &Forecaster, p: &PreparedWindow, h: f64, seed: u64) -> Result<GradCheck> {
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut s = Session::new(store, true, seed);
        let l = window_loss(&mut s, &model.config, p)?;
        Ok(s.tape.value(l)[0])
    };
    let mut s = Session::new(&model.store, true, seed);
    let l = window_loss(&mut s, &model.config, p)?;
    s.backward(l)?;
    let grads = s.gradients();

    let names: Vec<String> = model.store.params().map(|(n, _)| n.clone()).collect();
    let mut probe = model.store.clone();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for name in names {
        let len = probe.get(&name)?.values.len();
        let mut g = vec![0.0; len];
        for j in 0..len {
            let orig = probe.get(&name)?.values[j];
            probe.get_mut(&name)?.values[j] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.values[j] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.values[j] = orig;
            g[j] = (plus - minus) / (2.0 * h);
        }
        analytic.push(grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; len]));
        numeric.push(g);
    }
    Ok(GradCheck { analytic, numeric })
}
