//! Heterogeneous risk graph: per-agent kinematic attributes, the collision
//! risk factors between agent pairs, and learned node/pair embeddings.

mod embed;

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SemanticRegionType, TrackSample};
use crate::geometry::{wrap_angle, Point};

pub use embed::{
    build_risk_graph, embed_attribute, hrg_forward, init_hrg, mpr, node_embedding, scene_origin, HrgDims, HrgFeatures,
    RiskGraph, ATTR_CHANNELS,
};

pub const NEIGHBORHOOD_RADIUS: f64 = 12.0;
pub const TTC_EPS: f64 = 1e-6;
pub const INV_TTC_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentAttributes {
    pub lx: f64,
    pub ly: f64,
    /// Speed (m/s).
    pub vm: f64,
    /// Velocity angle in `(-π, π]`.
    pub va: f64,
    /// Moving angle against the +x axis; equal to `va`.
    pub alpha: f64,
}

impl AgentAttributes {
    pub fn position(&self) -> Point {
        Point::new(self.lx, self.ly)
    }
}

/// Attributes at sample index `k`, differencing against `k - 1` (forward
/// difference at `k = 0`). A stationary agent has `va = 0`.
pub fn agent_attributes(samples: &[TrackSample], k: usize, fps: f64) -> AgentAttributes {
    let p = samples[k].position;
    let v = if samples.len() < 2 {
        Point::ORIGIN
    } else if k == 0 {
        (samples[1].position - samples[0].position) * fps
    } else {
        (p - samples[k - 1].position) * fps
    };
    let vm = v.norm();
    let va = if vm == 0.0 { 0.0 } else { wrap_angle(v.angle()) };
    AgentAttributes {
        lx: p.x,
        ly: p.y,
        vm,
        va,
        alpha: va,
    }
}

/// Agents within the inclusive 12 m radius of `i`, nearest first.
pub fn neighborhood(i: usize, positions: &[Point]) -> Vec<usize> {
    let mut near: Vec<(usize, f64)> = positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (j, p.distance(positions[i])))
        .filter(|&(_, d)| d <= NEIGHBORHOOD_RADIUS)
        .collect();
    near.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    near.into_iter().map(|(j, _)| j).collect()
}

/// Angle of the line from `p_i` to `p_j`; zero when they coincide.
pub fn line_angle(p_i: Point, p_j: Point) -> f64 {
    let d = p_j - p_i;
    if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        wrap_angle(d.angle())
    }
}

/// Time to collision `|T|` in seconds; `+∞` when the closing-speed term is
/// below [`TTC_EPS`], `0` for coincident positions.
pub fn ttc(att_i: &AgentAttributes, att_j: &AgentAttributes, p_i: Point, p_j: Point) -> f64 {
    let dist = p_i.distance(p_j);
    if dist == 0.0 {
        return 0.0;
    }
    let gamma = line_angle(p_i, p_j);
    let closing = att_i.vm * wrap_angle(att_i.alpha - gamma).abs().cos() - att_j.vm * wrap_angle(att_j.alpha - gamma).abs().cos();
    let denom = closing.abs();
    if denom < TTC_EPS {
        f64::INFINITY
    } else {
        dist / denom
    }
}

/// `1/|T|`, zero for infinite `|T|` and capped at [`INV_TTC_CAP`].
pub fn inv_ttc(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else if t <= 0.0 {
        INV_TTC_CAP
    } else {
        (1.0 / t).min(INV_TTC_CAP)
    }
}

/// 1 when direction `gamma` lies in the forward half-plane of heading `alpha`.
pub fn mdr(alpha: f64, gamma: f64) -> f64 {
    if wrap_angle(gamma - alpha).abs() <= FRAC_PI_2 {
        1.0
    } else {
        0.0
    }
}

/// 1 when both agents occupy the same semantic class; road-like surfaces form one class.
pub fn osr(s_i: Option<SemanticRegionType>, s_j: Option<SemanticRegionType>) -> f64 {
    let canon = |s: SemanticRegionType| if s.is_road_like() { SemanticRegionType::RoadSegment } else { s };
    match (s_i, s_j) {
        (Some(a), Some(b)) if canon(a) == canon(b) => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskMetricSwitches {
    pub nrr: bool,
    pub mpr: bool,
    pub ttc: bool,
    pub mdr: bool,
    pub osr: bool,
}

impl Default for RiskMetricSwitches {
    fn default() -> Self {
        Self::ALL_ON
    }
}

impl RiskMetricSwitches {
    pub const ALL_ON: Self = Self {
        nrr: true,
        mpr: true,
        ttc: true,
        mdr: true,
        osr: true,
    };

    pub const NRR_ONLY: Self = Self {
        nrr: true,
        mpr: false,
        ttc: false,
        mdr: false,
        osr: false,
    };

    /// The five ablation rows, each adding one metric to the previous.
    pub fn presets() -> [(&'static str, Self); 5] {
        let mut s = Self::NRR_ONLY;
        let a = s;
        s.mpr = true;
        let b = s;
        s.ttc = true;
        let c = s;
        s.mdr = true;
        let d = s;
        s.osr = true;
        [
            ("NRR", a),
            ("NRR+MPR", b),
            ("NRR+MPR+TTC", c),
            ("NRR+MPR+TTC+MDR", d),
            ("NRR+MPR+TTC+MDR+OSR", s),
        ]
    }
}

impl fmt::Display for RiskMetricSwitches {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.nrr, "nrr"),
            (self.mpr, "mpr"),
            (self.ttc, "ttc"),
            (self.mdr, "mdr"),
            (self.osr, "osr"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        f.write_str(&on.join(","))
    }
}

/// Comma list such as `nrr,mpr,ttc`; `nrr` is implied.
impl FromStr for RiskMetricSwitches {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Self::NRR_ONLY;
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name.to_ascii_lowercase().as_str() {
                "nrr" => {}
                "mpr" => out.mpr = true,
                "ttc" => out.ttc = true,
                "mdr" => out.mdr = true,
                "osr" => out.osr = true,
                "all" => out = Self::ALL_ON,
                other => return Err(format!("unknown risk metric `{other}`")),
            }
        }
        Ok(out)
    }
}

/// Non-learned factors of one directed pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFactors {
    pub distance: f64,
    pub osr: f64,
    pub mdr: f64,
    pub inv_ttc: f64,
}

pub fn pair_factors(
    att_i: &AgentAttributes,
    att_j: &AgentAttributes,
    s_i: Option<SemanticRegionType>,
    s_j: Option<SemanticRegionType>,
) -> PairFactors {
    let (p_i, p_j) = (att_i.position(), att_j.position());
    PairFactors {
        distance: p_i.distance(p_j),
        osr: osr(s_i, s_j),
        mdr: mdr(att_i.alpha, line_angle(p_i, p_j)),
        inv_ttc: inv_ttc(ttc(att_i, att_j, p_i, p_j)),
    }
}

impl PairFactors {
    /// Product of the enabled non-learned factors, gated by the neighborhood.
    pub fn gate(&self, switches: &RiskMetricSwitches) -> f64 {
        if self.distance > NEIGHBORHOOD_RADIUS {
            return 0.0;
        }
        let mut g = 1.0;
        if switches.osr {
            g *= self.osr;
        }
        if switches.mdr {
            g *= self.mdr;
        }
        if switches.ttc {
            g *= self.inv_ttc;
        }
        g
    }
}

/// `e_ij` from the pair factors and the learned relation `m ∈ (0, 1)`.
pub fn risk_edge(f: &PairFactors, m: f64, switches: &RiskMetricSwitches) -> f64 {
    (f.gate(switches) * m).clamp(0.0, INV_TTC_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn att(x: f64, y: f64, vm: f64, a: f64) -> AgentAttributes {
        AgentAttributes {
            lx: x,
            ly: y,
            vm,
            va: a,
            alpha: a,
        }
    }

    fn samples(points: &[(f64, f64)]) -> Vec<TrackSample> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TrackSample {
                frame: i as i64,
                position: Point::new(x, y),
            })
            .collect()
    }

    #[test]
    fn attribute_finite_differences() {
        let a = agent_attributes(&samples(&[(0.0, 0.0), (1.0, 0.0)]), 1, 2.0);
        assert_eq!((a.vm, a.va), (2.0, 0.0));
        let a = agent_attributes(&samples(&[(0.0, 0.0), (0.0, 0.0)]), 1, 2.0);
        assert_eq!((a.vm, a.va), (0.0, 0.0));
        let a = agent_attributes(&samples(&[(0.0, 0.0), (0.0, 0.5)]), 1, 2.0);
        assert_eq!(a.vm, 1.0);
        assert!((a.va - PI / 2.0).abs() < 1e-15);
        let first = agent_attributes(&samples(&[(0.0, 0.0), (0.0, 0.5)]), 0, 2.0);
        assert_eq!(first.vm, 1.0);
    }

    #[test]
    fn neighborhood_boundary_and_order() {
        let p = [Point::new(0.0, 0.0), Point::new(12.0, 0.0), Point::new(12.5, 0.0)];
        assert_eq!(neighborhood(0, &p), vec![1]);
        let p = [
            Point::new(0.0, 0.0),
            Point::new(3.0, 0.0),
            Point::new(0.0, 9.0),
            Point::new(-6.0, 0.0),
        ];
        assert_eq!(neighborhood(0, &p), vec![1, 3, 2]);
    }

    #[test]
    fn ttc_examples() {
        let (pi, pj) = (Point::new(0.0, 0.0), Point::new(10.0, 0.0));
        assert_eq!(ttc(&att(0.0, 0.0, 2.0, 0.0), &att(10.0, 0.0, 0.0, 0.0), pi, pj), 5.0);
        let (pi, pj) = (Point::new(0.0, 0.0), Point::new(4.0, 0.0));
        assert_eq!(ttc(&att(0.0, 0.0, 1.0, 0.0), &att(4.0, 0.0, 1.0, PI), pi, pj), 2.0);
        let t = ttc(&att(0.0, 0.0, 1.5, 0.0), &att(4.0, 0.0, 1.5, 0.0), pi, pj);
        assert!(t.is_infinite());
        assert_eq!(inv_ttc(t), 0.0);
        assert_eq!(ttc(&att(0.0, 0.0, 1.0, 0.0), &att(0.0, 0.0, 0.0, 0.0), pi, pi), 0.0);
        assert_eq!(inv_ttc(0.0), INV_TTC_CAP);
    }

    #[test]
    fn halving_distance_doubles_inverse_ttc() {
        let a = att(0.0, 0.0, 3.0, 0.3);
        let b = att(0.0, 0.0, 1.0, 2.0);
        let far = inv_ttc(ttc(&a, &b, Point::new(0.0, 0.0), Point::new(8.0, 0.0)));
        let near = inv_ttc(ttc(&a, &b, Point::new(0.0, 0.0), Point::new(4.0, 0.0)));
        assert_eq!(near, 2.0 * far);
    }

    #[test]
    fn mdr_examples() {
        assert_eq!(mdr(0.0, PI / 4.0), 1.0);
        assert_eq!(mdr(0.0, PI), 0.0);
        assert_eq!(mdr(3.0 * PI / 4.0, -3.0 * PI / 4.0), 1.0);
    }

    #[test]
    fn osr_examples() {
        use SemanticRegionType::*;
        assert_eq!(osr(Some(Sidewalk), Some(Sidewalk)), 1.0);
        assert_eq!(osr(Some(Sidewalk), Some(RoadSegment)), 0.0);
        assert_eq!(osr(Some(ZebraRegion), Some(RoadSegment)), 1.0);
        assert_eq!(osr(Some(Carpark), Some(RoadSegment)), 0.0);
        assert_eq!(osr(None, None), 0.0);
    }

    #[test]
    fn risk_edge_products() {
        let s = RiskMetricSwitches::ALL_ON;
        let f = PairFactors {
            distance: 3.0,
            osr: 1.0,
            mdr: 1.0,
            inv_ttc: 0.5,
        };
        assert_eq!(risk_edge(&f, 0.8, &s), 0.4);
        assert_eq!(risk_edge(&PairFactors { osr: 0.0, ..f }, 0.8, &s), 0.0);
        assert_eq!(risk_edge(&PairFactors { mdr: 0.0, ..f }, 0.8, &s), 0.0);
        assert_eq!(risk_edge(&PairFactors { distance: 12.5, ..f }, 0.8, &s), 0.0);
        // Disabled factors act as 1.
        assert_eq!(risk_edge(&PairFactors { osr: 0.0, ..f }, 0.8, &RiskMetricSwitches::NRR_ONLY), 0.8);
    }

    #[test]
    fn preset_rows() {
        let names: Vec<&str> = RiskMetricSwitches::presets().iter().map(|p| p.0).collect();
        assert_eq!(names, ["NRR", "NRR+MPR", "NRR+MPR+TTC", "NRR+MPR+TTC+MDR", "NRR+MPR+TTC+MDR+OSR"]);
        assert_eq!(RiskMetricSwitches::presets()[4].1, RiskMetricSwitches::ALL_ON);
        assert_eq!("mpr,ttc".parse::<RiskMetricSwitches>().unwrap(), RiskMetricSwitches::presets()[2].1);
        assert!("nrr,speed".parse::<RiskMetricSwitches>().is_err());
    }
}
