//! Hierarchical scene graph: agents plus static semantic regions, linked by a
//! road scene grammar.

mod grammar;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{AgentCategory, SceneWindow, SemanticMap, SemanticRegionType, SemanticType};
use crate::geometry::{polygon_centroid, polygon_intersects_rect, Point, Rect};

pub use grammar::GrammarBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Agent(AgentCategory),
    Region(SemanticRegionType),
    Padding,
}

impl NodeKind {
    pub fn semantic(self) -> Option<SemanticType> {
        match self {
            NodeKind::Agent(c) => Some(SemanticType::Agent(c)),
            NodeKind::Region(r) => Some(SemanticType::Region(r)),
            NodeKind::Padding => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Agent(c) => c.fmt(f),
            NodeKind::Region(r) => r.fmt(f),
            NodeKind::Padding => f.write_str("padding"),
        }
    }
}

/// Ground-plane crop standing in for a camera forward-view projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Roi {
    Fixed { min: Point, max: Point },
    /// Bounding box of the frame's agents grown by `margin` meters.
    AroundAgents { margin: f64 },
}

impl Roi {
    pub fn rect_for(&self, agents: &[Point]) -> Option<Rect> {
        match *self {
            Roi::Fixed { min, max } => Some(Rect::new(min, max)),
            Roi::AroundAgents { margin } => Rect::bounding(agents.iter().copied()).map(|r| r.expand(margin)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionNode {
    /// Index into `SemanticMap::regions`.
    pub region: usize,
    pub id: String,
    pub kind: SemanticRegionType,
    pub centroid: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    /// Agent centres followed by region centroids and padding, `(N+M)` rows.
    pub nodes: Vec<Point>,
    /// Row-major `(N+M) × (N+M)` 0/1 matrix.
    pub edges: Vec<f64>,
    pub node_kinds: Vec<NodeKind>,
    pub n_agents: usize,
    pub frame_index: i64,
}

impl SceneGraph {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge(&self, u: usize, v: usize) -> f64 {
        self.edges[u * self.size() + v]
    }
}

/// Region nodes with area centroids; regions entirely outside `roi` are dropped.
pub fn region_nodes(map: &SemanticMap, roi: Option<&Rect>) -> Vec<RegionNode> {
    map.regions
        .iter()
        .enumerate()
        .filter(|(_, r)| roi.is_none_or(|rect| polygon_intersects_rect(&r.polygon, rect)))
        .map(|(i, r)| RegionNode {
            region: i,
            id: r.id.clone(),
            kind: r.kind,
            centroid: polygon_centroid(&r.polygon),
        })
        .collect()
}

pub fn pad_m(counts: &[usize]) -> usize {
    counts.iter().copied().max().unwrap_or(0)
}

fn nearest<'a>(from: Point, candidates: impl Iterator<Item = (usize, &'a RegionNode)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, r) in candidates {
        let d = from.distance(r.centroid);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Aligned 0/1 edges for one frame over `agents.len() + m` nodes, where
/// `m ≥ regions.len()` and the tail is padding.
///
/// Each region links to the nearest region of every partner type the grammar
/// allows. Each agent links to the region it occupies when the grammar allows
/// that pair; an agent on no region links to the nearest compatible region.
pub fn edge_align(
    basis: &GrammarBasis,
    agents: &[(AgentCategory, Point)],
    regions: &[RegionNode],
    map: &SemanticMap,
    m: usize,
) -> Vec<f64> {
    let n = agents.len();
    let v = n + m.max(regions.len());
    let mut e = vec![0.0; v * v];
    let mut link = |a: usize, b: usize| {
        if a != b {
            e[a * v + b] = 1.0;
            e[b * v + a] = 1.0;
        }
    };

    let mut partner_types: Vec<SemanticRegionType> = regions.iter().map(|r| r.kind).collect();
    partner_types.sort();
    partner_types.dedup();
    for (ru, r) in regions.iter().enumerate() {
        for &ty in &partner_types {
            if !basis.contains(SemanticType::Region(r.kind), SemanticType::Region(ty)) {
                continue;
            }
            let cands = regions.iter().enumerate().filter(|&(k, q)| k != ru && q.kind == ty);
            if let Some(k) = nearest(r.centroid, cands) {
                link(n + ru, n + k);
            }
        }
    }

    for (a, &(cat, p)) in agents.iter().enumerate() {
        let compatible = |k: SemanticRegionType| basis.contains(SemanticType::Agent(cat), SemanticType::Region(k));
        match map.occupied_region_index(p) {
            Some(occ) => {
                if compatible(map.regions[occ].kind) {
                    if let Some(k) = regions.iter().position(|r| r.region == occ) {
                        link(a, n + k);
                    }
                }
            }
            None => {
                let cands = regions.iter().enumerate().filter(|(_, r)| compatible(r.kind));
                if let Some(k) = nearest(p, cands) {
                    link(a, n + k);
                }
            }
        }
    }
    e
}

/// Scene graphs for the observation frames, sharing one padded region count.
pub fn build_scene_graph(window: &SceneWindow, basis: &GrammarBasis, roi: Option<&Roi>) -> Vec<SceneGraph> {
    let map = window.map.as_ref();
    let per_frame: Vec<(Vec<Point>, Vec<RegionNode>)> = (0..window.t_obs)
        .map(|k| {
            let pos = window.positions_at(k);
            let rect = roi.and_then(|r| r.rect_for(&pos));
            let regs = region_nodes(map, rect.as_ref());
            (pos, regs)
        })
        .collect();
    let m = pad_m(&per_frame.iter().map(|(_, r)| r.len()).collect::<Vec<_>>());
    let start = window.start_frame();

    per_frame
        .into_iter()
        .enumerate()
        .map(|(k, (pos, regs))| {
            let agents: Vec<(AgentCategory, Point)> =
                window.tracks.iter().map(|t| t.category).zip(pos.iter().copied()).collect();
            let edges = edge_align(basis, &agents, &regs, map, m);
            let mut nodes = pos;
            let mut kinds: Vec<NodeKind> = agents.iter().map(|&(c, _)| NodeKind::Agent(c)).collect();
            for r in &regs {
                nodes.push(r.centroid);
                kinds.push(NodeKind::Region(r.kind));
            }
            while kinds.len() < agents.len() + m {
                nodes.push(Point::ORIGIN);
                kinds.push(NodeKind::Padding);
            }
            SceneGraph {
                nodes,
                edges,
                node_kinds: kinds,
                n_agents: agents.len(),
                frame_index: start + k as i64,
            }
        })
        .collect()
}
