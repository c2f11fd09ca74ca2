//! Scene data: agent tracks, semantic maps, observation/future windows, file
//! formats and the deterministic synthetic scene generator.

mod io;
pub mod synth;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_simple, polygon_contains, Point};
use crate::hsg::GrammarBasis;

pub use io::{
    load_scene, parse_map, parse_trajectories, read_map, read_trajectories, windows_from_tracks, write_map,
    write_trajectories, TrajectoryFile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Pedestrian,
    Car,
    Rider,
}

impl AgentCategory {
    pub const ALL: [AgentCategory; 3] = [AgentCategory::Pedestrian, AgentCategory::Car, AgentCategory::Rider];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentCategory::Pedestrian => "pedestrian",
            AgentCategory::Car => "car",
            AgentCategory::Rider => "rider",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentCategory {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        AgentCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown agent category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticRegionType {
    RoadSegment,
    DrivableArea,
    ZebraRegion,
    Carpark,
    Sidewalk,
    RoadBlock,
    RoadLanes,
    StopLines,
}

impl SemanticRegionType {
    pub const ALL: [SemanticRegionType; 8] = [
        SemanticRegionType::RoadSegment,
        SemanticRegionType::DrivableArea,
        SemanticRegionType::ZebraRegion,
        SemanticRegionType::Carpark,
        SemanticRegionType::Sidewalk,
        SemanticRegionType::RoadBlock,
        SemanticRegionType::RoadLanes,
        SemanticRegionType::StopLines,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticRegionType::RoadSegment => "road_segment",
            SemanticRegionType::DrivableArea => "drivable_area",
            SemanticRegionType::ZebraRegion => "zebra_region",
            SemanticRegionType::Carpark => "carpark",
            SemanticRegionType::Sidewalk => "sidewalk",
            SemanticRegionType::RoadBlock => "road_block",
            SemanticRegionType::RoadLanes => "road_lanes",
            SemanticRegionType::StopLines => "stop_lines",
        }
    }

    /// Rank used to resolve overlapping polygons; higher wins.
    pub fn priority(self) -> u8 {
        match self {
            SemanticRegionType::ZebraRegion => 8,
            SemanticRegionType::StopLines => 7,
            SemanticRegionType::RoadLanes => 6,
            SemanticRegionType::RoadSegment => 5,
            SemanticRegionType::DrivableArea => 4,
            SemanticRegionType::Carpark => 3,
            SemanticRegionType::Sidewalk => 2,
            SemanticRegionType::RoadBlock => 1,
        }
    }

    /// Road-like surfaces share one class when comparing occupancy between agents.
    pub fn is_road_like(self) -> bool {
        matches!(
            self,
            SemanticRegionType::ZebraRegion
                | SemanticRegionType::RoadSegment
                | SemanticRegionType::DrivableArea
                | SemanticRegionType::RoadLanes
                | SemanticRegionType::StopLines
        )
    }
}

impl fmt::Display for SemanticRegionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticRegionType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SemanticRegionType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown region type `{s}`"))
    }
}

/// Any node type that can appear in a scene grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticType {
    Agent(AgentCategory),
    Region(SemanticRegionType),
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemanticType::Agent(c) => c.fmt(f),
            SemanticType::Region(r) => r.fmt(f),
        }
    }
}

impl FromStr for SemanticType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Ok(c) = s.parse() {
            return Ok(SemanticType::Agent(c));
        }
        s.parse()
            .map(SemanticType::Region)
            .map_err(|_| format!("unknown semantic type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub frame: i64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub category: AgentCategory,
    pub samples: Vec<TrackSample>,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::Validation(format!(
                    "agent `{}`: frame indices not strictly increasing ({} then {})",
                    self.agent_id, w[0].frame, w[1].frame
                )));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !s.position.is_finite()) {
            return Err(Error::Validation(format!(
                "agent `{}`: non-finite position at frame {}",
                self.agent_id, s.frame
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> impl Iterator<Item = Point> + '_ {
        self.samples.iter().map(|s| s.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: SemanticRegionType,
    pub polygon: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticMap {
    pub regions: Vec<Region>,
    pub grammar: GrammarBasis,
}

impl SemanticMap {
    pub fn validate(&self) -> Result<()> {
        for r in &self.regions {
            if r.polygon.len() < 3 {
                return Err(Error::Validation(format!(
                    "region `{}` has {} vertices; at least 3 are required",
                    r.id,
                    r.polygon.len()
                )));
            }
            if r.polygon.iter().any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!("region `{}` has a non-finite vertex", r.id)));
            }
            if !is_simple(&r.polygon) {
                return Err(Error::Validation(format!("region `{}` is self-intersecting", r.id)));
            }
        }
        Ok(())
    }

    /// Index of the highest-priority region containing `p`. Among same-type
    /// candidates the earliest region wins.
    pub fn occupied_region_index(&self, p: Point) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.regions.iter().enumerate() {
            if !polygon_contains(&r.polygon, p) {
                continue;
            }
            match best {
                Some(b) if self.regions[b].kind.priority() >= r.kind.priority() => {}
                _ => best = Some(i),
            }
        }
        best
    }
}

/// Semantic type of the region an agent at `p` occupies, if any.
pub fn occupied_region(p: Point, map: &SemanticMap) -> Option<SemanticRegionType> {
    map.occupied_region_index(p).map(|i| map.regions[i].kind)
}

/// One training/evaluation sample: `t_obs` observed frames followed by
/// `t_pred` future frames for every agent present over the whole span.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneWindow {
    pub tracks: Vec<AgentTrack>,
    pub map: Arc<SemanticMap>,
    pub t_obs: usize,
    pub t_pred: usize,
    pub fps: f64,
}

impl SceneWindow {
    pub fn n_agents(&self) -> usize {
        self.tracks.len()
    }

    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn start_frame(&self) -> i64 {
        self.tracks.first().and_then(|t| t.samples.first()).map_or(0, |s| s.frame)
    }

    /// Position of agent `i` at window step `k` (0-based, observation first).
    pub fn position(&self, i: usize, k: usize) -> Point {
        self.tracks[i].samples[k].position
    }

    pub fn positions_at(&self, k: usize) -> Vec<Point> {
        (0..self.n_agents()).map(|i| self.position(i, k)).collect()
    }

    pub fn last_observed(&self, i: usize) -> Point {
        self.position(i, self.t_obs - 1)
    }

    pub fn observed(&self, i: usize) -> &[TrackSample] {
        &self.tracks[i].samples[..self.t_obs]
    }

    pub fn future(&self, i: usize) -> &[TrackSample] {
        &self.tracks[i].samples[self.t_obs..self.t_obs + self.t_pred]
    }

    /// Ground-truth future positions, `N × t_pred`.
    pub fn future_positions(&self) -> Vec<Vec<Point>> {
        (0..self.n_agents())
            .map(|i| self.future(i).iter().map(|s| s.position).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::Validation("scene window has no agents".into()));
        }
        if self.t_obs == 0 || self.t_pred == 0 {
            return Err(Error::Validation("t_obs and t_pred must be positive".into()));
        }
        let start = self.start_frame();
        for t in &self.tracks {
            t.validate()?;
            let frames: Vec<i64> = t.samples.iter().map(|s| s.frame).collect();
            let expected: Vec<i64> = (start..start + self.len() as i64).collect();
            if frames != expected {
                return Err(Error::Validation(format!(
                    "agent `{}` does not cover frames {start}..{}",
                    t.agent_id,
                    start + self.len() as i64 - 1
                )));
            }
        }
        Ok(())
    }
}
