//! Deterministic synthetic scenes on a straight-road template.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::hsg::GrammarBasis;

use super::{AgentCategory, AgentTrack, Region, SceneWindow, SemanticMap, SemanticRegionType, TrackSample};

pub const ROAD_HALF_LENGTH: f64 = 60.0;
pub const ROAD_HALF_WIDTH: f64 = 5.0;
pub const SIDEWALK_OUTER: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    ConstantVelocity,
    Turn,
    /// Decelerates uniformly to rest; road users stop at the stop line.
    Stop,
    /// Walks the sidewalk to the zebra, then crosses the road on it.
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGroup {
    pub category: AgentCategory,
    pub archetype: Archetype,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub agents: Vec<AgentGroup>,
    /// Standard deviation of isotropic position noise (m).
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_t_obs")]
    pub t_obs: usize,
    #[serde(default = "default_t_pred")]
    pub t_pred: usize,
    /// Half-width of the uniform jitter applied to the zebra's x position.
    #[serde(default)]
    pub zebra_jitter: f64,
}

fn default_fps() -> f64 {
    2.0
}
fn default_t_obs() -> usize {
    4
}
fn default_t_pred() -> usize {
    6
}

impl SynthSpec {
    pub fn new(agents: Vec<AgentGroup>) -> Self {
        Self {
            agents,
            noise: 0.0,
            fps: default_fps(),
            t_obs: default_t_obs(),
            t_pred: default_t_pred(),
            zebra_jitter: 0.0,
        }
    }

    pub fn with(mut self, category: AgentCategory, archetype: Archetype, count: usize) -> Self {
        self.agents.push(AgentGroup {
            category,
            archetype,
            count,
        });
        self
    }

    pub fn n_agents(&self) -> usize {
        self.agents.iter().map(|g| g.count).sum()
    }

    pub fn frames(&self) -> usize {
        self.t_obs + self.t_pred
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents() == 0 {
            return Err(Error::Validation("synthetic scene requests zero agents".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Validation("fps must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.zebra_jitter >= 0.0) {
            return Err(Error::Validation("noise and zebra_jitter must be non-negative".into()));
        }
        if self.t_obs < 2 || self.t_pred == 0 {
            return Err(Error::Validation("t_obs must be at least 2 and t_pred positive".into()));
        }
        for g in &self.agents {
            if g.archetype == Archetype::Crossing && g.category == AgentCategory::Car {
                return Err(Error::Validation("cars cannot use the crossing archetype".into()));
            }
        }
        Ok(())
    }
}

fn rect(id: &str, kind: SemanticRegionType, x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
    Region {
        id: id.to_string(),
        kind,
        polygon: vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ],
    }
}

/// Straight two-lane road along x with sidewalks on both sides, a zebra
/// centred at `zebra_x`, a stop line before it in each lane and a car park
/// reached through a short driveway. Carries the full built-in grammar.
pub fn straight_road(zebra_x: f64) -> SemanticMap {
    use SemanticRegionType::*;
    let (l, w, s) = (ROAD_HALF_LENGTH, ROAD_HALF_WIDTH, SIDEWALK_OUTER);
    SemanticMap {
        regions: vec![
            rect("road", RoadSegment, -l, -w, l, w),
            rect("lane_east", RoadLanes, -l, -w, l, 0.0),
            rect("lane_west", RoadLanes, -l, 0.0, l, w),
            rect("sidewalk_south", Sidewalk, -l, -s, l, -w),
            rect("sidewalk_north", Sidewalk, -l, w, l, s),
            rect("zebra", ZebraRegion, zebra_x - 2.0, -w, zebra_x + 2.0, w),
            rect("stop_east", StopLines, zebra_x - 5.0, -w, zebra_x - 4.0, 0.0),
            rect("stop_west", StopLines, zebra_x + 4.0, 0.0, zebra_x + 5.0, w),
            rect("driveway", DrivableArea, -34.0, s, -28.0, s + 3.0),
            rect("carpark", Carpark, -45.0, s + 3.0, -17.0, 24.0),
            rect("barrier", RoadBlock, -17.0, s + 3.0, -15.0, 24.0),
        ],
        grammar: GrammarBasis::full(),
    }
}

/// Closed-form motion before noise. `t` is seconds since the first frame.
#[derive(Debug, Clone)]
enum Motion {
    Linear { p0: Point, v: Point },
    Arc { p0: Point, speed: f64, heading: f64, yaw_rate: f64 },
    Brake { p0: Point, dir: Point, speed: f64, decel: f64 },
    Path { points: Vec<Point>, speed: f64 },
}

impl Motion {
    fn at(&self, t: f64) -> Point {
        match self {
            Motion::Linear { p0, v } => *p0 + *v * t,
            Motion::Arc {
                p0,
                speed,
                heading,
                yaw_rate,
            } => {
                let th = heading + yaw_rate * t;
                let r = speed / yaw_rate;
                *p0 + Point::new(th.sin() - heading.sin(), heading.cos() - th.cos()) * r
            }
            Motion::Brake { p0, dir, speed, decel } => {
                let t_stop = speed / decel;
                let tt = t.min(t_stop);
                *p0 + *dir * (speed * tt - 0.5 * decel * tt * tt)
            }
            Motion::Path { points, speed } => {
                let mut remaining = speed * t;
                for w in points.windows(2) {
                    let seg = w[1].distance(w[0]);
                    if remaining <= seg {
                        return w[0] + (w[1] - w[0]) * (remaining / seg);
                    }
                    remaining -= seg;
                }
                let n = points.len();
                let dir = (points[n - 1] - points[n - 2]) * (1.0 / points[n - 1].distance(points[n - 2]));
                points[n - 1] + dir * remaining
            }
        }
    }
}

fn speed_range(c: AgentCategory) -> (f64, f64) {
    match c {
        AgentCategory::Car => (6.0, 10.0),
        AgentCategory::Rider => (3.0, 5.0),
        AgentCategory::Pedestrian => (1.0, 1.6),
    }
}

fn plan(
    rng: &mut ChaCha8Rng,
    category: AgentCategory,
    archetype: Archetype,
    zebra_x: f64,
    duration: f64,
) -> Motion {
    let (lo, hi) = speed_range(category);
    let speed = rng.random_range(lo..hi);
    let travel = speed * duration;
    let eastbound = rng.random::<bool>();
    let sign = if eastbound { 1.0 } else { -1.0 };
    let heading = if eastbound { 0.0 } else { PI };
    let dir = Point::new(sign, 0.0);

    // Lateral lane: right-hand traffic, riders keep near the curb, pedestrians on a sidewalk.
    let lane_y = match category {
        AgentCategory::Car => -sign * 2.5,
        AgentCategory::Rider => -sign * 4.0,
        AgentCategory::Pedestrian => -sign * (6.5 + rng.random_range(-0.8..0.8)),
    };
    // Start so that the whole motion stays on the road template.
    let margin = ROAD_HALF_LENGTH - 2.0;
    let span = (2.0 * margin - travel).max(0.0);
    let start_along = -margin + rng.random_range(0.0..=span);
    let start = Point::new(sign * start_along, lane_y);

    match archetype {
        Archetype::ConstantVelocity => Motion::Linear { p0: start, v: dir * speed },
        Archetype::Turn => {
            let (wlo, whi) = match category {
                AgentCategory::Car => (0.05, 0.15),
                AgentCategory::Rider => (0.08, 0.2),
                AgentCategory::Pedestrian => (0.05, 0.2),
            };
            let w = rng.random_range(wlo..whi);
            // Turn toward the near kerb so the agent stays on its side.
            let yaw_rate = if category == AgentCategory::Pedestrian {
                if rng.random::<bool>() {
                    w
                } else {
                    -w
                }
            } else {
                -w
            };
            Motion::Arc {
                p0: start,
                speed,
                heading,
                yaw_rate,
            }
        }
        Archetype::Stop => {
            let stop_dist = match category {
                AgentCategory::Pedestrian => travel * rng.random_range(0.3..0.7),
                _ => travel * rng.random_range(0.25..0.4),
            };
            let p0 = match category {
                // Road users stop at their lane's stop line.
                AgentCategory::Car | AgentCategory::Rider => {
                    let line_x = zebra_x - sign * 4.5;
                    Point::new(line_x - sign * stop_dist, lane_y)
                }
                AgentCategory::Pedestrian => start,
            };
            Motion::Brake {
                p0,
                dir,
                speed,
                decel: speed * speed / (2.0 * stop_dist),
            }
        }
        Archetype::Crossing => {
            let from_south = rng.random::<bool>();
            let side = if from_south { -1.0 } else { 1.0 };
            let walk_y = side * 6.5;
            let approach = travel * rng.random_range(0.2..0.6);
            let cross_x = zebra_x + rng.random_range(-0.25..0.25);
            let start = Point::new(cross_x - sign * approach, walk_y);
            Motion::Path {
                points: vec![
                    start,
                    Point::new(cross_x, walk_y),
                    Point::new(cross_x, -walk_y),
                    Point::new(cross_x + sign * 50.0, -walk_y),
                ],
                speed,
            }
        }
    }
}

/// Generates one scene covering frames `1..=t_obs + t_pred`.
pub fn synthesize_scene(spec: &SynthSpec, seed: u64) -> Result<SceneWindow> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zebra_x = if spec.zebra_jitter > 0.0 {
        rng.random_range(-spec.zebra_jitter..=spec.zebra_jitter)
    } else {
        0.0
    };
    let map = Arc::new(straight_road(zebra_x));
    let frames = spec.frames();
    let duration = (frames - 1) as f64 / spec.fps;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Validation(e.to_string()))?;

    let mut tracks = Vec::with_capacity(spec.n_agents());
    let mut counters = [0usize; 3];
    for g in &spec.agents {
        for _ in 0..g.count {
            let motion = plan(&mut rng, g.category, g.archetype, zebra_x, duration);
            let samples = (0..frames)
                .map(|k| {
                    let clean = motion.at(k as f64 / spec.fps);
                    let position = if spec.noise > 0.0 {
                        clean + Point::new(noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        clean
                    };
                    TrackSample {
                        frame: k as i64 + 1,
                        position,
                    }
                })
                .collect();
            let n = &mut counters[g.category.index()];
            tracks.push(AgentTrack {
                agent_id: format!("{}{}", g.category, *n),
                category: g.category,
                samples,
            });
            *n += 1;
        }
    }
    Ok(SceneWindow {
        tracks,
        map,
        t_obs: spec.t_obs,
        t_pred: spec.t_pred,
        fps: spec.fps,
    })
}

/// `count` independent scenes with seeds derived from `seed`.
pub fn synthesize_dataset(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<SceneWindow>> {
    (0..count)
        .map(|i| synthesize_scene(spec, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

/// Two cars converging at a small angle with constant velocities; they would
/// meet half a frame after the window ends. The main-road car is agent 0.
pub fn two_car_merge(t_obs: usize, t_pred: usize, fps: f64) -> SceneWindow {
    let frames = t_obs + t_pred;
    let t_meet = (frames as f64 - 0.5) / fps;
    let speed = 8.0;
    let meet = Point::new(20.0, -2.5);
    let main_v = Point::new(speed, 0.0);
    let angle: f64 = -5f64.to_radians();
    let ramp_v = Point::new(speed * angle.cos(), speed * angle.sin());
    let track = |id: &str, v: Point| AgentTrack {
        agent_id: id.to_string(),
        category: AgentCategory::Car,
        samples: (0..frames)
            .map(|k| TrackSample {
                frame: k as i64 + 1,
                position: meet + v * (k as f64 / fps - t_meet),
            })
            .collect(),
    };
    SceneWindow {
        tracks: vec![track("car0", main_v), track("car1", ramp_v)],
        map: Arc::new(straight_road(0.0)),
        t_obs,
        t_pred,
        fps,
    }
}

/// Heading of a sampled motion, used only by tests.
#[cfg(test)]
fn heading(a: Point, b: Point) -> f64 {
    (b - a).angle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::occupied_region;
    use crate::data::SemanticType;
    use crate::geometry::polygon_contains;

    fn cv_cars() -> SynthSpec {
        SynthSpec::new(vec![]).with(AgentCategory::Car, Archetype::ConstantVelocity, 2)
    }

    #[test]
    fn constant_velocity_is_straight_without_noise() {
        let w = synthesize_scene(&cv_cars(), 7).unwrap();
        assert_eq!(w.n_agents(), 2);
        for t in &w.tracks {
            let p: Vec<Point> = t.positions().collect();
            let d = p[1] - p[0];
            for k in 2..p.len() {
                let e = p[k] - p[0];
                let cross = d.x * e.y - d.y * e.x;
                assert!(cross.abs() < 1e-9, "off-line by {cross}");
                assert!((e.norm() - d.norm() * k as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            noise: 0.1,
            zebra_jitter: 5.0,
            ..cv_cars().with(AgentCategory::Pedestrian, Archetype::Crossing, 2)
        };
        assert_eq!(synthesize_scene(&spec, 3).unwrap(), synthesize_scene(&spec, 3).unwrap());
        assert_ne!(synthesize_scene(&spec, 3).unwrap(), synthesize_scene(&spec, 4).unwrap());
    }

    #[test]
    fn crossing_pedestrian_enters_the_zebra() {
        let spec = SynthSpec::new(vec![]).with(AgentCategory::Pedestrian, Archetype::Crossing, 1);
        for seed in 0..50 {
            let w = synthesize_scene(&spec, seed).unwrap();
            let zebra = w.map.regions.iter().find(|r| r.kind == SemanticRegionType::ZebraRegion).unwrap();
            assert!(
                w.tracks[0].positions().any(|p| polygon_contains(&zebra.polygon, p)),
                "seed {seed} never reached the zebra"
            );
        }
    }

    #[test]
    fn agents_start_in_grammar_compatible_regions() {
        use Archetype::*;
        let mut spec = SynthSpec::new(vec![]);
        for c in AgentCategory::ALL {
            for a in [ConstantVelocity, Turn, Stop, Crossing] {
                if !(c == AgentCategory::Car && a == Crossing) {
                    spec = spec.with(c, a, 2);
                }
            }
        }
        spec.zebra_jitter = 10.0;
        for seed in 0..30 {
            let w = synthesize_scene(&spec, seed).unwrap();
            for t in &w.tracks {
                let start = t.samples[0].position;
                let kind = occupied_region(start, &w.map).unwrap_or_else(|| panic!("{} off map", t.agent_id));
                assert!(
                    w.map.grammar.contains(SemanticType::Agent(t.category), SemanticType::Region(kind)),
                    "{} starts on {kind}",
                    t.agent_id
                );
            }
        }
    }

    #[test]
    fn stopping_car_comes_to_rest_at_the_line() {
        let spec = SynthSpec {
            t_obs: 8,
            t_pred: 12,
            ..SynthSpec::new(vec![]).with(AgentCategory::Car, Archetype::Stop, 1)
        };
        let w = synthesize_scene(&spec, 1).unwrap();
        let p: Vec<Point> = w.tracks[0].positions().collect();
        let last = p[p.len() - 1];
        assert!((last.x.abs() - 4.5).abs() < 1e-9, "stopped at {last:?}");
        assert!(p[p.len() - 2].distance(last) < 1e-9);
    }

    #[test]
    fn merge_cars_converge_at_constant_rate() {
        let w = two_car_merge(4, 6, 2.0);
        let d: Vec<f64> = (0..w.len()).map(|k| w.position(0, k).distance(w.position(1, k))).collect();
        for k in 1..d.len() {
            assert!(d[k] < d[k - 1]);
            assert!(((d[k - 1] - d[k]) - (d[0] - d[1])).abs() < 1e-9);
        }
        assert!((heading(w.position(1, 0), w.position(1, 1)) + 5f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn zero_agents_rejected() {
        assert!(matches!(synthesize_scene(&SynthSpec::new(vec![]), 0), Err(Error::Validation(_))));
        let bad = SynthSpec::new(vec![]).with(AgentCategory::Car, Archetype::Crossing, 1);
        assert!(matches!(synthesize_scene(&bad, 0), Err(Error::Validation(_))));
    }
}
