//! Text interchange formats for trajectories and semantic maps, and windowing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::hsg::GrammarBasis;

use super::{AgentCategory, AgentTrack, Region, SceneWindow, SemanticMap, TrackSample};

/// Parsed trajectory file: frame rate, free-form comment lines and tracks in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub fps: f64,
    pub comments: Vec<String>,
    pub tracks: Vec<AgentTrack>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} `{s}`")));
    }
    Ok(v)
}

pub fn parse_trajectories(text: &str) -> Result<TrajectoryFile> {
    let mut lines = text.lines().enumerate();
    let fps = match lines.next() {
        Some((_, l)) => {
            let v = l
                .trim()
                .strip_prefix("#fps=")
                .ok_or_else(|| parse_err(1, "first line must be `#fps=<float>`"))?;
            let fps = parse_f64(v, "fps", 1)?;
            if fps <= 0.0 {
                return Err(parse_err(1, "fps must be positive"));
            }
            fps
        }
        None => return Err(parse_err(1, "empty trajectory file")),
    };

    let mut comments = Vec::new();
    let mut tracks: Vec<AgentTrack> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: BTreeSet<(usize, i64)> = BTreeSet::new();

    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.to_string());
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(lineno, format!("expected 5 fields, found {}", f.len())));
        }
        let frame: i64 = f[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid frame `{}`", f[0])))?;
        let id = f[1].trim();
        if id.is_empty() {
            return Err(parse_err(lineno, "empty agent id"));
        }
        let category: AgentCategory = f[2].trim().parse().map_err(|m: String| parse_err(lineno, m))?;
        let position = Point::new(parse_f64(f[3], "x", lineno)?, parse_f64(f[4], "y", lineno)?);

        let k = *index.entry(id.to_string()).or_insert_with(|| {
            tracks.push(AgentTrack {
                agent_id: id.to_string(),
                category,
                samples: Vec::new(),
            });
            tracks.len() - 1
        });
        if tracks[k].category != category {
            return Err(parse_err(
                lineno,
                format!("agent `{id}` changes category from {} to {category}", tracks[k].category),
            ));
        }
        if !seen.insert((k, frame)) {
            return Err(parse_err(lineno, format!("duplicate frame {frame} for agent `{id}`")));
        }
        tracks[k].samples.push(TrackSample { frame, position });
    }
    for t in &mut tracks {
        t.samples.sort_by_key(|s| s.frame);
    }
    Ok(TrajectoryFile { fps, comments, tracks })
}

/// Serializes tracks ordered by frame, then by track order. Coordinates use the
/// shortest representation that parses back to the same `f64`.
pub fn write_trajectories(fps: f64, comments: &[String], tracks: &[AgentTrack]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#fps={fps}");
    for c in comments {
        let _ = writeln!(out, "#{c}");
    }
    let mut rows: Vec<(i64, usize, &TrackSample)> = tracks
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.samples.iter().map(move |s| (s.frame, k, s)))
        .collect();
    rows.sort_by_key(|&(frame, k, _)| (frame, k));
    for (frame, k, s) in rows {
        let t = &tracks[k];
        let _ = writeln!(
            out,
            "{frame},{},{},{},{}",
            t.agent_id, t.category, s.position.x, s.position.y
        );
    }
    out
}

/// Parses region and `edge` lines. The grammar is whatever edges the file lists.
pub fn parse_map(text: &str) -> Result<SemanticMap> {
    let mut map = SemanticMap {
        regions: Vec::new(),
        grammar: GrammarBasis::new(),
    };
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("edge|") {
            map.grammar.parse_edge_line(line, lineno)?;
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 3 {
            return Err(parse_err(lineno, "expected `region_id|type|x1 y1 x2 y2 ...`"));
        }
        let id = f[0].trim();
        if id.is_empty() {
            return Err(parse_err(lineno, "empty region id"));
        }
        if !ids.insert(id.to_string()) {
            return Err(parse_err(lineno, format!("duplicate region id `{id}`")));
        }
        let kind = f[1].trim().parse().map_err(|m: String| parse_err(lineno, m))?;
        let coords: Vec<&str> = f[2].split_whitespace().collect();
        if coords.len() % 2 != 0 {
            return Err(parse_err(lineno, "odd number of polygon coordinates"));
        }
        let polygon = coords
            .chunks(2)
            .map(|c| Ok(Point::new(parse_f64(c[0], "x", lineno)?, parse_f64(c[1], "y", lineno)?)))
            .collect::<Result<Vec<_>>>()?;
        map.regions.push(Region {
            id: id.to_string(),
            kind,
            polygon,
        });
    }
    map.validate()?;
    Ok(map)
}

pub fn write_map(map: &SemanticMap, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "#{c}");
    }
    for r in &map.regions {
        let coords: Vec<String> = r.polygon.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
        let _ = writeln!(out, "{}|{}|{}", r.id, r.kind, coords.join(" "));
    }
    out.push_str(&map.grammar.to_text());
    out
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_trajectories(path: &Path) -> Result<TrajectoryFile> {
    parse_trajectories(&read_text(path)?)
}

pub fn read_map(path: &Path) -> Result<SemanticMap> {
    parse_map(&read_text(path)?)
}

/// Slices tracks into stride-1 windows over each run of consecutive frames.
/// A window keeps only agents present on every one of its frames; windows with
/// no such agent are skipped.
pub fn windows_from_tracks(
    tracks: &[AgentTrack],
    map: Arc<SemanticMap>,
    fps: f64,
    t_obs: usize,
    t_pred: usize,
) -> Result<Vec<SceneWindow>> {
    if t_obs == 0 || t_pred == 0 {
        return Err(Error::Validation("t_obs and t_pred must be positive".into()));
    }
    for t in tracks {
        t.validate()?;
    }
    let len = (t_obs + t_pred) as i64;
    let frames: BTreeSet<i64> = tracks.iter().flat_map(|t| t.samples.iter().map(|s| s.frame)).collect();
    let frames: Vec<i64> = frames.into_iter().collect();

    // Per-track frame -> sample index for O(1) coverage checks.
    let lookup: Vec<BTreeMap<i64, usize>> = tracks
        .iter()
        .map(|t| t.samples.iter().enumerate().map(|(i, s)| (s.frame, i)).collect())
        .collect();

    let mut spans: Vec<(i64, i64)> = Vec::new();
    for &f in &frames {
        match spans.last_mut() {
            Some((_, end)) if *end + 1 == f => *end = f,
            _ => spans.push((f, f)),
        }
    }

    let mut out = Vec::new();
    for (first, last) in spans {
        let mut start = first;
        while start + len - 1 <= last {
            let mut wt = Vec::new();
            for (t, lk) in tracks.iter().zip(&lookup) {
                let (Some(&a), Some(&b)) = (lk.get(&start), lk.get(&(start + len - 1))) else {
                    continue;
                };
                // Frames are strictly increasing, so equal index span means full coverage.
                if b - a + 1 == len as usize {
                    wt.push(AgentTrack {
                        agent_id: t.agent_id.clone(),
                        category: t.category,
                        samples: t.samples[a..=b].to_vec(),
                    });
                }
            }
            if !wt.is_empty() {
                out.push(SceneWindow {
                    tracks: wt,
                    map: Arc::clone(&map),
                    t_obs,
                    t_pred,
                    fps,
                });
            }
            start += 1;
        }
    }
    Ok(out)
}

/// Loads a trajectory file and a map file and slices them into windows.
pub fn load_scene(trajectory_file: &Path, map_file: &Path, t_obs: usize, t_pred: usize) -> Result<Vec<SceneWindow>> {
    let traj = read_trajectories(trajectory_file)?;
    let map = Arc::new(read_map(map_file)?);
    windows_from_tracks(&traj.tracks, map, traj.fps, t_obs, t_pred)
}
