//! The six subcommands. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use trajrisk::bezier::bezier_smooth;
use trajrisk::data::synth::synthesize_dataset;
use trajrisk::data::{read_map, read_trajectories, windows_from_tracks, write_map, write_trajectories, SceneWindow, SemanticMap};
use trajrisk::eval::{Evaluator, MetricReport};
use trajrisk::geometry::Point;
use trajrisk::hrg::{build_risk_graph, RiskGraph, RiskMetricSwitches};
use trajrisk::hsg::{build_scene_graph, GrammarBasis, NodeKind};
use trajrisk::model::{load_checkpoint, save_checkpoint, train as fit, Checkpoint, Forecaster, TrainState};
use trajrisk::patterns::fit_patterns;
use trajrisk::{Error, Result};
use trajrisk_tensor::Container;

use crate::config::Loaded;
use crate::forecast::{ForecastFile, ForecastRow};
use crate::svg::{category_color, escape, heat, region_color, Doc, View};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Refuses to replace existing files unless `force` is set.
fn guard(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Validation(format!(
            "{} already exists (pass --force to overwrite)",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| io_err(d, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn data_files(l: &Loaded) -> Result<Vec<PathBuf>> {
    let data = l.data();
    if !data.is_dir() {
        return Ok(vec![data]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&data)
        .map_err(|e| io_err(&data, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!("no *.csv trajectory files in {}", data.display())));
    }
    Ok(files)
}

/// All windows of the configured data, files in name order.
pub fn load_windows(l: &Loaded, t_obs: usize, t_pred: usize) -> Result<Vec<SceneWindow>> {
    let grammar = match &l.config.paths.grammar {
        Some(g) => {
            let p = l.resolve(g);
            let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            Some(GrammarBasis::parse(&text)?)
        }
        None => None,
    };
    let mut maps: BTreeMap<PathBuf, Arc<SemanticMap>> = BTreeMap::new();
    let mut out = Vec::new();
    for file in data_files(l)? {
        let traj = read_trajectories(&file)?;
        let map_path = match &l.config.paths.map {
            Some(m) => l.resolve(m),
            None => file.with_extension("map"),
        };
        let map = match maps.get(&map_path) {
            Some(m) => Arc::clone(m),
            None => {
                let mut m = read_map(&map_path)?;
                if let Some(g) = &grammar {
                    m.grammar = g.clone();
                }
                let m = Arc::new(m);
                maps.insert(map_path, Arc::clone(&m));
                m
            }
        };
        out.extend(windows_from_tracks(&traj.tracks, map, traj.fps, t_obs, t_pred)?);
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "no window spans {} consecutive frames",
            t_obs + t_pred
        )));
    }
    info!("loaded {} windows", out.len());
    Ok(out)
}

fn pick<'a>(windows: &'a [SceneWindow], index: usize, key: &str) -> Result<&'a SceneWindow> {
    windows.get(index).ok_or_else(|| {
        Error::Validation(format!("{key} = {index} but only {} windows were loaded", windows.len()))
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let c = Container::read_from(std::io::BufReader::new(f))?;
    load_checkpoint(&c)
}

pub fn simulate(l: &Loaded, force: bool) -> Result<Vec<PathBuf>> {
    let cfg = &l.config.simulate;
    if cfg.scenes == 0 {
        return Err(Error::Config("simulate.scenes must be positive".into()));
    }
    let dir = l.data();
    if dir.is_file() {
        return Err(Error::Validation(format!(
            "simulate writes a directory but {} is a file",
            dir.display()
        )));
    }
    let files: Vec<(PathBuf, PathBuf)> = (0..cfg.scenes)
        .map(|i| (dir.join(format!("scene_{i:04}.csv")), dir.join(format!("scene_{i:04}.map"))))
        .collect();
    guard(&files.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect::<Vec<_>>(), force)?;
    let scenes = synthesize_dataset(&l.config.synth_spec(), cfg.scenes, cfg.seed)?;
    let mut written = Vec::new();
    for (i, (scene, (csv, map))) in scenes.iter().zip(files).enumerate() {
        let comments = [format!("config_hash={}", l.hash), format!("scene={i}")];
        write_file(&csv, write_trajectories(scene.fps, &comments, &scene.tracks))?;
        write_file(&map, write_map(&scene.map, &comments))?;
        written.extend([csv, map]);
    }
    Ok(written)
}

pub fn train(l: &Loaded, force: bool) -> Result<Vec<PathBuf>> {
    let cfg = &l.config;
    let ck_path = l.checkpoint();
    let log_path = l.out_file("train_log.csv");
    guard(&[ck_path.clone(), log_path.clone()], force)?;
    let windows = load_windows(l, cfg.model.t_obs, cfg.model.t_pred)?;
    let patterns = fit_patterns(&windows, &cfg.model.patterns)?;
    let mut model = Forecaster::new(cfg.model.clone(), patterns, cfg.train.seed)?;

    create_parent(&log_path)?;
    let mut log = std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    write!(log, "#config_hash={}\nepoch,lr,loss\n", l.hash).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let mut state = TrainState::default();
    let result = fit(&mut model, &windows, &cfg.train, &mut state, |e| {
        info!("epoch {} lr {} loss {}", e.epoch, e.lr, e.loss);
        if log_err.is_none() {
            log_err = writeln!(log, "{},{},{}", e.epoch, e.lr, e.loss).and_then(|_| log.flush()).err();
        }
    });
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }
    result?;
    let ck = Checkpoint {
        model,
        train: cfg.train.clone(),
        state,
        config_hash: l.hash.clone(),
    };
    write_file(&ck_path, save_checkpoint(&ck)?.to_bytes())?;
    Ok(vec![log_path, ck_path])
}

/// Seed of the sampler for window `w`.
pub fn sample_seed(seed: u64, w: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(w as u64)
}

pub fn predict(l: &Loaded, force: bool) -> Result<Vec<PathBuf>> {
    let p = &l.config.predict;
    let out = l.forecast();
    let svg_path = l.out_file("forecast.svg");
    let mut targets = vec![out.clone()];
    if p.svg {
        targets.push(svg_path.clone());
    }
    guard(&targets, force)?;
    let ck = read_checkpoint(&l.checkpoint())?;
    let model = ck.model;
    let (t_obs, t_pred) = (model.config.t_obs, model.config.t_pred);
    if l.config.paths.grammar.is_some() && model.config.grammar != "map" {
        warn!("paths.grammar is ignored: the checkpoint uses the `{}` grammar", model.config.grammar);
    }
    let windows = load_windows(l, t_obs, t_pred)?;
    if p.svg {
        pick(&windows, p.svg_window, "predict.svg_window")?;
    }

    let mut file = ForecastFile {
        header: vec![
            ("config_hash".into(), l.hash.clone()),
            ("checkpoint_config_hash".into(), ck.config_hash.clone()),
            ("h".into(), p.h.to_string()),
            ("t_obs".into(), t_obs.to_string()),
            ("t_pred".into(), t_pred.to_string()),
            ("bezier".into(), p.bezier.to_string()),
        ],
        rows: Vec::new(),
    };
    let mut drawn = Vec::new();
    for (wi, w) in windows.iter().enumerate() {
        let samples = model.predict(w)?.sample(p.h, sample_seed(p.seed, wi));
        let mut draws = Vec::with_capacity(p.h);
        for d in 0..p.h {
            let mut agents = Vec::with_capacity(w.n_agents());
            for (i, track) in w.tracks.iter().enumerate() {
                let raw: Vec<Point> = (0..t_pred).map(|k| samples.point(d, i, k)).collect();
                let pts = if p.bezier {
                    bezier_smooth(&raw, Some(w.last_observed(i)))
                } else {
                    raw
                };
                for (s, &pt) in w.future(i).iter().zip(&pts) {
                    file.rows.push(ForecastRow {
                        window: wi,
                        draw: d,
                        agent_id: track.agent_id.clone(),
                        frame: s.frame,
                        position: pt,
                    });
                }
                agents.push(pts);
            }
            draws.push(agents);
        }
        if p.svg && wi == p.svg_window {
            drawn = draws;
        }
    }
    write_file(&out, file.to_text())?;
    if p.svg {
        let w = &windows[p.svg_window];
        write_file(&svg_path, forecast_svg(w, &drawn, &l.hash))?;
        Ok(vec![out, svg_path])
    } else {
        Ok(vec![out])
    }
}

fn map_layer(view: &View, doc: &mut Doc, map: &SemanticMap) {
    doc.raw(r#"<g class="map" opacity="0.5">"#);
    for r in &map.regions {
        let attrs = format!(r##"fill="{}" stroke="#666666" stroke-width="0.5""##, region_color(r.kind));
        view.polygon(doc, &r.polygon, &attrs, &format!("{} {}", r.kind, r.id));
    }
    doc.raw("</g>");
}

/// Observation solid, truth dashed, samples translucent.
pub fn forecast_svg(w: &SceneWindow, samples: &[Vec<Vec<Point>>], hash: &str) -> String {
    let pts = w
        .tracks
        .iter()
        .flat_map(|t| t.positions())
        .chain(samples.iter().flatten().flatten().copied());
    let view = View::fit(pts, 3.0, 12.0);
    let mut doc = view.doc();
    map_layer(&view, &mut doc, &w.map);
    for (i, t) in w.tracks.iter().enumerate() {
        let color = category_color(t.category);
        let last = w.last_observed(i);
        for d in samples {
            let mut line = vec![last];
            line.extend_from_slice(&d[i]);
            view.polyline(
                &mut doc,
                &line,
                &format!(r#"class="sample" stroke="{color}" stroke-opacity="0.2" stroke-width="1""#),
            );
        }
        let obs: Vec<Point> = w.observed(i).iter().map(|s| s.position).collect();
        view.polyline(&mut doc, &obs, &format!(r#"class="observation" stroke="{color}" stroke-width="2""#));
        let mut truth = vec![last];
        truth.extend(w.future(i).iter().map(|s| s.position));
        view.polyline(
            &mut doc,
            &truth,
            &format!(r#"class="truth" stroke="{color}" stroke-width="2" stroke-dasharray="6 4""#),
        );
        let (x, y) = view.px(last);
        doc.text(x + 4.0, y - 4.0, r#"font-size="10" font-family="sans-serif""#, &t.agent_id);
    }
    doc.finish(&format!("config_hash={hash}"))
}

pub fn evaluate(l: &Loaded, force: bool) -> Result<(MetricReport, Vec<PathBuf>)> {
    let json_path = l.out_file("report.json");
    let txt_path = l.out_file("report.txt");
    guard(&[json_path.clone(), txt_path.clone()], force)?;
    let path = l.forecast();
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let forecast = ForecastFile::parse(&text)?;
    let h = forecast.get_usize("h")?;
    let (t_obs, t_pred) = (forecast.get_usize("t_obs")?, forecast.get_usize("t_pred")?);
    if h == 0 {
        return Err(Error::Validation("forecast header has h=0".into()));
    }
    let windows = load_windows(l, t_obs, t_pred)?;
    let groups = forecast.by_window();
    if groups.len() != windows.len() || groups.keys().any(|&w| w >= windows.len()) {
        return Err(Error::Validation(format!(
            "forecast covers {} windows but the data has {}",
            groups.len(),
            windows.len()
        )));
    }
    let mut ev = Evaluator::new(h);
    for (wi, rows) in &groups {
        let w = &windows[*wi];
        let ids: Vec<String> = w.tracks.iter().map(|t| t.agent_id.clone()).collect();
        let frames: Vec<i64> = w.future(0).iter().map(|s| s.frame).collect();
        let samples = forecast.samples(rows, h, &ids, &frames)?;
        let mean: Vec<Vec<Point>> = (0..ids.len())
            .map(|i| {
                (0..frames.len())
                    .map(|k| {
                        let s = samples.iter().fold(Point::ORIGIN, |acc, d| acc + d[i][k]);
                        Point::new(s.x / h as f64, s.y / h as f64)
                    })
                    .collect()
            })
            .collect();
        let categories: Vec<_> = w.tracks.iter().map(|t| t.category).collect();
        ev.add_window(&categories, &mean, &samples, &w.future_positions())?;
    }
    let report = ev.report();
    let json = serde_json::json!({
        "config_hash": l.hash,
        "forecast_config_hash": forecast.get("config_hash"),
        "metrics": report,
    });
    let mut json = serde_json::to_string_pretty(&json).map_err(|e| Error::Validation(e.to_string()))?;
    json.push('\n');
    write_file(&json_path, json)?;
    write_file(&txt_path, format!("#config_hash={}\n{}", l.hash, report.table()))?;
    Ok((report, vec![json_path, txt_path]))
}

/// Risk graphs of the future frames of `w` for each of the five presets.
pub fn preset_graphs(model: &Forecaster, w: &SceneWindow) -> Result<Vec<(&'static str, Vec<RiskGraph>)>> {
    let frames = w.t_obs..w.t_obs + w.t_pred;
    RiskMetricSwitches::presets()
        .into_iter()
        .map(|(name, s)| Ok((name, build_risk_graph(w, &model.patterns, &model.store, &s, frames.clone())?)))
        .collect()
}

pub fn risk_matrix(l: &Loaded, force: bool) -> Result<Vec<PathBuf>> {
    let paths = ["risk_matrix.csv", "risk_matrix.txt", "risk_matrix.svg"].map(|n| l.out_file(n));
    guard(&paths, force)?;
    let ck = read_checkpoint(&l.checkpoint())?;
    let model = ck.model;
    let windows = load_windows(l, model.config.t_obs, model.config.t_pred)?;
    let w = pick(&windows, l.config.risk.window, "risk.window")?;
    let graphs = preset_graphs(&model, w)?;
    let ids: Vec<&str> = w.tracks.iter().map(|t| t.agent_id.as_str()).collect();
    let n = ids.len();

    let mut csv = format!("#config_hash={}\npreset,frame,source,target,risk\n", l.hash);
    let mut txt = format!("#config_hash={}\n", l.hash);
    for (name, gs) in &graphs {
        for g in gs {
            let _ = writeln!(txt, "preset {name} frame {}", g.frame_index);
            let _ = writeln!(
                txt,
                "{:>12}{}",
                "",
                ids.iter().map(|s| format!("{s:>12}")).collect::<String>()
            );
            for i in 0..n {
                let _ = write!(txt, "{:>12}", ids[i]);
                for j in 0..n {
                    let _ = write!(txt, "{:>12.4e}", g.edge(i, j));
                    if i != j {
                        let _ = writeln!(csv, "{name},{},{},{},{}", g.frame_index, ids[i], ids[j], g.edge(i, j));
                    }
                }
                txt.push('\n');
            }
            txt.push('\n');
        }
    }
    write_file(&paths[0], csv)?;
    write_file(&paths[1], txt)?;
    write_file(&paths[2], risk_svg(&ids, &graphs, &l.hash))?;
    Ok(paths.to_vec())
}

/// One panel per ordered agent pair: presets down, future frames across.
/// Colours are scaled by the panel maximum.
pub fn risk_svg(ids: &[&str], graphs: &[(&str, Vec<RiskGraph>)], hash: &str) -> String {
    const CELL: f64 = 18.0;
    const LABEL: f64 = 150.0;
    const TITLE: f64 = 20.0;
    let n = ids.len();
    let frames = graphs.first().map_or(0, |(_, g)| g.len());
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let cols = pairs.len().clamp(1, 4);
    let rows = pairs.len().div_ceil(cols).max(1);
    let pw = LABEL + frames as f64 * CELL + 20.0;
    let ph = TITLE + graphs.len() as f64 * CELL + 34.0;
    let mut doc = Doc::new(cols as f64 * pw + 10.0, rows as f64 * ph + 10.0);
    let font = r#"font-size="10" font-family="sans-serif""#;
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let (x0, y0) = (10.0 + (p % cols) as f64 * pw, 10.0 + (p / cols) as f64 * ph);
        let max = graphs
            .iter()
            .flat_map(|(_, gs)| gs.iter().map(|g| g.edge(i, j)))
            .fold(0.0f64, f64::max);
        doc.raw(&format!(
            r#"<g class="pair" data-source="{}" data-target="{}">"#,
            escape(ids[i]),
            escape(ids[j])
        ));
        doc.text(x0, y0 + 12.0, font, &format!("{} -> {} (max {:.4e})", ids[i], ids[j], max));
        for (r, (name, gs)) in graphs.iter().enumerate() {
            let y = y0 + TITLE + r as f64 * CELL;
            doc.text(x0, y + 13.0, font, name);
            for (c, g) in gs.iter().enumerate() {
                let v = g.edge(i, j);
                let a = if max > 0.0 { v / max } else { 0.0 };
                doc.rect(
                    x0 + LABEL + c as f64 * CELL,
                    y,
                    CELL,
                    CELL,
                    &format!(
                        r#"class="cell" data-preset="{name}" data-frame="{}" fill="{}" stroke="white""#,
                        g.frame_index,
                        heat(a)
                    ),
                    Some(&format!("{name} frame {}: {v:e}", g.frame_index)),
                );
            }
        }
        if let Some((_, gs)) = graphs.first() {
            let y = y0 + TITLE + graphs.len() as f64 * CELL + 12.0;
            for (c, g) in gs.iter().enumerate() {
                doc.text(x0 + LABEL + c as f64 * CELL + 2.0, y, font, &g.frame_index.to_string());
            }
        }
        doc.raw("</g>");
    }
    doc.finish(&format!("config_hash={hash}"))
}

pub fn plot(l: &Loaded, force: bool) -> Result<Vec<PathBuf>> {
    let path = l.out_file("scene_graph.svg");
    guard(std::slice::from_ref(&path), force)?;
    let cfg = &l.config;
    let windows = load_windows(l, cfg.model.t_obs, cfg.model.t_pred)?;
    let w = pick(&windows, cfg.plot.window, "plot.window")?;
    let basis = match cfg.model.grammar.as_str() {
        "map" => w.map.grammar.clone(),
        name => GrammarBasis::builtin(name).unwrap_or_default(),
    };
    let graphs = build_scene_graph(w, &basis, cfg.model.roi.as_ref());
    let k = cfg.plot.frame.unwrap_or(w.t_obs - 1);
    if k >= graphs.len() {
        return Err(Error::Validation(format!(
            "plot.frame = {k} but the window observes {} frames",
            graphs.len()
        )));
    }
    write_file(&path, scene_graph_svg(w, &graphs[k], &l.hash))?;
    Ok(vec![path])
}

/// Agents as circles, regions as squares at their centroids, activated edges
/// as solid lines.
pub fn scene_graph_svg(w: &SceneWindow, g: &trajrisk::hsg::SceneGraph, hash: &str) -> String {
    let live: Vec<usize> = (0..g.size()).filter(|&u| g.node_kinds[u] != NodeKind::Padding).collect();
    let view = View::fit(live.iter().map(|&u| g.nodes[u]), 5.0, 12.0);
    let mut doc = view.doc();
    map_layer(&view, &mut doc, &w.map);
    for (a, &u) in live.iter().enumerate() {
        for &v in &live[a + 1..] {
            if g.edge(u, v) > 0.0 || g.edge(v, u) > 0.0 {
                view.line(
                    &mut doc,
                    g.nodes[u],
                    g.nodes[v],
                    r##"class="edge" stroke="#222222" stroke-width="1.5""##,
                );
            }
        }
    }
    for &u in &live {
        let p = g.nodes[u];
        match g.node_kinds[u] {
            NodeKind::Agent(c) => view.circle(
                &mut doc,
                p,
                5.0,
                &format!(r#"class="agent" fill="{}" stroke="black""#, category_color(c)),
                &format!("{} {}", c, w.tracks[u].agent_id),
            ),
            NodeKind::Region(r) => {
                let (x, y) = view.px(p);
                doc.rect(
                    x - 5.0,
                    y - 5.0,
                    10.0,
                    10.0,
                    &format!(r#"class="region" fill="{}" stroke="black""#, region_color(r)),
                    Some(r.as_str()),
                );
            }
            NodeKind::Padding => {}
        }
    }
    doc.finish(&format!("config_hash={hash} frame={}", g.frame_index))
}
