use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajrisk::bezier::bezier_smooth;
use trajrisk::data::synth::{synthesize_scene, Archetype, SynthSpec};
use trajrisk::data::{parse_map, parse_trajectories, write_map, write_trajectories, AgentCategory, SceneWindow};
use trajrisk::geometry::Point;
use trajrisk::hrg::{build_risk_graph, init_hrg, ttc, AgentAttributes, HrgDims, RiskMetricSwitches, NEIGHBORHOOD_RADIUS};
use trajrisk::hsg::{build_scene_graph, GrammarBasis, NodeKind};
use trajrisk::patterns::{fit_patterns, PatternConfig};
use trajrisk_tensor::ParamStore;

fn spec(noise: f64) -> SynthSpec {
    use AgentCategory::*;
    let mut s = SynthSpec::new(Vec::new())
        .with(Car, Archetype::ConstantVelocity, 1)
        .with(Car, Archetype::Turn, 1)
        .with(Pedestrian, Archetype::Crossing, 1)
        .with(Pedestrian, Archetype::Stop, 1)
        .with(Rider, Archetype::ConstantVelocity, 1);
    s.noise = noise;
    s.zebra_jitter = 10.0;
    s
}

fn scene(seed: u64) -> SceneWindow {
    synthesize_scene(&spec(0.05), seed).unwrap()
}

fn risk_setup(w: &SceneWindow) -> (trajrisk::patterns::PatternModel, ParamStore) {
    let cfg = PatternConfig {
        pedestrian_k: 1,
        car_k: 1,
        rider_k: 1,
        ..PatternConfig::default()
    };
    let pm = fit_patterns(std::slice::from_ref(w), &cfg).unwrap();
    let mut store = ParamStore::new();
    init_hrg(&mut store, &HrgDims::default(), cfg.code_width(), &mut ChaCha8Rng::seed_from_u64(1));
    (pm, store)
}

fn att(x: f64, y: f64, vm: f64, a: f64) -> AgentAttributes {
    AgentAttributes {
        lx: x,
        ly: y,
        vm,
        va: a,
        alpha: a,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scene_files_round_trip(seed in 0u64..10_000) {
        let w = scene(seed);
        let text = write_trajectories(w.fps, &["x=1".to_string()], &w.tracks);
        let back = parse_trajectories(&text).unwrap();
        prop_assert_eq!(back.fps, w.fps);
        prop_assert_eq!(back.comments, vec!["x=1".to_string()]);
        prop_assert_eq!(&back.tracks, &w.tracks);
        let map = write_map(&w.map, &[]);
        prop_assert_eq!(&parse_map(&map).unwrap(), w.map.as_ref());
    }

    #[test]
    fn risk_edges_are_gated_and_bounded(seed in 0u64..10_000, preset in 0usize..5) {
        let w = scene(seed);
        let (pm, store) = risk_setup(&w);
        let switches = RiskMetricSwitches::presets()[preset].1;
        for g in build_risk_graph(&w, &pm, &store, &switches, 0..w.len()).unwrap() {
            let k = (g.frame_index - w.start_frame()) as usize;
            let pos = w.positions_at(k);
            prop_assert_eq!(g.edge_matrix.len(), g.n * g.n);
            for i in 0..g.n {
                prop_assert_eq!(g.edge(i, i), 0.0);
                for j in 0..g.n {
                    let e = g.edge(i, j);
                    prop_assert!(e.is_finite() && e >= 0.0);
                    if pos[i].distance(pos[j]) > NEIGHBORHOOD_RADIUS {
                        prop_assert_eq!(e, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn risk_graph_follows_agent_order(seed in 0u64..10_000) {
        let w = scene(seed);
        let (pm, store) = risk_setup(&w);
        let mut rev = w.clone();
        rev.tracks.reverse();
        let a = build_risk_graph(&w, &pm, &store, &RiskMetricSwitches::ALL_ON, 0..w.t_obs).unwrap();
        let b = build_risk_graph(&rev, &pm, &store, &RiskMetricSwitches::ALL_ON, 0..w.t_obs).unwrap();
        let n = w.n_agents();
        for (ga, gb) in a.iter().zip(&b) {
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (ga.edge(i, j), gb.edge(n - 1 - i, n - 1 - j));
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{} vs {}", x, y);
                }
            }
        }
    }

    #[test]
    fn scene_graph_is_symmetric_and_padding_is_isolated(seed in 0u64..10_000, margin in 2.0f64..40.0) {
        let w = scene(seed);
        let roi = trajrisk::hsg::Roi::AroundAgents { margin };
        let graphs = build_scene_graph(&w, &GrammarBasis::full(), Some(&roi));
        prop_assert_eq!(graphs.len(), w.t_obs);
        let size = graphs[0].nodes.len();
        for g in &graphs {
            prop_assert_eq!(g.nodes.len(), size);
            prop_assert_eq!(g.n_agents, w.n_agents());
            for u in 0..size {
                for v in 0..size {
                    let e = g.edges[u * size + v];
                    prop_assert!(e == 0.0 || e == 1.0);
                    prop_assert_eq!(e, g.edges[v * size + u]);
                    if g.node_kinds[u] == NodeKind::Padding {
                        prop_assert_eq!(e, 0.0);
                    }
                }
            }
            let agents: BTreeSet<usize> = (0..g.n_agents).collect();
            prop_assert!(agents.iter().all(|&i| matches!(g.node_kinds[i], NodeKind::Agent(_))));
        }
    }

    #[test]
    fn ttc_is_symmetric(
        x in -20.0f64..20.0, y in -20.0f64..20.0,
        v1 in 0.0f64..15.0, a1 in -3.1f64..3.1,
        v2 in 0.0f64..15.0, a2 in -3.1f64..3.1,
    ) {
        let (i, j) = (att(0.0, 0.0, v1, a1), att(x, y, v2, a2));
        let (p, q) = (Point::ORIGIN, Point::new(x, y));
        let (t1, t2) = (ttc(&i, &j, p, q), ttc(&j, &i, q, p));
        prop_assert!(t1 >= 0.0);
        prop_assert!(t1 == t2 || (t1 - t2).abs() <= 1e-9 * t1.max(1.0), "{} vs {}", t1, t2);
    }

    #[test]
    fn bezier_smoothing_preserves_translation(
        pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..9),
        dx in -50.0f64..50.0, dy in -50.0f64..50.0,
    ) {
        let p: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let d = Point::new(dx, dy);
        let moved: Vec<Point> = p.iter().map(|&q| q + d).collect();
        let a = bezier_smooth(&p, Some(p[0]));
        let b = bezier_smooth(&moved, Some(moved[0]));
        prop_assert_eq!(a.len(), p.len());
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((*u + d).distance(*v) < 1e-9);
        }
    }
}
