use trajrisk::data::synth::{synthesize_dataset, Archetype, SynthSpec};
use trajrisk::data::AgentCategory;
use trajrisk::model::{
    load_checkpoint, save_checkpoint, train, Checkpoint, Forecaster, FusionMode, ModelConfig, TrainConfig, TrainState,
};
use trajrisk::patterns::{fit_patterns, PatternConfig};
use trajrisk_tensor::Container;

fn small(fusion: FusionMode) -> (Forecaster, Vec<trajrisk::data::SceneWindow>) {
    use AgentCategory::*;
    let spec = SynthSpec::new(Vec::new())
        .with(Car, Archetype::ConstantVelocity, 1)
        .with(Pedestrian, Archetype::Crossing, 1)
        .with(Rider, Archetype::Turn, 1);
    let windows = synthesize_dataset(&spec, 4, 3).unwrap();
    let mut cfg = ModelConfig {
        hidden: 8,
        tcn_channels: [4, 4],
        fusion,
        patterns: PatternConfig {
            pedestrian_k: 2,
            car_k: 2,
            rider_k: 2,
            ..PatternConfig::default()
        },
        ..ModelConfig::default()
    };
    cfg.hrg.node_out = 8;
    let patterns = fit_patterns(&windows, &cfg.patterns).unwrap();
    (Forecaster::new(cfg, patterns, 4).unwrap(), windows)
}

fn tc(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 5,
        lr: 1e-2,
        lr_step_epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let (mut a, w) = small(FusionMode::Dot);
    let (mut b, _) = small(FusionMode::Dot);
    let la = train(&mut a, &w, &tc(3), &mut TrainState::default(), |_| {}).unwrap();
    let lb = train(&mut b, &w, &tc(3), &mut TrainState::default(), |_| {}).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.predict(&w[0]).unwrap(), b.predict(&w[0]).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (mut full, w) = small(FusionMode::Residual);
    let mut split = full.clone();
    let all = train(&mut full, &w, &tc(4), &mut TrainState::default(), |_| {}).unwrap();

    let mut state = TrainState::default();
    let first = train(&mut split, &w, &tc(2), &mut state, |_| {}).unwrap();
    let ck = Checkpoint {
        model: split,
        train: tc(2),
        state,
        config_hash: "h".into(),
    };
    let bytes = save_checkpoint(&ck).unwrap().to_bytes();
    let mut back = load_checkpoint(&Container::read_from(bytes.as_slice()).unwrap()).unwrap();
    assert_eq!(back.state.epoch, 2);
    let rest = train(&mut back.model, &w, &tc(4), &mut back.state, |_| {}).unwrap();

    let joined: Vec<_> = first.into_iter().chain(rest).collect();
    assert_eq!(joined, all);
    assert_eq!(back.model.predict(&w[1]).unwrap(), full.predict(&w[1]).unwrap());
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    for fusion in [FusionMode::Dot, FusionMode::Residual, FusionMode::HrgOnly] {
        let (mut m, w) = small(fusion);
        train(&mut m, &w, &tc(1), &mut TrainState::default(), |_| {}).unwrap();
        let ck = Checkpoint {
            model: m.clone(),
            train: tc(1),
            state: TrainState::default(),
            config_hash: "abc".into(),
        };
        let c = save_checkpoint(&ck).unwrap();
        let back = load_checkpoint(&Container::read_from(c.to_bytes().as_slice()).unwrap()).unwrap();
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.model.config, m.config);
        for win in &w {
            assert_eq!(back.model.predict(win).unwrap(), m.predict(win).unwrap());
        }
    }
}

#[test]
fn training_reduces_loss() {
    let (mut m, w) = small(FusionMode::Dot);
    let logs = train(&mut m, &w, &tc(12), &mut TrainState::default(), |_| {}).unwrap();
    assert!(logs[11].loss < logs[0].loss, "{logs:?}");
}

#[test]
fn forecast_shapes_and_validity() {
    let (m, w) = small(FusionMode::Dot);
    let f = m.predict(&w[0]).unwrap();
    let n = w[0].n_agents();
    let means = f.means();
    assert_eq!(means.len(), n);
    for i in 0..n {
        assert_eq!(means[i].len(), 6);
        for k in 0..6 {
            let s = f.sigma(i, k);
            assert!(s[0] > 0.0 && s[1] > 0.0);
            assert!(f.rho(i, k).abs() < 1.0);
        }
    }
    let s = f.sample(7, 3);
    assert_eq!(s.draws().len(), 7);
    assert_eq!(s.draws(), f.sample(7, 3).draws());
    assert_ne!(s.draws(), f.sample(7, 4).draws());
}
