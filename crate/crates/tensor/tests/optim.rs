use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajrisk_tensor::{Adam, Container, ParamStore, StepDecay, Tensor};

#[test]
fn step_decay_schedule() {
    let s = StepDecay::default();
    for epoch in 0..5 {
        assert_eq!(s.lr_at(epoch), 1e-3);
    }
    assert!((s.lr_at(5) - 2e-4).abs() < 1e-18);
    assert!((s.lr_at(9) - 2e-4).abs() < 1e-18);
    assert!((s.lr_at(10) - 4e-5).abs() < 1e-18);
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![0.5, -1.25], &[2], true).unwrap());
    let mut adam = Adam::default();
    for _ in 0..3 {
        adam.step(&mut store, 1e-3).unwrap();
    }
    assert_eq!(store.get("w").unwrap().values, vec![0.5, -1.25]);
}

#[test]
fn scalar_adam_matches_hand_stepped_oracle() {
    let grads = [0.5, -0.2, 0.1, 0.0];
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);

    // Hand-stepped reference, written out step by step.
    let mut p = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut expected = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        p -= lr * mhat / (vhat.sqrt() + eps);
        expected.push(p);
    }
    // First step moves by almost exactly lr.
    assert!((expected[0] - 0.99).abs() < 1e-9);

    let mut store = ParamStore::new();
    store.insert("p", Tensor::new(vec![1.0], &[1], true).unwrap());
    let mut adam = Adam::new(b1, b2, eps);
    for (g, want) in grads.iter().zip(&expected) {
        store.get_mut("p").unwrap().grad[0] = *g;
        adam.step(&mut store, lr).unwrap();
        assert!((store.get("p").unwrap().values[0] - want).abs() < 1e-15);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store.insert("layer.w", Tensor::uniform(&[3, 4], 3, &mut rng));
    store.insert("layer.b", Tensor::uniform(&[4], 3, &mut rng));
    store.insert_buffer("bn.running_mean", Tensor::filled(&[4], 0.1 + 0.2));
    for (_, p) in store.params_mut() {
        p.grad.iter_mut().enumerate().for_each(|(i, g)| *g = (i as f64).sin());
    }
    let mut adam = Adam::default();
    adam.step(&mut store, 1e-3).unwrap();

    let mut c = Container::new();
    c.metadata.insert("note".into(), "round trip".into());
    c.put_store(&store);
    c.put_adam(&adam);
    let bytes = c.to_bytes();
    let back = Container::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back, c);
    let store2 = back.load_store().unwrap();
    for ((n1, t1), (n2, t2)) in store.params().zip(store2.params()) {
        assert_eq!(n1, n2);
        let b1: Vec<u64> = t1.values.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = t2.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }
    assert_eq!(back.load_adam().unwrap(), adam);
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(Container::read_from(&b"NOTACKPTxxxx"[..]).is_err());
}

#[test]
fn container_byte_layout() {
    let mut c = Container::new();
    c.metadata.insert("k".into(), "v".into());
    c.put("param/w", &[2], &[1.0, -0.5]);
    let mut want = b"TRJRCKPT".to_vec();
    for word in [1u32, 1, 1] {
        want.extend(word.to_le_bytes());
    }
    want.extend(b"k");
    want.extend(1u32.to_le_bytes());
    want.extend(b"v");
    want.extend(1u32.to_le_bytes());
    want.extend(7u32.to_le_bytes());
    want.extend(b"param/w");
    want.extend(1u32.to_le_bytes());
    want.extend(2u64.to_le_bytes());
    want.extend(1.0f64.to_le_bytes());
    want.extend((-0.5f64).to_le_bytes());
    let bytes = c.to_bytes();
    assert_eq!(bytes.len(), 69);
    assert_eq!(bytes, want);
}
