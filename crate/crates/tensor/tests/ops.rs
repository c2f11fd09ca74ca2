use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajrisk_tensor::{BatchNormMode, Tape, TensorError};

#[test]
fn prelu_matches_definition() {
    let mut t = Tape::new();
    let x = t.constant(vec![-2.0, 3.0], &[2]).unwrap();
    let a = t.constant(vec![0.25], &[1]).unwrap();
    let y = t.prelu(x, a).unwrap();
    assert_eq!(t.value(y), &[-0.5, 3.0]);
}

#[test]
fn conv1d_identity_kernel_is_identity() {
    let mut t = Tape::new();
    let data: Vec<f64> = (0..2 * 3 * 5).map(|i| i as f64 * 0.37 - 4.0).collect();
    let x = t.constant(data.clone(), &[2, 3, 5]).unwrap();
    // out channel o copies in channel o through the centre tap.
    let mut w = vec![0.0; 3 * 3 * 3];
    for c in 0..3 {
        w[(c * 3 + c) * 3 + 1] = 1.0;
    }
    let w = t.constant(w, &[3, 3, 3]).unwrap();
    let b = t.constant(vec![0.0; 3], &[3]).unwrap();
    let y = t.conv1d(x, w, b).unwrap();
    assert_eq!(t.value(y), data.as_slice());
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
    let mut t = Tape::new();
    let va = t.constant(a.clone(), &[2, 3]).unwrap();
    let vb = t.constant(b.clone(), &[3, 2]).unwrap();
    let y = t.matmul(va, vb).unwrap();
    assert_eq!(t.value(y), naive_matmul(&a, &b, 2, 3, 2).as_slice());
    assert_eq!(t.value(y), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn square_gradient_at_three() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0], &[1], true).unwrap();
    let y = t.square(x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[6.0]);
}

#[test]
fn second_backward_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(vec![3.0], &[1], true).unwrap();
    let y = t.square(x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.backward(y), Err(TensorError::BackwardTwice));
    t.reset();
    let x = t.leaf(vec![2.0], &[1], true).unwrap();
    let y = t.square(x).unwrap();
    assert!(t.backward(y).is_ok());
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    assert_eq!(t.backward(x), Err(TensorError::NotScalar(vec![2])));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let b = t.constant(vec![0.0; 6], &[2, 3]).unwrap();
    match t.matmul(a, b) {
        Err(TensorError::ShapeMismatch { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_finite_values_raise() {
    let mut t = Tape::new();
    let x = t.constant(vec![0.0], &[1]).unwrap();
    assert_eq!(t.log(x), Err(TensorError::NonFinite { op: "log" }));
    let big = t.constant(vec![1000.0], &[1]).unwrap();
    assert!(matches!(t.exp(big), Err(TensorError::NonFinite { .. })));
}

#[test]
fn dropout_is_identity_in_inference() {
    let mut t = Tape::new();
    let x = t.constant(vec![1.0, -2.0, 3.0], &[3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = t.dropout(x, 0.5, false, &mut rng).unwrap();
    assert_eq!(x, y);
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut t = Tape::new();
    let x = t.constant(vec![1.0, 3.0], &[2, 1]).unwrap();
    let g = t.constant(vec![2.0], &[1]).unwrap();
    let b = t.constant(vec![0.5], &[1]).unwrap();
    let mode = BatchNormMode::Eval {
        running_mean: &[1.0],
        running_var: &[4.0],
    };
    let (y, stats) = t.batch_norm(x, g, b, mode, 0.0).unwrap();
    assert!(stats.is_none());
    assert_eq!(t.value(y), &[0.5, 2.5]);
    let (_, stats) = t.batch_norm(x, g, b, BatchNormMode::Train, 0.0).unwrap();
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![2.0]);
    assert_eq!(stats.var, vec![2.0]);
}

#[test]
fn gcn_normalize_of_empty_graph_is_identity() {
    let mut t = Tape::new();
    let e = t.constant(vec![0.0; 9], &[3, 3]).unwrap();
    let a = t.gcn_normalize(e).unwrap();
    assert_eq!(t.value(a), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

proptest! {
    #[test]
    fn forward_and_gradients_are_deterministic(values in prop::collection::vec(-3.0f64..3.0, 12), seed in 0u64..1000) {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(values.clone(), &[3, 4], true).unwrap();
            let w = t.leaf(values.iter().rev().cloned().collect(), &[4, 3], true).unwrap();
            let y = t.matmul(x, w).unwrap();
            let y = t.tanh(y).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = t.dropout(y, 0.2, true, &mut rng).unwrap();
            let s = t.sum(y).unwrap();
            t.backward(s).unwrap();
            (t.value(s)[0].to_bits(), t.grad_or_zeros(x), t.grad_or_zeros(w))
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
    }

    #[test]
    fn permute_round_trips(values in prop::collection::vec(-3.0f64..3.0, 24)) {
        let mut t = Tape::new();
        let x = t.constant(values.clone(), &[2, 3, 4]).unwrap();
        let y = t.permute(x, &[1, 2, 0]).unwrap();
        let z = t.permute(y, &[2, 0, 1]).unwrap();
        prop_assert_eq!(t.value(z), values.as_slice());
    }
}
