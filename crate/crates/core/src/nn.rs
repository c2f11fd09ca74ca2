//! Parameter initialisation and small layer stacks over a [`Session`].

use rand::Rng;
use trajrisk_tensor::{ParamStore, Result, Session, Tensor, Var};

pub fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(format!("{prefix}.w"), Tensor::uniform(&[fan_in, fan_out], fan_in, rng));
    store.insert(format!("{prefix}.b"), Tensor::uniform(&[fan_out], fan_in, rng));
}

pub fn init_prelu(store: &mut ParamStore, name: &str) {
    store.insert(name.to_string(), Tensor::filled(&[1], 0.25));
}

/// `[cout, cin, k]` kernel plus bias.
pub fn init_conv1d<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut R) {
    store.insert(format!("{prefix}.w"), Tensor::uniform(&[cout, cin, k], cin * k, rng));
    store.insert(format!("{prefix}.b"), Tensor::uniform(&[cout], cin * k, rng));
}

/// `[cout, cin, k, k]` kernel plus bias.
pub fn init_conv2d<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut R) {
    store.insert(format!("{prefix}.w"), Tensor::uniform(&[cout, cin, k, k], cin * k * k, rng));
    store.insert(format!("{prefix}.b"), Tensor::uniform(&[cout], cin * k * k, rng));
}

pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::filled(&[channels], 1.0));
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_var"), Tensor::filled(&[channels], 1.0));
}

/// Linear layers `<prefix>.l1 .. l<n>` with ReLU between them and none after the last.
pub fn init_mlp<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut R) {
    for (l, w) in widths.windows(2).enumerate() {
        init_linear(store, &format!("{prefix}.l{}", l + 1), w[0], w[1], rng);
    }
}

pub fn mlp(s: &mut Session<'_>, x: Var, prefix: &str, layers: usize) -> Result<Var> {
    let mut h = x;
    for l in 1..=layers {
        h = s.linear(h, &format!("{prefix}.l{l}"), true)?;
        if l < layers {
            h = s.tape.relu(h)?;
        }
    }
    Ok(h)
}
