use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajrisk_tensor::{Adam, Container, Session, StepDecay, TensorError};

use crate::data::SceneWindow;
use crate::error::{Error, Result};
use crate::patterns::PatternModel;

use super::{window_loss_agents, Forecaster, ModelConfig, PreparedWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Trajectories (agents) per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 1024,
            lr: 1e-3,
            lr_decay: 0.2,
            lr_step_epochs: 5,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.lr,
            gamma: self.lr_decay,
            step_epochs: self.lr_step_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be non-negative, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Agent-frame mean negative log-likelihood over the epoch.
    pub loss: f64,
}

/// Optimizer state between epochs; `epoch` counts completed epochs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: Adam,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn non_finite(epoch: usize, window: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
            epoch,
            window,
            detail: format!("{op} produced a non-finite value"),
        },
        other => other,
    }
}

/// Trains `model` from `state.epoch` up to `config.epochs`, calling `on_epoch`
/// after every epoch. Window order is reshuffled per epoch from the seed, so a
/// resumed run repeats the losses of an uninterrupted one.
pub fn train(
    model: &mut Forecaster,
    windows: &[SceneWindow],
    config: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Validation("no training windows".into()));
    }
    let prepared: Vec<PreparedWindow> = windows.iter().map(|w| model.prepare(w)).collect::<Result<_>>()?;
    if let Some(i) = prepared.iter().position(|p| p.truth.is_none()) {
        return Err(Error::Validation(format!("window {i} has no ground-truth future")));
    }
    let schedule = config.schedule();
    let momentum = model.config.bn_momentum;
    let mut logs = Vec::new();

    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, u64::MAX)));

        model.store.zero_grad();
        let (mut in_batch, mut loss_sum, mut weight_sum) = (0usize, 0.0, 0.0);
        for (pos, &w) in order.iter().enumerate() {
            let p = &prepared[w];
            let mut start = 0;
            while start < p.n {
                // A window larger than the room left in the batch is split by agent.
                let take = (config.batch_size - in_batch).min(p.n - start);
                let agents = start..start + take;
                let (loss, grads, bn) = {
                    let stream = ((w as u64) << 32) | start as u64;
                    let mut s = Session::new(&model.store, true, mix(config.seed, epoch as u64, stream));
                    let l = window_loss_agents(&mut s, &model.config, p, agents).map_err(|e| non_finite(epoch, w, e))?;
                    let loss = s.tape.value(l)[0];
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            window: w,
                            detail: format!("loss is {loss}"),
                        });
                    }
                    s.backward(l).map_err(|e| non_finite(epoch, w, Error::from(e)))?;
                    (loss, s.gradients(), s.bn_updates().to_vec())
                };
                let weight = take as f64;
                model.store.accumulate_grads(&grads, weight)?;
                for (prefix, stats) in &bn {
                    model.store.update_running_stats(prefix, stats, momentum)?;
                }
                loss_sum += loss * weight;
                weight_sum += weight;
                in_batch += take;
                start += take;
                if in_batch >= config.batch_size || (pos + 1 == order.len() && start == p.n) {
                    step(model, &mut state.adam, lr, config.clip_norm, in_batch, epoch, w)?;
                    in_batch = 0;
                }
            }
        }
        state.epoch += 1;
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / weight_sum,
        };
        log::info!("epoch {epoch} lr {lr:e} loss {:.6}", log.loss);
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

fn step(
    model: &mut Forecaster,
    adam: &mut Adam,
    lr: f64,
    clip: f64,
    count: usize,
    epoch: usize,
    window: usize,
) -> Result<()> {
    let scale = |store: &mut trajrisk_tensor::ParamStore, f: f64| {
        for (_, t) in store.params_mut() {
            t.grad.iter_mut().for_each(|g| *g *= f);
        }
    };
    scale(&mut model.store, 1.0 / count as f64);
    let norm = model.store.grad_norm();
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            window,
            detail: format!("gradient norm is {norm}"),
        });
    }
    if clip > 0.0 && norm > clip {
        scale(&mut model.store, clip / norm);
    }
    adam.step(&mut model.store, lr)?;
    model.store.zero_grad();
    Ok(())
}

/// Hex SHA-256 of the TOML serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Trained (or partially trained) model with its optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Forecaster,
    pub train: TrainConfig,
    pub state: TrainState,
    pub config_hash: String,
}

pub fn save_checkpoint(ck: &Checkpoint) -> Result<Container> {
    let mut c = Container::new();
    c.put_store(&ck.model.store);
    c.put_adam(&ck.state.adam);
    ck.model.patterns.save(&mut c);
    let model = toml::to_string(&ck.model.config).map_err(|e| Error::Config(e.to_string()))?;
    let train = toml::to_string(&ck.train).map_err(|e| Error::Config(e.to_string()))?;
    c.metadata.insert("model.config".into(), model);
    c.metadata.insert("train.config".into(), train);
    c.metadata.insert("train.epoch".into(), ck.state.epoch.to_string());
    c.metadata.insert("config.hash".into(), ck.config_hash.clone());
    Ok(c)
}

pub fn load_checkpoint(c: &Container) -> Result<Checkpoint> {
    let bad = |what: &str, e: String| Error::Validation(format!("checkpoint {what}: {e}"));
    let config: ModelConfig = toml::from_str(c.meta("model.config")?).map_err(|e| bad("model.config", e.to_string()))?;
    let train: TrainConfig = toml::from_str(c.meta("train.config")?).map_err(|e| bad("train.config", e.to_string()))?;
    let epoch = c
        .meta("train.epoch")?
        .parse()
        .map_err(|e: std::num::ParseIntError| bad("train.epoch", e.to_string()))?;
    config.validate()?;
    let patterns = PatternModel::load(c)?;
    let store = c.load_store()?;
    let adam = c.load_adam()?;
    Ok(Checkpoint {
        model: Forecaster {
            config,
            store,
            patterns,
        },
        train,
        state: TrainState { epoch, adam },
        config_hash: c.meta("config.hash")?.to_string(),
    })
}
