//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajrisk::data::synth::{AgentGroup, Archetype, SynthSpec};
use trajrisk::data::AgentCategory;
use trajrisk::hrg::RiskMetricSwitches;
use trajrisk::model::{config_hash, FusionMode, ModelConfig, TrainConfig};
use trajrisk::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub simulate: SimulateConfig,
    pub predict: PredictConfig,
    pub risk: RiskConfig,
    pub plot: PlotConfig,
}

/// Relative paths are taken from the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// A trajectory file, or a directory whose `*.csv` files are read in name order.
    pub data: PathBuf,
    /// Map for every trajectory file; when unset each `x.csv` uses `x.map`.
    pub map: Option<PathBuf>,
    /// Grammar file replacing the grammar of every loaded map.
    pub grammar: Option<PathBuf>,
    /// Defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Forecast written by `predict` and read by `evaluate`; defaults to `<out>/forecast.csv`.
    pub forecast: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            map: None,
            grammar: None,
            checkpoint: None,
            forecast: None,
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scenes: usize,
    pub seed: u64,
    pub noise: f64,
    pub fps: f64,
    pub zebra_jitter: f64,
    /// Frames per scene; defaults to `t_obs + t_pred`.
    pub frames: Option<usize>,
    pub agents: Vec<AgentGroup>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        use AgentCategory::*;
        let spec = SynthSpec::new(Vec::new())
            .with(Car, Archetype::ConstantVelocity, 1)
            .with(Car, Archetype::Stop, 1)
            .with(Car, Archetype::Turn, 1)
            .with(Pedestrian, Archetype::Crossing, 2)
            .with(Pedestrian, Archetype::ConstantVelocity, 1)
            .with(Rider, Archetype::Turn, 1)
            .with(Rider, Archetype::ConstantVelocity, 1);
        Self {
            scenes: 20,
            seed: 0,
            noise: 0.0,
            fps: spec.fps,
            zebra_jitter: 10.0,
            frames: None,
            agents: spec.agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Sampled futures per agent.
    pub h: usize,
    pub bezier: bool,
    pub seed: u64,
    pub svg: bool,
    /// Window drawn into the SVG.
    pub svg_window: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            h: 20,
            bezier: false,
            seed: 0,
            svg: false,
            svg_window: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub window: usize,
    /// Observation frame index; defaults to the last observed frame.
    pub frame: Option<usize>,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fusion: Option<FusionMode>,
    pub risk_metrics: Option<RiskMetricSwitches>,
    pub h: Option<usize>,
    pub bezier: bool,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

/// Effective configuration with its hash and the directory relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `--seed` replaces every seed in the file.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.simulate.seed = s;
            self.train.seed = s;
            self.predict.seed = s;
            self.model.patterns.seed = s;
        }
        if let Some(f) = o.fusion {
            self.model.fusion = f;
        }
        if let Some(r) = o.risk_metrics {
            self.model.risk_metrics = r;
        }
        if let Some(h) = o.h {
            self.predict.h = h;
        }
        if o.bezier {
            self.predict.bezier = true;
        }
        if let Some(p) = &o.out {
            self.paths.out = p.clone();
        }
        if let Some(p) = &o.data {
            self.paths.data = p.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.predict.h == 0 {
            return Err(Error::Config("predict.h must be positive".into()));
        }
        if let Some(f) = self.simulate.frames {
            if f < self.model.t_obs + self.model.t_pred {
                return Err(Error::Config(format!(
                    "simulate.frames ({f}) is shorter than t_obs + t_pred ({})",
                    self.model.t_obs + self.model.t_pred
                )));
            }
        }
        if self.paths.grammar.is_some() && self.model.grammar != "map" {
            return Err(Error::Config("paths.grammar requires model.grammar = \"map\"".into()));
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.simulate;
        let t_obs = self.model.t_obs;
        SynthSpec {
            agents: s.agents.clone(),
            noise: s.noise,
            fps: s.fps,
            t_obs,
            t_pred: s.frames.map_or(self.model.t_pred, |f| f - t_obs),
            zebra_jitter: s.zebra_jitter,
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Reads `path` (or starts from defaults), applies overrides and validates.
/// Override paths are relative to the working directory, so they are made
/// absolute before they enter the config.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Loaded> {
    let (mut config, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let base = absolute(p).parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::parse(&text)?, base)
        }
        None => (RunConfig::default(), absolute(Path::new("."))),
    };
    let mut o = overrides.clone();
    o.out = o.out.as_deref().map(absolute);
    o.data = o.data.as_deref().map(absolute);
    config.apply(&o);
    config.validate()?;
    let hash = config_hash(&config)?;
    Ok(Loaded { config, hash, base })
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.out)
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn data(&self) -> PathBuf {
        self.resolve(&self.config.paths.data)
    }

    pub fn checkpoint(&self) -> PathBuf {
        match &self.config.paths.checkpoint {
            Some(p) => self.resolve(p),
            None => self.out_file("model.ckpt"),
        }
    }

    pub fn forecast(&self) -> PathBuf {
        match &self.config.paths.forecast {
            Some(p) => self.resolve(p),
            None => self.out_file("forecast.csv"),
        }
    }
}
