use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mone::{MoneConfig, NeuronScore};
use crate::numerics::{Activation, DType};

/// What occupies the feed-forward slot of every block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    DenseFfn,
    Moe,
    Mone,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::DenseFfn => "dense_ffn",
            LayerKind::Moe => "moe",
            LayerKind::Mone => "mone",
        }
    }

    pub fn is_routed(self) -> bool {
        self != LayerKind::DenseFfn
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoneSection {
    pub neurons_per_expert: usize,
    #[serde(default)]
    pub alpha_ng: f64,
    #[serde(default)]
    pub neuron_score: NeuronScore,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn silu() -> Activation {
    Activation::Silu
}
fn f64_dtype() -> DType {
    DType::F64
}
fn default_std() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of each expert (and of the dense FFN).
    pub d_expert: usize,
    #[serde(default = "one")]
    pub n_experts: usize,
    pub layer_kind: LayerKind,
    #[serde(default = "one")]
    pub experts_per_token: usize,
    #[serde(default = "silu")]
    pub internal_act: Activation,
    #[serde(default = "yes")]
    pub shared_expert: bool,
    #[serde(default)]
    pub alpha_aux: f64,
    pub seq_len: usize,
    pub seed: u64,
    #[serde(default = "f64_dtype")]
    pub dtype: DType,
    #[serde(default = "default_std")]
    pub init_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mone: Option<MoneSection>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_expert", self.d_expert),
            ("n_experts", self.n_experts),
            ("experts_per_token", self.experts_per_token),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model={} is not divisible by n_heads={}",
                self.d_model, self.n_heads
            )));
        }
        if self.experts_per_token > self.n_experts {
            return Err(Error::Config(format!(
                "experts_per_token={} exceeds n_experts={}",
                self.experts_per_token, self.n_experts
            )));
        }
        if !(self.alpha_aux >= 0.0) || !self.alpha_aux.is_finite() {
            return Err(Error::Config("alpha_aux must be a non-negative number".into()));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(Error::Config("init_std must be positive".into()));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::Config("vocab_size too large".into()));
        }
        match (self.layer_kind, &self.mone) {
            (LayerKind::Mone, None) => {
                return Err(Error::Config("layer_kind = \"mone\" requires a [model.mone] table".into()))
            }
            (LayerKind::Mone, Some(_)) => {
                self.mone_config().expect("mone").validate(self.n_experts, self.d_expert)?;
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "[model.mone] given but layer_kind = \"{}\"",
                    self.layer_kind.name()
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mone_config(&self) -> Option<MoneConfig> {
        let m = self.mone.as_ref()?;
        (self.layer_kind == LayerKind::Mone).then(|| MoneConfig {
            experts_per_token: self.experts_per_token,
            neurons_per_expert: m.neurons_per_expert,
            internal_act: self.internal_act,
            alpha_ng: m.alpha_ng,
            neuron_score: m.neuron_score,
        })
    }

    /// Neurons each routed expert uses per token in normal operation.
    pub fn active_neurons(&self) -> usize {
        match (self.layer_kind, &self.mone) {
            (LayerKind::Mone, Some(m)) => m.neurons_per_expert,
            _ => self.d_expert,
        }
    }

    pub fn alpha_ng(&self) -> f64 {
        match (self.layer_kind, &self.mone) {
            (LayerKind::Mone, Some(m)) => m.alpha_ng,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay to a tenth of the peak rate over `steps`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub schedule: Schedule,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
            warmup_steps: 0,
            schedule: Schedule::Constant,
            grad_clip: 1.0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let checks = [
            ("learning_rate", self.learning_rate >= 0.0),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("eps", self.eps > 0.0),
            ("weight_decay", self.weight_decay >= 0.0),
            ("grad_clip", self.grad_clip >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Config(format!("train.{name} out of range")));
            }
        }
        Ok(())
    }

    /// Learning rate for the (1-based) optimizer step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.learning_rate * step as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
                let t = (step.saturating_sub(self.warmup_steps) as f64 / span).min(1.0);
                let floor = 0.1 * self.learning_rate;
                floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Source of training and evaluation tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// A fixed random pattern of distinct tokens, repeated.
    Repeat {
        pattern_len: usize,
        train_tokens: usize,
        eval_tokens: usize,
    },
    /// A random sparse Markov chain over the vocabulary; `order` previous
    /// tokens form the context.
    Markov {
        branching: usize,
        #[serde(default = "one")]
        order: usize,
        train_tokens: usize,
        eval_tokens: usize,
    },
    /// Raw bytes of a file (vocabulary 256); the tail is held out.
    Bytes { path: PathBuf, eval_fraction: f64 },
}

/// Everything a run file may hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths resolve against the config file.
        if let Some(DataConfig::Bytes { path: p, .. }) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}
