//! Training configuration and its plain-text `key = value` file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::AugmentSpec;
use crate::error::{Error, Result};
use crate::matching::{Criterion, MatchStrategy};
use crate::predictor::PredictorConfig;
use crate::scenario::{FUTURE_LEN, HISTORY_LEN};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "TRAJCAST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Predictions per scenario (K).
    pub modes: usize,
    /// Pseudo targets per scenario (J).
    pub pseudo_targets: usize,
    /// Time shift for temporal consistency, in frames.
    pub shift: usize,
    pub strategy: MatchStrategy,
    pub criterion: Criterion,
    pub use_goal: bool,
    pub use_refine: bool,
    pub use_temp: bool,
    pub use_spatial: bool,
    pub use_mpt: bool,
    pub seed: u64,
    pub channels: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub flip_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub heading_jitter_deg: f64,
    /// Half-width of the uniform anchor noise used by the spatial permutation, meters.
    pub spatial_noise: f64,
    pub spatial_flip_prob: f64,
    /// Models trained to build pseudo targets.
    pub ensemble_members: usize,
    pub kmeans_iters: usize,
    /// Validation scenarios used for the per-epoch jitter probe; 0 disables it.
    pub jitter_probe: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 15,
            modes: 6,
            pseudo_targets: 6,
            shift: 1,
            strategy: MatchStrategy::Bidirectional,
            criterion: Criterion::Fde,
            use_goal: true,
            use_refine: true,
            use_temp: true,
            use_spatial: true,
            use_mpt: false,
            seed: 0,
            channels: 64,
            history_len: HISTORY_LEN,
            future_len: FUTURE_LEN,
            flip_prob: 0.5,
            scale_min: 0.8,
            scale_max: 1.25,
            heading_jitter_deg: 0.0,
            spatial_noise: 0.2,
            spatial_flip_prob: 0.5,
            ensemble_members: 4,
            kmeans_iters: crate::ensemble::DEFAULT_MAX_ITER,
            jitter_probe: 32,
        }
    }
}

fn parse_value(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: cannot parse {raw:?}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(match raw.to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => true,
            "false" | "off" | "no" | "0" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => return Err(bad()),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.modes == 0 || self.channels == 0 {
            return fail("batch_size, modes and channels must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return fail("lr must be nonnegative and lr_decay positive");
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every must be positive");
        }
        if self.use_temp && (self.shift == 0 || self.shift >= self.future_len) {
            return fail("shift must satisfy 1 <= shift < future_len");
        }
        if self.use_mpt && self.pseudo_targets == 0 {
            return fail("pseudo-target supervision needs pseudo_targets > 0");
        }
        if !(self.spatial_noise >= 0.0 && (0.0..=1.0).contains(&self.spatial_flip_prob)) {
            return fail("spatial_noise must be nonnegative and spatial_flip_prob in [0, 1]");
        }
        self.augment().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.predictor().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn augment(&self) -> AugmentSpec {
        AugmentSpec {
            flip_prob: self.flip_prob,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            max_heading_jitter_deg: self.heading_jitter_deg,
        }
    }

    pub fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            channels: self.channels,
            history_len: self.history_len,
            future_len: self.future_len,
            modes: self.modes,
            use_goal: self.use_goal,
            use_refine: self.use_refine,
        }
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Applies `key = value` overrides. Keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map: Map<String, Value> = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let current = map.get(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        let parsed = parse_value(key, value.trim(), current)?;
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders every field as `key = value`, sorted by key.
    pub fn to_kv_string(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let Value::Object(map) = value {
            for (k, v) in map {
                let text = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                out.push_str(&format!("{k} = {text}\n"));
            }
        }
        out
    }

    /// Replaces the seed with `TRAJCAST_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an integer")))?;
        }
        Ok(())
    }
}
