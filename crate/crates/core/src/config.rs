//! Experiment configuration as flat dotted JSON keys.
//!
//! A config file is one JSON object such as
//! `{"env.name": "pointmass-sparse", "cem.population": 128}`. Values missing
//! from the file come from the preset of the selected environment, and
//! `key=value` overrides are applied last. Unknown keys are rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::curiosity::MaxTracking;
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::planner::{CemConfig, Scoring};
use crate::trainer::TrainConfig;

/// Per-task intrinsic weight `C` and action repeat of the original
/// continuous-control benchmark.
pub const TASK_PRESETS: [(&str, f64, usize); 6] = [
    ("finger-spin", 0.4, 2),
    ("cartpole-swingup", 0.2, 8),
    ("reacher-easy", 0.3, 4),
    ("cheetah-run", 0.2, 4),
    ("walker-walk", 0.2, 2),
    ("cup-catch", 0.3, 4),
];

/// The benchmark task whose `(C, action repeat)` a bundled env inherits:
/// the sparse reaching task for the point mass, the swing-up task for the
/// pendulum.
pub fn preset_task(env: EnvKind) -> &'static str {
    match env {
        EnvKind::PointmassSparse => "reacher-easy",
        EnvKind::PendulumDense => "cartpole-swingup",
    }
}

fn task_preset(name: &str) -> (f64, usize) {
    let (_, c, ar) = TASK_PRESETS.iter().find(|t| t.0 == name).expect("known task");
    (*c, *ar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvKind,
    pub episode_length: usize,
    pub action_repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub inverse_hidden: Vec<usize>,
    pub action_encoder_hidden: Vec<usize>,
    pub action_latent_dim: usize,
    pub twin_q: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::new(1, 1);
        Self {
            latent_dim: d.latent_dim,
            encoder_hidden: d.encoder_hidden,
            head_hidden: d.head_hidden,
            inverse_hidden: d.inverse_hidden,
            action_encoder_hidden: d.action_encoder_hidden,
            action_latent_dim: d.action_latent_dim,
            twin_q: d.twin_q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicSettings {
    /// Intrinsic weight `C`.
    pub weight: f64,
    /// Per-env-step decay `α`.
    pub decay: f64,
    pub max_tracking: MaxTracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Planner scoring used by the variants without curiosity.
    pub non_ccem_scoring: Scoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub cem: CemConfig,
    pub train: TrainConfig,
    pub intrinsic: IntrinsicSettings,
    pub ablate: AblateConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Defaults with the environment's `(C, action repeat)` preset.
    pub fn preset(env: EnvKind) -> Self {
        let (weight, action_repeat) = task_preset(preset_task(env));
        Self {
            env: EnvConfig {
                name: env,
                episode_length: 1000,
                action_repeat,
            },
            model: ModelConfig::default(),
            cem: CemConfig::default(),
            train: TrainConfig::default(),
            intrinsic: IntrinsicSettings {
                weight,
                decay: 1e-5,
                max_tracking: MaxTracking::Batch,
            },
            ablate: AblateConfig {
                non_ccem_scoring: Scoring::SumRewards,
            },
            seeds: (0..5).collect(),
        }
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::new(self.env.name, self.env.episode_length, self.env.action_repeat)
    }

    pub fn model_dims(&self, spec: &EnvSpec) -> ModelDims {
        let m = &self.model;
        ModelDims {
            obs_dim: spec.obs_dim,
            action_dim: spec.action_dim,
            latent_dim: m.latent_dim,
            encoder_hidden: m.encoder_hidden.clone(),
            head_hidden: m.head_hidden.clone(),
            inverse_hidden: m.inverse_hidden.clone(),
            action_encoder_hidden: m.action_encoder_hidden.clone(),
            action_latent_dim: m.action_latent_dim,
            twin_q: m.twin_q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.env_spec()?;
        self.model_dims(&spec).validate()?;
        self.cem.validate()?;
        self.train.validate()?;
        let i = &self.intrinsic;
        if !(i.weight >= 0.0 && i.decay >= 0.0) {
            return Err(Error::InvalidConfig("intrinsic weight and decay must be >= 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        Ok(())
    }

    /// Resolves a config from optional file text and `key=value` overrides.
    ///
    /// `source` names the file in error messages.
    pub fn resolve(file: Option<(&str, &str)>, overrides: &[String]) -> Result<Self> {
        let mut supplied: Vec<(String, Value, Origin)> = Vec::new();
        if let Some((source, text)) = file {
            let value: Value = serde_json::from_str(text).map_err(|e| {
                Error::InvalidConfig(format!("{source}:{}:{}: {e}", e.line(), e.column()))
            })?;
            let Value::Object(map) = value else {
                return Err(Error::InvalidConfig(format!("{source}:1: expected a JSON object of dotted keys")));
            };
            for (k, v) in map {
                let line = find_key_line(text, &k);
                supplied.push((k, v, Origin::File { source: source.to_owned(), line }));
            }
        }
        for (i, ov) in overrides.iter().enumerate() {
            let (k, v) = ov.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("override #{}: `{ov}` is not of the form key=value", i + 1))
            })?;
            let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
            supplied.push((k.trim().to_owned(), v, Origin::Override(ov.clone())));
        }

        let env = match supplied.iter().rev().find(|(k, ..)| k == "env.name") {
            Some((_, Value::String(s), origin)) => s.parse::<EnvKind>().map_err(|e| origin.wrap("env.name", &e.to_string()))?,
            Some((_, _, origin)) => return Err(origin.wrap("env.name", "expected a string")),
            None => EnvKind::PointmassSparse,
        };
        let defaults = flatten(&serde_json::to_value(Self::preset(env))?);

        let mut merged = defaults.clone();
        for (k, v, origin) in &supplied {
            if v.is_object() {
                return Err(origin.wrap(k, "nested objects are not allowed; use dotted keys"));
            }
            if !defaults.contains_key(k) {
                return Err(origin.wrap(k, "unknown key"));
            }
            // Type-check each key on its own so the error points at it.
            let mut single = defaults.clone();
            single.insert(k.clone(), v.clone());
            if let Err(e) = serde_json::from_value::<Self>(unflatten(&single)) {
                return Err(origin.wrap(k, &e.to_string()));
            }
            merged.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(unflatten(&merged))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// All keys and values, sorted; feeding this back to [`Self::resolve`]
    /// reproduces the config.
    pub fn to_flat_json(&self) -> Result<String> {
        let flat = flatten(&serde_json::to_value(self)?);
        let map: Map<String, Value> = flat.into_iter().collect();
        Ok(serde_json::to_string_pretty(&Value::Object(map))? + "\n")
    }

    /// Every valid key.
    pub fn keys() -> Vec<String> {
        let flat = flatten(&serde_json::to_value(Self::preset(EnvKind::PointmassSparse)).expect("serialisable"));
        flat.into_keys().collect()
    }
}

enum Origin {
    File { source: String, line: Option<usize> },
    Override(String),
}

impl Origin {
    fn wrap(&self, key: &str, msg: &str) -> Error {
        Error::InvalidConfig(match self {
            Origin::File { source, line: Some(l) } => format!("{source}:{l}: `{key}`: {msg}"),
            Origin::File { source, line: None } => format!("{source}: `{key}`: {msg}"),
            Origin::Override(o) => format!("override `{o}`: `{key}`: {msg}"),
        })
    }
}

/// 1-based line on which `"key"` appears as an object key.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = serde_json::to_string(key).ok()?;
    text.lines().enumerate().find_map(|(i, line)| {
        let pos = line.find(&quoted)?;
        line[pos + quoted.len()..].trim_start().starts_with(':').then_some(i + 1)
    })
}

fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_owned(), other.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut node = &mut root;
        for p in parts {
            node = node
                .entry(p)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("keys never collide with leaves");
        }
        node.insert(last.to_owned(), v.clone());
    }
    Value::Object(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_pointmass_preset() {
        let cfg = ExperimentConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(EnvKind::PointmassSparse));
        assert_eq!(cfg.intrinsic.weight, 0.3);
        assert_eq!(cfg.env.action_repeat, 4);
    }

    #[test]
    fn env_preset_fills_absent_keys_only() {
        let text = "{\n  \"env.name\": \"pendulum-dense\",\n  \"env.action_repeat\": 2\n}";
        let cfg = ExperimentConfig::resolve(Some(("c.json", text)), &[]).unwrap();
        assert_eq!(cfg.intrinsic.weight, 0.2);
        assert_eq!(cfg.env.action_repeat, 2);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "{\n  \"cem.population\": 64,\n  \"cem.popsize\": 3\n}";
        let err = ExperimentConfig::resolve(Some(("c.json", text)), &[]).unwrap_err().to_string();
        assert!(err.contains("c.json:3:"), "{err}");
        assert!(err.contains("cem.popsize"), "{err}");
    }

    #[test]
    fn wrong_type_reports_line() {
        let text = "{\n  \"seeds\": [1],\n  \"train.batch_size\": \"big\"\n}";
        let err = ExperimentConfig::resolve(Some(("c.json", text)), &[]).unwrap_err().to_string();
        assert!(err.contains("c.json:3:"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "{\n  \"seeds\": [1],\n  oops\n}";
        let err = ExperimentConfig::resolve(Some(("c.json", text)), &[]).unwrap_err().to_string();
        assert!(err.contains("c.json:3:"), "{err}");
    }

    #[test]
    fn overrides_apply_last() {
        let text = "{\"cem.population\": 128}";
        let cfg = ExperimentConfig::resolve(
            Some(("c.json", text)),
            &["cem.population=96".into(), "cem.scoring=sum-rewards".into()],
        )
        .unwrap();
        assert_eq!(cfg.cem.population, 96);
        assert_eq!(cfg.cem.scoring, Scoring::SumRewards);
        assert!(ExperimentConfig::resolve(None, &["nope=1".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::resolve(None, &["env.name=pendulum-dense".into(), "train.non_ccem=true".into()]).unwrap();
        let text = cfg.to_flat_json().unwrap();
        let back = ExperimentConfig::resolve(Some(("r.json", &text)), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn semantic_validation_runs() {
        assert!(ExperimentConfig::resolve(None, &["cem.elites=4096".into()]).is_err());
        assert!(ExperimentConfig::resolve(None, &["env.episode_length=1001".into()]).is_err());
    }
}
