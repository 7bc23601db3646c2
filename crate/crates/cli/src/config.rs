//! Layered run configuration: flag, then config file, then built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use surgvqla_core::env::EnvConfig;
use surgvqla_core::grpo::{GrpoConfig, ObjectiveMode};
use surgvqla_core::reward::RewardConfig;
use surgvqla_core::ImageDims;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    File { path: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}` (from {origin}): {message}")]
    Invalid {
        key: String,
        value: String,
        origin: Source,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "config file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

fn mode_name(m: ObjectiveMode) -> &'static str {
    match m {
        ObjectiveMode::AsWritten => "as_written",
        ObjectiveMode::Clipped => "clipped",
    }
}

/// Every recognised key with its default. Top-level keys have no section.
fn defaults() -> Vec<(&'static str, String)> {
    let g = GrpoConfig::default();
    let r = RewardConfig::default();
    let e = EnvConfig::default();
    vec![
        ("seed", g.seed.to_string()),
        ("grpo.beta", g.beta.to_string()),
        ("grpo.epsilon", g.epsilon.to_string()),
        ("grpo.objective_mode", mode_name(g.objective_mode).into()),
        ("grpo.group_size", g.group_size.to_string()),
        ("grpo.temperature", g.temperature.to_string()),
        ("grpo.learning_rate", g.learning_rate.to_string()),
        ("grpo.iterations", g.iterations.to_string()),
        ("grpo.inner_epochs", g.inner_epochs.to_string()),
        ("reward.tau", r.tau.to_string()),
        ("reward.w_vg", r.w_vg.to_string()),
        ("reward.w_la", r.w_la.to_string()),
        ("reward.w_mc", r.w_mc.to_string()),
        ("frame.width", e.dims.width.to_string()),
        ("frame.height", e.dims.height.to_string()),
        ("env.anchors_per_side", e.anchors_per_side.to_string()),
        ("env.anchor_scale", e.anchor_scale.to_string()),
        ("env.jitter", e.jitter.to_string()),
        ("env.margin", e.margin.to_string()),
        ("split.sft_fraction", "0.8".into()),
        ("split.unit", "record".into()),
        ("forge.endpoint", String::new()),
        ("forge.model", String::new()),
        ("forge.temperature", "0.7".into()),
        ("forge.max_inflight", "4".into()),
        ("forge.timeout_ms", "60000".into()),
        ("forge.max_attempts", "3".into()),
        ("forge.backoff_ms", "500".into()),
    ]
}

/// Resolved settings, one value and its origin per key.
#[derive(Debug, Clone)]
pub struct RunConfig {
    entries: BTreeMap<String, Setting>,
}

impl RunConfig {
    /// `flags` holds `(key, value)` for every flag the user actually passed.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, String)]) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Setting> = defaults()
            .into_iter()
            .map(|(k, v)| (k.to_string(), Setting { value: v, source: Source::Default }))
            .collect();
        if let Some(path) = file {
            let ini = Ini::load_from_file(path).map_err(|e| ConfigError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            for (section, props) in ini.iter() {
                for (k, v) in props.iter() {
                    let key = match section {
                        Some(s) => format!("{s}.{k}"),
                        None => k.to_string(),
                    };
                    let slot = entries
                        .get_mut(&key)
                        .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                    *slot = Setting { value: v.trim().to_string(), source: Source::File };
                }
            }
        }
        for (key, value) in flags {
            let slot = entries
                .get_mut(*key)
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            *slot = Setting { value: value.clone(), source: Source::Flag };
        }
        Ok(Self { entries })
    }

    pub fn setting(&self, key: &str) -> &Setting {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("config key `{key}` is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.setting(key);
        s.value.parse().map_err(|e: T::Err| ConfigError::Invalid {
            key: key.to_string(),
            value: s.value.clone(),
            origin: s.source,
            message: e.to_string(),
        })
    }

    /// Keys starting with any of `prefixes`, as `{key: {value, source}}`.
    pub fn echo(&self, prefixes: &[&str]) -> Value {
        let map: serde_json::Map<String, Value> = self
            .entries
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, s)| (k.clone(), json!({ "value": s.value, "source": s.source })))
            .collect();
        Value::Object(map)
    }

    pub fn frame(&self) -> Result<ImageDims, ConfigError> {
        let (w, h): (u32, u32) = (self.get("frame.width")?, self.get("frame.height")?);
        ImageDims::new(w, h).ok_or_else(|| ConfigError::Invalid {
            key: "frame.width".into(),
            value: format!("{w}x{h}"),
            origin: self.setting("frame.width").source,
            message: "frame must be non-empty".into(),
        })
    }

    pub fn reward(&self) -> Result<RewardConfig, ConfigError> {
        Ok(RewardConfig {
            tau: self.get("reward.tau")?,
            w_vg: self.get("reward.w_vg")?,
            w_la: self.get("reward.w_la")?,
            w_mc: self.get("reward.w_mc")?,
        })
    }

    pub fn grpo(&self) -> Result<GrpoConfig, ConfigError> {
        Ok(GrpoConfig {
            beta: self.get("grpo.beta")?,
            epsilon: self.get("grpo.epsilon")?,
            objective_mode: self.get("grpo.objective_mode")?,
            group_size: self.get("grpo.group_size")?,
            temperature: self.get("grpo.temperature")?,
            learning_rate: self.get("grpo.learning_rate")?,
            iterations: self.get("grpo.iterations")?,
            seed: self.get("seed")?,
            inner_epochs: self.get("grpo.inner_epochs")?,
        })
    }

    pub fn env(&self) -> Result<EnvConfig, ConfigError> {
        Ok(EnvConfig {
            dims: self.frame()?,
            anchors_per_side: self.get("env.anchors_per_side")?,
            anchor_scale: self.get("env.anchor_scale")?,
            jitter: self.get("env.jitter")?,
            margin: self.get("env.margin")?,
        })
    }
}
