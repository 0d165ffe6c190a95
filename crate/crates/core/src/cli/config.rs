//! Flat `key=value` configuration over the synthesis and training settings.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::bundle::SynthConfig;
use crate::error::{Error, Result};
use crate::head::TrainConfig;

/// Synthesis and training settings merged from defaults, a JSON file and
/// overrides, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

fn object(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => unreachable!("config structs serialize to objects"),
    }
}

/// Parses the right-hand side of `--set key=value`: JSON when it parses,
/// otherwise the raw string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn decode<T: serde::de::DeserializeOwned>(map: Map<String, Value>, what: &str) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::ConfigInvalid(format!("{what}: {e}")))
}

impl CliConfig {
    pub fn build(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut synth = object(serde_json::to_value(SynthConfig::default())?);
        let mut train = object(serde_json::to_value(TrainConfig::default())?);
        let mut apply = |key: &str, value: Value| -> Result<()> {
            let mut known = false;
            for map in [&mut synth, &mut train] {
                if map.contains_key(key) {
                    map.insert(key.to_string(), value.clone());
                    known = true;
                }
            }
            if known {
                Ok(())
            } else {
                Err(Error::ConfigInvalid(format!("unknown configuration key `{key}`")))
            }
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let Value::Object(entries) = serde_json::from_str::<Value>(&text)? else {
                return Err(Error::ConfigInvalid(format!(
                    "{} must hold a JSON object",
                    path.display()
                )));
            };
            for (key, value) in entries {
                apply(&key, value)?;
            }
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("override `{item}` is not key=value")))?;
            apply(key.trim(), parse_value(raw.trim()))?;
        }
        Ok(CliConfig {
            synth: decode(synth, "synthesis settings")?,
            train: decode(train, "training settings")?,
        })
    }
}
