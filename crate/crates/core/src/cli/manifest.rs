//! Run manifests, scenario loading and `--set` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::model::{ScenarioDoc, SmdpModel};
use crate::sim::RngSeed;

/// Everything needed to repeat a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: String,
    pub scenario_sha256: String,
    pub seed: RngSeed,
    pub tool_version: String,
    pub parameter_overrides: BTreeMap<String, String>,
    pub output_dir: String,
    /// Command line without the binary name and the `--out` flag.
    pub args: Vec<String>,
    pub outputs: Vec<String>,
}

pub struct LoadedScenario {
    pub model: SmdpModel,
    pub doc: ScenarioDoc,
    pub sha256: String,
    pub overrides: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Splits `KEY=VALUE`. The value is read as JSON when it parses, else as a
/// string.
pub fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{raw}` is not KEY=VALUE")))?;
    if key.is_empty() {
        return Err(CliError::config(format!("override `{raw}` has an empty key")));
    }
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

/// Sets `value` at a dotted path. Numeric segments index arrays; missing
/// object keys are created.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let segments: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let here = segments[..=i].join(".");
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| CliError::config(format!("`{here}`: expected an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("`{here}`: index out of range (length {len})")))?
            }
            Value::Object(map) => {
                if !last && !map.contains_key(*seg) {
                    map.insert(seg.to_string(), Value::Object(Default::default()));
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Null if !last => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            _ => return Err(CliError::config(format!("`{here}`: cannot descend into a scalar"))),
        };
    }
    *cur = value;
    Ok(())
}

/// Reads, overrides and validates a scenario. Nothing is written.
pub fn load(path: &Path, sets: &[String]) -> Result<LoadedScenario, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("{}: malformed JSON: {e}", path.display())))?;
    let mut overrides = BTreeMap::new();
    for raw in sets {
        let (key, v) = parse_override(raw)?;
        apply_override(&mut value, &key, v)?;
        overrides.insert(key, raw.split_once('=').map(|(_, v)| v.to_string()).unwrap_or_default());
    }
    let doc = ScenarioDoc::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let model = doc.build().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(LoadedScenario {
        model,
        doc,
        sha256: sha256_hex(&bytes),
        overrides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_paths() {
        let mut v = json!({"gamma": 0.1, "rates": [{"lambda": 1.0}, {"lambda": 2.0}]});
        apply_override(&mut v, "rates.1.lambda", json!(0.5)).unwrap();
        apply_override(&mut v, "learn.kc", json!(10)).unwrap();
        apply_override(&mut v, "gamma", json!(0.2)).unwrap();
        assert_eq!(v, json!({"gamma": 0.2, "rates": [{"lambda": 1.0}, {"lambda": 0.5}], "learn": {"kc": 10}}));
        assert!(apply_override(&mut v, "rates.5.lambda", json!(1)).is_err());
        assert!(apply_override(&mut v, "gamma.x", json!(1)).is_err());
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a=1.5").unwrap(), ("a".into(), json!(1.5)));
        assert_eq!(parse_override("a=text").unwrap(), ("a".into(), json!("text")));
        assert_eq!(parse_override("a.b=[1,2]").unwrap(), ("a.b".into(), json!([1, 2])));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn sha_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
