use std::path::Path;

use ctxnet::train::Config;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Reads a JSON config (empty file means defaults), applies `key.path=value`
/// overrides in order, rejects unknown keys and validates the result.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
    let mut doc = match path {
        None => Value::Object(Map::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            if text.trim().is_empty() {
                Value::Object(Map::new())
            } else {
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        }
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let schema = serde_json::to_value(Config::default()).expect("default config serializes");
    check_keys(&doc, &schema, "")?;
    let config: Config = serde_path_to_error::deserialize(doc).map_err(|e| {
        let at = e.path().to_string();
        CliError::Usage(format!("{at}: {}", e.into_inner()))
    })?;
    config.validate()?;
    Ok(config)
}

fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override key {key:?} is malformed")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| CliError::Usage(format!("override {key}: {part} is inside a non-object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Usage(format!("override {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn check_keys(doc: &Value, schema: &Value, prefix: &str) -> Result<(), CliError> {
    let (Value::Object(d), Value::Object(s)) = (doc, schema) else {
        return Ok(());
    };
    for (k, v) in d {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            Some(sv) => check_keys(v, sv, &path)?,
            None => {
                let nearest = s.keys().min_by_key(|c| strsim::levenshtein(k, c));
                let hint = nearest.map(|n| format!("; did you mean {:?}?", n)).unwrap_or_default();
                return Err(CliError::Usage(format!("unknown config key {path:?}{hint}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse_json_scalars() {
        let mut doc = Value::Object(Map::new());
        apply_override(&mut doc, "train.lr=1e-3").unwrap();
        apply_override(&mut doc, "data.embeddings=emb.bin").unwrap();
        apply_override(&mut doc, "model.channels=[2,4,8]").unwrap();
        assert_eq!(doc["train"]["lr"], serde_json::json!(1e-3));
        assert_eq!(doc["data"]["embeddings"], "emb.bin");
        assert_eq!(doc["model"]["channels"], serde_json::json!([2, 4, 8]));
        assert!(apply_override(&mut doc, "train.lr").is_err());
        assert!(apply_override(&mut doc, "train..lr=1").is_err());
    }

    #[test]
    fn unknown_keys_suggest_the_nearest_name() {
        let err = load_config(None, &["train.epoch=3".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("train.epoch") && err.to_string().contains("\"epochs\""), "{err}");
    }

    #[test]
    fn type_errors_name_the_key_path() {
        let err = load_config(None, &["train.batch_size=\"four\"".into()]).unwrap_err();
        assert!(err.to_string().contains("train.batch_size"), "{err}");
    }
}
