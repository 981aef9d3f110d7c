//! `--set key.path=value` overrides applied to a config document.
//!
//! The document is first normalized through its typed form so defaulted
//! fields exist, then each override must name an existing key. Values are
//! read as JSON when possible and as bare strings otherwise; the edited
//! document is parsed back into the typed config, which rejects mistyped
//! values.

use serde::{de::DeserializeOwned, Serialize};
use serde_json::Value;

pub fn apply<T: Serialize + DeserializeOwned>(config: T, overrides: &[String]) -> Result<T, String> {
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut doc = serde_json::to_value(&config).map_err(|e| e.to_string())?;
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| format!("override {item:?} is not key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set(&mut doc, path, value)?;
    }
    serde_json::from_value(doc).map_err(|e| format!("override rejected: {e}"))
}

fn set(doc: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut node = doc;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| format!("unknown config key {path:?}"))?;
    }
    if std::mem::discriminant(node) != std::mem::discriminant(&value) && !node.is_number() {
        return Err(format!("override {path:?} expects {}, got {value}", kind(node)));
    }
    if node.is_number() && !value.is_number() {
        return Err(format!("override {path:?} expects a number, got {value}"));
    }
    *node = value;
    Ok(())
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use more_core::harness::TrainConfig;

    fn base() -> TrainConfig {
        TrainConfig::from_json(
            r#"{"task":{"kind":"planted_lowrank","rank":2},"n":8,
                "adapter":{"kind":"lora","rank":2},"steps":5,"batch":4,"samples":16}"#,
        )
        .unwrap()
    }

    #[test]
    fn sets_nested_and_defaulted_keys() {
        let c = apply(
            base(),
            &["optimizer.lr=0.5".into(), "steps=7".into(), "adapter.rank=3".into()],
        )
        .unwrap();
        assert_eq!((c.optimizer.lr, c.steps), (0.5, 7));
        assert_eq!(c.adapter, more_core::harness::AdapterSpec::Lora { rank: 3 });
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        assert!(apply(base(), &["optimiser.lr=1".into()])
            .unwrap_err()
            .contains("unknown"));
        assert!(apply(base(), &["steps=many".into()]).is_err());
        assert!(apply(base(), &["steps=-1".into()]).is_err());
        assert!(apply(base(), &["optimizer.cosine_decay=1".into()]).is_err());
        assert!(apply(base(), &["steps".into()]).is_err());
    }
}
