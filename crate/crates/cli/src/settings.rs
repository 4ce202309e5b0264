//! Layered configuration: built-in defaults, then a TOML/JSON file, then
//! flags. Flag structs and settings structs share field names, so the merge
//! works on their JSON forms.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad invocation or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn object(v: Value, what: &str) -> anyhow::Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(usage(format!("{what} must be a table"))),
    }
}

fn read_file(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// `S::default()`, overlaid with the keys of `file`, overlaid with the
/// flags that were given.
pub fn resolve<S>(file: Option<&Path>, flags: &impl Serialize) -> anyhow::Result<S>
where
    S: Serialize + DeserializeOwned + Default,
{
    let mut merged = object(serde_json::to_value(S::default())?, "defaults")?;
    if let Some(path) = file {
        for (k, v) in object(read_file(path)?, "config file")? {
            if !merged.contains_key(&k) {
                return Err(usage(format!("config {}: unknown key `{k}`", path.display())));
            }
            merged.insert(k, v);
        }
    }
    for (k, v) in object(serde_json::to_value(flags)?, "flags")? {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("configuration: {e}")))
}
