//! Layered run configuration: built-in defaults, then the `--config` file,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SNAPSHOT_FILE: &str = "resolved-config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Global {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for Global {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            out: PathBuf::from("sbd-out"),
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge key by key,
/// anything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_file(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    anyhow::ensure!(value.is_object(), "config {} must be a JSON object", path.display());
    Ok(value)
}

/// Resolves one layer record: defaults, then `file[key]` (or the whole
/// file when `key` is empty), then the flags that were given.
pub fn resolve<R, F>(file: &Value, key: &str, flags: &F) -> Result<R>
where
    R: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut value = serde_json::to_value(R::default())?;
    let section = if key.is_empty() { Some(file) } else { file.get(key) };
    if let Some(section) = section {
        let mut section = section.clone();
        if key.is_empty() {
            if let Value::Object(m) = &mut section {
                let known: Vec<String> = match &value {
                    Value::Object(d) => d.keys().cloned().collect(),
                    _ => Vec::new(),
                };
                m.retain(|k, _| known.contains(k));
            }
        }
        merge(&mut value, section);
    }
    merge(&mut value, serde_json::to_value(flags)?);
    serde_json::from_value(value).with_context(|| format!("invalid `{key}` configuration"))
}

/// Sets `path` inside a JSON object to `value` when present, creating
/// intermediate objects.
pub fn put<T: Serialize>(root: &mut Value, path: &[&str], value: &Option<T>) {
    let Some(v) = value else { return };
    let mut cur = root;
    for key in &path[..path.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    let last = path[path.len() - 1].to_string();
    cur.as_object_mut().expect("object").insert(last, serde_json::to_value(v).expect("serializable flag"));
}

/// Writes the resolved configuration in the same shape `--config` reads.
pub fn write_snapshot<C: Serialize>(global: &Global, command: &str, resolved: &C) -> Result<PathBuf> {
    let mut root = serde_json::to_value(global)?;
    if let Value::Object(m) = &mut root {
        m.insert(command.to_string(), serde_json::to_value(resolved)?);
    }
    fs::create_dir_all(&global.out).with_context(|| format!("creating {}", global.out.display()))?;
    let path = global.out.join(SNAPSHOT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&root)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Rec {
        a: u32,
        b: String,
        inner: Inner,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        x: u32,
        y: u32,
    }

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file = json!({"cmd": {"a": 3, "b": "file", "inner": {"y": 9}}});
        let r: Rec = resolve(&file, "cmd", &Flags { a: Some(7) }).unwrap();
        assert_eq!(r, Rec { a: 7, b: "file".into(), inner: Inner { x: 0, y: 9 } });
        let r: Rec = resolve(&file, "cmd", &Flags { a: None }).unwrap();
        assert_eq!(r.a, 3);
        let r: Rec = resolve(&json!({}), "cmd", &Flags { a: None }).unwrap();
        assert_eq!(r, Rec::default());
    }

    #[test]
    fn put_builds_nested_objects() {
        let mut v = json!({});
        put(&mut v, &["schedule", "epochs"], &Some(6));
        put(&mut v, &["schedule", "momentum"], &None::<f64>);
        put(&mut v, &["seed"], &Some(1));
        assert_eq!(v, json!({"schedule": {"epochs": 6}, "seed": 1}));
    }

    #[test]
    fn global_ignores_command_sections() {
        let file = json!({"seed": 5, "train": {"epochs": 1}});
        let g: Global = resolve(&file, "", &json!({})).unwrap();
        assert_eq!(g.seed, 5);
    }
}
