//! TOML configuration files. Top-level keys apply to every subcommand, keys
//! in a `[<subcommand>]` table to that one only; both override flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

fn normalize(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k.replace('-', "_"), normalize(v))).collect()),
        other => other,
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies the file at `path` (if any) on top of `args`.
pub fn overlay<T: Serialize + DeserializeOwned>(args: T, path: Option<&Path>, command: &str) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    overlay_str(args, &text, command).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn overlay_str<T: Serialize + DeserializeOwned>(args: T, text: &str, command: &str) -> Result<T, String> {
    let file: Value = toml::from_str(text).map_err(|e| e.to_string())?;
    let Value::Object(mut file) = normalize(file) else { return Err("configuration must be a table".into()) };
    let section = file.remove(command);
    let commands = ["detect", "fit", "forecast", "simulate", "mc"];
    file.retain(|k, _| !commands.contains(&k.as_str()));
    let mut base = serde_json::to_value(&args).map_err(|e| e.to_string())?;
    merge(&mut base, Value::Object(file));
    if let Some(s) = section {
        merge(&mut base, s);
    }
    serde_json::from_value(base).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct A {
        seed: u64,
        n_lambda: usize,
        name: Option<String>,
    }

    #[test]
    fn file_overrides_flags_and_sections_win() {
        let a = A { seed: 1, n_lambda: 50, name: None };
        let out = overlay_str(a, "seed = 9\nn-lambda = 20\n[fit]\nseed = 11\n[mc]\nseed = 12\n", "fit").unwrap();
        assert_eq!(out, A { seed: 11, n_lambda: 20, name: None });
    }

    #[test]
    fn bad_types_are_reported() {
        let a = A { seed: 1, n_lambda: 50, name: None };
        assert!(overlay_str(a, "seed = \"x\"", "fit").is_err());
    }
}
