//! Config files become extra command-line flags placed ahead of the user's
//! own, so a flag given explicitly always overrides the file.
//!
//! Top-level keys apply to every subcommand; a table named after the
//! subcommand (e.g. `[build-index]` or `[build_index]`) applies to that one only.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

/// Global options that take a value, so the token after them is not the subcommand.
const VALUE_GLOBALS: &[&str] = &["--seed", "--config"];

pub fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if VALUE_GLOBALS.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

pub fn load(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("--config {}: {e}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| format!("--config {}: {e}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| format!("--config {}: {e}", path.display()))?
    };
    if !value.is_object() {
        return Err(format!("--config {}: expected a table of flag names", path.display()));
    }
    Ok(value)
}

fn push_flags(out: &mut Vec<OsString>, table: &serde_json::Map<String, Value>) -> Result<(), String> {
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err("a config file cannot name another config file".into());
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Number(n) => {
                out.push(flag.into());
                out.push(n.to_string().into());
            }
            Value::String(s) => {
                out.push(flag.into());
                out.push(s.into());
            }
            Value::Array(items) => {
                let parts: Result<Vec<String>, String> = items
                    .iter()
                    .map(|v| match v {
                        Value::Number(n) => Ok(n.to_string()),
                        Value::String(s) => Ok(s.clone()),
                        _ => Err(format!("config key {key:?}: list items must be numbers or strings")),
                    })
                    .collect();
                out.push(flag.into());
                out.push(parts?.join(",").into());
            }
            Value::Object(_) => {}
        }
    }
    Ok(())
}

/// Returns `args` with the config's flags inserted right after the subcommand.
pub fn merge(args: Vec<OsString>, config: &Value) -> Result<Vec<OsString>, String> {
    let Some(pos) = subcommand_position(&args) else {
        return Ok(args);
    };
    let sub = args[pos].to_string_lossy().into_owned();
    let table = config.as_object().expect("checked by load");
    let mut extra = Vec::new();
    push_flags(&mut extra, table)?;
    for name in [sub.clone(), sub.replace('-', "_")] {
        if let Some(Value::Object(section)) = table.get(&name) {
            push_flags(&mut extra, section)?;
            break;
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}
