//! `key=value` config files merged underneath command-line flags, and the
//! echo of the effective configuration.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;
use serde::Serialize;

use crate::invalid;

/// Parses `key=value` lines. `#` starts a comment line; keys may use `_`
/// or `-`.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(invalid(format!(
                "{}:{}: expected key=value",
                origin.display(),
                i + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            bail!(invalid(format!(
                "{}:{}: empty key",
                origin.display(),
                i + 1
            )));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Rewrites `argv` so that settings from `--config FILE` come first within
/// the subcommand; flags given explicitly appear later and win.
pub fn expand_argv(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(pos) = argv
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
    else {
        return Ok(argv);
    };
    let pos = pos + 1;
    let Some(sub) = cmd.find_subcommand(argv[pos].to_string_lossy().as_ref()) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    if !path.is_file() {
        return Err(invalid(format!(
            "--config: {} does not exist",
            path.display()
        )));
    }
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in parse_config(&text, path)? {
        if key == "config" {
            bail!(invalid(format!(
                "{}: nested config files are not supported",
                path.display()
            )));
        }
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
        else {
            bail!(invalid(format!(
                "{}: unknown key `{key}` for `{}`",
                path.display(),
                sub.get_name()
            )));
        };
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => bail!(invalid(format!(
                    "{}: `{key}` expects true or false, got `{other}`",
                    path.display()
                ))),
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Effective settings as `key=value` lines in a form [`parse_config`]
/// accepts. Unset optional values are omitted.
pub fn echo<T: Serialize>(command: &str, args: &T) -> Result<String> {
    let value = serde_json::to_value(args)?;
    let mut out = format!("# bnasr {command}\n");
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{}={text}\n", k.replace('_', "-")));
        }
    }
    Ok(out)
}
