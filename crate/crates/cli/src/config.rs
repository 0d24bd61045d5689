//! Flat `key = value` config files, merged into the command line so that
//! explicit flags win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Flags accepted before the subcommand name.
pub const GLOBAL_KEYS: [&str; 4] = ["seed", "config", "jobs", "manifest"];
const VALUED_GLOBALS: [&str; 4] = ["--seed", "--config", "--jobs", "--manifest"];

/// Parse `key = value` lines; `#` starts a comment. Keys may use `_` or
/// `-`. A JSON run manifest is accepted too: its resolved config and seed
/// are used.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    if text.trim_start().starts_with('{') {
        return parse_manifest_config(text);
    }
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {line:?}", n + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key {key:?}", n + 1);
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key {key:?}", n + 1);
        }
    }
    Ok(out)
}

fn parse_manifest_config(text: &str) -> Result<BTreeMap<String, String>> {
    let m: crate::manifest::RunManifest = serde_json::from_str(text).context("reading a run manifest as config")?;
    let mut out = m.config;
    out.insert("seed".into(), m.seed.to_string());
    Ok(out)
}

/// Position of the subcommand name in `args` (skipping the program name
/// and global options with their values).
fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&a.as_ref()) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = args.get(i + 1).cloned();
            i += 1;
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.into());
        }
        i += 1;
    }
    found
}

/// Splice the config file named by `--config` into `args`: global keys go
/// right after the program name, the rest right after the subcommand, so
/// every explicit flag comes later and overrides them.
pub fn merge_config_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let entries = parse_config(&text).with_context(|| format!("in config {}", path.display()))?;
    let flag = |k: &str, v: &str| OsString::from(format!("--{k}={v}"));
    let globals: Vec<OsString> = entries
        .iter()
        .filter(|(k, _)| GLOBAL_KEYS.contains(&k.as_str()))
        .map(|(k, v)| flag(k, v))
        .collect();
    let locals: Vec<OsString> = entries
        .iter()
        .filter(|(k, _)| !GLOBAL_KEYS.contains(&k.as_str()))
        .map(|(k, v)| flag(k, v))
        .collect();
    let Some(sub) = subcommand_position(&args) else {
        return Ok(args);
    };
    let mut out = Vec::with_capacity(args.len() + entries.len());
    out.push(args[0].clone());
    out.extend(globals);
    out.extend_from_slice(&args[1..=sub]);
    out.extend(locals);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}
