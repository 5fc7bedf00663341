//! `--config FILE`: TOML keys are turned into flags and spliced in right after
//! the subcommand name. Every argument overrides itself, so a flag given on
//! the command line beats the same key from the file.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Command};

fn config_path(args: &[OsString]) -> Result<Option<PathBuf>> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            let p = it.next().ok_or_else(|| anyhow!("--config needs a path"))?;
            return Ok(Some(PathBuf::from(p)));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

/// Flags equivalent to the config table, validated against `sub`'s arguments.
pub fn config_flags(sub: &Command, text: &str) -> Result<Vec<String>> {
    let table: toml::Table = text.parse().context("config is not valid TOML")?;
    let mut flags = Vec::new();
    for (raw_key, value) in &table {
        let key = raw_key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| anyhow!("unknown config key {raw_key:?} for `{}`", sub.get_name()))?;
        let switch = matches!(arg.get_action(), ArgAction::SetTrue);
        let flag = format!("--{key}");
        match value {
            toml::Value::Boolean(b) if switch => {
                if *b {
                    flags.push(flag);
                }
            }
            toml::Value::String(s) if !switch => flags.extend([flag, s.clone()]),
            toml::Value::Integer(i) if !switch => flags.extend([flag, i.to_string()]),
            toml::Value::Float(f) if !switch => flags.extend([flag, f.to_string()]),
            other => bail!("config key {raw_key:?}: unsupported value {other}"),
        }
    }
    Ok(flags)
}

/// Returns `args` with the flags from any `--config` file inserted after the subcommand.
pub fn splice(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub) = args
        .get(1)
        .and_then(|a| a.to_str())
        .and_then(|n| cmd.find_subcommand(n))
    else {
        return Ok(args);
    };
    let Some(path) = config_path(&args[2..])? else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let flags = config_flags(sub, &text).with_context(|| format!("config {}", path.display()))?;
    let mut out = args[..2].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&args[2..]);
    Ok(out)
}
