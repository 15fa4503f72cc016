//! `key=value` config files. Bare keys (`seed`, `threads`) apply to every
//! subcommand; dotted keys (`train.scale`) apply to one. The file's settings
//! are spliced into argv ahead of the user's own flags, so flags win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Command};

const SHARED: [&str; 2] = ["seed", "threads"];

pub fn parse_pairs(text: &str, path: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{path}:{}: expected key=value", i + 1))?;
        out.push((i + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Flags for `subcommand` derived from the file, validated against every
/// subcommand's arguments.
pub fn file_args(root: &Command, subcommand: &str, path: &Path) -> Result<Vec<OsString>> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {shown}"))?;
    let mut args = Vec::new();
    for (line, key, value) in parse_pairs(&text, &shown)? {
        let unknown = || anyhow!("{shown}:{line}: unknown config key `{key}`");
        let (cmd, flag) = match key.split_once('.') {
            Some((c, f)) => (c, f),
            None if SHARED.contains(&key.as_str()) => (subcommand, key.as_str()),
            None => return Err(unknown()),
        };
        let sub = root.find_subcommand(cmd).ok_or_else(unknown)?;
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag) && flag != "config")
            .ok_or_else(unknown)?;
        if cmd != subcommand {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => args.push(format!("--{flag}").into()),
                "false" => {}
                _ => bail!("{shown}:{line}: `{key}` is a switch and takes true or false, got `{value}`"),
            }
        } else {
            args.push(format!("--{flag}").into());
            args.push(value.into());
        }
    }
    Ok(args)
}
