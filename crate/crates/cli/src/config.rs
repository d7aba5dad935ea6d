//! `key = value` config files spliced into the argument list.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command, CommandFactory};

use crate::cli::Cli;

struct Entry {
    section: Option<String>,
    key: String,
    value: String,
    line: usize,
}

fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut section = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.push(Entry {
            section: section.clone(),
            key: k.trim().replace('_', "-"),
            value: v.to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
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

/// Index of the subcommand token in `argv`, if any.
fn subcommand_position(argv: &[OsString], cmd: &Command) -> Option<(usize, String)> {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut skip_next = false;
    for (i, a) in argv.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let s = a.to_string_lossy();
        if s.starts_with("--") {
            let takes_value = cmd
                .get_arguments()
                .find(|arg| arg.get_long() == Some(&s[2..]))
                .is_some_and(|arg| arg.get_action().takes_values());
            skip_next = takes_value && !s.contains('=');
            continue;
        }
        if names.iter().any(|n| *n == s) {
            return Some((i, s.into_owned()));
        }
        return None;
    }
    None
}

/// Splices the config file's values right after the subcommand name so that
/// later command-line flags override them.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    let entries = parse(&text)?;
    let root = Cli::command();
    let Some((at, name)) = subcommand_position(&argv, &root) else {
        return Ok(argv);
    };
    let sub = root.find_subcommand(&name).expect("known subcommand");
    let mut extra: Vec<OsString> = Vec::new();
    for e in entries {
        let scoped = match &e.section {
            Some(s) if *s != name => continue,
            Some(_) => true,
            None => false,
        };
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(e.key.as_str()));
        let Some(arg) = arg else {
            if scoped {
                return Err(format!("config line {}: `{name}` has no option --{}", e.line, e.key));
            }
            continue;
        };
        if e.key == "config" {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match e.value.as_str() {
                "true" | "yes" | "1" => extra.push(format!("--{}", e.key).into()),
                "false" | "no" | "0" => {}
                other => return Err(format!("config line {}: {other:?} is not a boolean", e.line)),
            },
            ArgAction::Append => {
                for v in e.value.split(';') {
                    extra.push(format!("--{}={}", e.key, v.trim()).into());
                }
            }
            _ => extra.push(format!("--{}={}", e.key, e.value).into()),
        }
    }
    let mut out = argv[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}
