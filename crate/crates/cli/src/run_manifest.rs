use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ArgMatches;
use serde::Serialize;
use wlclass_core::seed::sha256_hex;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to repeat a run: resolved flags, input hashes, seeds.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub args: BTreeMap<String, Vec<String>>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub exit_code: i32,
    pub wall_clock_seconds: f64,
    pub peak_rss_kib: Option<u64>,
}

pub struct Recorder {
    started: Instant,
    pub manifest: RunManifest,
}

fn collect_args(m: &ArgMatches, cmd: &clap::Command, out: &mut BTreeMap<String, Vec<String>>) {
    let is_arg = |id: &str| cmd.get_arguments().any(|a| a.get_id() == id);
    for id in m.ids() {
        if !is_arg(id.as_str()) {
            continue;
        }
        if let Ok(Some(raw)) = m.try_get_raw(id.as_str()) {
            out.insert(
                id.to_string(),
                raw.map(|v| v.to_string_lossy().into_owned()).collect(),
            );
        }
    }
    if let Some((name, sub)) = m.subcommand() {
        if let Some(sub_cmd) = cmd.find_subcommand(name) {
            collect_args(sub, sub_cmd, out);
        }
    }
}

impl Recorder {
    pub fn new(subcommand: &str, matches: &ArgMatches, cmd: &clap::Command) -> Self {
        let mut args = BTreeMap::new();
        collect_args(matches, cmd, &mut args);
        Recorder {
            started: Instant::now(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                args,
                inputs: Vec::new(),
                outputs: Vec::new(),
                seeds: BTreeMap::new(),
                threads: rayon::current_num_threads(),
                exit_code: 0,
                wall_clock_seconds: 0.0,
                peak_rss_kib: None,
            },
        }
    }

    /// Reads an input file, recording its hash.
    pub fn read_input(&mut self, path: &Path) -> std::io::Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.manifest.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(bytes)
    }

    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    pub fn finish(mut self, path: &Path, exit_code: i32) {
        self.manifest.exit_code = exit_code;
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.peak_rss_kib = peak_rss_kib();
        let written = serde_json::to_vec_pretty(&self.manifest)
            .map_err(std::io::Error::other)
            .and_then(|b| {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(path, b)
            });
        if let Err(e) = written {
            log::warn!("could not write run manifest {}: {e}", path.display());
        }
    }
}

/// Peak resident set size from /proc, where available.
fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

/// `OUT.manifest.json`, appending to the full file name.
pub fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
