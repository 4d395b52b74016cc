//! Run manifests and the `out/<command>/<hash>/` layout.
//!
//! The hash covers the command, the canonical spec echo, the flags and the
//! seed; wall-clock time is recorded but never hashed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use regime_mm::config;
use regime_mm::persist::Header;
use regime_mm::ModelSpec;
use sha2::{Digest, Sha256};

pub struct RunManifest {
    pub command: &'static str,
    spec_echo: Vec<(String, String)>,
    /// Flag name and value, in declaration order.
    flags: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub hash: String,
    pub dir: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &'static str, spec: &ModelSpec, flags: Vec<(String, String)>, seed: Option<u64>, base: &Path) -> Self {
        let spec_echo = config::entries(spec);
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        for (k, v) in spec_echo.iter().chain(&flags) {
            h.update(k.as_bytes());
            h.update([b'=']);
            h.update(v.as_bytes());
            h.update([0]);
        }
        if let Some(s) = seed {
            h.update(s.to_le_bytes());
        }
        let hash = hex::encode(h.finalize());
        let dir = base.join(command).join(&hash);
        RunManifest { command, spec_echo, flags, seed, hash, dir, outputs: Vec::new(), started: Instant::now() }
    }

    /// Header for data files: manifest hash, then the spec echo.
    pub fn header(&self) -> Header {
        let mut h = Header::new();
        h.push("manifest_hash", &self.hash);
        h.entries.extend(self.spec_echo.iter().cloned());
        h
    }

    pub fn create_dir(&self) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)
    }

    /// Registers `name` as an output and returns its full path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&self) -> std::io::Result<PathBuf> {
        let mut text = String::new();
        let mut line = |k: &str, v: &str| {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        };
        line("command", self.command);
        line("manifest_hash", &self.hash);
        line("toolkit_version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = self.seed {
            line("seed", &s.to_string());
        }
        for (k, v) in &self.flags {
            line(&format!("flag.{k}"), v);
        }
        for (k, v) in &self.spec_echo {
            line(k, v);
        }
        line("outputs", &self.outputs.join(","));
        line("wall_clock_s", &format!("{:.3}", self.started.elapsed().as_secs_f64()));
        let path = self.dir.join("manifest.txt");
        fs::write(&path, text)?;
        Ok(path)
    }
}
