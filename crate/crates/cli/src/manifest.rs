//! Run manifests: flat `key=value` records written next to every output.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rdwt_core::Result;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn start(command: &str) -> Self {
        let mut m = Self { entries: Vec::new() };
        m.set("tool", "rdwt");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("started_unix_ms", unix_ms());
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.set(format!("input.{role}.path"), path.display());
        self.set(format!("input.{role}.sha256"), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.set(format!("output.{role}.path"), path.display());
        self.set(format!("output.{role}.sha256"), sha256_file(path)?);
        Ok(())
    }

    pub fn config(&mut self, kv: &[(String, String)]) {
        for (k, v) in kv {
            self.set(format!("config.{k}"), v);
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.set("finished_unix_ms", unix_ms());
        let mut text = String::new();
        for (k, v) in &self.entries {
            text += &format!("{k}={v}\n");
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `<path>.manifest`
pub fn beside(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    s.into()
}
