use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files produced by a job, held in memory until the job has finished.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
    /// Extra inputs read besides the config, with their hashes.
    pub inputs: Vec<InputFile>,
    /// Set when the outputs were produced but contradict a reference result.
    pub verdict_failure: Option<String>,
}

impl OutputSet {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::numerical(format!("json export: {e}")))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Writes every file, then the manifest.
    pub fn commit(&self, dir: &Path, manifest: &RunManifest) -> Result<(), Failure> {
        let io = |e: std::io::Error| Failure::numerical(format!("cannot write to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        let mut bytes = serde_json::to_vec_pretty(manifest).map_err(|e| Failure::numerical(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(dir.join("manifest.json"), bytes).map_err(io)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub output_dir: String,
    pub tool_version: String,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<OutputFile>,
    /// Command line that regenerates this directory.
    pub rerun: String,
}

impl RunManifest {
    pub fn new(subcommand: String, config: Option<(&Path, &[u8])>, seed: u64, out: &Path, set: &OutputSet) -> Self {
        let mut rerun = format!("mmloc {subcommand}");
        if let Some((p, _)) = config {
            rerun.push_str(&format!(" --config {}", p.display()));
        }
        rerun.push_str(&format!(" --seed {seed} --out {}", out.display()));
        Self {
            subcommand,
            config_path: config.map(|(p, _)| p.display().to_string()),
            config_sha256: config.map(|(_, b)| sha256_hex(b)),
            seed,
            output_dir: out.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: set.inputs.clone(),
            outputs: set
                .files
                .iter()
                .map(|(name, bytes)| OutputFile {
                    name: name.clone(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
            rerun,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_lists_outputs_in_order() {
        let mut set = OutputSet::default();
        set.add("b.csv", b"x\n".to_vec());
        set.add("a.csv", b"y\n".to_vec());
        let m = RunManifest::new("synth".into(), Some((Path::new("job.toml"), b"abc")), 7, Path::new("o"), &set);
        assert_eq!(m.outputs[0].name, "b.csv");
        assert_eq!(m.config_sha256.as_deref(), Some(sha256_hex(b"abc").as_str()));
        assert_eq!(m.rerun, "mmloc synth --config job.toml --seed 7 --out o");
    }
}
