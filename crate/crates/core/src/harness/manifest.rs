//! Run manifests: config snapshot, seed, versions and output hashes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub package_version: String,
    pub checkpoint_format: u32,
    pub parallel_feature: bool,
    /// Full TOML of the effective configuration, overrides applied.
    pub config: String,
    pub outputs: Vec<OutputHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hashes every regular file in `dir` (except the manifest itself, sorted by
/// name) and writes `manifest.json` beside them.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    seed: Option<u64>,
) -> std::io::Result<Manifest> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    let outputs = names
        .into_iter()
        .map(|name| {
            Ok(OutputHash {
                sha256: sha256_hex(&fs::read(dir.join(&name))?),
                path: name,
            })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    let manifest = Manifest {
        command: command.to_string(),
        seed,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_format: crate::nn::FORMAT_VERSION,
        parallel_feature: cfg!(feature = "parallel"),
        config: config.to_toml(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hashes_outputs_sorted() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "2").unwrap();
        fs::write(dir.path().join("a.csv"), "1").unwrap();
        let m = write_manifest(dir.path(), "test", &ExperimentConfig::default(), Some(3)).unwrap();
        let paths: Vec<_> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert_eq!(paths, ["a.csv", "b.csv"]);
        let again =
            write_manifest(dir.path(), "test", &ExperimentConfig::default(), Some(3)).unwrap();
        assert_eq!(m, again);
        let back: Manifest =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
