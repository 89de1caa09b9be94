//! Artifact manifests.
//!
//! Every file a stage writes gets a `<name>.manifest.json` sidecar recording
//! the digest of the file itself, the digest of the experiment config, and
//! the digests of the inputs it was derived from. Downstream stages refuse
//! inputs whose bytes no longer match their sidecar, which catches both
//! missing stages and hand-edited artifacts. Manifests carry no timestamps
//! so a re-run with unchanged inputs reproduces them byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(bytes_digest(&fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Digest of the artifact file's bytes.
    pub artifact: String,
    /// Digest of the canonical serialized experiment config.
    pub config: String,
    /// Input digests keyed by a short name (artifact file name or "dataset").
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Write the sidecar for an artifact already on disk.
pub fn seal(
    artifact: &Path,
    config_digest: &str,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
) -> Result<(), PipelineError> {
    let manifest = Manifest {
        artifact: file_digest(artifact)?,
        config: config_digest.to_string(),
        inputs,
        seed,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path(artifact), text)?;
    Ok(())
}

/// Write an in-memory artifact and its sidecar in one step.
pub fn write_sealed(
    artifact: &Path,
    bytes: &[u8],
    config_digest: &str,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
) -> Result<(), PipelineError> {
    if let Some(dir) = artifact.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(artifact, bytes)?;
    seal(artifact, config_digest, inputs, seed)
}

/// Require an upstream artifact: it must exist and still hash to what its
/// manifest recorded. Returns the digest so callers can cite it as an input.
pub fn expect_input(
    stage: &'static str,
    artifact: &Path,
    produced_by: &'static str,
) -> Result<String, PipelineError> {
    let missing = |why: String| PipelineError::MissingUpstream {
        stage,
        path: artifact.to_path_buf(),
        why,
        produced_by,
    };
    if !artifact.is_file() {
        return Err(missing("artifact not found".to_string()));
    }
    let sidecar = manifest_path(artifact);
    if !sidecar.is_file() {
        return Err(missing("manifest sidecar not found".to_string()));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&sidecar)?)
        .map_err(|e| missing(format!("manifest unreadable: {e}")))?;
    let digest = file_digest(artifact)?;
    if digest != manifest.artifact {
        return Err(missing(
            "artifact bytes no longer match the manifest digest".to_string(),
        ));
    }
    Ok(digest)
}
