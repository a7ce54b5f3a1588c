//! Checkpoint files: a JSON manifest with a tensor index plus one binary blob
//! of little-endian f32 values in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::TensorRole;

use super::{ArchSpec, Family, SnapshotTag, SnapshotTensor, WeightSnapshot};

pub const CHECKPOINT_FORMAT: &str = "reuselab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorIndexEntry {
    pub name: String,
    pub module: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub arch_id: String,
    pub capacity: String,
    pub arch: ArchSpec,
    pub tag: SnapshotTag,
    pub created_at: String,
    /// Group that owns the ViT positional embedding for transfer purposes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_embed_group: Option<String>,
    pub blob: String,
    pub blob_sha256: String,
    pub tensors: Vec<TensorIndexEntry>,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.bin`; returns the manifest path.
pub fn save_checkpoint(snapshot: &WeightSnapshot, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let blob_name = format!("{name}.bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(snapshot.tensors().len());
    for (tname, t) in snapshot.tensors() {
        let bytes = f32_bytes(&t.values);
        tensors.push(TensorIndexEntry {
            name: tname.clone(),
            module: t.module.clone(),
            role: t.role,
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset: blob.len() as u64,
            nbytes: bytes.len() as u64,
            sha256: sha_hex(&bytes),
        });
        blob.extend_from_slice(&bytes);
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        arch_id: snapshot.arch_id().to_string(),
        capacity: snapshot.arch().capacity.to_string(),
        arch: snapshot.arch().clone(),
        tag: snapshot.tag(),
        created_at: snapshot.created_at().to_string(),
        pos_embed_group: (snapshot.arch().family == Family::MiniVit).then(|| "patchifier".to_string()),
        blob: blob_name.clone(),
        blob_sha256: sha_hex(&blob),
        tensors,
    };
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, &blob).map_err(Error::io(&blob_path))?;
    let manifest_path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(Error::io(&manifest_path))?;
    Ok(manifest_path)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<WeightSnapshot> {
    let text = fs::read_to_string(manifest_path).map_err(Error::io(manifest_path))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(Error::io(&blob_path))?;
    if sha_hex(&blob) != manifest.blob_sha256 {
        return Err(Error::Checkpoint(format!("blob checksum mismatch for {}", blob_path.display())));
    }
    let mut tensors = IndexMap::with_capacity(manifest.tensors.len());
    let mut expected_offset = 0u64;
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor {} has dtype {}", t.name, t.dtype)));
        }
        let numel: usize = t.shape.iter().product();
        if t.offset != expected_offset || t.nbytes != 4 * numel as u64 {
            return Err(Error::Checkpoint(format!("tensor {} has inconsistent offset/size", t.name)));
        }
        let end = (t.offset + t.nbytes) as usize;
        let bytes = blob
            .get(t.offset as usize..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the blob", t.name)))?;
        if sha_hex(bytes) != t.sha256 {
            return Err(Error::Checkpoint(format!("checksum mismatch for tensor {}", t.name)));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.insert(
            t.name.clone(),
            SnapshotTensor { module: t.module.clone(), role: t.role, shape: t.shape.clone(), values },
        );
        expected_offset = end as u64;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::Checkpoint("blob has trailing bytes".into()));
    }
    Ok(WeightSnapshot::from_parts(manifest.arch, manifest.arch_id, manifest.tag, manifest.created_at, tensors))
}
