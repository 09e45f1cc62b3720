//! Checkpoints: a JSON manifest beside a little-endian f32 blob. The blob
//! holds the tensors back to back in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{EpochRecord, TrainedNetwork, TrainingConfig};
use super::{Head, Network};
use crate::error::{Error, Result};
use crate::io_util::{sha256_hex, with_suffix, write_atomic};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub head: Head,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub config: TrainingConfig,
    pub tensors: Vec<TensorEntry>,
    pub blob: String,
    pub blob_sha256: String,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub history: Vec<EpochRecord>,
}

const GATES: [&str; 4] = ["f", "i", "o", "c"];

fn tensor_list(input_dim: usize, hidden: usize, output_dim: usize) -> Vec<TensorEntry> {
    let mut v = Vec::new();
    for g in GATES {
        v.push(TensorEntry { name: format!("W_{g}"), shape: vec![input_dim + hidden, hidden] });
    }
    for g in GATES {
        v.push(TensorEntry { name: format!("b_{g}"), shape: vec![hidden] });
    }
    v.push(TensorEntry { name: "W_d".into(), shape: vec![hidden, output_dim] });
    v.push(TensorEntry { name: "b_d".into(), shape: vec![output_dim] });
    v
}

/// Per-gate tensors in manifest order, split out of the fused layout.
fn unfuse(net: &Network<f32>) -> Vec<f32> {
    let (h, rows) = (net.hidden, net.input_dim + net.hidden);
    let lay = net.layout();
    let mut out = Vec::with_capacity(net.params.len());
    for g in 0..4 {
        for r in 0..rows {
            let base = lay.w_gates + r * 4 * h + g * h;
            out.extend_from_slice(&net.params[base..base + h]);
        }
    }
    out.extend_from_slice(&net.params[lay.b_gates..]);
    out
}

fn fuse(net: &mut Network<f32>, flat: &[f32]) {
    let (h, rows) = (net.hidden, net.input_dim + net.hidden);
    let lay = net.layout();
    let mut pos = 0;
    for g in 0..4 {
        for r in 0..rows {
            let base = lay.w_gates + r * 4 * h + g * h;
            net.params[base..base + h].copy_from_slice(&flat[pos..pos + h]);
            pos += h;
        }
    }
    net.params[lay.b_gates..].copy_from_slice(&flat[pos..]);
}

fn blob_path(manifest: &Path) -> PathBuf {
    with_suffix(manifest, ".bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (weights), each atomically.
pub fn save_checkpoint(trained: &TrainedNetwork, path: &Path) -> Result<CheckpointManifest> {
    let net = &trained.network;
    let bytes: Vec<u8> = unfuse(net).iter().flat_map(|v| v.to_le_bytes()).collect();
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        head: net.head,
        input_dim: net.input_dim,
        hidden: net.hidden,
        output_dim: net.output_dim,
        config: trained.config.clone(),
        tensors: tensor_list(net.input_dim, net.hidden, net.output_dim),
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        blob_sha256: sha256_hex(&bytes),
        best_epoch: trained.best_epoch,
        best_validation: if trained.best_validation.is_finite() { trained.best_validation } else { -1.0 },
        history: trained.history.clone(),
    };
    write_atomic(&blob, &bytes)?;
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedNetwork> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::Corruption(format!("checkpoint manifest {}: {e}", path.display())))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: manifest.version, expected: CHECKPOINT_VERSION });
    }
    let expected = tensor_list(manifest.input_dim, manifest.hidden, manifest.output_dim);
    if manifest.tensors != expected {
        return Err(Error::Corruption("tensor list does not match the declared dimensions".into()));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob)?;
    if sha256_hex(&bytes) != manifest.blob_sha256 {
        return Err(Error::Corruption(format!("weights digest mismatch in {}", blob.display())));
    }
    let mut net = Network::<f32>::zeros(manifest.input_dim, manifest.hidden, manifest.output_dim, manifest.head);
    if bytes.len() != 4 * net.params.len() {
        return Err(Error::Corruption(format!(
            "weights hold {} bytes, expected {}",
            bytes.len(),
            4 * net.params.len()
        )));
    }
    let flat: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corruption("non-finite weight".into()));
    }
    fuse(&mut net, &flat);
    Ok(TrainedNetwork {
        network: net,
        config: manifest.config,
        history: manifest.history,
        best_epoch: manifest.best_epoch,
        best_validation: manifest.best_validation,
        aborted: None,
    })
}
