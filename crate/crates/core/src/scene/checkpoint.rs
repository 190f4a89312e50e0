//! Binary scene checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f32` in header
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SceneConfig, SceneModel};
use crate::diff::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LLGSCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: SceneConfig,
    voxel_resolution: f64,
    n_anchors: usize,
    n_views: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

pub fn write_checkpoint(scene: &SceneModel) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = scene
        .store
        .tensors()
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                group: t.group,
                shape: t.shape.clone(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let header = Header {
        version: VERSION,
        config: scene.config.clone(),
        voxel_resolution: scene.voxel_resolution,
        n_anchors: scene.n_anchors,
        n_views: scene.n_views,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in scene.store.tensors() {
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<SceneModel> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a scene checkpoint (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let payload = &bytes[body..];
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor {} has a misplaced offset",
                entry.name
            )));
        }
        let end = entry.offset + 4 * count;
        let raw = payload
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated payload in tensor {}", entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if store.id(&entry.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", entry.name)));
        }
        store.add(&entry.name, entry.group, &entry.shape, data);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    SceneModel::from_store(
        store,
        header.config,
        header.voxel_resolution,
        header.n_anchors,
        header.n_views,
    )
}

pub fn save_checkpoint(scene: &SceneModel, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(scene)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SceneModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
