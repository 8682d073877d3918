//! Named-tensor weight archives.
//!
//! Layout (safetensors-compatible): an 8-byte little-endian header length, a
//! JSON header mapping tensor names to dtype, shape and byte offsets (plus a
//! `__metadata__` string map), and the raw little-endian payload. A SHA-256
//! checksum of the payload is stored in the metadata and verified on load, so
//! corrupted archives fail loudly. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::error::{Error, Result};

pub const CHECKSUM_KEY: &str = "payload_sha256";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (usize, usize),
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("F32"),
        DType::F64 => Ok("F64"),
        other => Err(Error::msg(format!("unsupported archive dtype {other:?}"))),
    }
}

fn parse_dtype(name: &str, path: &Path) -> Result<DType> {
    match name {
        "F32" => Ok(DType::F32),
        "F64" => Ok(DType::F64),
        other => Err(Error::ArchiveCorrupt {
            path: path.to_path_buf(),
            reason: format!("unsupported dtype '{other}'"),
        }),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    let mut bytes = Vec::with_capacity(flat.elem_count() * t.dtype().size_in_bytes());
    match t.dtype() {
        DType::F32 => {
            for v in flat.to_vec1::<f32>()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::F64 => {
            for v in flat.to_vec1::<f64>()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        other => return Err(Error::msg(format!("unsupported archive dtype {other:?}"))),
    }
    Ok(bytes)
}

/// Write tensors and metadata to `path`. Tensor order in the payload follows
/// the map's (sorted) key order.
pub fn save_archive(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, Tensor>,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::new();
    let mut entries: BTreeMap<String, HeaderEntry> = BTreeMap::new();
    for (name, tensor) in tensors {
        let bytes = tensor_bytes(tensor)?;
        let start = payload.len();
        payload.extend_from_slice(&bytes);
        entries.insert(
            name.clone(),
            HeaderEntry {
                dtype: dtype_name(tensor.dtype())?.to_string(),
                shape: tensor.dims().to_vec(),
                data_offsets: (start, payload.len()),
            },
        );
    }

    let mut metadata = metadata.clone();
    metadata.insert(
        CHECKSUM_KEY.to_string(),
        hex::encode(sha2::Sha256::digest(&payload)),
    );

    let mut header = serde_json::Map::new();
    header.insert(
        "__metadata__".to_string(),
        serde_json::to_value(&metadata)?,
    );
    for (name, entry) in &entries {
        header.insert(name.clone(), serde_json::to_value(entry)?);
    }
    let header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))?;

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        f.write_all(&payload)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read an archive back, verifying the payload checksum.
pub fn load_archive(
    path: impl AsRef<Path>,
    device: &Device,
) -> Result<(BTreeMap<String, Tensor>, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let corrupt = |reason: String| Error::ArchiveCorrupt {
        path: path.to_path_buf(),
        reason,
    };

    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|e| corrupt(format!("truncated header length: {e}")))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 100 * 1024 * 1024 {
        return Err(corrupt(format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|e| corrupt(format!("truncated header: {e}")))?;
    let header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&header_bytes)
            .map_err(|e| corrupt(format!("malformed header JSON: {e}")))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let metadata: BTreeMap<String, String> = match header.get("__metadata__") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| corrupt(format!("malformed metadata: {e}")))?,
        None => BTreeMap::new(),
    };
    if let Some(expected) = metadata.get(CHECKSUM_KEY) {
        let actual = hex::encode(sha2::Sha256::digest(&payload));
        if &actual != expected {
            return Err(corrupt(format!(
                "payload checksum mismatch: expected {expected}, got {actual}"
            )));
        }
    }

    let mut tensors = BTreeMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value)
            .map_err(|e| corrupt(format!("malformed entry '{name}': {e}")))?;
        let (start, end) = entry.data_offsets;
        if end > payload.len() || start > end {
            return Err(corrupt(format!("entry '{name}' offsets out of range")));
        }
        let dtype = parse_dtype(&entry.dtype, path)?;
        let n: usize = entry.shape.iter().product();
        let bytes = &payload[start..end];
        if bytes.len() != n * dtype.size_in_bytes() {
            return Err(corrupt(format!(
                "entry '{name}' has {} bytes for {n} {dtype:?} elements",
                bytes.len()
            )));
        }
        let tensor = match dtype {
            DType::F32 => {
                let vals: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(vals, entry.shape.as_slice(), device)?
            }
            DType::F64 => {
                let vals: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(vals, entry.shape.as_slice(), device)?
            }
            _ => unreachable!(),
        };
        for v in tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
            if !v.is_finite() {
                return Err(corrupt(format!("entry '{name}' contains non-finite value")));
            }
        }
        tensors.insert(name, tensor);
    }
    Ok((tensors, metadata))
}

/// SHA-256 of a whole file, used for checkpoint immutability checks.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(sha2::Sha256::digest(&bytes)))
}
