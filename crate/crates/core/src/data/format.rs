//! Feature file layout:
//!
//! ```text
//! <manifest JSON on one line>\n
//! <payload: concatenated little-endian f64 values>
//! ```
//!
//! The manifest is
//! `{"format":"ta3n-features","version":1,"feature_dim":D,"class_names":[..],
//! "record_count":N,"payload_bytes":B,"records":[{"video_id":..,"domain":"source"|"target",
//! "label":int|null,"frames":T,"offset":o,"length":l},..]}`.
//! `offset` and `length` are byte positions relative to the first payload byte;
//! each record's frames are stored row-major, so `length == T * D * 8`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Domain, DomainDataset, FrameFeatureRecord};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FEATURE_FORMAT: &str = "ta3n-features";
const FEATURE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    feature_dim: usize,
    class_names: Vec<String>,
    record_count: usize,
    payload_bytes: usize,
    records: Vec<RecordEntry>,
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    video_id: String,
    domain: Domain,
    label: Option<usize>,
    frames: usize,
    offset: usize,
    length: usize,
}

pub fn save_feature_file(dataset: &DomainDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut payload = Vec::new();
    let mut records = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let offset = payload.len();
        for v in r.frames.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        records.push(RecordEntry {
            video_id: r.video_id.clone(),
            domain: r.domain,
            label: r.label,
            frames: r.frames.rows(),
            offset,
            length: payload.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FEATURE_FORMAT.into(),
        version: FEATURE_VERSION,
        feature_dim: dataset.feature_dim,
        class_names: dataset.class_names.clone(),
        record_count: records.len(),
        payload_bytes: payload.len(),
        records,
    };
    let mut bytes = serde_json::to_vec(&manifest).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: &Path) -> Result<DomainDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, path)
}

fn parse(bytes: &[u8], path: &Path) -> Result<DomainDataset> {
    let malformed = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| malformed("missing manifest line".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..split]).map_err(|e| malformed(format!("manifest: {e}")))?;
    if manifest.format != FEATURE_FORMAT || manifest.version != FEATURE_VERSION {
        return Err(malformed(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    if manifest.record_count != manifest.records.len() {
        return Err(malformed(format!(
            "record_count {} but {} records listed",
            manifest.record_count,
            manifest.records.len()
        )));
    }
    let payload = &bytes[split + 1..];
    if payload.len() != manifest.payload_bytes {
        return Err(malformed(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    let d = manifest.feature_dim;
    let mut records = Vec::with_capacity(manifest.records.len());
    for e in manifest.records {
        let fail = |detail: String| Error::Record { video_id: e.video_id.clone(), detail };
        if e.length != e.frames * d * 8 {
            return Err(fail(format!("{} bytes cannot hold {} frames of dimension {d}", e.length, e.frames)));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= payload.len());
        let Some(end) = end else {
            return Err(fail(format!("payload truncated: bytes {}..{} missing", e.offset, e.offset + e.length)));
        };
        let values = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let frames = Tensor::new(e.frames, d, values)?;
        records.push(FrameFeatureRecord { video_id: e.video_id, domain: e.domain, label: e.label, frames });
    }
    DomainDataset::new(d, manifest.class_names, records)
}
