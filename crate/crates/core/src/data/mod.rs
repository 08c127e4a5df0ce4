//! Video feature records, frame sampling, batching and synthetic data.

mod batch;
mod format;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use batch::{make_batches, target_batch_size, Batcher, MixedBatch, TrainingSet};
pub use format::{load_feature_file, save_feature_file, FEATURE_FORMAT};
pub use synthetic::{generate_synthetic, AffineTransform, SyntheticData, SyntheticShiftSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Class index used by the domain classifiers.
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

/// One video: `T` time-ordered frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureRecord {
    pub video_id: String,
    pub domain: Domain,
    pub label: Option<usize>,
    /// `T x D`
    pub frames: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub records: Vec<FrameFeatureRecord>,
}

impl DomainDataset {
    pub fn new(feature_dim: usize, class_names: Vec<String>, records: Vec<FrameFeatureRecord>) -> Result<Self> {
        let ds = DomainDataset { feature_dim, class_names, records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            let fail = |detail: String| Error::Record { video_id: r.video_id.clone(), detail };
            if r.frames.cols() != self.feature_dim {
                return Err(fail(format!("feature dimension {} != {}", r.frames.cols(), self.feature_dim)));
            }
            if !r.frames.is_finite() {
                return Err(fail("non-finite frame features".into()));
            }
            if let Some(l) = r.label {
                if !self.class_names.is_empty() && l >= self.class_names.len() {
                    return Err(fail(format!("label {l} >= {} classes", self.class_names.len())));
                }
            }
        }
        Ok(())
    }

    pub fn is_labelled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }
}

/// Frame indices `round(j (T-1) / (K-1))`, `j = 0..K`.
pub fn sample_indices(t: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 || t < k {
        return Err(Error::invalid(format!("cannot sample {k} frames from {t}")));
    }
    // integer round-half-up of j(T-1)/(K-1)
    Ok((0..k).map(|j| (2 * j * (t - 1) + (k - 1)) / (2 * (k - 1))).collect())
}

/// Equally spaced `K x D` clip from a record.
pub fn sample_frames(record: &FrameFeatureRecord, k: usize) -> Result<Tensor> {
    let idx = sample_indices(record.frames.rows(), k)
        .map_err(|e| Error::Record { video_id: record.video_id.clone(), detail: e.to_string() })?;
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| record.frames.row_slice(i).to_vec()).collect();
    Tensor::from_rows(&rows)
}
