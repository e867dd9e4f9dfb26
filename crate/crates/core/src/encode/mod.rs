//! Frame-level embeddings, the unit codebook and quantization.

mod backend;
mod cache;
mod kmeans;

pub use backend::{EncoderBackend, ToyEncoder, ToyEncoderConfig, TOY_FEATURE_FLOOR};
pub use cache::{read_embeddings, read_units, write_embeddings, write_units};
pub use kmeans::{fit_codebook, kmeans_plus_plus_init, lloyd, Codebook};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::AudioBuffer;
use crate::error::{Error, Result};

/// Canonical embedding frame rate (frames per second).
pub const FRAME_RATE: f64 = 50.0;
/// Canonical embedding width.
pub const EMBEDDING_DIM: usize = 768;
/// Default unit inventory size; matches the vocoder's embedding table.
pub const DEFAULT_UNITS: usize = 100;

/// `T x D` frame matrix at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    frames: Array2<f64>,
    frame_rate: f64,
}

impl EmbeddingSequence {
    pub fn new(frames: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::shape(format!("embedding sequence must be non-empty, got {:?}", frames.dim())));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::validation(format!("bad frame rate {frame_rate}")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding contains non-finite values"));
        }
        Ok(EmbeddingSequence { frames, frame_rate })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_rate: f64) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged embedding rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let frames = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(frames, frame_rate)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.frame_rate
    }
}

/// One cluster id per frame. No run-length collapsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    pub frame_rate_millihz: u64,
}

impl UnitSequence {
    pub fn new(units: Vec<u32>, frame_rate: f64) -> Self {
        UnitSequence { units, frame_rate_millihz: (frame_rate * 1000.0).round() as u64 }
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate_millihz as f64 / 1000.0
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn max_unit(&self) -> Option<u32> {
        self.units.iter().copied().max()
    }
}

/// Runs `backend` over `audio` and checks the result against the backend's contract.
pub fn extract_embeddings(audio: &AudioBuffer, backend: &dyn EncoderBackend) -> Result<EmbeddingSequence> {
    let hop = backend.hop_samples(audio.sample_rate());
    if audio.len() < hop {
        return Err(Error::validation(format!(
            "audio of {} samples is shorter than one {}-sample frame",
            audio.len(),
            hop
        )));
    }
    let emb = backend.encode(audio)?;
    if emb.dim() != backend.dim() {
        return Err(Error::shape(format!(
            "backend {} produced dim {} but declares {}",
            backend.name(),
            emb.dim(),
            backend.dim()
        )));
    }
    Ok(emb)
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per frame; ties go to the lowest centroid index.
pub fn quantize(embeddings: &EmbeddingSequence, codebook: &Codebook) -> Result<UnitSequence> {
    if embeddings.dim() != codebook.dim() {
        return Err(Error::shape(format!(
            "embedding dim {} does not match codebook dim {}",
            embeddings.dim(),
            codebook.dim()
        )));
    }
    let units = embeddings.frames().rows().into_iter().map(|row| codebook.nearest(row) as u32).collect();
    Ok(UnitSequence::new(units, embeddings.frame_rate()))
}
