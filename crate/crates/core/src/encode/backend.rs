use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingSequence, EMBEDDING_DIM, FRAME_RATE};
use crate::corpus::AudioBuffer;
use crate::dsp::{Framing, LogMel};
use crate::error::{Error, Result};

/// Produces frame-level embeddings from audio.
///
/// Implementations must be deterministic: identical audio gives bit-identical output.
pub trait EncoderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn frame_rate(&self) -> f64;
    /// Which encoder layer the embeddings are read from (1-based, counted from the input).
    fn layer(&self) -> usize;
    fn hop_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as f64 / self.frame_rate()).round() as usize
    }
    fn encode(&self, audio: &AudioBuffer) -> Result<EmbeddingSequence>;
}

/// Additive floor inside the log of the toy encoder's band energies.
pub const TOY_FEATURE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyEncoderConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_mels: usize,
    pub frame_rate: f64,
    pub window_ms: f64,
    /// Subtract the per-utterance mean of every band before projecting.
    pub mean_normalize: bool,
    pub layer: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            seed: 0x5eed,
            dim: EMBEDDING_DIM,
            n_mels: 80,
            frame_rate: FRAME_RATE,
            window_ms: 25.0,
            mean_normalize: true,
            layer: 1,
        }
    }
}

/// Deterministic stand-in for a pretrained speech encoder.
///
/// Log-mel frames (`ln(E + TOY_FEATURE_FLOOR)`, 25 ms Hann window, one frame per
/// hop, tail zero-padded) are optionally mean-normalized per utterance and then
/// multiplied by a fixed Gaussian projection drawn from `seed`. It has a single
/// layer.
#[derive(Debug)]
pub struct ToyEncoder {
    config: ToyEncoderConfig,
    projection: Array2<f64>,
}

impl ToyEncoder {
    pub fn new(config: ToyEncoderConfig) -> Result<Self> {
        if config.layer != 1 {
            return Err(Error::validation(format!("toy encoder has a single layer, layer {} requested", config.layer)));
        }
        if config.dim == 0 || config.n_mels == 0 || !(config.frame_rate > 0.0) {
            return Err(Error::validation("toy encoder needs positive dim, n_mels and frame rate"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.n_mels as f64).sqrt();
        let projection = Array2::from_shape_fn((config.n_mels, config.dim), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(ToyEncoder { config, projection })
    }

    pub fn config(&self) -> &ToyEncoderConfig {
        &self.config
    }

    fn analyzer(&self, sample_rate: u32) -> LogMel {
        let hop = self.hop_samples(sample_rate);
        let win = (sample_rate as f64 * self.config.window_ms / 1000.0).round() as usize;
        let win = win.max(hop);
        LogMel::new(sample_rate, win.next_power_of_two(), win, hop, self.config.n_mels)
    }

    /// The log-mel features the projection is applied to, before normalization.
    pub fn features(&self, audio: &AudioBuffer) -> Vec<Vec<f64>> {
        let lm = self.analyzer(audio.sample_rate());
        lm.stft
            .power(audio.samples(), Framing::HopAligned)
            .iter()
            .map(|p| lm.bank.apply(p).into_iter().map(|e| (e + TOY_FEATURE_FLOOR).ln()).collect())
            .collect()
    }
}

impl EncoderBackend for ToyEncoder {
    fn name(&self) -> &str {
        "toy-logmel"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn frame_rate(&self) -> f64 {
        self.config.frame_rate
    }

    fn layer(&self) -> usize {
        self.config.layer
    }

    fn encode(&self, audio: &AudioBuffer) -> Result<EmbeddingSequence> {
        let feats = self.features(audio);
        if feats.is_empty() {
            return Err(Error::validation("audio shorter than one frame"));
        }
        let (t, m) = (feats.len(), self.config.n_mels);
        let mut x = Array2::from_shape_fn((t, m), |(i, j)| feats[i][j]);
        if self.config.mean_normalize {
            let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
            x -= &mean;
        }
        EmbeddingSequence::new(x.dot(&self.projection), self.config.frame_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::extract_embeddings;

    fn tone(seconds: f64) -> AudioBuffer {
        let n = (16000.0 * seconds) as usize;
        let s =
            (0..n).map(|i| (0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin()) as f32).collect();
        AudioBuffer::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_fifty_frames() {
        let enc = ToyEncoder::new(ToyEncoderConfig::default()).unwrap();
        let e = extract_embeddings(&tone(1.0), &enc).unwrap();
        assert!(e.len() == 49 || e.len() == 50);
        assert_eq!(e.dim(), 768);
    }

    #[test]
    fn deterministic_and_finite_on_silence() {
        let enc = ToyEncoder::new(ToyEncoderConfig::default()).unwrap();
        let a = extract_embeddings(&tone(0.5), &enc).unwrap();
        let b = extract_embeddings(&tone(0.5), &enc).unwrap();
        assert_eq!(a, b);
        let silent = AudioBuffer::new(vec![0.0; 8000], 16000).unwrap();
        let s = extract_embeddings(&silent, &enc).unwrap();
        assert!(s.frames().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_short_is_an_error() {
        let enc = ToyEncoder::new(ToyEncoderConfig::default()).unwrap();
        let a = AudioBuffer::new(vec![0.1; 100], 16000).unwrap();
        assert!(extract_embeddings(&a, &enc).is_err());
    }

    #[test]
    fn only_final_layer_available() {
        let cfg = ToyEncoderConfig { layer: 9, ..Default::default() };
        assert!(ToyEncoder::new(cfg).is_err());
    }
}
