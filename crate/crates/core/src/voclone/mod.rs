//! Unit-to-speech vocoding and the two cloning pipelines built on it:
//! simulated ground-truth speech from whisper recordings, and murmur-voice
//! clones of a read-speech corpus.

pub mod toy;

use serde::{Deserialize, Serialize};

use crate::align::{fastdtw, warp_to_target, Metric};
use crate::corpus::{read_audio, AudioBuffer, Utterance};
use crate::encode::{extract_embeddings, quantize, Codebook, EmbeddingSequence, EncoderBackend, UnitSequence};
use crate::error::{Error, Result};

pub use toy::{unit_f0, ToyVocoder, ToyVocoderSettings, PERIOD_BASE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderConfig {
    pub num_embeddings: usize,
    pub embedding_dim: usize,
    pub model_input_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub speaker_ids: Vec<String>,
    pub train_steps: usize,
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        VocoderConfig {
            num_embeddings: 100,
            embedding_dim: 128,
            model_input_dim: 256,
            learning_rate: 2e-4,
            batch_size: 16,
            speaker_ids: vec!["ljspeech".into(), "syspin".into(), "nam".into(), "whisper".into()],
            train_steps: 8,
            seed: 1234,
        }
    }
}

impl VocoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_embeddings == 0 {
            return Err(Error::validation("num_embeddings must be positive"));
        }
        if self.model_input_dim < self.embedding_dim {
            return Err(Error::validation("model_input_dim must be at least embedding_dim"));
        }
        if self.speaker_ids.is_empty() {
            return Err(Error::validation("vocoder needs at least one speaker"));
        }
        let mut ids = self.speaker_ids.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.speaker_ids.len() {
            return Err(Error::validation("duplicate speaker ids"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::validation("learning_rate and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Vocoder input: discrete units or continuous embeddings.
#[derive(Debug, Clone, Copy)]
pub enum VocoderInput<'a> {
    Units(&'a UnitSequence),
    Embeddings(&'a EmbeddingSequence),
}

impl VocoderInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            VocoderInput::Units(u) => u.len(),
            VocoderInput::Embeddings(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_rate(&self) -> f64 {
        match self {
            VocoderInput::Units(u) => u.frame_rate(),
            VocoderInput::Embeddings(e) => e.frame_rate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub units: UnitSequence,
    pub audio: AudioBuffer,
    pub speaker: String,
}

pub trait VocoderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn config(&self) -> &VocoderConfig;
    fn is_trained(&self) -> bool;
    fn sample_rate(&self) -> u32;
    fn frame_rate(&self) -> f64;
    /// Updates the backend; `on_step(step, loss)` is called once per step.
    fn train(&mut self, examples: &[VocoderExample], on_step: &mut dyn FnMut(usize, f64)) -> Result<()>;
    /// Deterministic once trained; output holds exactly `T` hops of samples.
    fn synthesize(&self, input: VocoderInput<'_>, speaker: &str) -> Result<AudioBuffer>;
    /// Stable digest of the trained weights.
    fn checksum(&self) -> u64;
}

/// Checks the examples and trains `backend` on them.
pub fn train_vocoder(
    examples: &[VocoderExample],
    backend: &mut dyn VocoderBackend,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::validation("empty vocoder training set"));
    }
    let hop = backend.sample_rate() as f64 / backend.frame_rate();
    for (i, ex) in examples.iter().enumerate() {
        let frames = ex.audio.len() as f64 / hop;
        if (frames - ex.units.len() as f64).abs() > 1.0 + 1e-9 {
            return Err(Error::validation(format!(
                "example {i}: {} units vs {:.2} frames of audio",
                ex.units.len(),
                frames
            )));
        }
    }
    backend.train(examples, on_step)
}

/// Synthesizes `input` in `speaker`'s voice.
pub fn synthesize(input: VocoderInput<'_>, speaker: &str, backend: &dyn VocoderBackend) -> Result<AudioBuffer> {
    if !backend.is_trained() {
        return Err(Error::MissingDependency(format!("vocoder {} is untrained", backend.name())));
    }
    backend.synthesize(input, speaker)
}

/// Whisper audio to speech in `speaker`'s voice through quantized units.
pub fn simulate_ground_truth(
    whisper: &AudioBuffer,
    codebook: &Codebook,
    encoder: &dyn EncoderBackend,
    vocoder: &dyn VocoderBackend,
    speaker: &str,
) -> Result<(AudioBuffer, UnitSequence)> {
    let emb = extract_embeddings(whisper, encoder)?;
    let units = quantize(&emb, codebook)?;
    let audio = synthesize(VocoderInput::Units(&units), speaker, vocoder)?;
    Ok((audio, units))
}

#[derive(Debug, Clone)]
pub struct CloneItem {
    pub audio: AudioBuffer,
    pub units: UnitSequence,
    pub source: Utterance,
}

#[derive(Debug)]
pub struct CloneBatch {
    pub clones: Vec<CloneItem>,
    pub failures: Vec<(String, Error)>,
}

/// Re-voices every utterance of a speech corpus; failures are collected per utterance.
pub fn generate_clone_corpus(
    speech: &[Utterance],
    codebook: &Codebook,
    encoder: &dyn EncoderBackend,
    vocoder: &dyn VocoderBackend,
    speaker: &str,
) -> CloneBatch {
    let mut batch = CloneBatch { clones: Vec::new(), failures: Vec::new() };
    for utt in speech {
        let result =
            read_audio(&utt.nam_path).and_then(|audio| clone_audio(&audio, codebook, encoder, vocoder, speaker));
        match result {
            Ok((audio, units)) => batch.clones.push(CloneItem { audio, units, source: utt.clone() }),
            Err(e) => batch.failures.push((utt.id.clone(), e)),
        }
    }
    batch
}

/// Re-voices a single recording through quantized units.
pub fn clone_audio(
    audio: &AudioBuffer,
    codebook: &Codebook,
    encoder: &dyn EncoderBackend,
    vocoder: &dyn VocoderBackend,
    speaker: &str,
) -> Result<(AudioBuffer, UnitSequence)> {
    simulate_ground_truth(audio, codebook, encoder, vocoder, speaker)
}

/// NAM-side and speech-side embeddings on a common timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPair {
    pub source: EmbeddingSequence,
    pub target: EmbeddingSequence,
    pub aligned: bool,
    /// Source frame copied into each target frame.
    pub source_indices: Vec<usize>,
}

impl ParallelPair {
    /// Pairs sequences that already share a timeline.
    pub fn time_aligned(source: EmbeddingSequence, target: EmbeddingSequence) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::validation(format!(
                "time-aligned pair has {} vs {} frames",
                source.len(),
                target.len()
            )));
        }
        let source_indices = (0..source.len()).collect();
        Ok(ParallelPair { source, target, aligned: true, source_indices })
    }
}

/// FastDTW-aligns `clone` to `target`, then warps it onto the target timeline.
pub fn build_aligned_pairs(
    clone: &EmbeddingSequence,
    target: &EmbeddingSequence,
    radius: usize,
    metric: Metric,
) -> Result<ParallelPair> {
    let path = fastdtw(clone, target, radius, metric)?;
    let warped = warp_to_target(clone, &path, target.len())?;
    let mut source_indices = vec![usize::MAX; target.len()];
    let mut best = vec![f64::INFINITY; target.len()];
    for (&(i, j), &c) in path.pairs.iter().zip(&path.pair_costs) {
        if c < best[j] {
            best[j] = c;
            source_indices[j] = i;
        }
    }
    Ok(ParallelPair { source: warped, target: target.clone(), aligned: true, source_indices })
}
