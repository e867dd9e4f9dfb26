use std::fs;
use std::path::{Path, PathBuf};

use m2s_core::align::Metric;
use m2s_core::corpus::{TEST_FRACTION, VAL_FRACTION};
use m2s_core::encode::{ToyEncoderConfig, DEFAULT_UNITS};
use m2s_core::seq2seq::{Seq2SeqConfig, TrainConfig};
use m2s_core::voclone::{ToyVocoderSettings, VocoderConfig};
use m2s_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides `paths.cache_dir`.
pub const CACHE_ENV: &str = "M2S_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Murmur corpus: `nam/<id>.wav`, optional `whisper/<id>.wav`, `text/<id>.txt`.
    pub corpus_root: PathBuf,
    /// Read-speech corpus: `wav/<id>.wav`, `text/<id>.txt`, optional `speaker/<id>.txt`.
    pub speech_root: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_root: PathBuf::from("corpus"),
            speech_root: None,
            work_dir: PathBuf::from("work"),
            cache_dir: PathBuf::from("work/cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: TEST_FRACTION, val_fraction: VAL_FRACTION, seed: 13 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub backend: String,
    #[serde(flatten)]
    pub toy: ToyEncoderConfig,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection { backend: "toy".into(), toy: ToyEncoderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig { k: DEFAULT_UNITS, seed: 0, max_iters: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub radius: usize,
    pub metric: String,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { radius: 1, metric: "euclidean".into() }
    }
}

impl AlignConfig {
    pub fn metric(&self) -> Result<Metric> {
        self.metric.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderSection {
    pub backend: String,
    #[serde(flatten)]
    pub config: VocoderConfig,
    pub toy: ToyVocoderSettings,
}

impl Default for VocoderSection {
    fn default() -> Self {
        VocoderSection { backend: "toy".into(), config: VocoderConfig::default(), toy: ToyVocoderSettings::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocoderInputMode {
    /// Feed predicted embeddings directly.
    Embeddings,
    /// Quantize predicted embeddings to units first.
    Units,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Voice of the final synthesized speech.
    pub speaker_id: String,
    /// Voice the simulated ground truth is rendered in.
    pub ground_truth_speaker: String,
    /// Voice the augmentation clones are rendered in.
    pub nam_speaker: String,
    pub vocoder_input: VocoderInputMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            speaker_id: "ljspeech".into(),
            ground_truth_speaker: "ljspeech".into(),
            nam_speaker: "nam".into(),
            vocoder_input: VocoderInputMode::Embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// `echo`, or `template:<voice>` with voice `ljspeech`, `syspin`, `whisper` or `nam`.
    pub transcriber: String,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { transcriber: "template:ljspeech".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum number of clones; all speech utterances when absent.
    pub cap: Option<usize>,
}

#[allow(clippy::derivable_impls)]
impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub split: SplitConfig,
    pub encoder: EncoderSection,
    pub codebook: CodebookConfig,
    pub align: AlignConfig,
    pub seq2seq: Seq2SeqConfig,
    pub train: TrainConfig,
    pub vocoder: VocoderSection,
    pub inference: InferenceConfig,
    pub evaluate: EvaluateConfig,
    pub augment: AugmentConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.corpus_root = base.join(&cfg.paths.corpus_root);
        cfg.paths.speech_root = cfg.paths.speech_root.map(|p| base.join(p));
        cfg.paths.work_dir = base.join(&cfg.paths.work_dir);
        cfg.paths.cache_dir = base.join(&cfg.paths.cache_dir);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.backend != "toy" {
            return Err(Error::MissingDependency(format!(
                "encoder backend {:?} is not available in this build (only \"toy\")",
                self.encoder.backend
            )));
        }
        if self.vocoder.backend != "toy" {
            return Err(Error::MissingDependency(format!(
                "vocoder backend {:?} is not available in this build (only \"toy\")",
                self.vocoder.backend
            )));
        }
        if self.seq2seq.embedding_dim != self.encoder.toy.dim {
            return Err(Error::validation(format!(
                "seq2seq.embedding_dim {} does not match encoder dim {}",
                self.seq2seq.embedding_dim, self.encoder.toy.dim
            )));
        }
        if self.codebook.k == 0 || self.codebook.k > self.vocoder.config.num_embeddings {
            return Err(Error::validation(format!(
                "codebook.k {} must be in 1..={} (vocoder num_embeddings)",
                self.codebook.k, self.vocoder.config.num_embeddings
            )));
        }
        self.align.metric()?;
        self.seq2seq.validate()?;
        self.train.validate()?;
        self.vocoder.config.validate()?;
        m2s_core::corpus::split_sizes(100, self.split.test_fraction, self.split.val_fraction)?;
        for spk in [&self.inference.speaker_id, &self.inference.ground_truth_speaker, &self.inference.nam_speaker] {
            if !self.vocoder.config.speaker_ids.contains(spk) {
                return Err(Error::validation(format!(
                    "speaker {spk:?} is not in vocoder.speaker_ids ({})",
                    self.vocoder.config.speaker_ids.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Small model and short schedule for CPU runs on the toy corpus.
    pub fn desk() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.seq2seq.encoder_layers = 2;
        cfg.seq2seq.decoder_layers = 2;
        cfg.seq2seq.hidden_dim = 32;
        cfg.seq2seq.conv_filter = 64;
        cfg.seq2seq.conv_kernel = 3;
        cfg.train.batch_size = 4;
        cfg.train.max_steps = 300;
        cfg.train.lr_init = 1e-3;
        cfg.train.anneal_steps = Vec::new();
        cfg.train.val_every = 50;
        cfg
    }

    /// Cache root, honouring [`CACHE_ENV`].
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.paths.cache_dir.clone(),
        }
    }

    /// Applies a `--seed` override to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.codebook.seed = seed;
        self.train.seed = seed;
        self.vocoder.config.seed = seed;
    }
}

/// Hex SHA-256 of a sequence of byte chunks, each length-prefixed.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    format!("{:x}", h.finalize())
}

/// Stable hash of any serializable config section.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    digest(&[&serde_json::to_vec(value).expect("config serializes")])
}
