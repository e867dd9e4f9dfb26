//! Corpus records, manifests, deterministic train/val/test splits and WAV I/O.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical corpus sample rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Default fraction of the corpus held out for testing.
pub const TEST_FRACTION: f64 = 0.13;
/// Default fraction of the remaining training pool held out for validation loss.
pub const VAL_FRACTION: f64 = 0.05;

/// How a record came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Natural,
    SimulatedGt,
    Clone,
}

/// One corpus record.
///
/// `nam_path` holds the primary recording: the murmur for the NAM corpus, or
/// the speech recording when the manifest describes a read-speech corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub nam_path: PathBuf,
    pub whisper_path: Option<PathBuf>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, nam_path: impl Into<PathBuf>, text: impl Into<String>) -> Self {
        Utterance {
            id: id.into(),
            nam_path: nam_path.into(),
            whisper_path: None,
            text: text.into(),
            speaker: None,
            source_id: None,
            origin: None,
        }
    }

    /// Duration of the primary recording, read from the WAV header.
    pub fn duration_s(&self) -> Result<f64> {
        let reader = hound::WavReader::open(&self.nam_path)
            .map_err(|e| Error::Audio { path: self.nam_path.clone(), message: e.to_string() })?;
        let spec = reader.spec();
        Ok(reader.duration() as f64 / spec.sample_rate as f64)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("utterance {} has empty text", self.id));
        }
        Ok(())
    }
}

/// Parses a manifest: one JSON object per line, blank lines ignored.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: lineno, message };
        let mut utt: Utterance = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        utt.text = utt.text.trim().to_string();
        utt.validate().map_err(parse_err)?;
        if !seen.insert(utt.id.clone()) {
            return Err(Error::validation(format!(
                "{}:{}: duplicate utterance id {:?}",
                path.display(),
                lineno,
                utt.id
            )));
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn save_manifest(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    for u in utterances {
        u.validate().map_err(Error::Validation)?;
        if !seen.insert(u.id.as_str()) {
            return Err(Error::validation(format!("duplicate utterance id {:?}", u.id)));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for u in utterances {
        let line = serde_json::to_string(u).expect("utterance serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn ids(list: &[Utterance]) -> Vec<&str> {
        list.iter().map(|u| u.id.as_str()).collect()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Split sizes `(train, val, test)` for `n` records.
///
/// Test takes `round(test_frac * n)`; validation takes `round(val_frac * (n - test))`
/// from what is left. Rounding is half-up.
pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> Result<(usize, usize, usize)> {
    if !(test_frac >= 0.0 && val_frac >= 0.0) || !test_frac.is_finite() || !val_frac.is_finite() {
        return Err(Error::validation("split fractions must be finite and non-negative"));
    }
    if test_frac + val_frac * (1.0 - test_frac) >= 1.0 {
        return Err(Error::validation(format!(
            "split fractions leave no training data (test {test_frac}, val {val_frac})"
        )));
    }
    let test = round_half_up(test_frac * n as f64).min(n);
    let val = round_half_up(val_frac * (n - test) as f64).min(n - test);
    Ok((n - test - val, val, test))
}

/// Deterministic random split. Each output list keeps the input order.
pub fn split_corpus(utterances: &[Utterance], test_frac: f64, val_frac: f64, seed: u64) -> Result<CorpusSplit> {
    if utterances.is_empty() {
        return Err(Error::validation("cannot split an empty corpus"));
    }
    let mut seen = HashSet::new();
    for u in utterances {
        if !seen.insert(u.id.as_str()) {
            return Err(Error::validation(format!("duplicate utterance id {:?}", u.id)));
        }
    }
    let n = utterances.len();
    let (_, n_val, n_test) = split_sizes(n, test_frac, val_frac)?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // 0 = train, 1 = val, 2 = test
    let mut bucket = vec![0u8; n];
    for &i in &order[..n_test] {
        bucket[i] = 2;
    }
    for &i in &order[n_test..n_test + n_val] {
        bucket[i] = 1;
    }
    let pick = |b: u8| -> Vec<Utterance> {
        utterances.iter().zip(&bucket).filter(|(_, &k)| k == b).map(|(u, _)| u.clone()).collect()
    };
    Ok(CorpusSplit { train: pick(0), val: pick(1), test: pick(2), seed })
}

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::validation("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::validation(format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Reads a WAV file, averaging channels down to mono.
pub fn read_audio(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let audio_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio { path: path.to_path_buf(), message: other.to_string() },
    };
    let reader = hound::WavReader::open(path).map_err(audio_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            reader.into_samples::<f32>().collect::<std::result::Result<_, _>>().map_err(audio_err)?
        }
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(audio_err)?
        }
    };
    let channels = spec.channels.max(1) as usize;
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|c| c.iter().sum::<f32>() / channels as f32).collect()
    };
    if mono.is_empty() {
        return Err(Error::validation(format!("{} contains no samples", path.display())));
    }
    let mono = mono.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM mono.
pub fn write_audio(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::validation("refusing to write an empty audio buffer"));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio { path: path.to_path_buf(), message: other.to_string() },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in &buffer.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utts(n: usize) -> Vec<Utterance> {
        (0..n).map(|i| Utterance::new(format!("u{i:03}"), format!("nam/u{i:03}.wav"), "some text")).collect()
    }

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn manifest_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let src = utts(3);
        save_manifest(&p, &src).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back, src);
    }

    #[test]
    fn manifest_missing_text_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"nam_path\":\"a.wav\",\"whisper_path\":null,\"text\":\"hi\"}\n\
             {\"id\":\"b\",\"nam_path\":\"b.wav\",\"whisper_path\":null}\n",
        )
        .unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let line = "{\"id\":\"a\",\"nam_path\":\"a.wav\",\"whisper_path\":null,\"text\":\"hi\"}\n";
        fs::write(&p, format!("{line}{line}")).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn split_sizes_for_full_corpus() {
        assert_eq!(split_sizes(421, 0.13, 0.05).unwrap(), (348, 18, 55));
        assert_eq!(split_sizes(1, 0.13, 0.05).unwrap(), (1, 0, 0));
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_corpus(&[], 0.13, 0.05, 1).is_err());
        assert!(split_corpus(&utts(4), -0.1, 0.05, 1).is_err());
        assert!(split_corpus(&utts(4), 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let all = utts(421);
        let a = split_corpus(&all, 0.13, 0.05, 7).unwrap();
        let b = split_corpus(&all, 0.13, 0.05, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (348, 18, 55));
        let mut ids: Vec<&str> = CorpusSplit::ids(&a.train);
        ids.extend(CorpusSplit::ids(&a.val));
        ids.extend(CorpusSplit::ids(&a.test));
        ids.sort();
        let mut want: Vec<&str> = CorpusSplit::ids(&all);
        want.sort();
        assert_eq!(ids, want);
        let c = split_corpus(&all, 0.13, 0.05, 8).unwrap();
        assert_ne!(CorpusSplit::ids(&a.test), CorpusSplit::ids(&c.test));
    }

    #[test]
    fn audio_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        let samples: Vec<f32> =
            (0..16000).map(|n| 0.8 * (2.0 * std::f32::consts::PI * 440.0 * n as f32 / 16000.0).sin()).collect();
        let buf = AudioBuffer::new(samples, SAMPLE_RATE).unwrap();
        write_audio(&buf, &p).unwrap();
        let back = read_audio(&p).unwrap();
        assert_eq!(back.sample_rate(), SAMPLE_RATE);
        assert_eq!(back.len(), 16000);
        let max_err = buf.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(max_err <= 2.0 / 32768.0, "max err {max_err}");
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let a = read_audio(&p).unwrap();
        assert_eq!(a.len(), 100);
        assert!((a.samples()[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn corrupt_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        fs::write(&p, b"RIFFxxxxWAVEjunk").unwrap();
        assert!(read_audio(&p).is_err());
    }

    #[test]
    fn empty_buffer_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let buf = AudioBuffer::new(vec![], SAMPLE_RATE).unwrap();
        assert!(write_audio(&buf, dir.path().join("e.wav")).is_err());
    }
}
