//! Synthetic letter-as-phone corpus for desk-scale runs.
//!
//! Every letter is a steady phone with three formants (plus a high noise band
//! for fricative letters); a space is silence. Utterances can be rendered in a
//! murmur voice (low-passed noise), a whisper voice (noise) or harmonic speech
//! voices. Murmur and whisper renderings of one utterance share their timing.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_audio, AudioBuffer, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Samples per timing frame (20 ms).
pub const FRAME_SAMPLES: usize = 320;

const WORDS: &[&str] = &[
    "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far", "it", "is", "terrible", "loss", "we", "see", "blue",
    "sky", "red", "sun", "big", "map", "hot", "tea", "cup", "she", "will", "go", "home", "now", "fish", "jump",
    "quick", "box", "zero", "very", "kind",
];

const FRICATIVES: &str = "cfhjkpqstxz";

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTemplate {
    /// `(centre_hz, bandwidth_hz, amplitude)` spectral peaks.
    pub peaks: Vec<(f64, f64, f64)>,
}

/// Formant template of a lowercase letter; `None` for anything else.
pub fn phone_template(letter: char) -> Option<PhoneTemplate> {
    if !letter.is_ascii_lowercase() {
        return None;
    }
    let idx = letter as u64 - 'a' as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x70F5_0000 + idx);
    let mut peaks = vec![
        (rng.gen_range(250.0..850.0), rng.gen_range(60.0..110.0), 1.0),
        (rng.gen_range(900.0..2400.0), rng.gen_range(80.0..140.0), rng.gen_range(0.4..0.8)),
        (rng.gen_range(2400.0..3600.0), rng.gen_range(100.0..180.0), rng.gen_range(0.15..0.4)),
    ];
    if FRICATIVES.contains(letter) {
        peaks.push((rng.gen_range(4000.0..6500.0), 700.0, rng.gen_range(0.3..0.6)));
    }
    Some(PhoneTemplate { peaks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Voice {
    Nam,
    Whisper,
    Speech { name: String, f0_hz: f64, formant_scale: f64 },
}

impl Voice {
    pub fn ljspeech() -> Self {
        Voice::Speech { name: "ljspeech".into(), f0_hz: 120.0, formant_scale: 1.0 }
    }

    pub fn syspin() -> Self {
        Voice::Speech { name: "syspin".into(), f0_hz: 190.0, formant_scale: 1.1 }
    }

    pub fn name(&self) -> &str {
        match self {
            Voice::Nam => "nam",
            Voice::Whisper => "whisper",
            Voice::Speech { name, .. } => name,
        }
    }

    fn peak_level(&self) -> f64 {
        match self {
            Voice::Nam => 0.05,
            Voice::Whisper => 0.1,
            Voice::Speech { .. } => 0.3,
        }
    }
}

/// Spectral envelope of `letter` in `voice` at `f` Hz; silence for `None`.
pub fn envelope(letter: Option<char>, voice: &Voice, f: f64) -> f64 {
    let Some(t) = letter.and_then(phone_template) else {
        return 0.0;
    };
    let scale = match voice {
        Voice::Speech { formant_scale, .. } => *formant_scale,
        _ => 1.0,
    };
    let mut h: f64 = t.peaks.iter().map(|&(c, bw, a)| a * (-0.5 * ((f - c * scale) / bw).powi(2)).exp()).sum();
    h += 0.01;
    if matches!(voice, Voice::Nam) {
        h /= 1.0 + (f / 2500.0).powi(4);
    }
    h
}

/// Per-frame phone labels (`None` = silence) for `text`.
pub fn plan_timing(text: &str, seed: u64) -> Vec<Option<char>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = vec![None; 4];
    for (w, word) in text.split_whitespace().enumerate() {
        if w > 0 {
            let gap = rng.gen_range(3..=5);
            frames.extend(std::iter::repeat_n(None, gap));
        }
        for c in word.chars().filter(|c| c.is_ascii_lowercase()) {
            let n = rng.gen_range(4..=7);
            frames.extend(std::iter::repeat_n(Some(c), n));
        }
    }
    frames.extend(std::iter::repeat_n(None, 4));
    frames
}

/// Renders a frame plan; `seed` drives the noise excitation.
pub fn render(plan: &[Option<char>], voice: &Voice, seed: u64) -> AudioBuffer {
    let sr = SAMPLE_RATE as f64;
    let len = plan.len() * FRAME_SAMPLES;
    let mut out = match voice {
        Voice::Speech { f0_hz, .. } => render_harmonic(plan, voice, *f0_hz, sr),
        _ => render_noise(plan, voice, seed, sr),
    };
    out.truncate(len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF100_0000);
    for v in out.iter_mut() {
        *v += 1e-4 * rng.gen_range(-1.0..1.0);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { voice.peak_level() / peak } else { 0.0 };
    let samples = out.iter().map(|v| (v * gain) as f32).collect();
    AudioBuffer::new(samples, SAMPLE_RATE).expect("finite samples")
}

fn render_harmonic(plan: &[Option<char>], voice: &Voice, f0: f64, sr: f64) -> Vec<f64> {
    let len = plan.len() * FRAME_SAMPLES;
    let max_h = ((sr / 2.0 - 200.0) / (f0 * 1.1)).floor() as usize;
    let centre = |t: usize| t as f64 * FRAME_SAMPLES as f64 + FRAME_SAMPLES as f64 / 2.0;
    let mut phase = vec![0.0f64; max_h + 1];
    let mut out = vec![0.0; len];
    let amps: Vec<Vec<f64>> =
        plan.iter().map(|&l| (0..=max_h).map(|h| envelope(l, voice, h as f64 * f0)).collect()).collect();
    for (n, o) in out.iter_mut().enumerate() {
        let pos = ((n as f64 - centre(0)) / FRAME_SAMPLES as f64).clamp(0.0, (plan.len() - 1) as f64);
        let t0 = pos.floor() as usize;
        let t1 = (t0 + 1).min(plan.len() - 1);
        let frac = pos - t0 as f64;
        let f = f0 * (1.0 + 0.08 * (2.0 * PI * n as f64 / (1.3 * sr)).sin());
        let mut s = 0.0;
        for h in 1..=max_h {
            let hf = h as f64 * f;
            if hf >= sr / 2.0 - 200.0 {
                break;
            }
            phase[h] = (phase[h] + 2.0 * PI * hf / sr) % (2.0 * PI);
            let a = amps[t0][h] * (1.0 - frac) + amps[t1][h] * frac;
            s += a * phase[h].sin();
        }
        *o = s;
    }
    out
}

fn render_noise(plan: &[Option<char>], voice: &Voice, seed: u64, sr: f64) -> Vec<f64> {
    let hop = FRAME_SAMPLES;
    let n_fft = 2 * hop;
    let window: Vec<f64> = (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos()).collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = plan.len() * hop + n_fft;
    let noise: Vec<f64> = (0..total).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut out = vec![0.0; total];
    // Frame t is centred on the middle of timing frame t.
    let offset = hop / 2;
    for (t, &letter) in plan.iter().enumerate() {
        let start = t * hop + offset;
        let mut buf: Vec<Complex64> = (0..n_fft).map(|i| Complex64::new(noise[start + i], 0.0)).collect();
        fwd.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let f = k.min(n_fft - k) as f64 * sr / n_fft as f64;
            *c *= envelope(letter, voice, f);
        }
        inv.process(&mut buf);
        for i in 0..n_fft {
            out[start + i] += buf[i].re / n_fft as f64 * window[i];
        }
    }
    out.drain(..n_fft / 2);
    out
}

/// Random sentence of `min_words..=max_words` words from the built-in vocabulary.
pub fn random_text(rng: &mut impl Rng, min_words: usize, max_words: usize) -> String {
    let n = rng.gen_range(min_words..=max_words);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldConfig {
    pub seed: u64,
    pub nam_utterances: usize,
    pub speech_utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        ToyWorldConfig { seed: 2024, nam_utterances: 20, speech_utterances: 20, min_words: 2, max_words: 4 }
    }
}

/// Files written by [`generate_corpus`].
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub nam_root: PathBuf,
    pub speech_root: PathBuf,
    pub nam_ids: Vec<String>,
    pub speech_ids: Vec<String>,
}

/// Writes `<root>/nam/{nam,whisper,text}` and `<root>/speech/{wav,text,speaker}`.
///
/// Every third speech utterance is in the `syspin` voice, the rest in `ljspeech`.
pub fn generate_corpus(root: impl AsRef<Path>, config: &ToyWorldConfig) -> Result<ToyCorpus> {
    if config.min_words == 0 || config.min_words > config.max_words {
        return Err(Error::validation("need 1 <= min_words <= max_words"));
    }
    let root = root.as_ref();
    let nam_root = root.join("nam");
    let speech_root = root.join("speech");
    for d in [
        nam_root.join("nam"),
        nam_root.join("whisper"),
        nam_root.join("text"),
        speech_root.join("wav"),
        speech_root.join("text"),
        speech_root.join("speaker"),
    ] {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let write_text = |path: PathBuf, text: &str| fs::write(&path, format!("{text}\n")).map_err(|e| Error::io(&path, e));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut nam_ids = Vec::new();
    for i in 0..config.nam_utterances {
        let id = format!("nam{i:04}");
        let text = random_text(&mut rng, config.min_words, config.max_words);
        let plan = plan_timing(&text, rng.gen());
        let (s1, s2): (u64, u64) = (rng.gen(), rng.gen());
        write_audio(&render(&plan, &Voice::Nam, s1), nam_root.join("nam").join(format!("{id}.wav")))?;
        write_audio(&render(&plan, &Voice::Whisper, s2), nam_root.join("whisper").join(format!("{id}.wav")))?;
        write_text(nam_root.join("text").join(format!("{id}.txt")), &text)?;
        nam_ids.push(id);
    }
    let mut speech_ids = Vec::new();
    for i in 0..config.speech_utterances {
        let id = format!("spk{i:04}");
        let text = random_text(&mut rng, config.min_words, config.max_words);
        let plan = plan_timing(&text, rng.gen());
        let voice = if i % 3 == 2 { Voice::syspin() } else { Voice::ljspeech() };
        write_audio(&render(&plan, &voice, rng.gen()), speech_root.join("wav").join(format!("{id}.wav")))?;
        write_text(speech_root.join("text").join(format!("{id}.txt")), &text)?;
        write_text(speech_root.join("speaker").join(format!("{id}.txt")), voice.name())?;
        speech_ids.push(id);
    }
    Ok(ToyCorpus { nam_root, speech_root, nam_ids, speech_ids })
}

/// Utterance record for an in-memory rendering, with no backing file.
pub fn utterance_for(id: &str, text: &str) -> Utterance {
    Utterance::new(id, PathBuf::new(), text)
}
