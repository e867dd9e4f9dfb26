//! Deterministic oscillator-bank vocoder.
//!
//! Unit `k` is rendered as a harmonic series with period `PERIOD_BASE + k`
//! samples (fundamental `sample_rate / (PERIOD_BASE + k)` Hz) under a learned
//! 80-band log-power envelope. Speakers add a learned per-band offset. Frames
//! are cross-faded with a 40 ms periodic Hann window at a 20 ms hop and every
//! harmonic keeps a global phase, so a constant unit gives an exactly periodic
//! waveform.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{VocoderBackend, VocoderConfig, VocoderExample, VocoderInput};
use crate::corpus::AudioBuffer;
use crate::dsp::{hz_to_mel, Framing, LogMel};
use crate::encode::Codebook;
use crate::encode::TOY_FEATURE_FLOOR;
use crate::error::{Error, Result};

/// Period in samples of unit 0.
pub const PERIOD_BASE: usize = 160;

const N_MELS: usize = 80;
const MAX_HARMONIC_HZ: f64 = 7600.0;
const MIN_GAIN: f64 = -40.0;

/// Fundamental frequency used for unit `k`.
pub fn unit_f0(k: u32, sample_rate: u32) -> f64 {
    sample_rate as f64 / (PERIOD_BASE + k as usize) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyVocoderSettings {
    pub sample_rate: u32,
    pub frame_rate: f64,
    pub window_ms: f64,
    pub calibration_iters: usize,
    /// Softmax temperature over relative centroid distances in embedding mode.
    pub embedding_temperature: f64,
}

impl Default for ToyVocoderSettings {
    fn default() -> Self {
        ToyVocoderSettings {
            sample_rate: crate::corpus::SAMPLE_RATE,
            frame_rate: crate::encode::FRAME_RATE,
            window_ms: 25.0,
            calibration_iters: 8,
            embedding_temperature: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyVocoder {
    config: VocoderConfig,
    settings: ToyVocoderSettings,
    /// Target log-mel envelope per unit (`num_embeddings x 80`).
    envelope: Array2<f64>,
    /// Calibrated synthesis gains per unit.
    gain: Array2<f64>,
    /// Per-speaker additive log-mel offsets, in `config.speaker_ids` order.
    offsets: Array2<f64>,
    centroids: Option<Array2<f64>>,
    trained: bool,
    loss_history: Vec<f64>,
}

impl ToyVocoder {
    pub fn new(config: VocoderConfig, settings: ToyVocoderSettings) -> Result<Self> {
        config.validate()?;
        if !(settings.frame_rate > 0.0) || settings.sample_rate == 0 {
            return Err(Error::validation("toy vocoder needs positive rates"));
        }
        let k = config.num_embeddings;
        let s = config.speaker_ids.len();
        Ok(ToyVocoder {
            envelope: Array2::zeros((k, N_MELS)),
            gain: Array2::zeros((k, N_MELS)),
            offsets: Array2::zeros((s, N_MELS)),
            centroids: None,
            trained: false,
            loss_history: Vec::new(),
            config,
            settings,
        })
    }

    pub fn settings(&self) -> &ToyVocoderSettings {
        &self.settings
    }

    /// Loss before training followed by the loss after each step.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// Learned log-mel envelope of `unit`.
    pub fn envelope(&self, unit: u32) -> Option<Vec<f64>> {
        ((unit as usize) < self.config.num_embeddings).then(|| self.envelope.row(unit as usize).to_vec())
    }

    /// Centroids used to interpret embedding-mode input.
    pub fn set_codebook(&mut self, codebook: &Codebook) -> Result<()> {
        if codebook.k() > self.config.num_embeddings {
            return Err(Error::validation(format!(
                "codebook has {} units, vocoder holds {}",
                codebook.k(),
                self.config.num_embeddings
            )));
        }
        self.centroids = Some(codebook.centroids().clone());
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (self.settings.sample_rate as f64 / self.settings.frame_rate).round() as usize
    }

    fn analyzer(&self) -> LogMel {
        let hop = self.hop();
        let win = ((self.settings.sample_rate as f64 * self.settings.window_ms / 1000.0).round() as usize).max(hop);
        LogMel::new(self.settings.sample_rate, win.next_power_of_two(), win, hop, N_MELS)
    }

    /// `ln(E + floor)` band energies per frame, matching the toy encoder's features.
    pub fn analyze(&self, samples: &[f32]) -> Vec<Vec<f64>> {
        let lm = self.analyzer();
        lm.stft
            .power(samples, Framing::HopAligned)
            .iter()
            .map(|p| lm.bank.apply(p).into_iter().map(|e| (e + TOY_FEATURE_FLOOR).ln()).collect())
            .collect()
    }

    fn speaker_index(&self, speaker: &str) -> Result<usize> {
        self.config.speaker_ids.iter().position(|s| s == speaker).ok_or_else(|| {
            Error::validation(format!("unknown speaker {speaker:?}; available: {}", self.config.speaker_ids.join(", ")))
        })
    }

    /// Renders frames given `(period_samples, log gains)`.
    fn render(&self, frames: &[(usize, Array1<f64>)]) -> Vec<f32> {
        let sr = self.settings.sample_rate as f64;
        let hop = self.hop();
        let len = frames.len() * hop;
        let win_len = 2 * hop;
        let window: Vec<f64> = (0..win_len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win_len as f64).cos()).collect();
        let analysis_win = ((sr * self.settings.window_ms / 1000.0).round() as usize).max(hop);
        let lm = self.analyzer();
        let centres_mel: Vec<f64> = lm.bank.centers_hz().iter().map(|&f| hz_to_mel(f)).collect();

        let mut acc = vec![0.0f64; len];
        let mut wsum = vec![0.0f64; len];
        for (t, (period, gains)) in frames.iter().enumerate() {
            let period = *period;
            let mut cycle = vec![0.0f64; period];
            let f0 = sr / period as f64;
            let mut h = 1;
            while h as f64 * f0 < MAX_HARMONIC_HZ {
                let g = interp(&centres_mel, gains.as_slice().expect("contiguous"), hz_to_mel(h as f64 * f0));
                let a = (0.5 * g).exp();
                for (m, c) in cycle.iter_mut().enumerate() {
                    *c += a * (2.0 * PI * ((h * m) % period) as f64 / period as f64).sin();
                }
                h += 1;
            }
            let centre = t * hop + analysis_win / 2;
            let start = centre as isize - hop as isize;
            for (i, w) in window.iter().enumerate() {
                let n = start + i as isize;
                if n < 0 || n as usize >= len {
                    continue;
                }
                let n = n as usize;
                acc[n] += w * cycle[n % period];
                wsum[n] += w;
            }
        }
        acc.iter().zip(&wsum).map(|(a, w)| if *w > 1e-9 { (a / w).clamp(-1.0, 1.0) as f32 } else { 0.0 }).collect()
    }

    fn period(&self, unit: usize) -> usize {
        PERIOD_BASE + unit
    }

    /// Fits synthesis gains so that analysing a steady unit reproduces its envelope.
    fn calibrate(&mut self) {
        const STEADY: usize = 6;
        let k = self.config.num_embeddings;
        for u in 0..k {
            let target = self.envelope.row(u).to_owned();
            let mut g = target.clone() - 8.0;
            for _ in 0..self.settings.calibration_iters {
                let frames: Vec<(usize, Array1<f64>)> = (0..STEADY).map(|_| (self.period(u), g.clone())).collect();
                let audio = self.render(&frames);
                let feats = self.analyze(&audio);
                let mut measured = Array1::<f64>::zeros(N_MELS);
                for f in &feats[1..STEADY - 1] {
                    measured += &Array1::from(f.clone());
                }
                measured /= (STEADY - 2) as f64;
                let step = (&target - &measured).mapv(|d| d.clamp(-4.0, 4.0));
                g = (g + step).mapv(|v| v.max(MIN_GAIN));
            }
            self.gain.row_mut(u).assign(&g);
        }
    }

    fn frame_gains(&self, input: VocoderInput<'_>) -> Result<Vec<(usize, Array1<f64>)>> {
        match input {
            VocoderInput::Units(units) => units
                .units
                .iter()
                .map(|&u| {
                    let u = u as usize;
                    if u >= self.config.num_embeddings {
                        return Err(Error::validation(format!(
                            "unit {u} outside vocoder range 0..{}",
                            self.config.num_embeddings
                        )));
                    }
                    Ok((self.period(u), self.gain.row(u).to_owned()))
                })
                .collect(),
            VocoderInput::Embeddings(emb) => {
                let c = self.centroids.as_ref().ok_or_else(|| {
                    Error::MissingDependency("embedding-mode synthesis needs a codebook on the vocoder".into())
                })?;
                if c.ncols() != emb.dim() {
                    return Err(Error::shape(format!(
                        "embedding dim {} does not match vocoder codebook dim {}",
                        emb.dim(),
                        c.ncols()
                    )));
                }
                let tau = self.settings.embedding_temperature;
                Ok(emb
                    .frames()
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let d: Vec<f64> = c
                            .rows()
                            .into_iter()
                            .map(|r| r.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                            .collect();
                        let (best, dmin) =
                            d.iter()
                                .enumerate()
                                .fold((0, f64::INFINITY), |(bi, bd), (i, &v)| if v < bd { (i, v) } else { (bi, bd) });
                        let mean = d.iter().sum::<f64>() / d.len() as f64;
                        let w: Vec<f64> =
                            d.iter()
                                .map(|&v| {
                                    if mean > 0.0 {
                                        (-(v - dmin) / (mean * tau)).exp()
                                    } else {
                                        (v == dmin) as u8 as f64
                                    }
                                })
                                .collect();
                        let total: f64 = w.iter().sum();
                        let mut g = Array1::<f64>::zeros(N_MELS);
                        for (i, wi) in w.iter().enumerate() {
                            if *wi > 0.0 {
                                g.scaled_add(wi / total, &self.gain.row(i));
                            }
                        }
                        (self.period(best), g)
                    })
                    .collect())
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ToyMeta {
            config: self.config.clone(),
            settings: self.settings.clone(),
            trained: self.trained,
            loss_history: self.loss_history.clone(),
            centroid_shape: self.centroids.as_ref().map(|c| c.dim()),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let arrays = [Some(&self.envelope), Some(&self.gain), Some(&self.offsets), self.centroids.as_ref()];
        for a in arrays.into_iter().flatten() {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("vocoder checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("truncated"))?;
        let meta: ToyMeta = serde_json::from_slice(&bytes[20..meta_end]).map_err(|e| fmt(&e.to_string()))?;
        let mut pos = meta_end;
        let mut take = |shape: (usize, usize)| -> Result<Array2<f64>> {
            let end = pos + shape.0 * shape.1 * 8;
            if end > bytes.len() {
                return Err(fmt("truncated payload"));
            }
            let v = bytes[pos..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            pos = end;
            Array2::from_shape_vec(shape, v).map_err(|e| fmt(&e.to_string()))
        };
        let mut voc = ToyVocoder::new(meta.config, meta.settings)?;
        voc.envelope = take(voc.envelope.dim())?;
        voc.gain = take(voc.gain.dim())?;
        voc.offsets = take(voc.offsets.dim())?;
        voc.centroids = meta.centroid_shape.map(&mut take).transpose()?;
        if pos != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        voc.trained = meta.trained;
        voc.loss_history = meta.loss_history;
        Ok(voc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const MAGIC: &[u8; 8] = b"M2SVOC\0\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ToyMeta {
    config: VocoderConfig,
    settings: ToyVocoderSettings,
    trained: bool,
    loss_history: Vec<f64>,
    centroid_shape: Option<(usize, usize)>,
}

/// Piecewise-linear interpolation of `ys` at `x` over ascending `xs`, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let f = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - f) + ys[i] * f
}

impl VocoderBackend for ToyVocoder {
    fn name(&self) -> &str {
        "toy-oscillator"
    }

    fn config(&self) -> &VocoderConfig {
        &self.config
    }

    fn is_trained(&self) -> bool {
        self.trained
    }

    fn sample_rate(&self) -> u32 {
        self.settings.sample_rate
    }

    fn frame_rate(&self) -> f64 {
        self.settings.frame_rate
    }

    /// Alternating least squares on per-unit envelopes and per-speaker offsets
    /// against the analysed training audio, one sweep per step, then calibration.
    fn train(&mut self, examples: &[VocoderExample], on_step: &mut dyn FnMut(usize, f64)) -> Result<()> {
        let mut frames: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for ex in examples {
            let s = self.speaker_index(&ex.speaker)?;
            if ex.audio.sample_rate() != self.settings.sample_rate {
                return Err(Error::validation(format!(
                    "training audio at {} Hz, vocoder runs at {} Hz",
                    ex.audio.sample_rate(),
                    self.settings.sample_rate
                )));
            }
            let feats = self.analyze(ex.audio.samples());
            for (t, &u) in ex.units.units.iter().enumerate().take(feats.len()) {
                if u as usize >= self.config.num_embeddings {
                    return Err(Error::validation(format!("unit {u} outside vocoder range")));
                }
                frames.push((u as usize, s, feats[t].clone()));
            }
        }
        let (k, ns) = (self.config.num_embeddings, self.config.speaker_ids.len());
        let mut env = Array2::<f64>::zeros((k, N_MELS));
        let mut off = Array2::<f64>::zeros((ns, N_MELS));
        let loss = |env: &Array2<f64>, off: &Array2<f64>| -> f64 {
            let mut total = 0.0;
            for (u, s, f) in &frames {
                for b in 0..N_MELS {
                    let d = env[[*u, b]] + off[[*s, b]] - f[b];
                    total += d * d;
                }
            }
            total / (frames.len() * N_MELS) as f64
        };
        let mut history = vec![loss(&env, &off)];
        let mut seen = vec![false; k];
        for step in 1..=self.config.train_steps {
            let mut sum = Array2::<f64>::zeros((k, N_MELS));
            let mut count = vec![0usize; k];
            for (u, s, f) in &frames {
                for b in 0..N_MELS {
                    sum[[*u, b]] += f[b] - off[[*s, b]];
                }
                count[*u] += 1;
            }
            let mut global = Array1::<f64>::zeros(N_MELS);
            for (u, &c) in count.iter().enumerate() {
                if c > 0 {
                    env.row_mut(u).assign(&(&sum.row(u) / c as f64));
                    global += &sum.row(u);
                    seen[u] = true;
                }
            }
            global /= frames.len() as f64;
            for u in 0..k {
                if !seen[u] {
                    env.row_mut(u).assign(&global);
                }
            }
            let mut osum = Array2::<f64>::zeros((ns, N_MELS));
            let mut ocount = vec![0usize; ns];
            for (u, s, f) in &frames {
                for b in 0..N_MELS {
                    osum[[*s, b]] += f[b] - env[[*u, b]];
                }
                ocount[*s] += 1;
            }
            for (s, &c) in ocount.iter().enumerate() {
                if c > 0 {
                    off.row_mut(s).assign(&(&osum.row(s) / c as f64));
                }
            }
            let l = loss(&env, &off);
            on_step(step, l);
            history.push(l);
        }
        self.envelope = env;
        self.offsets = off;
        self.loss_history = history;
        self.calibrate();
        self.trained = true;
        Ok(())
    }

    fn synthesize(&self, input: VocoderInput<'_>, speaker: &str) -> Result<AudioBuffer> {
        if !self.trained {
            return Err(Error::MissingDependency("vocoder has not been trained".into()));
        }
        let s = self.speaker_index(speaker)?;
        if input.is_empty() {
            return Err(Error::validation("cannot synthesize an empty sequence"));
        }
        let mut frames = self.frame_gains(input)?;
        for (_, g) in frames.iter_mut() {
            *g += &self.offsets.row(s);
        }
        AudioBuffer::new(self.render(&frames), self.settings.sample_rate)
    }

    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for a in [&self.envelope, &self.gain, &self.offsets] {
            for v in a.iter() {
                for b in v.to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
