//! Short-time spectral analysis shared by the toy encoder, the toy vocoder,
//! mel-cepstral distortion and the spectrogram plots.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// How frames are laid over the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framing {
    /// Frame `t` starts at `t * hop`; `floor(len / hop)` frames, tail zero-padded.
    HopAligned,
    /// Only frames that fit entirely inside the signal.
    Valid,
}

/// Windowed power spectra.
pub struct Stft {
    n_fft: usize,
    win_len: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("win_len", &self.win_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(n_fft: usize, win_len: usize, hop: usize) -> Self {
        assert!(win_len <= n_fft && hop > 0);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Stft { n_fft, win_len, hop, window: hann(win_len), fft }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn frame_count(&self, len: usize, framing: Framing) -> usize {
        match framing {
            Framing::HopAligned => len / self.hop,
            Framing::Valid if len < self.win_len => 0,
            Framing::Valid => (len - self.win_len) / self.hop + 1,
        }
    }

    /// Power spectrum `|X_k|^2` for bins `0..=n_fft/2` of every frame.
    pub fn power(&self, samples: &[f32], framing: Framing) -> Vec<Vec<f64>> {
        let frames = self.frame_count(samples.len(), framing);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = t * self.hop;
            for (k, slot) in buf.iter_mut().enumerate() {
                let v = if k < self.win_len {
                    samples.get(start + k).copied().unwrap_or(0.0) as f64 * self.window[k]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..self.n_bins()].iter().map(|c| c.norm_sqr()).collect());
        }
        out
    }
}

/// Triangular mel filterbank (HTK mel scale, unnormalized peaks of 1).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_bins` weights.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= c {
                            (f - lo) / (c - lo)
                        } else {
                            (hi - f) / (hi - c)
                        }
                    })
                    .collect()
            })
            .collect();
        MelFilterbank { weights, centers_hz: edges[1..=n_mels].to_vec() }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Floor applied before taking logs of band energies.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn log_energies(mel: &[f64]) -> Vec<f64> {
    mel.iter().map(|e| e.max(LOG_FLOOR).ln()).collect()
}

/// Orthonormal DCT-II of log mel energies, coefficients `0..order`.
pub fn cepstrum(log_mel: &[f64], order: usize) -> Vec<f64> {
    let n = log_mel.len() as f64;
    (0..order)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * log_mel.iter().enumerate().map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos()).sum::<f64>()
        })
        .collect()
}

/// Log-mel spectrogram helper bundling an STFT and a filterbank.
#[derive(Debug)]
pub struct LogMel {
    pub stft: Stft,
    pub bank: MelFilterbank,
}

impl LogMel {
    pub fn new(sample_rate: u32, n_fft: usize, win_len: usize, hop: usize, n_mels: usize) -> Self {
        LogMel {
            stft: Stft::new(n_fft, win_len, hop),
            bank: MelFilterbank::new(n_mels, n_fft, sample_rate, 0.0, sample_rate as f64 / 2.0),
        }
    }

    pub fn frames(&self, samples: &[f32], framing: Framing) -> Vec<Vec<f64>> {
        self.stft.power(samples, framing).iter().map(|p| log_energies(&self.bank.apply(p))).collect()
    }
}
