use crate::corpus::{AudioBuffer, Utterance};
use crate::dsp::{cepstrum, Framing, LogMel};
use crate::error::{Error, Result};
use crate::toyworld::{render, Voice};

/// Speech recogniser used for intelligibility scoring.
pub trait Transcriber: Send + Sync {
    fn name(&self) -> &str;
    fn transcribe(&self, utterance: &Utterance, audio: &AudioBuffer) -> Result<String>;
}

/// Returns the reference text unchanged; for self-tests of the scoring path.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoTranscriber;

impl Transcriber for EchoTranscriber {
    fn name(&self) -> &str {
        "echo"
    }

    fn transcribe(&self, utterance: &Utterance, _audio: &AudioBuffer) -> Result<String> {
        Ok(utterance.text.clone())
    }
}

const ORDER: usize = 12;
/// Long enough to span a full cycle of the toy voices' pitch drift.
const STEADY_FRAMES: usize = 70;
const SILENCE_NATS: f64 = 3.5;

/// Audio-only recogniser for toy-world speech.
///
/// Each 20 ms frame is labelled with the nearest letter template (mel-cepstra
/// `c1..c11`) or as silence when its energy is more than `SILENCE_NATS` below
/// the loudest frame. Single-frame runs are absorbed into their left
/// neighbour, repeats collapse, and silences become word breaks.
#[derive(Debug)]
pub struct TemplateTranscriber {
    name: String,
    letters: Vec<char>,
    templates: Vec<Vec<f64>>,
    analyzer: LogMel,
}

impl TemplateTranscriber {
    /// Templates are the mean cepstra of steady letters rendered in `voice`.
    pub fn for_voice(voice: &Voice) -> Self {
        let analyzer = LogMel::new(crate::corpus::SAMPLE_RATE, 512, 400, 320, 80);
        let mut letters = Vec::new();
        let mut templates = Vec::new();
        for (i, c) in ('a'..='z').enumerate() {
            let plan = vec![Some(c); STEADY_FRAMES];
            let audio = render(&plan, voice, 0xABC0 + i as u64);
            let feats = features(&analyzer, audio.samples());
            let mid = &feats[2..STEADY_FRAMES - 2];
            let mut mean = vec![0.0; ORDER - 1];
            for f in mid {
                for (m, v) in mean.iter_mut().zip(&f.1) {
                    *m += v / mid.len() as f64;
                }
            }
            letters.push(c);
            templates.push(mean);
        }
        TemplateTranscriber { name: format!("template-{}", voice.name()), letters, templates, analyzer }
    }

    fn nearest(&self, c: &[f64]) -> char {
        let mut best = (f64::INFINITY, ' ');
        for (t, &l) in self.templates.iter().zip(&self.letters) {
            let d: f64 = t.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, l);
            }
        }
        best.1
    }

    pub fn transcribe_audio(&self, audio: &AudioBuffer) -> Result<String> {
        if audio.sample_rate() != crate::corpus::SAMPLE_RATE {
            return Err(Error::validation("template transcriber expects 16 kHz audio"));
        }
        let feats = features(&self.analyzer, audio.samples());
        if feats.is_empty() {
            return Ok(String::new());
        }
        let loudest = feats.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
        let labels: Vec<char> =
            feats.iter().map(|(e, c)| if *e < loudest - SILENCE_NATS { ' ' } else { self.nearest(c) }).collect();
        let mut runs: Vec<(char, usize)> = Vec::new();
        for l in labels {
            match runs.last_mut() {
                Some((c, n)) if *c == l => *n += 1,
                _ => runs.push((l, 1)),
            }
        }
        let mut merged: Vec<(char, usize)> = Vec::new();
        for (c, n) in runs {
            match merged.last_mut() {
                Some((pc, pn)) if n == 1 || *pc == c => *pn += n,
                _ => merged.push((c, n)),
            }
        }
        let text: String = merged.iter().map(|(c, _)| *c).collect();
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

/// Log energy and cepstra `c1..` per frame.
fn features(lm: &LogMel, samples: &[f32]) -> Vec<(f64, Vec<f64>)> {
    lm.frames(samples, Framing::HopAligned)
        .into_iter()
        .map(|f| {
            let energy = f.iter().map(|v| v.exp()).sum::<f64>().ln();
            (energy, cepstrum(&f, ORDER)[1..].to_vec())
        })
        .collect()
}

impl Transcriber for TemplateTranscriber {
    fn name(&self) -> &str {
        &self.name
    }

    fn transcribe(&self, _utterance: &Utterance, audio: &AudioBuffer) -> Result<String> {
        self.transcribe_audio(audio)
    }
}
