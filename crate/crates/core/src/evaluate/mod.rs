//! Mel-cepstral distortion and word/character error rates.

mod transcribe;

pub use transcribe::{EchoTranscriber, TemplateTranscriber, Transcriber};

use std::collections::BTreeMap;
use std::f64::consts::{LN_10, SQRT_2};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::align::{dtw_matrix, Metric};
use crate::corpus::{AudioBuffer, Utterance};
use crate::dsp::{cepstrum, Framing, LogMel};
use crate::error::{Error, Result};

/// Cepstral order including `c0`; `c0` is dropped before distances are taken.
pub const MCD_ORDER: usize = 25;
pub const MCD_WINDOW_S: f64 = 0.025;
pub const MCD_HOP_S: f64 = 0.010;
const MCD_MELS: usize = 80;

/// `10 * sqrt(2) / ln 10`.
pub const MCD_SCALE: f64 = 10.0 * SQRT_2 / LN_10;

/// Mel-cepstra `c1..c24` per 25 ms frame at a 10 ms hop.
///
/// Coefficients use the log-amplitude convention
/// `c_m = (2 / N) * sum_b ln|X_b| * cos(pi * m * (b + 1/2) / N)` over `N` mel bands.
pub fn mel_cepstra(audio: &AudioBuffer) -> Result<Vec<Vec<f64>>> {
    let sr = audio.sample_rate() as f64;
    let win = (sr * MCD_WINDOW_S).round() as usize;
    let hop = (sr * MCD_HOP_S).round() as usize;
    let lm = LogMel::new(audio.sample_rate(), win.next_power_of_two(), win, hop, MCD_MELS);
    let frames = lm.frames(audio.samples(), Framing::Valid);
    if frames.is_empty() {
        return Err(Error::validation(format!(
            "audio of {} samples is shorter than one {win}-sample analysis frame",
            audio.len()
        )));
    }
    // Orthonormal DCT of ln power -> (2/N) DCT of ln amplitude.
    let scale = 1.0 / (2.0 * MCD_MELS as f64).sqrt();
    Ok(frames.iter().map(|f| cepstrum(f, MCD_ORDER)[1..].iter().map(|c| c * scale).collect()).collect())
}

/// DTW-aligned mean of `MCD_SCALE * ||a_i - b_j||` over the path.
pub fn mcd_from_cepstra(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let to_matrix = |x: &[Vec<f64>]| -> Result<Array2<f64>> {
        let d = x.first().map_or(0, Vec::len);
        Array2::from_shape_vec((x.len(), d), x.concat()).map_err(|e| Error::shape(e.to_string()))
    };
    let (a, b) = (to_matrix(a)?, to_matrix(b)?);
    let path = dtw_matrix(a.view(), b.view(), Metric::Euclidean)?;
    Ok(MCD_SCALE * path.cost / path.pairs.len() as f64)
}

pub fn compute_mcd(reference: &AudioBuffer, synthesized: &AudioBuffer) -> Result<f64> {
    if reference.sample_rate() != synthesized.sample_rate() {
        return Err(Error::validation(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate(),
            synthesized.sample_rate()
        )));
    }
    mcd_from_cepstra(&mel_cepstra(reference)?, &mel_cepstra(synthesized)?)
}

/// Lowercases, drops punctuation other than apostrophes and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let kept: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || *c == '\'' || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + (x != y) as usize).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit count and reference length, for pooling across utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub edits: usize,
    pub reference_len: usize,
}

impl ErrorCounts {
    pub fn rate_pct(&self) -> f64 {
        100.0 * self.edits as f64 / self.reference_len as f64
    }

    fn add(&mut self, other: ErrorCounts) {
        self.edits += other.edits;
        self.reference_len += other.reference_len;
    }
}

pub fn word_errors(reference: &str, hypothesis: &str) -> Result<ErrorCounts> {
    let r = normalize_text(reference);
    let h = normalize_text(hypothesis);
    let rw: Vec<&str> = r.split_whitespace().collect();
    let hw: Vec<&str> = h.split_whitespace().collect();
    if rw.is_empty() {
        return Err(Error::validation("reference is empty after normalization"));
    }
    Ok(ErrorCounts { edits: edit_distance(&rw, &hw), reference_len: rw.len() })
}

pub fn char_errors(reference: &str, hypothesis: &str) -> Result<ErrorCounts> {
    let rc: Vec<char> = normalize_text(reference).chars().collect();
    let hc: Vec<char> = normalize_text(hypothesis).chars().collect();
    if rc.is_empty() {
        return Err(Error::validation("reference is empty after normalization"));
    }
    Ok(ErrorCounts { edits: edit_distance(&rc, &hc), reference_len: rc.len() })
}

pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(word_errors(reference, hypothesis)?.rate_pct())
}

pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(char_errors(reference, hypothesis)?.rate_pct())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub mcd_db: f64,
    pub wer_pct: f64,
    pub cer_pct: f64,
    pub reference: String,
    pub hypothesis: String,
    pub word: ErrorCounts,
    pub char: ErrorCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcd_db: f64,
    pub wer_pct: f64,
    pub cer_pct: f64,
    pub transcriber_name: String,
    pub per_utterance: Vec<UtteranceScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Flat table: one row per utterance followed by a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let row =
            |w: &mut csv::Writer<Vec<u8>>, id: &str, m: f64, wer: f64, cer: f64, wc: ErrorCounts, cc: ErrorCounts| {
                w.write_record([
                    id.to_string(),
                    format!("{m:.6}"),
                    format!("{wer:.6}"),
                    format!("{cer:.6}"),
                    wc.edits.to_string(),
                    wc.reference_len.to_string(),
                    cc.edits.to_string(),
                    cc.reference_len.to_string(),
                ])
                .expect("in-memory write");
            };
        w.write_record(["id", "mcd_db", "wer_pct", "cer_pct", "word_edits", "ref_words", "char_edits", "ref_chars"])
            .expect("in-memory write");
        let (mut wt, mut ct) = (ErrorCounts::default(), ErrorCounts::default());
        for u in &self.per_utterance {
            row(&mut w, &u.id, u.mcd_db, u.wer_pct, u.cer_pct, u.word, u.char);
            wt.add(u.word);
            ct.add(u.char);
        }
        row(&mut w, "TOTAL", self.mcd_db, self.wer_pct, self.cer_pct, wt, ct);
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Scores every test utterance; WER/CER are pooled over edits, MCD is averaged.
pub fn evaluate_testset(
    test: &[Utterance],
    synthesized: &BTreeMap<String, AudioBuffer>,
    references: &BTreeMap<String, AudioBuffer>,
    transcriber: &dyn Transcriber,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::validation("empty test set"));
    }
    let missing: Vec<String> = test
        .iter()
        .flat_map(|u| {
            let mut m = Vec::new();
            if !synthesized.contains_key(&u.id) {
                m.push(format!("{} (synthesized)", u.id));
            }
            if !references.contains_key(&u.id) {
                m.push(format!("{} (reference)", u.id));
            }
            m
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!("missing audio for: {}", missing.join(", "))));
    }
    let mut rows = Vec::with_capacity(test.len());
    let (mut words, mut chars) = (ErrorCounts::default(), ErrorCounts::default());
    let mut mcd_sum = 0.0;
    for utt in test {
        let syn = &synthesized[&utt.id];
        let mcd = compute_mcd(&references[&utt.id], syn)?;
        let hyp = transcriber.transcribe(utt, syn)?;
        let w = word_errors(&utt.text, &hyp)?;
        let c = char_errors(&utt.text, &hyp)?;
        words.add(w);
        chars.add(c);
        mcd_sum += mcd;
        rows.push(UtteranceScore {
            id: utt.id.clone(),
            mcd_db: mcd,
            wer_pct: w.rate_pct(),
            cer_pct: c.rate_pct(),
            reference: normalize_text(&utt.text),
            hypothesis: normalize_text(&hyp),
            word: w,
            char: c,
        });
    }
    Ok(EvalReport {
        mcd_db: mcd_sum / test.len() as f64,
        wer_pct: words.rate_pct(),
        cer_pct: chars.rate_pct(),
        transcriber_name: transcriber.name().to_string(),
        per_utterance: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_deletion_over_five_words() {
        assert_eq!(word_error_rate("it is a terrible loss", "it is terrible loss").unwrap(), 20.0);
        assert_eq!(char_error_rate("ab", "b").unwrap(), 50.0);
        assert_eq!(word_error_rate("Hello, World!", "hello world").unwrap(), 0.0);
        assert_eq!(word_error_rate("a b", "").unwrap(), 100.0);
        assert!(word_error_rate(" ?! ", "x").is_err());
    }

    #[test]
    fn normalization_keeps_apostrophes() {
        assert_eq!(normalize_text("  Don't   STOP-now. "), "don't stopnow");
    }

    #[test]
    fn insertions_can_exceed_one_hundred_percent() {
        assert_eq!(word_error_rate("a", "b c d").unwrap(), 300.0);
    }
}
