use std::collections::BTreeMap;

use m2s_core::corpus::{AudioBuffer, Utterance, SAMPLE_RATE};
use m2s_core::evaluate::{
    char_error_rate, compute_mcd, evaluate_testset, mcd_from_cepstra, word_error_rate, EchoTranscriber,
    TemplateTranscriber, Transcriber, MCD_SCALE,
};
use m2s_core::toyworld::{plan_timing, random_text, render, Voice};
use m2s_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook full-matrix Levenshtein, independent of the library's rolling rows.
fn oracle_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "cat", "dog", "it's"]).prop_map(String::from), 1..=8)
}

proptest! {
    #[test]
    fn wer_matches_dp_oracle(r in words(), h in prop::collection::vec(prop::sample::select(vec!["a", "b", "cat", "dog", "it's"]).prop_map(String::from), 0..=8)) {
        let expect = 100.0 * oracle_distance(&r, &h) as f64 / r.len() as f64;
        let got = word_error_rate(&r.join(" "), &h.join(" ")).unwrap();
        prop_assert!((got - expect).abs() < 1e-12);
        prop_assert_eq!(word_error_rate(&r.join(" "), &r.join(" ")).unwrap(), 0.0);
    }

    #[test]
    fn cer_matches_dp_oracle(r in "[ab' ]{0,11}[ab]", h in "[abc ]{0,12}") {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        let (rn, hn) = (norm(&r), norm(&h));
        let rc: Vec<char> = rn.chars().collect();
        let hc: Vec<char> = hn.chars().collect();
        let expect = 100.0 * oracle_distance(&rc, &hc) as f64 / rc.len() as f64;
        let got = char_error_rate(&r, &h).unwrap();
        prop_assert!((got - expect).abs() < 1e-12);
        prop_assert!(got >= 0.0);
    }
}

#[test]
fn mcd_closed_form_on_injected_cepstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base: Vec<f64> = (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect();
    for delta in [0.01, 0.3, 1.7] {
        let a = vec![base.clone(); 7];
        let b: Vec<Vec<f64>> = (0..7).map(|_| base.iter().map(|v| v + delta).collect()).collect();
        let expect = (10.0 * 2f64.sqrt() / 10f64.ln()) * (24.0 * delta * delta as f64).sqrt();
        let got = mcd_from_cepstra(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }
    assert!((MCD_SCALE - 6.141_851_463_713_754).abs() < 1e-12);
}

fn tone(len: usize, f: f64) -> AudioBuffer {
    let s = (0..len)
        .map(|n| (0.3 * (2.0 * std::f64::consts::PI * f * n as f64 / SAMPLE_RATE as f64).sin()) as f32)
        .collect();
    AudioBuffer::new(s, SAMPLE_RATE).unwrap()
}

#[test]
fn mcd_identity_and_errors() {
    let plan = plan_timing("blue sky", 3);
    let a = render(&plan, &Voice::ljspeech(), 1);
    assert_eq!(compute_mcd(&a, &a).unwrap(), 0.0);
    let other = render(&plan, &Voice::Whisper, 1);
    assert!(compute_mcd(&a, &other).unwrap() > 0.0);
    let short = AudioBuffer::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
    assert!(compute_mcd(&short, &a).is_err());
    let resampled = AudioBuffer::new(a.samples().to_vec(), 8000).unwrap();
    assert!(compute_mcd(&a, &resampled).is_err());
}

#[test]
fn mcd_ignores_short_trailing_silence() {
    let plan = plan_timing("red sun", 9);
    let a = render(&plan, &Voice::ljspeech(), 4);
    let b = render(&plan, &Voice::syspin(), 4);
    let base = compute_mcd(&a, &b).unwrap();
    let mut padded = b.samples().to_vec();
    padded.extend(std::iter::repeat(0.0).take(150));
    let b2 = AudioBuffer::new(padded, SAMPLE_RATE).unwrap();
    let shifted = compute_mcd(&a, &b2).unwrap();
    assert!((base - shifted).abs() <= 0.1, "{base} vs {shifted}");
}

struct Silent;

impl Transcriber for Silent {
    fn name(&self) -> &str {
        "silent"
    }
    fn transcribe(&self, _: &Utterance, _: &AudioBuffer) -> Result<String> {
        Ok(String::new())
    }
}

struct Fixed(BTreeMap<String, String>);

impl Transcriber for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }
    fn transcribe(&self, u: &Utterance, _: &AudioBuffer) -> Result<String> {
        Ok(self.0[&u.id].clone())
    }
}

fn set(n: usize) -> (Vec<Utterance>, BTreeMap<String, AudioBuffer>) {
    let mut utts = Vec::new();
    let mut audio = BTreeMap::new();
    for i in 0..n {
        let id = format!("u{i}");
        audio.insert(id.clone(), tone(4000 + 320 * i, 200.0 + 50.0 * i as f64));
        utts.push(Utterance::new(&id, "", "it is a terrible loss"));
    }
    (utts, audio)
}

#[test]
fn identity_report_is_all_zero() {
    let (utts, audio) = set(1);
    let r = evaluate_testset(&utts, &audio, &audio, &EchoTranscriber).unwrap();
    assert_eq!((r.mcd_db, r.wer_pct, r.cer_pct), (0.0, 0.0, 0.0));
    assert_eq!(r.per_utterance.len(), 1);
    assert_eq!(r.transcriber_name, "echo");
}

#[test]
fn error_rates_are_pooled() {
    let (utts, audio) = set(2);
    let hyps = BTreeMap::from([
        ("u0".to_string(), "it is a terrible loss".to_string()),
        ("u1".to_string(), "it is terrible loss".to_string()),
    ]);
    let r = evaluate_testset(&utts, &audio, &audio, &Fixed(hyps)).unwrap();
    assert_eq!(r.per_utterance[0].wer_pct, 0.0);
    assert_eq!(r.per_utterance[1].wer_pct, 20.0);
    assert_eq!(r.wer_pct, 10.0);
    let edits: usize = r.per_utterance.iter().map(|u| u.word.edits).sum();
    let refs: usize = r.per_utterance.iter().map(|u| u.word.reference_len).sum();
    assert_eq!(r.wer_pct, 100.0 * edits as f64 / refs as f64);
    assert!(r.to_csv().lines().count() == 4);
    let back: m2s_core::evaluate::EvalReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);

    let silent = evaluate_testset(&utts, &audio, &audio, &Silent).unwrap();
    assert!(silent.per_utterance.iter().all(|u| u.wer_pct == 100.0));
    assert_eq!(silent.wer_pct, 100.0);
}

#[test]
fn missing_ids_are_listed() {
    let (utts, mut audio) = set(3);
    let refs = audio.clone();
    audio.remove("u1");
    let err = evaluate_testset(&utts, &audio, &refs, &EchoTranscriber).unwrap_err().to_string();
    assert!(err.contains("u1 (synthesized)"), "{err}");
}

#[test]
fn template_transcriber_reads_clean_toy_speech() {
    let t = TemplateTranscriber::for_voice(&Voice::ljspeech());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut edits, mut total) = (0.0, 0.0);
    for _ in 0..10 {
        let text = random_text(&mut rng, 2, 4);
        let audio = render(&plan_timing(&text, rng.gen()), &Voice::ljspeech(), rng.gen());
        let hyp = t.transcribe_audio(&audio).unwrap();
        let n = text.len() as f64;
        edits += char_error_rate(&text, &hyp).unwrap() * n / 100.0;
        total += n;
    }
    let cer = 100.0 * edits / total;
    eprintln!("template CER on clean speech {cer:.2}");
    assert!(cer < 15.0, "{cer}");
}
