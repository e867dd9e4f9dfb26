//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use m2s_cli::config::PipelineConfig;
use m2s_cli::pipeline::TrainSummary;
use m2s_core::align::{fastdtw, Metric};
use m2s_core::corpus::{split_corpus, AudioBuffer, Utterance};
use m2s_core::encode::{read_embeddings, EmbeddingSequence};
use m2s_core::evaluate::{char_errors, compute_mcd, mcd_from_cepstra, word_errors};
use m2s_core::seq2seq::{
    ctc_loss, dataset_loss, example_loss_and_grads, init_params, lr_at_step, mse_loss, Params, Seq2SeqConfig,
    TrainConfig, TrainExample, Vocab,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_m2s");

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

// ---------------------------------------------------------------- 1

/// Unconstrained DTW with unit steps, Euclidean frame cost.
fn dtw_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (n, m) = (a.nrows(), b.nrows());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = a.row(i - 1).iter().zip(b.row(j - 1)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            d[i][j] = c + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
        }
    }
    d[n][m]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_exact, mut below_optimal) = (0.0f64, 0usize);
    let cases = 500;
    for _ in 0..cases {
        let (n, m, d) = (rng.gen_range(1..=40), rng.gen_range(1..=40), rng.gen_range(1..=8));
        let a = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((m, d), |_| rng.gen_range(-1.0..1.0));
        let oracle = dtw_oracle(&a, &b);
        let (ea, eb) = (EmbeddingSequence::new(a, 50.0).unwrap(), EmbeddingSequence::new(b, 50.0).unwrap());
        let wide = fastdtw(&ea, &eb, n.max(m), Metric::Euclidean).map_err(|e| e.to_string())?;
        worst_exact = worst_exact.max((wide.cost - oracle).abs());
        let narrow = fastdtw(&ea, &eb, 1, Metric::Euclidean).map_err(|e| e.to_string())?;
        if narrow.cost < oracle - 1e-9 {
            below_optimal += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_exact <= 1e-9 && below_optimal == 0 && secs < 30.0,
        format!("{cases} pairs, max |wide - exact| = {worst_exact:.2e}, radius-1 never below optimum, {secs:.2} s"),
        format!("max diff {worst_exact:.2e}, {below_optimal} radius-1 costs below optimum, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------- 2

/// Negative log of the summed probability of every frame labelling that
/// collapses to `target`; `None` when no labelling does.
fn ctc_oracle(logits: &Array2<f64>, target: &[usize], blank: usize) -> Option<f64> {
    let (t, v) = logits.dim();
    let probs: Vec<Vec<f64>> = (0..t)
        .map(|i| {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            row.iter().map(|x| x.exp() / z).collect()
        })
        .collect();
    let mut total = 0.0;
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..t)
            .map(|_| {
                let s = c % v;
                c /= v;
                s
            })
            .collect();
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &s)| probs[i][s]).product::<f64>();
        }
    }
    (total > 0.0).then(|| -total.ln())
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cases, mut worst, mut mismatched) = (0, 0.0f64, 0);
    while cases < 400 {
        let t = rng.gen_range(1..=6);
        let v = rng.gen_range(2..=4);
        let len = rng.gen_range(0..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..v)).collect();
        let logits = Array2::from_shape_fn((t, v), |_| rng.gen_range(-3.0..3.0));
        cases += 1;
        match (ctc_oracle(&logits, &target, 0), ctc_loss(logits.view(), &target, 0)) {
            (Some(want), Ok(got)) => worst = worst.max((want - got).abs()),
            (None, Err(_)) => {}
            _ => mismatched += 1,
        }
    }
    check(
        worst <= 1e-6 && mismatched == 0,
        format!("{cases} cases, max |loss - enumeration| = {worst:.2e}"),
        format!("max diff {worst:.2e}, {mismatched} feasibility mismatches"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let dim = 6;
    let cfg = Seq2SeqConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        attention_heads: 2,
        hidden_dim: 16,
        conv_filter: 32,
        conv_kernel: 3,
        embedding_dim: dim,
        alpha_ctc: 0.001,
        alpha_mse: 1.0,
        vocab: Vocab::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 12;
    let src = Array2::from_shape_fn((t, dim), |_| rng.gen_range(-1.0..1.0));
    let tgt = Array2::from_shape_fn((t, dim), |_| rng.gen_range(-1.0..1.0));
    let ex = TrainExample {
        id: "g".into(),
        source: EmbeddingSequence::new(src, 50.0).unwrap(),
        target: EmbeddingSequence::new(tgt, 50.0).unwrap(),
        tokens: cfg.vocab.encode("bead"),
    };
    let mut params = init_params(&cfg, 17);
    let (_, grads) = example_loss_and_grads(&cfg, &params, &ex).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let central = |params: &mut Params, ti: usize, i: usize, j: usize| {
        let orig = params.tensors[ti][[i, j]];
        params.tensors[ti][[i, j]] = orig + h;
        let up = dataset_loss(&cfg, params, std::slice::from_ref(&ex)).unwrap().total;
        params.tensors[ti][[i, j]] = orig - h;
        let down = dataset_loss(&cfg, params, std::slice::from_ref(&ex)).unwrap().total;
        params.tensors[ti][[i, j]] = orig;
        (up - down) / (2.0 * h)
    };
    // Attention key biases have an exactly-zero gradient; compare them absolutely.
    let key_bias: Vec<usize> = (0..params.len()).filter(|&k| params.names[k].ends_with(".bk")).collect();
    let mut key_bias_ok = true;
    for &ti in &key_bias {
        for j in 0..params.tensors[ti].ncols() {
            key_bias_ok &= grads[ti][[0, j]].abs() < 1e-12 && central(&mut params, ti, 0, j).abs() < 1e-8;
        }
    }
    let samples = 60;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let ti = loop {
            let k = rng.gen_range(0..params.len());
            if !key_bias.contains(&k) {
                break k;
            }
        };
        let (r, c) = params.tensors[ti].dim();
        let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..c));
        let numeric = central(&mut params, ti, i, j);
        let analytic = grads[ti][[i, j]];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    check(
        worst <= 1e-4 && key_bias_ok,
        format!("{samples} sampled parameters, max relative error {worst:.2e}"),
        format!("max relative error {worst:.2e}, key biases ok: {key_bias_ok}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = Array2::from_shape_fn((5, 768), |_| rng.gen_range(-2.0..2.0));
        let q = Array2::from_shape_fn((5, 768), |_| rng.gen_range(-2.0..2.0));
        let mut direct = 0.0;
        for t in 0..5 {
            let mut row = 0.0;
            for d in 0..768 {
                row += (q[[t, d]] - p[[t, d]]) * (q[[t, d]] - p[[t, d]]);
            }
            direct += row;
        }
        direct /= 5.0;
        worst = worst.max((mse_loss(p.view(), q.view()).unwrap() - direct).abs());
    }
    let hand = mse_loss(ndarray::array![[1.0, 1.0]].view(), ndarray::array![[0.0, 0.0]].view()).unwrap();
    check(
        worst <= 1e-9 && hand == 2.0,
        format!("5x768 max |loss - direct sum| = {worst:.2e}; T=1 example gives {hand}"),
        format!("max diff {worst:.2e}; T=1 example gives {hand}"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = TrainConfig::default();
    let expect = [(0, 4.4e-2), (2999, 4.4e-2), (3000, 1.32e-2), (4000, 3.96e-3), (5000, 1.188e-3), (19_999, 1.188e-3)];
    let worst = expect.iter().map(|&(s, lr)| (lr_at_step(s, &cfg) - lr).abs() / lr).fold(0.0f64, f64::max);
    check(
        worst <= 1e-12,
        format!("4.4e-2 / 1.32e-2 / 3.96e-3 / 1.188e-3 at 0 / 3000 / 4000 / 5000 (rel err {worst:.1e})"),
        format!("relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let utts: Vec<Utterance> = (0..421).map(|i| Utterance::new(format!("u{i:03}"), format!("{i}.wav"), "x")).collect();
    let a = split_corpus(&utts, 0.13, 0.05, 7).map_err(|e| e.to_string())?;
    let b = split_corpus(&utts, 0.13, 0.05, 7).map_err(|e| e.to_string())?;
    let c = split_corpus(&utts, 0.13, 0.05, 8).map_err(|e| e.to_string())?;
    let sizes = (a.test.len(), a.val.len(), a.train.len());
    check(
        sizes == (55, 18, 348) && a == b && a.test != c.test,
        format!("421 -> {} test / {} val / {} train, repeatable under a seed", sizes.0, sizes.1, sizes.2),
        format!("sizes {sizes:?}, repeatable: {}", a == b),
    )
}

// ---------------------------------------------------------------- 7

/// Edit distance by memoized recursion.
fn edit_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut BTreeMap::new())
}

fn tone(f: f64, secs: f64) -> AudioBuffer {
    let n = (16_000.0 * secs) as usize;
    let s = (0..n).map(|i| (0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin()) as f32).collect();
    AudioBuffer::new(s, 16_000).unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab = ["a", "an", "cat", "sat", "on", "mat"];
    let mut bad = 0;
    let cases = 3000;
    for _ in 0..cases {
        let rw: Vec<&str> = (0..rng.gen_range(1..=8)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
        let hw: Vec<&str> = (0..rng.gen_range(0..=8)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
        let got = word_errors(&rw.join(" "), &hw.join(" ")).unwrap();
        bad += usize::from(got.edits != edit_oracle(&rw, &hw) || got.reference_len != rw.len());

        let rc: Vec<char> = (0..rng.gen_range(1..=12)).map(|_| ['a', 'b', 'c'][rng.gen_range(0..3)]).collect();
        let hc: Vec<char> = (0..rng.gen_range(0..=12)).map(|_| ['a', 'b', 'c'][rng.gen_range(0..3)]).collect();
        let got = char_errors(&rc.iter().collect::<String>(), &hc.iter().collect::<String>()).unwrap();
        bad += usize::from(got.edits != edit_oracle(&rc, &hc) || got.reference_len != rc.len());
    }

    let base: Vec<f64> = (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut mcd_worst = 0.0f64;
    for delta in [0.05, 0.5, 1.3] {
        let a = vec![base.clone(); 9];
        let b: Vec<Vec<f64>> = (0..9).map(|_| base.iter().map(|v| v + delta).collect()).collect();
        let expect = 10.0 / 10f64.ln() * (2.0 * 24.0 * delta * delta).sqrt();
        mcd_worst = mcd_worst.max((mcd_from_cepstra(&a, &b).unwrap() - expect).abs());
    }

    let x = tone(220.0, 0.5);
    let text = "the cat sat on the mat";
    let identity = (
        compute_mcd(&x, &x).unwrap(),
        word_errors(text, text).unwrap().rate_pct(),
        char_errors(text, text).unwrap().rate_pct(),
    );
    check(
        bad == 0 && mcd_worst <= 1e-9 && identity == (0.0, 0.0, 0.0),
        format!("{} WER/CER instances match DP, MCD injection err {mcd_worst:.1e}, identity -> (0, 0, 0)", 2 * cases),
        format!("{bad} edit mismatches, MCD err {mcd_worst:.2e}, identity {identity:?}"),
    )
}

// ---------------------------------------------------------------- 8-10

struct Chain {
    root: PathBuf,
    elapsed: Duration,
    train: TrainSummary,
    cer: f64,
}

fn m2s(config: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).arg("--config").arg(config).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("m2s {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// toy-corpus -> prepare -> simulate-gt -> augment -> train (300 steps) -> infer -> evaluate.
fn run_chain(root: &Path, alpha_ctc: f64) -> Result<Chain, String> {
    let start = Instant::now();
    let out = Command::new(BIN).arg("toy-corpus").arg("--out").arg(root).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let cfg_path = root.join("m2s.toml");
    let mut cfg = PipelineConfig::from_toml(&fs::read_to_string(&cfg_path).unwrap()).map_err(|e| e.to_string())?;
    if cfg.train.max_steps != 300 || cfg.evaluate.transcriber == "echo" {
        return Err("generated config is not the 300-step audio-transcriber setup".into());
    }
    cfg.seq2seq.alpha_ctc = alpha_ctc;
    cfg.save(&cfg_path).map_err(|e| e.to_string())?;

    for stage in ["prepare", "simulate-gt", "augment", "train"] {
        m2s(&cfg_path, &[stage])?;
    }
    let split: serde_json::Value = serde_json::from_slice(&fs::read(root.join("work/split.json")).unwrap()).unwrap();
    let first_test = split["test"][0].as_str().ok_or("empty test split")?.to_string();
    let input = root.join("nam/nam").join(format!("{first_test}.wav"));
    let infer_out = root.join("infer.wav");
    m2s(&cfg_path, &["infer", "--input", input.to_str().unwrap(), "--out", infer_out.to_str().unwrap()])?;
    m2s(&cfg_path, &["evaluate", "--csv"])?;
    let elapsed = start.elapsed();

    let train: TrainSummary =
        serde_json::from_slice(&fs::read(root.join("work/train_summary.json")).unwrap()).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_slice(&fs::read(root.join("work/report.json")).unwrap()).unwrap();
    Ok(Chain { root: root.to_path_buf(), elapsed, train, cer: report["cer_pct"].as_f64().unwrap() })
}

fn criterion_8(on: &Result<Chain, String>, off: &Result<Chain, String>) -> Outcome {
    let (on, off) = (on.as_ref()?, off.as_ref()?);
    let ratio = on.train.final_loss / on.train.initial_loss;
    let secs = on.elapsed.as_secs_f64();
    let ok = secs < 300.0 && on.train.step == 300 && ratio < 0.5 && on.cer <= off.cer;
    check(
        ok,
        format!(
            "chain in {secs:.1} s, loss {:.1} -> {:.1} (x{ratio:.3}), CER with CTC {:.2}% vs without {:.2}%",
            on.train.initial_loss, on.train.final_loss, on.cer, off.cer
        ),
        format!(
            "{secs:.1} s, {} steps, loss ratio {ratio:.3}, CER on {:.2}% vs off {:.2}%",
            on.train.step, on.cer, off.cer
        ),
    )
}

fn criterion_9(on: &Result<Chain, String>) -> Outcome {
    let on = on.as_ref()?;
    let dir = on.root.join("work/pairs/augmented");
    let clones = fs::read_dir(on.root.join("work/clones"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    let (mut pairs, mut equal) = (0, 0);
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if let Some(id) = name.strip_suffix(".src.m2st") {
            pairs += 1;
            let s = read_embeddings(&p).map_err(|e| e.to_string())?;
            let t = read_embeddings(dir.join(format!("{id}.tgt.m2st"))).map_err(|e| e.to_string())?;
            equal += usize::from(s.len() == t.len());
        }
    }
    check(
        pairs > 0 && pairs == clones && equal == pairs,
        format!("{equal}/{pairs} cached pairs have equal source/target lengths"),
        format!("{equal}/{pairs} equal-length pairs, {clones} clones"),
    )
}

fn artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for f in ["work/checkpoint.bin", "work/train_log.txt", "work/report.json", "work/report.csv", "infer.wav"] {
        out.insert(f.to_string(), fs::read(root.join(f)).unwrap_or_default());
    }
    for d in ["work/simulated_gt", "work/clones", "work/eval"] {
        for e in fs::read_dir(root.join(d)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "wav") {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_10(a: &Result<Chain, String>, b: &Result<Chain, String>) -> Outcome {
    let (a, b) = (a.as_ref()?, b.as_ref()?);
    let (fa, fb) = (artifacts(&a.root), artifacts(&b.root));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    check(
        fa.keys().eq(fb.keys()) && differing.is_empty(),
        format!("{} artifacts byte-identical across two runs (checkpoint, audio, reports)", fa.len()),
        format!("differing artifacts: {differing:?}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Outcome| match r {
        Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("criterion {n:>2} FAIL  {name}: {msg}");
        }
    };
    report(1, "fastdtw vs exact DTW", criterion_1());
    report(2, "CTC vs path enumeration", criterion_2());
    report(3, "gradient check", criterion_3());
    report(4, "MSE exactness", criterion_4());
    report(5, "learning-rate schedule", criterion_5());
    report(6, "split reproduction", criterion_6());
    report(7, "metric oracles", criterion_7());

    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    let on = run_chain(dirs[0].path(), PipelineConfig::desk().seq2seq.alpha_ctc);
    let off = run_chain(dirs[1].path(), 0.0);
    let again = run_chain(dirs[2].path(), PipelineConfig::desk().seq2seq.alpha_ctc);
    report(8, "end-to-end toy pipeline", criterion_8(&on, &off));
    report(9, "alignment contract", criterion_9(&on));
    report(10, "determinism", criterion_10(&on, &again));

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
