//! Pipeline stages behind the `m2s` subcommands.
//!
//! Layout of `paths.work_dir`:
//!
//! ```text
//! manifest.jsonl, speech_manifest.jsonl, split.json      prepare
//! simulated_gt/<id>.wav, simulated_gt/manifest.jsonl     simulate-gt
//! clones/<id>.wav, clones/manifest.jsonl                 augment
//! pairs/{natural,augmented}/<id>.{src,tgt}.m2st + index  simulate-gt, augment
//! checkpoint.bin, train_log.txt, train_summary.json      train
//! eval/<id>.wav, report.{json,csv}, self_test_report.*   evaluate
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use m2s_core::corpus::{
    load_manifest, read_audio, save_manifest, split_corpus, write_audio, AudioBuffer, Origin, Utterance,
};
use m2s_core::encode::{
    extract_embeddings, fit_codebook, quantize, read_embeddings, write_embeddings, Codebook, EmbeddingSequence,
    ToyEncoder,
};
use m2s_core::evaluate::{evaluate_testset, EchoTranscriber, EvalReport, TemplateTranscriber, Transcriber};
use m2s_core::seq2seq::{dataset_loss, infer, init_params, train, Checkpoint, TrainExample};
use m2s_core::toyworld::Voice;
use m2s_core::voclone::{
    build_aligned_pairs, generate_clone_corpus, simulate_ground_truth, synthesize, train_vocoder, ParallelPair,
    ToyVocoder, VocoderBackend, VocoderExample, VocoderInput,
};
use m2s_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, digest, PipelineConfig, VocoderInputMode};

pub const MANIFEST: &str = "manifest.jsonl";
pub const SPEECH_MANIFEST: &str = "speech_manifest.jsonl";
pub const SPLIT: &str = "split.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const NATURAL: &str = "natural";
pub const AUGMENTED: &str = "augmented";

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        io(parent, fs::create_dir_all(parent))?;
    }
    io(path, fs::write(path, bytes))
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        io(path, fs::remove_dir_all(path))?;
    }
    io(path, fs::create_dir_all(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = io(path, fs::read_to_string(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out += &serde_json::to_string(r).expect("row serializes");
        out.push('\n');
    }
    write_file(path, out)
}

/// Utterance ids of each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn split_of(&self, id: &str) -> &'static str {
        if self.test.iter().any(|i| i == id) {
            "test"
        } else if self.val.iter().any(|i| i == id) {
            "val"
        } else {
            "train"
        }
    }
}

/// One cached aligned pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub text: String,
    pub origin: Origin,
    pub split: String,
    pub source_frames: usize,
    pub target_frames: usize,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub utterances: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub speech_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub written: usize,
    pub skipped_missing_whisper: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentSummary {
    pub clones: usize,
    pub pairs: usize,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub step: usize,
    pub examples: usize,
    pub val_examples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub struct Models {
    pub encoder: ToyEncoder,
    pub codebook: Codebook,
    pub vocoder: ToyVocoder,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    pub fn work(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.paths.work_dir.join(rel)
    }

    fn encoder(&self) -> Result<ToyEncoder> {
        ToyEncoder::new(self.config.encoder.toy.clone())
    }

    // ---------------------------------------------------------------- prepare

    pub fn prepare(&self) -> Result<PrepareSummary> {
        let root = &self.config.paths.corpus_root;
        let nam_dir = root.join("nam");
        let ids = list_wavs(&nam_dir)?;
        if ids.is_empty() {
            return Err(Error::validation(format!("no recordings found under {}", nam_dir.display())));
        }
        let mut missing = Vec::new();
        let mut utts = Vec::new();
        for id in &ids {
            let text_path = root.join("text").join(format!("{id}.txt"));
            let Ok(text) = fs::read_to_string(&text_path) else {
                missing.push(text_path.display().to_string());
                continue;
            };
            let mut u = Utterance::new(id, nam_dir.join(format!("{id}.wav")), text.trim());
            let wp = root.join("whisper").join(format!("{id}.wav"));
            u.whisper_path = wp.exists().then_some(wp);
            u.origin = Some(Origin::Natural);
            utts.push(u);
        }
        if !missing.is_empty() {
            return Err(Error::validation(format!("missing transcript files: {}", missing.join(", "))));
        }
        let s = &self.config.split;
        let split = split_corpus(&utts, s.test_fraction, s.val_fraction, s.seed)?;
        let ids_of = |v: &[Utterance]| v.iter().map(|u| u.id.clone()).collect::<Vec<_>>();
        let file = SplitFile {
            seed: s.seed,
            test_fraction: s.test_fraction,
            val_fraction: s.val_fraction,
            train: ids_of(&split.train),
            val: ids_of(&split.val),
            test: ids_of(&split.test),
        };
        io(&self.config.paths.work_dir, fs::create_dir_all(&self.config.paths.work_dir))?;
        save_manifest(self.work(MANIFEST), &utts)?;
        write_file(&self.work(SPLIT), serde_json::to_string_pretty(&file).expect("split serializes") + "\n")?;

        let mut speech_count = 0;
        if let Some(sroot) = &self.config.paths.speech_root {
            let speech = self.scan_speech(sroot)?;
            speech_count = speech.len();
            save_manifest(self.work(SPEECH_MANIFEST), &speech)?;
        }
        Ok(PrepareSummary {
            utterances: utts.len(),
            train: file.train.len(),
            val: file.val.len(),
            test: file.test.len(),
            speech_utterances: speech_count,
        })
    }

    fn scan_speech(&self, root: &Path) -> Result<Vec<Utterance>> {
        let wav_dir = root.join("wav");
        let ids = list_wavs(&wav_dir)?;
        let mut missing = Vec::new();
        let mut out = Vec::new();
        for id in ids {
            let tp = root.join("text").join(format!("{id}.txt"));
            let Ok(text) = fs::read_to_string(&tp) else {
                missing.push(tp.display().to_string());
                continue;
            };
            let mut u = Utterance::new(&id, wav_dir.join(format!("{id}.wav")), text.trim());
            let sp = root.join("speaker").join(format!("{id}.txt"));
            u.speaker = Some(match fs::read_to_string(&sp) {
                Ok(s) => s.trim().to_string(),
                Err(_) => self.config.inference.ground_truth_speaker.clone(),
            });
            u.origin = Some(Origin::Natural);
            out.push(u);
        }
        if !missing.is_empty() {
            return Err(Error::validation(format!("missing transcript files: {}", missing.join(", "))));
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Result<Vec<Utterance>> {
        let p = self.work(MANIFEST);
        if !p.exists() {
            return Err(Error::validation(format!("{} not found; run `m2s prepare` first", p.display())));
        }
        load_manifest(p)
    }

    pub fn split(&self) -> Result<SplitFile> {
        let p = self.work(SPLIT);
        let text = fs::read_to_string(&p)
            .map_err(|_| Error::validation(format!("{} not found; run `m2s prepare` first", p.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: p, line: 1, message: e.to_string() })
    }

    fn speech_manifest(&self) -> Result<Vec<Utterance>> {
        let p = self.work(SPEECH_MANIFEST);
        if !p.exists() {
            return Err(Error::validation(format!(
                "{} not found; set paths.speech_root and run `m2s prepare`",
                p.display()
            )));
        }
        load_manifest(p)
    }

    // ---------------------------------------------------------------- caches

    /// Embeddings of an audio file, cached by (stage, id, encoder config, file content).
    pub fn embed_file(&self, stage: &str, id: &str, path: &Path) -> Result<EmbeddingSequence> {
        let bytes = io(path, fs::read(path))?;
        let key = digest(&[stage.as_bytes(), id.as_bytes(), config_hash(&self.config.encoder).as_bytes(), &bytes]);
        let cache = self.config.cache_dir().join("emb").join(stage).join(format!("{id}-{}.m2st", &key[..16]));
        if cache.exists() {
            if let Ok(e) = read_embeddings(&cache) {
                return Ok(e);
            }
        }
        let audio = read_audio(path)?;
        let emb = extract_embeddings(&audio, &self.encoder()?)?;
        if let Some(parent) = cache.parent() {
            io(parent, fs::create_dir_all(parent))?;
        }
        write_embeddings(&cache, &emb)?;
        Ok(emb)
    }

    /// Codebook and vocoder, fitted on the training and validation recordings
    /// (murmur, whisper and read speech) and cached by configuration and content.
    pub fn models(&self) -> Result<Models> {
        let utts = self.manifest()?;
        let split = self.split()?;
        let speech = if self.config.paths.speech_root.is_some() { self.speech_manifest()? } else { Vec::new() };

        let mut sources: Vec<(String, String, PathBuf, String)> = Vec::new();
        for u in utts.iter().filter(|u| split.split_of(&u.id) != "test") {
            sources.push(("nam".into(), u.id.clone(), u.nam_path.clone(), "nam".into()));
            if let Some(w) = &u.whisper_path {
                sources.push(("whisper".into(), u.id.clone(), w.clone(), "whisper".into()));
            }
        }
        for u in &speech {
            let spk = u.speaker.clone().unwrap_or_else(|| self.config.inference.ground_truth_speaker.clone());
            sources.push(("speech".into(), u.id.clone(), u.nam_path.clone(), spk));
        }
        let mut key_parts: Vec<Vec<u8>> = vec![
            config_hash(&self.config.encoder).into_bytes(),
            config_hash(&self.config.codebook).into_bytes(),
            config_hash(&self.config.vocoder).into_bytes(),
        ];
        for (stage, id, path, spk) in &sources {
            let bytes = io(path, fs::read(path))?;
            key_parts.push(format!("{stage}/{id}/{spk}").into_bytes());
            key_parts.push(digest(&[&bytes]).into_bytes());
        }
        let refs: Vec<&[u8]> = key_parts.iter().map(|v| v.as_slice()).collect();
        let key = digest(&refs);
        let dir = self.config.cache_dir().join("models").join(&key[..16]);
        let (cb_path, voc_path) = (dir.join("codebook.m2st"), dir.join("vocoder.bin"));
        let encoder = self.encoder()?;

        if cb_path.exists() && voc_path.exists() {
            if let (Ok(cb), Ok(voc)) = (read_embeddings(&cb_path), ToyVocoder::load(&voc_path)) {
                return Ok(Models { encoder, codebook: Codebook::new(cb.into_frames())?, vocoder: voc });
            }
        }

        let embs: Vec<EmbeddingSequence> =
            sources.iter().map(|(stage, id, path, _)| self.embed_file(stage, id, path)).collect::<Result<_>>()?;
        let cb = &self.config.codebook;
        let codebook = fit_codebook(&embs, cb.k, cb.seed, cb.max_iters)?;
        let examples: Vec<VocoderExample> = sources
            .iter()
            .zip(&embs)
            .map(|((_, _, path, spk), e)| {
                Ok(VocoderExample { units: quantize(e, &codebook)?, audio: read_audio(path)?, speaker: spk.clone() })
            })
            .collect::<Result<_>>()?;
        let mut vocoder = ToyVocoder::new(self.config.vocoder.config.clone(), self.config.vocoder.toy.clone())?;
        train_vocoder(&examples, &mut vocoder, &mut |_, _| {})?;
        vocoder.set_codebook(&codebook)?;

        io(&dir, fs::create_dir_all(&dir))?;
        let cb_seq = EmbeddingSequence::new(codebook.centroids().clone(), self.config.encoder.toy.frame_rate)?;
        write_embeddings(&cb_path, &cb_seq)?;
        vocoder.save(&voc_path)?;
        Ok(Models { encoder, codebook, vocoder })
    }

    fn write_pair(&self, kind: &str, id: &str, pair: &ParallelPair) -> Result<()> {
        if !pair.aligned || pair.source.len() != pair.target.len() {
            return Err(Error::validation(format!("pair {id} is not aligned")));
        }
        let dir = self.work("pairs").join(kind);
        write_embeddings(dir.join(format!("{id}.src.m2st")), &pair.source)?;
        write_embeddings(dir.join(format!("{id}.tgt.m2st")), &pair.target)
    }

    /// Reads back every pair listed in the `kind` index.
    pub fn read_pairs(&self, kind: &str) -> Result<Vec<(PairRecord, EmbeddingSequence, EmbeddingSequence)>> {
        let dir = self.work("pairs").join(kind);
        let index = dir.join("index.jsonl");
        if !index.exists() {
            return Err(Error::validation(format!("pair cache {} not found", index.display())));
        }
        read_jsonl::<PairRecord>(&index)?
            .into_iter()
            .map(|r| {
                let s = read_embeddings(dir.join(format!("{}.src.m2st", r.id)))?;
                let t = read_embeddings(dir.join(format!("{}.tgt.m2st", r.id)))?;
                Ok((r, s, t))
            })
            .collect()
    }

    // ---------------------------------------------------------------- simulate-gt

    pub fn simulate_gt(&self) -> Result<SimulateSummary> {
        let utts = self.manifest()?;
        let split = self.split()?;
        let models = self.models()?;
        let out_dir = self.work("simulated_gt");
        fresh_dir(&out_dir)?;
        let pair_dir = self.work("pairs").join(NATURAL);
        fresh_dir(&pair_dir)?;
        let spk = &self.config.inference.ground_truth_speaker;
        let (radius, metric) = (self.config.align.radius, self.config.align.metric()?);

        let mut records = Vec::new();
        let mut index = Vec::new();
        let mut skipped = Vec::new();
        for u in &utts {
            let Some(wp) = &u.whisper_path else {
                skipped.push(u.id.clone());
                continue;
            };
            let whisper = read_audio(wp)?;
            let (audio, _) = simulate_ground_truth(&whisper, &models.codebook, &models.encoder, &models.vocoder, spk)?;
            let path = out_dir.join(format!("{}.wav", u.id));
            write_audio(&audio, &path)?;
            let mut rec = Utterance::new(&u.id, &path, &u.text);
            rec.speaker = Some(spk.clone());
            rec.source_id = Some(u.id.clone());
            rec.origin = Some(Origin::SimulatedGt);
            records.push(rec);

            let nam = self.embed_file("nam", &u.id, &u.nam_path)?;
            let gt = self.embed_file("simgt", &u.id, &path)?;
            let pair = if nam.len() == gt.len() {
                ParallelPair::time_aligned(nam, gt)?
            } else {
                build_aligned_pairs(&nam, &gt, radius, metric)?
            };
            self.write_pair(NATURAL, &u.id, &pair)?;
            index.push(PairRecord {
                id: u.id.clone(),
                text: u.text.clone(),
                origin: Origin::Natural,
                split: split.split_of(&u.id).into(),
                source_frames: pair.source.len(),
                target_frames: pair.target.len(),
            });
        }
        save_manifest(out_dir.join("manifest.jsonl"), &records)?;
        write_jsonl(&pair_dir.join("index.jsonl"), &index)?;
        Ok(SimulateSummary { written: records.len(), skipped_missing_whisper: skipped })
    }

    // ---------------------------------------------------------------- augment

    pub fn augment(&self, cap: Option<usize>) -> Result<AugmentSummary> {
        let mut speech = self.speech_manifest()?;
        if let Some(c) = cap.or(self.config.augment.cap) {
            speech.truncate(c);
        }
        let models = self.models()?;
        let batch = generate_clone_corpus(
            &speech,
            &models.codebook,
            &models.encoder,
            &models.vocoder,
            &self.config.inference.nam_speaker,
        );
        let out_dir = self.work("clones");
        fresh_dir(&out_dir)?;
        let pair_dir = self.work("pairs").join(AUGMENTED);
        fresh_dir(&pair_dir)?;
        let (radius, metric) = (self.config.align.radius, self.config.align.metric()?);

        let mut records = Vec::new();
        let mut index = Vec::new();
        let mut failures: Vec<(String, String)> =
            batch.failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect();
        for item in &batch.clones {
            let src = &item.source;
            let id = format!("clone-{}", src.id);
            let result = (|| -> Result<ParallelPair> {
                let path = out_dir.join(format!("{id}.wav"));
                write_audio(&item.audio, &path)?;
                let mut rec = Utterance::new(&id, &path, &src.text);
                rec.speaker = Some(self.config.inference.nam_speaker.clone());
                rec.source_id = Some(src.id.clone());
                rec.origin = Some(Origin::Clone);
                records.push(rec);
                let clone = self.embed_file("clone", &id, &path)?;
                let target = self.embed_file("speech", &src.id, &src.nam_path)?;
                let pair = build_aligned_pairs(&clone, &target, radius, metric)?;
                self.write_pair(AUGMENTED, &id, &pair)?;
                Ok(pair)
            })();
            match result {
                Ok(pair) => index.push(PairRecord {
                    id,
                    text: src.text.clone(),
                    origin: Origin::Clone,
                    split: "train".into(),
                    source_frames: pair.source.len(),
                    target_frames: pair.target.len(),
                }),
                Err(e) => failures.push((src.id.clone(), e.to_string())),
            }
        }
        save_manifest(out_dir.join("manifest.jsonl"), &records)?;
        write_jsonl(&pair_dir.join("index.jsonl"), &index)?;
        Ok(AugmentSummary { clones: records.len(), pairs: index.len(), failures })
    }

    // ---------------------------------------------------------------- train

    fn examples(&self) -> Result<(Vec<TrainExample>, Vec<TrainExample>)> {
        let vocab = &self.config.seq2seq.vocab;
        let mut train_set = Vec::new();
        let mut val_set = Vec::new();
        let natural_index = self.work("pairs").join(NATURAL).join("index.jsonl");
        let augmented_index = self.work("pairs").join(AUGMENTED).join("index.jsonl");
        if !natural_index.exists() && !augmented_index.exists() {
            return Err(Error::validation("no aligned pairs found; run `m2s simulate-gt` and/or `m2s augment`"));
        }
        for kind in [NATURAL, AUGMENTED] {
            if !self.work("pairs").join(kind).join("index.jsonl").exists() {
                continue;
            }
            for (rec, source, target) in self.read_pairs(kind)? {
                let ex = TrainExample { id: rec.id.clone(), source, target, tokens: vocab.encode(&rec.text) };
                match rec.split.as_str() {
                    "train" => train_set.push(ex),
                    "val" => val_set.push(ex),
                    _ => {}
                }
            }
        }
        if train_set.is_empty() {
            return Err(Error::validation("no aligned training pairs found"));
        }
        Ok((train_set, val_set))
    }

    pub fn train(&self, resume: bool) -> Result<TrainSummary> {
        let (train_set, val_set) = self.examples()?;
        let ckpt_path = self.work(CHECKPOINT);
        let start = if resume && ckpt_path.exists() { Some(Checkpoint::load(&ckpt_path)?) } else { None };
        let log_path = self.work("train_log.txt");
        let mut log = String::new();
        if let Some(c) = &start {
            for r in &c.loss_history {
                log += &format!("{r}\n");
            }
        }
        let s2s = &self.config.seq2seq;
        let initial = dataset_loss(s2s, &init_params(s2s, self.config.train.seed), &train_set)?.total;
        let ckpt = train(&train_set, &val_set, s2s, &self.config.train, start, &mut |r| log += &format!("{r}\n"))?;
        let final_loss = dataset_loss(s2s, &ckpt.params, &train_set)?.total;
        ckpt.save(&ckpt_path)?;
        write_file(&log_path, log)?;
        let summary = TrainSummary {
            step: ckpt.step,
            examples: train_set.len(),
            val_examples: val_set.len(),
            initial_loss: initial,
            final_loss,
        };
        write_file(&self.work("train_summary.json"), serde_json::to_string_pretty(&summary).expect("summary") + "\n")?;
        Ok(summary)
    }

    // ---------------------------------------------------------------- infer

    pub fn load_checkpoint(&self, path: Option<&Path>) -> Result<Checkpoint> {
        let p = path.map(Path::to_path_buf).unwrap_or_else(|| self.work(CHECKPOINT));
        if !p.exists() {
            return Err(Error::MissingDependency(format!("checkpoint {} not found; run `m2s train`", p.display())));
        }
        let ckpt = Checkpoint::load(&p)?;
        if ckpt.seq2seq.embedding_dim != self.config.encoder.toy.dim {
            return Err(Error::validation("checkpoint embedding dim does not match the encoder"));
        }
        Ok(ckpt)
    }

    /// Murmur audio to speech in `speaker`'s voice; also returns the predicted embeddings.
    pub fn convert(
        &self,
        models: &Models,
        ckpt: &Checkpoint,
        nam: &AudioBuffer,
        speaker: &str,
    ) -> Result<(AudioBuffer, EmbeddingSequence)> {
        if !models.vocoder.config().speaker_ids.iter().any(|s| s == speaker) {
            return Err(Error::validation(format!(
                "unknown speaker {speaker:?}; available: {}",
                models.vocoder.config().speaker_ids.join(", ")
            )));
        }
        let emb = extract_embeddings(nam, &models.encoder)?;
        let predicted = infer(&emb, ckpt)?;
        let audio = match self.config.inference.vocoder_input {
            VocoderInputMode::Embeddings => synthesize(VocoderInput::Embeddings(&predicted), speaker, &models.vocoder)?,
            VocoderInputMode::Units => {
                let units = quantize(&predicted, &models.codebook)?;
                synthesize(VocoderInput::Units(&units), speaker, &models.vocoder)?
            }
        };
        Ok((audio, predicted))
    }

    pub fn infer_file(
        &self,
        checkpoint: Option<&Path>,
        input: &Path,
        speaker: Option<&str>,
        out: &Path,
    ) -> Result<EmbeddingSequence> {
        let ckpt = self.load_checkpoint(checkpoint)?;
        let models = self.models()?;
        let speaker = speaker.unwrap_or(&self.config.inference.speaker_id);
        let nam = read_audio(input)?;
        let (audio, predicted) = self.convert(&models, &ckpt, &nam, speaker)?;
        if let Some(parent) = out.parent() {
            io(parent, fs::create_dir_all(parent))?;
        }
        write_audio(&audio, out)?;
        Ok(predicted)
    }

    // ---------------------------------------------------------------- evaluate

    pub fn transcriber(&self) -> Result<Box<dyn Transcriber>> {
        let t = self.config.evaluate.transcriber.as_str();
        if t == "echo" {
            return Ok(Box::new(EchoTranscriber));
        }
        let voice = match t.strip_prefix("template:") {
            Some("ljspeech") => Voice::ljspeech(),
            Some("syspin") => Voice::syspin(),
            Some("whisper") => Voice::Whisper,
            Some("nam") => Voice::Nam,
            _ => return Err(Error::MissingDependency(format!("transcriber {t:?} is not available"))),
        };
        Ok(Box::new(TemplateTranscriber::for_voice(&voice)))
    }

    /// Scores the test split against simulated ground truth. With `self_test`
    /// the references are scored against themselves with the echo transcriber,
    /// which exercises the scoring path and should report zeros.
    pub fn evaluate(&self, checkpoint: Option<&Path>, self_test: bool, csv: bool) -> Result<EvalReport> {
        let utts = self.manifest()?;
        let split = self.split()?;
        let test_ids: BTreeSet<&String> = split.test.iter().collect();
        let test: Vec<Utterance> = utts.into_iter().filter(|u| test_ids.contains(&u.id)).collect();
        let gt_dir = self.work("simulated_gt");
        let mut references = BTreeMap::new();
        let mut missing = Vec::new();
        for u in &test {
            let p = gt_dir.join(format!("{}.wav", u.id));
            if p.exists() {
                references.insert(u.id.clone(), read_audio(&p)?);
            } else {
                missing.push(u.id.clone());
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingDependency(format!(
                "simulated ground truth missing for {}; run `m2s simulate-gt`",
                missing.join(", ")
            )));
        }
        let synthesized = if self_test {
            references.clone()
        } else {
            let ckpt = self.load_checkpoint(checkpoint)?;
            let models = self.models()?;
            let eval_dir = self.work("eval");
            fresh_dir(&eval_dir)?;
            let mut out = BTreeMap::new();
            for u in &test {
                let (audio, _) =
                    self.convert(&models, &ckpt, &read_audio(&u.nam_path)?, &self.config.inference.speaker_id)?;
                write_audio(&audio, eval_dir.join(format!("{}.wav", u.id)))?;
                out.insert(u.id.clone(), audio);
            }
            out
        };
        let (transcriber, stem): (Box<dyn Transcriber>, &str) =
            if self_test { (Box::new(EchoTranscriber), "self_test_report") } else { (self.transcriber()?, "report") };
        let report = evaluate_testset(&test, &synthesized, &references, transcriber.as_ref())?;
        write_file(&self.work(format!("{stem}.json")), report.to_json())?;
        if csv {
            write_file(&self.work(format!("{stem}.csv")), report.to_csv())?;
        }
        Ok(report)
    }
}

fn list_wavs(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
