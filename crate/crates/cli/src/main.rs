use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use m2s_cli::config::PipelineConfig;
use m2s_cli::exit_code;
use m2s_cli::pipeline::Pipeline;
use m2s_cli::plot::plot_mel_panels;
use m2s_core::corpus::read_audio;
use m2s_core::toyworld::{generate_corpus, ToyWorldConfig};
use m2s_core::Result;

#[derive(Parser)]
#[command(name = "m2s", version, about = "Murmur-to-speech conversion pipeline")]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "m2s.toml")]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the corpus, write the manifest and the train/val/test split.
    Prepare,
    /// Render clean-voice references from the whisper recordings.
    SimulateGt,
    /// Clone the read-speech corpus into the murmur voice and cache aligned pairs.
    Augment {
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Train the sequence-to-sequence model on the cached pairs.
    Train {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Convert one murmur recording to speech.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score the test split against the simulated references.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the references against themselves.
        #[arg(long)]
        self_test: bool,
        /// Also write report.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Stacked mel spectrograms of the given recordings.
    Plot {
        #[arg(long)]
        out: PathBuf,
        inputs: Vec<PathBuf>,
    },
    /// Generate a synthetic corpus and a config that points at it.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long, default_value_t = 20)]
        utterances: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Small model, 300 training steps.
    Desk,
    /// Full-size model and schedule.
    Full,
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    Pipeline::new(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => print_json(&pipeline(cli)?.prepare()?),
        Command::SimulateGt => {
            let s = pipeline(cli)?.simulate_gt()?;
            if !s.skipped_missing_whisper.is_empty() {
                eprintln!("warning: {} utterance(s) without whisper audio skipped", s.skipped_missing_whisper.len());
            }
            print_json(&s);
        }
        Command::Augment { cap } => {
            let s = pipeline(cli)?.augment(*cap)?;
            for (id, e) in &s.failures {
                eprintln!("warning: {id}: {e}");
            }
            print_json(&s);
        }
        Command::Train { resume } => {
            let p = pipeline(cli)?;
            print_json(&p.train(*resume)?);
        }
        Command::Infer { input, out, speaker, checkpoint } => {
            let p = pipeline(cli)?;
            let emb = p.infer_file(checkpoint.as_deref(), input, speaker.as_deref(), out)?;
            println!("wrote {} ({} frames)", out.display(), emb.len());
        }
        Command::Evaluate { checkpoint, self_test, csv } => {
            let r = pipeline(cli)?.evaluate(checkpoint.as_deref(), *self_test, *csv)?;
            println!(
                "MCD {:.3} dB  WER {:.2}%  CER {:.2}%  ({} utterances)",
                r.mcd_db,
                r.wer_pct,
                r.cer_pct,
                r.per_utterance.len()
            );
        }
        Command::Plot { out, inputs } => {
            let audio = inputs.iter().map(read_audio).collect::<Result<Vec<_>>>()?;
            plot_mel_panels(&audio, out)?;
            println!("wrote {}", out.display());
        }
        Command::ToyCorpus { out, profile, utterances } => {
            let mut world =
                ToyWorldConfig { nam_utterances: *utterances, speech_utterances: *utterances, ..Default::default() };
            if let Some(s) = cli.seed {
                world.seed = s;
            }
            generate_corpus(out, &world)?;
            let mut cfg = match profile {
                Profile::Desk => PipelineConfig::desk(),
                Profile::Full => PipelineConfig::default(),
            };
            cfg.paths.corpus_root = "nam".into();
            cfg.paths.speech_root = Some("speech".into());
            let path = out.join("m2s.toml");
            cfg.save(&path)?;
            println!("wrote corpus and {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
