use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diarkit_core::audio_io::{load_wav, write_wav, SampleFormat};
use diarkit_core::features::{mfcc_with_id, stack_deltas};
use diarkit_core::gmm::{select_n_components, write_curve_csv, Criterion};
use diarkit_core::metrics::{der, wer, WordSequence};
use diarkit_core::pipeline::{
    alternating_plan, rttm_timeline, run_pipeline_detailed, synth_fixture, write_dumps, write_rttm,
    Diarization, PipelineConfig, SynthSpec, Threshold, Turn, Voice,
};
use diarkit_core::segmentation::{detect_change_points, refine_boundaries};
use diarkit_core::vad::detect_speech;
use diarkit_core::{Error, FitConfig};

#[derive(Parser)]
#[command(name = "diarkit", version, about = "Speaker diarization with MFCC, delta-BIC and GMM clustering")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Diarize a WAV file and write RTTM.
    Diarize {
        wav: PathBuf,
        /// RTTM destination (default: stdout).
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Write stage CSVs (VAD, features, boundaries, segments, dendrogram) here.
        #[arg(long, value_name = "PATH")]
        dump_dir: Option<PathBuf>,
        /// Stop clustering at the widest gap in merge distances.
        #[arg(long)]
        auto_threshold: bool,
    },
    /// Dump MFCC features (with deltas) as CSV.
    Features {
        wav: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Blocks to keep, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "base,delta,delta2")]
        blocks: Vec<Block>,
    },
    /// Per-frame energy and speech decision as CSV.
    Vad {
        wav: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Change-point segments of the speech regions as CSV.
    Segment {
        wav: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// AIC/BIC curve over component counts for the speech frames.
    SelectGmm {
        wav: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min: usize,
        #[arg(long, default_value_t = 10)]
        max: usize,
        #[arg(long, default_value = "bic")]
        criterion: Criterion,
        /// Leading feature columns to model.
        #[arg(long, default_value_t = 13)]
        dims: usize,
        /// Random EM starts per component count; the best likelihood wins.
        #[arg(long, default_value_t = 3)]
        n_init: usize,
    },
    /// Diarization error rate of a hypothesis RTTM against a reference RTTM.
    EvalDer {
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH")]
        hypothesis: PathBuf,
        /// No-score collar around reference boundaries, in seconds.
        #[arg(long, default_value_t = 0.25)]
        collar: f64,
        /// Only score turns of this file id.
        #[arg(long)]
        file_id: Option<String>,
    },
    /// Word error rate between two plain-text transcripts.
    EvalWer {
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH")]
        hypothesis: PathBuf,
    },
    /// Write a synthetic multi-speaker WAV and its reference RTTM.
    Synth {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Reference RTTM destination.
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
        /// Fundamental frequency per speaker.
        #[arg(long, value_delimiter = ',', default_value = "120,280")]
        f0: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        turns: usize,
        #[arg(long, default_value_t = 4.7)]
        turn_s: f64,
        #[arg(long, default_value_t = 0.3)]
        gap_s: f64,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Block {
    Base,
    Delta,
    Delta2,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "audio".into())
}

fn load_config(opts: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Diarize {
            wav,
            output,
            dump_dir,
            auto_threshold,
        } => {
            if auto_threshold {
                cfg.cluster_threshold = Threshold::Auto;
            }
            let out = run_pipeline_detailed(&wav, &cfg)?;
            if let Some(dir) = dump_dir {
                write_dumps(&out, &dir)?;
            }
            let mut w = sink(output.as_deref())?;
            write_rttm(&out.diarization, &mut w)?;
            w.flush()?;
        }
        Command::Features { wav, output, blocks } => {
            let audio = load_wav(&wav)?;
            let base = mfcc_with_id(&audio, &cfg.mfcc(), &file_id(&wav))?;
            let full = stack_deltas(&base, cfg.delta_width)?;
            let idx: Vec<usize> = blocks.iter().map(|b| *b as usize).collect();
            let mut w = sink(output.as_deref())?;
            full.select_blocks(base.dim(), &idx)?.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Vad { wav, output } => {
            let audio = load_wav(&wav)?;
            let stft = cfg.stft();
            let sr = audio.sample_rate_hz();
            let energies = diarkit_core::audio_io::frame_rms(&audio, stft.frame_len(sr), stft.hop(sr))?;
            let decision = detect_speech(&energies, &cfg.vad())?;
            if decision.speech_regions.is_empty() {
                log::warn!("no speech detected");
            }
            let mut w = sink(output.as_deref())?;
            decision.write_csv(&energies, &mut w)?;
            w.flush()?;
        }
        Command::Segment { wav, output } => {
            let audio = load_wav(&wav)?;
            let stft = cfg.stft();
            let sr = audio.sample_rate_hz();
            let energies = diarkit_core::audio_io::frame_rms(&audio, stft.frame_len(sr), stft.hop(sr))?;
            let decision = detect_speech(&energies, &cfg.vad())?;
            let base = mfcc_with_id(&audio, &cfg.mfcc(), &file_id(&wav))?;
            let bic = stack_deltas(&base, cfg.delta_width)?.leading_dims(cfg.bic_feature_dims);
            let seg_cfg = cfg.segmentation();
            let segments = refine_boundaries(
                &detect_change_points(&bic, &decision.speech_regions, &seg_cfg)?,
                &bic,
                &seg_cfg,
            )?;
            let mut w = sink(output.as_deref())?;
            writeln!(w, "start_frame,end_frame,start_s,end_s,short")?;
            for s in &segments {
                writeln!(
                    w,
                    "{},{},{:.3},{:.3},{}",
                    s.start_frame, s.end_frame, s.start_s, s.end_s, s.short
                )?;
            }
            w.flush()?;
        }
        Command::SelectGmm {
            wav,
            output,
            min,
            max,
            criterion,
            dims,
            n_init,
        } => {
            let audio = load_wav(&wav)?;
            let stft = cfg.stft();
            let sr = audio.sample_rate_hz();
            let energies = diarkit_core::audio_io::frame_rms(&audio, stft.frame_len(sr), stft.hop(sr))?;
            let decision = detect_speech(&energies, &cfg.vad())?;
            let base = mfcc_with_id(&audio, &cfg.mfcc(), &file_id(&wav))?;
            let full = stack_deltas(&base, cfg.delta_width)?.leading_dims(dims);
            let rows: Vec<&[f64]> = decision
                .speech_regions
                .iter()
                .flat_map(|r| r.clone())
                .map(|t| full.vectors.row(t))
                .collect();
            if rows.is_empty() {
                anyhow::bail!(Error::EmptyInput("no speech frames to model"));
            }
            let x = diarkit_core::Matrix::from_rows(&rows)?;
            let fit = FitConfig { n_init, ..cfg.fit() };
            let sel = select_n_components(&x, min, max, criterion, &fit)?;
            let mut w = sink(output.as_deref())?;
            write_curve_csv(&sel.curve, &mut w)?;
            w.flush()?;
            eprintln!("best n_components: {}", sel.best_n_components);
        }
        Command::EvalDer {
            reference,
            hypothesis,
            collar,
            file_id,
        } => {
            let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
            let r = rttm_timeline(&read(&reference)?, file_id.as_deref())?;
            let h = rttm_timeline(&read(&hypothesis)?, file_id.as_deref())?;
            let rep = der(&r, &h, collar)?;
            println!("DER {:.4}", rep.rate);
            println!("missed_s {:.2}", rep.missed_s);
            println!("false_alarm_s {:.2}", rep.false_alarm_s);
            println!("confusion_s {:.2}", rep.confusion_s);
            println!("reference_speech_s {:.2}", rep.reference_speech_s);
        }
        Command::EvalWer { reference, hypothesis } => {
            let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
            let rep = wer(
                &WordSequence::parse(&read(&reference)?),
                &WordSequence::parse(&read(&hypothesis)?),
            )?;
            println!("WER {:.4}", rep.rate);
            println!(
                "substitutions {} insertions {} deletions {} reference_words {}",
                rep.substitutions, rep.insertions, rep.deletions, rep.reference_len
            );
        }
        Command::Synth {
            output,
            reference,
            f0,
            turns,
            turn_s,
            gap_s,
            sample_rate,
        } => {
            let spec = SynthSpec {
                sample_rate_hz: sample_rate,
                voices: f0.iter().map(|&f| Voice::new(f)).collect(),
                turns: alternating_plan(f0.len(), turns, turn_s, gap_s),
                trailing_silence_s: gap_s,
                seed: cfg.seed,
                ..SynthSpec::two_speaker(cfg.seed)
            };
            let (audio, truth) = synth_fixture(&spec)?;
            write_wav(&audio, SampleFormat::Pcm16, &output)?;
            if let Some(path) = reference {
                let d = Diarization::new(
                    file_id(&output),
                    truth
                        .entries()
                        .iter()
                        .map(|(a, b, s)| Turn {
                            onset_s: *a,
                            duration_s: b - a,
                            speaker: s.clone(),
                        })
                        .collect(),
                )?;
                let mut w = sink(Some(&path))?;
                write_rttm(&d, &mut w)?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config_error() => 2,
        Some(e) if e.is_audio_error() => 3,
        _ => 4,
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io = c
            .downcast_ref::<io::Error>()
            .or_else(|| match c.downcast_ref::<Error>().map(Error::root) {
                Some(Error::Io(e)) => Some(e),
                _ => None,
            });
        io.is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match cli.global.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already render their whole cause chain.
            if e.downcast_ref::<Error>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
