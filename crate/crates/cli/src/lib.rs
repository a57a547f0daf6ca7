//! `stlm` command-line tool.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use indicatif::{ProgressBar, ProgressDrawTarget, ProgressStyle};
use stlm_core::actions::{coalesce, ActionParser, ParseEvent};
use stlm_core::adapter::{merge_lora, LoraAdapter};
use stlm_core::chat::{ChatSession, ChatSettings, Engine};
use stlm_core::fixture::demo_model;
use stlm_core::modelfile::{
    fetch_model, load_manifest, quantize_model, quantize_weights, read_model, summarize,
    write_model, FileSummary, SizeReport,
};
use stlm_core::tokenizer::Vocab;
use stlm_core::transformer::{ModelConfig, ModelWeights, SamplerParams, Tensor};

pub mod repl;

/// Process exit codes. Stable across releases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Io = 2,
    Format = 3,
    Shape = 4,
}

/// Maps an error chain onto an exit code.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    use stlm_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::DiskFull | E::Network(_) => ExitCode::Io,
                E::Format(_)
                | E::CorruptFile(_)
                | E::ChecksumMismatch { .. }
                | E::Json(_)
                | E::AlreadyQuantized => ExitCode::Format,
                E::Shape(_) | E::MissingTensor(_) => ExitCode::Shape,
                _ => ExitCode::Usage,
            };
        }
        if cause.is::<io::Error>() {
            return ExitCode::Io;
        }
        if cause.is::<serde_json::Error>() {
            return ExitCode::Format;
        }
    }
    ExitCode::Usage
}

#[derive(Debug, Parser)]
#[command(name = "stlm", version, about = "Small on-device language model tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a model to 4-bit blocks and report the size change.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Fold a LoRA adapter into its base model.
    MergeLora {
        base: PathBuf,
        adapter: PathBuf,
        output: PathBuf,
    },
    /// Fetch a model described by a manifest and verify its checksum.
    Download {
        /// Manifest file path or http(s) URL.
        #[arg(long)]
        manifest: String,
        #[arg(long)]
        dest: PathBuf,
    },
    /// Print a model file's header, config and tensor table.
    Inspect {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Chat with a model in the terminal.
    Chat {
        #[arg(long)]
        model: PathBuf,
        /// Read prompts from a file, one per line, and answer each in turn.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Append turns to this JSONL file and resume from it.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        temperature: f32,
        #[arg(long, default_value_t = 0)]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        #[arg(long, default_value_t = 0)]
        token_delay_ms: u64,
    },
    /// Run recorded model output through the action parser.
    ///
    /// Each line holding a JSON string is one chunk. Any other line is fed
    /// as-is, newline included.
    Replay {
        events: PathBuf,
        /// Print events per chunk instead of merging adjacent text.
        #[arg(long)]
        chunks: bool,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Write a deterministic synthetic model.
    MakeFixture {
        /// Model config as inline JSON or a path to a JSON file.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = FixtureDtype::F32)]
        dtype: FixtureDtype,
        /// Write the scripted demo model instead of random weights.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        scripted: bool,
        output: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureDtype {
    F32,
    F16,
    Q4,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Success };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code as i32;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e) as i32
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Quantize { input, output, json } => {
            let report = quantize_model(&input, &output)
                .with_context(|| format!("quantizing {}", input.display()))?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                print_size_report(out, &report)?;
            }
        }
        Command::MergeLora { base, adapter, output } => {
            let model = read_model(&base).with_context(|| format!("reading {}", base.display()))?;
            let lora = LoraAdapter::load(&adapter)
                .with_context(|| format!("reading {}", adapter.display()))?;
            let merged = merge_lora(&model.weights, &lora)?;
            let summary = write_model(&output, &model.config, &merged, Some(&model.vocab))?;
            writeln!(
                out,
                "merged {} target(s), rank {}, alpha {} -> {} ({} bytes)",
                lora.targets.len(),
                lora.rank,
                lora.alpha,
                output.display(),
                summary.total_bytes
            )?;
        }
        Command::Download { manifest, dest } => download(&manifest, &dest, out, err)?,
        Command::Inspect { model, json } => {
            let bytes = fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
            let summary = summarize(&bytes)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
            } else {
                print_summary(out, &summary)?;
            }
        }
        Command::Chat {
            model,
            script,
            transcript,
            temperature,
            top_k,
            seed,
            max_new_tokens,
            token_delay_ms,
        } => {
            let engine = Arc::new(
                Engine::load(&model).with_context(|| format!("loading {}", model.display()))?,
            );
            let settings = ChatSettings {
                sampler: SamplerParams { temperature, top_k, seed },
                max_new_tokens,
                token_delay_ms,
                ..ChatSettings::default()
            };
            let session = match transcript {
                Some(p) => ChatSession::with_transcript(engine, settings, p)?,
                None => ChatSession::new(engine, settings),
            };
            match script {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    repl::run_script(&session, text.lines().map(str::to_string), out)?;
                }
                None => {
                    let (tx, rx) = mpsc::channel();
                    std::thread::spawn(move || {
                        for line in io::stdin().lock().lines() {
                            let Ok(line) = line else { break };
                            if tx.send(repl::Input::Line(line)).is_err() {
                                return;
                            }
                        }
                        let _ = tx.send(repl::Input::Eof);
                    });
                    repl::run_interactive(&session, rx, out, false)?;
                    writeln!(out)?;
                }
            }
        }
        Command::Replay { events, chunks, cap } => {
            let text = fs::read_to_string(&events)
                .with_context(|| format!("reading {}", events.display()))?;
            for e in replay(&text, cap, !chunks) {
                writeln!(out, "{}", serde_json::to_string(&e)?)?;
            }
        }
        Command::MakeFixture { config, seed, dtype, scripted, output } => {
            let (config, weights, vocab) = if scripted {
                let m = demo_model()?;
                (m.config, m.weights, m.vocab)
            } else {
                let config = parse_config(config.as_deref())?;
                check_fixture_config(&config)?;
                let weights = ModelWeights::random(&config, seed)?;
                let vocab = Vocab::fixture(config.vocab_size)?;
                (config, weights, vocab)
            };
            let weights = match dtype {
                FixtureDtype::F32 => weights,
                FixtureDtype::F16 => weights.map(|_, t| Tensor::f16(t.to_dense())),
                FixtureDtype::Q4 => quantize_weights(&weights)?,
            };
            let summary = write_model(&output, &config, &weights, Some(&vocab))?;
            writeln!(out, "wrote {} ({} bytes)", output.display(), summary.total_bytes)?;
        }
    }
    Ok(())
}

fn parse_config(arg: Option<&str>) -> Result<ModelConfig> {
    let Some(arg) = arg else {
        return Ok(ModelConfig::default());
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading config {arg}"))?
    };
    let config: ModelConfig = serde_json::from_str(&text).context("parsing model config")?;
    config.validate()?;
    Ok(config)
}

/// Fixture widths must split into whole 32-weight blocks so the file can
/// be quantized later.
fn check_fixture_config(config: &ModelConfig) -> Result<()> {
    if config.d_model % 32 != 0 {
        return Err(stlm_core::Error::Shape(format!(
            "d_model {} is not a multiple of 32",
            config.d_model
        ))
        .into());
    }
    Ok(())
}

/// Splits a recorded stream into chunks.
pub fn replay_chunks(text: &str) -> Vec<String> {
    text.split_inclusive('\n')
        .map(|line| {
            let trimmed = line.trim_end_matches(['\n', '\r']);
            match serde_json::from_str::<String>(trimmed) {
                Ok(chunk) => chunk,
                Err(_) => line.to_string(),
            }
        })
        .collect()
}

/// Feeds a recorded stream through a fresh parser.
pub fn replay(text: &str, cap: Option<usize>, merge: bool) -> Vec<ParseEvent> {
    let mut parser = match cap {
        Some(c) => ActionParser::with_cap(c),
        None => ActionParser::new(),
    };
    let mut events = Vec::new();
    for chunk in replay_chunks(text) {
        events.extend(parser.feed(&chunk));
    }
    events.extend(parser.flush());
    if merge {
        coalesce(events)
    } else {
        events
    }
}

fn download(location: &str, dest: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let manifest = load_manifest(location).with_context(|| format!("loading manifest {location}"))?;
    let bar = ProgressBar::with_draw_target(Some(manifest.bytes), ProgressDrawTarget::stderr());
    bar.set_style(
        ProgressStyle::with_template("{msg} [{bar:30}] {bytes}/{total_bytes} {bytes_per_sec}")
            .expect("static template")
            .progress_chars("=> "),
    );
    bar.set_message(manifest.name.clone());
    let outcome = fetch_model(&manifest, dest, |done, total| {
        bar.set_length(total);
        bar.set_position(done);
    });
    bar.finish_and_clear();
    let outcome = outcome.with_context(|| format!("downloading {}", manifest.name))?;
    if outcome.cached {
        writeln!(out, "{}: verified, skipping", outcome.path.display())?;
    } else {
        if outcome.resumed_from > 0 {
            writeln!(err, "resumed from byte {}", outcome.resumed_from)?;
        }
        writeln!(
            out,
            "{}: downloaded {} bytes, md5 {} verified",
            outcome.path.display(),
            outcome.downloaded,
            manifest.md5
        )?;
    }
    Ok(())
}

pub fn print_size_report(out: &mut dyn Write, r: &SizeReport) -> io::Result<()> {
    writeln!(out, "{:<40} {:>14} {:>6} {:>6} {:>10} {:>10}", "tensor", "dims", "from", "to", "bytes", "after")?;
    for t in &r.tensors {
        let dims = t.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        writeln!(
            out,
            "{:<40} {:>14} {:>6} {:>6} {:>10} {:>10}",
            t.name,
            dims,
            t.src_dtype.name(),
            t.dst_dtype.name(),
            t.src_bytes,
            t.dst_bytes
        )?;
    }
    writeln!(out, "source file:      {} bytes", r.src_file_bytes)?;
    writeln!(out, "16-bit baseline:  {} bytes", r.f16_bytes)?;
    writeln!(out, "predicted:        {} bytes", r.predicted_bytes)?;
    writeln!(out, "written:          {} bytes", r.dst_file_bytes)?;
    writeln!(out, "ratio vs 16-bit:  {:.4}", r.ratio)
}

pub fn print_summary(out: &mut dyn Write, s: &FileSummary) -> io::Result<()> {
    writeln!(out, "format version {}, {} bytes", s.version, s.total_bytes)?;
    match (&s.config, &s.adapter) {
        (_, Some(a)) => writeln!(out, "adapter: rank {}, alpha {}", a.rank, a.alpha)?,
        (Some(c), None) => writeln!(
            out,
            "model: {} layers, {} heads, d_model {}, vocab {}, context {}, rotary {}",
            c.n_layers, c.n_heads, c.d_model, c.vocab_size, c.max_context, c.rotary_fraction
        )?,
        (None, None) => {}
    }
    match s.vocab_entries {
        Some(n) => writeln!(out, "vocab: {n} entries embedded")?,
        None => writeln!(out, "vocab: fixture")?,
    }
    for (dtype, bytes) in &s.payload_bytes_by_dtype {
        writeln!(out, "payload {dtype}: {bytes} bytes")?;
    }
    writeln!(out, "{:<40} {:>5} {:>14} {:>10} {:>10}", "tensor", "dtype", "dims", "offset", "bytes")?;
    for t in &s.tensors {
        let dims = t.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        writeln!(
            out,
            "{:<40} {:>5} {:>14} {:>10} {:>10}",
            t.name,
            t.dtype.name(),
            dims,
            t.offset,
            t.length
        )?;
    }
    Ok(())
}
