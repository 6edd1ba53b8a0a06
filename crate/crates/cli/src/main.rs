//! Command-line surface. Exit codes: 0 success, 1 validation failure,
//! 2 numeric-check failure.

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use ferrograd_cli::config::{ExperimentConfig, SeedTree};
use ferrograd_cli::generate::{decode, DecodeMode, TokenModel};
use ferrograd_cli::tokenizer::CharTokenizer;
use ferrograd_cli::{bench, export, sweep, tasks};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ferrograd", about = "Train, generate, check, and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training task described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Autoregressive generation from a trained checkpoint.
    Generate {
        /// Run directory holding checkpoint.{json,bin}.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value = "greedy")]
        mode: String,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 3)]
        beam_width: usize,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference gradient checks over every primitive and layer.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel benchmarks (equivalence-gated).
    Bench {
        /// "attention" or "scan".
        kind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The 1D universal-approximation construction on sin(x)/x.
    UaDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/ua")]
        out: PathBuf,
    },
    /// Tidy plot data from a finished run directory.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct LmAdapter<'a> {
    model: &'a ferrograd_cli::models::TransformerLm,
    params: &'a ferrograd_nn::ParamSet,
}

impl TokenModel for LmAdapter<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab
    }

    fn prefix_logits(&self, prefix: &[usize]) -> Vec<f64> {
        self.model
            .prefix_logits(self.params, prefix)
            .expect("forward pass")
    }
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| anyhow!("{e}"))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let artifacts = tasks::cmd_train(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.eval)?);
            Ok(0)
        }
        Command::Generate {
            run,
            prompt,
            mode,
            temperature,
            beam_width,
            max_len,
            seed,
        } => {
            let (model, params) = tasks::load_lm(&run)?;
            let tokenizer = CharTokenizer;
            let ids = tokenizer.encode_prompt(&prompt);
            let decode_mode = match mode.as_str() {
                "greedy" => DecodeMode::Greedy,
                "sample" => DecodeMode::Sample { temperature },
                "beam" => DecodeMode::Beam { width: beam_width },
                other => return Err(anyhow!("unknown mode `{other}`")),
            };
            let adapter = LmAdapter {
                model: &model,
                params: &params,
            };
            let mut rng = SeedTree::new(seed.unwrap_or(0)).rng("sampling");
            let new_tokens = decode(&adapter, &ids, max_len, decode_mode, &mut rng);
            println!("{}{}", prompt, tokenizer.decode(&new_tokens));
            Ok(0)
        }
        Command::Gradcheck { out } => {
            let reports = sweep::full_sweep();
            let json = sweep::report_json(&reports);
            let text = serde_json::to_string_pretty(&json)?;
            match out {
                Some(path) => std::fs::write(path, &text)?,
                None => println!("{text}"),
            }
            let failures = reports.iter().filter(|r| !r.pass).count();
            if failures > 0 {
                eprintln!("{failures} primitive(s) failed the gradient check");
                Ok(2)
            } else {
                Ok(0)
            }
        }
        Command::Bench {
            kind,
            config,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path).map_err(|e| anyhow!("{e}"))?,
                None => ExperimentConfig::quick(ferrograd_cli::config::Task::UaDemo, 0),
            };
            let seed = seed.unwrap_or(cfg.seed);
            let rows = match kind.as_str() {
                "attention" => bench::bench_attention(&cfg.bench, seed),
                "scan" => bench::bench_scan(&cfg.bench, seed),
                other => return Err(anyhow!("unknown bench kind `{other}`")),
            };
            match rows {
                Ok(rows) => {
                    let csv = bench::rows_to_csv(&rows);
                    match out {
                        Some(path) => std::fs::write(path, &csv)?,
                        None => print!("{csv}"),
                    }
                    Ok(0)
                }
                Err(err) => {
                    eprintln!("equivalence gate failed: {err}");
                    Ok(2)
                }
            }
        }
        Command::UaDemo { config, out } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path).map_err(|e| anyhow!("{e}"))?,
                None => ExperimentConfig::quick(ferrograd_cli::config::Task::UaDemo, 0),
            };
            let eval = tasks::run_ua_demo(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
            Ok(0)
        }
        Command::Export { run, out } => {
            export::export_plotdata(&run, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
