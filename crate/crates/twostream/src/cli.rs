//! Command-line entry point. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use twostream_core::gradcheck::{run_suite, SuiteConfig};
use twostream_core::model::Stream;
use twostream_core::nn::Preset;
use twostream_core::synth::SplitTag;

use crate::config::RunConfig;
use crate::coupler::{ablation_csv, AblationGrid};
use crate::error::{Error, IoContext, Result};
use crate::parallel::default_threads;
use crate::pipeline::{self, Workdir};
use crate::report::{confusion_csv, epochs_table, load_report, summary_text};

/// Largest relative error the gradient suite accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "twostream", version, about = "Two-stream recognizer for 12x16 action video")]
pub struct Cli {
    /// Root of all inputs and artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Run configuration (default: <workdir>/config.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for rendering, splitting, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the determinism reference.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override one config value.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the HIGH clips, split them and write the manifest.
    Synth,
    /// Derive the LOW (12x16, upsampled) clip of every HIGH clip.
    Preprocess,
    /// Compute flow images for every clip.
    Flow,
    /// Train the C3D network of one stream.
    TrainC3d {
        #[arg(long, value_parser = parse_stream)]
        stream: Stream,
    },
    /// Cache unit features (default: every stream the model uses).
    Extract {
        #[arg(long, value_parser = parse_stream)]
        stream: Option<Stream>,
    },
    /// Train GRU encoders, fusion and head on cached features.
    TrainFusion,
    /// Evaluate a sequence-model checkpoint on the LOW test clips.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every backward pass over ten seeds.
    Gradcheck {
        #[arg(long, value_parser = parse_preset, default_value = "tiny")]
        preset: Preset,
    },
    /// Train and evaluate every cell of a grid file.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Print the last run report and rewrite its confusion CSV.
    Report,
}

fn parse_stream(s: &str) -> std::result::Result<Stream, String> {
    Stream::parse(s).ok_or_else(|| format!("expected spatial or temporal, got `{}`", s))
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    match s {
        "tiny" => Ok(Preset::Tiny),
        "full" => Ok(Preset::Full),
        _ => Err(format!("expected tiny or full, got `{}`", s)),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cmd_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Config file, then `--seed`, then `--set` overrides.
pub fn resolve_config(cli: &Cli, wd: &Workdir) -> Result<RunConfig> {
    let path = cli.config.clone().or_else(|| Some(wd.config()).filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) if !p.exists() => {
            return Err(Error::Config(format!("--config {} does not exist", p.display())));
        }
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir);
    let threads = cli.threads.unwrap_or_else(default_threads).max(1);
    match &cli.command {
        Command::Gradcheck { preset } => return gradcheck(*preset, cli.seed.unwrap_or(0)),
        Command::Report => return report(&wd),
        _ => {}
    }
    let cfg = resolve_config(cli, &wd)?;
    match &cli.command {
        Command::Synth => {
            let m = pipeline::synth(&wd, &cfg, threads)?;
            let train = m.with_split(SplitTag::Train).len();
            println!(
                "rendered {} clips ({} train, {} test) into {}",
                m.len(),
                train,
                m.len() - train,
                wd.root().display()
            );
        }
        Command::Preprocess => {
            let m = pipeline::preprocess(&wd, &cfg, threads)?;
            println!("wrote {} LOW clips", m.len() / 2);
        }
        Command::Flow => {
            let n = pipeline::flow(&wd, &cfg, threads)?;
            println!("computed flow for {} clips", n);
        }
        Command::TrainC3d { stream } => {
            let stage = pipeline::train_c3d(&wd, &cfg, *stream, threads)?;
            print!("{}", epochs_table(&stage.log));
            println!("saved {}", wd.c3d_checkpoint(*stream).display());
        }
        Command::Extract { stream } => {
            let streams = match stream {
                Some(s) => vec![*s],
                None => cfg.model.streams.members(),
            };
            for (s, stats) in pipeline::extract(&wd, &cfg, &streams, threads)? {
                println!("{}: computed {}, cached {}", s.as_str(), stats.computed, stats.cached);
            }
        }
        Command::TrainFusion => {
            let stage = pipeline::train_fusion(&wd, &cfg, threads)?;
            print!("{}", epochs_table(&stage.log));
            println!("saved {}", wd.model_checkpoint().display());
        }
        Command::Eval { checkpoint } => {
            let ev = pipeline::eval(&wd, &cfg, checkpoint)?;
            let c = &ev.report.confusion;
            println!("accuracy: {:.4} ({} / {})", ev.report.test_accuracy, c.trace(), c.total());
            println!("high-resolution reads: {}", ev.high_reads);
            println!("wrote {}", wd.report("confusion.csv").display());
        }
        Command::Ablate { grid } => {
            let text = fs::read_to_string(grid).at(grid)?;
            let grid: AblationGrid =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", grid.display(), e.message())))?;
            let rows = pipeline::ablate(&wd, &cfg, &grid, threads)?;
            print!("{}", ablation_csv(&rows));
        }
        Command::Gradcheck { .. } | Command::Report => unreachable!("handled above"),
    }
    Ok(())
}

fn gradcheck(preset: Preset, seed: u64) -> Result<()> {
    let cfg = SuiteConfig {
        preset,
        ..SuiteConfig::tiny(seed)
    };
    let results = run_suite(&cfg)?;
    println!("{:<16} {:>12} {:>8}", "op", "worst_rel", "entries");
    for r in &results {
        println!("{:<16} {:>12.3e} {:>8}", r.op, r.worst, r.entries);
    }
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    if worst < GRADCHECK_TOLERANCE {
        println!("all below {:e}", GRADCHECK_TOLERANCE);
        Ok(())
    } else {
        Err(Error::format(
            "gradcheck",
            format!("worst relative error {:.3e} exceeds {:e}", worst, GRADCHECK_TOLERANCE),
        ))
    }
}

fn report(wd: &Workdir) -> Result<()> {
    let r = load_report(&wd.report("run_report.toml"))?;
    print!("{}", summary_text(&r));
    let csv = wd.report("confusion.csv");
    fs::write(&csv, confusion_csv(&r)).at(&csv)
}
