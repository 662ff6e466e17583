//! `xdcnn` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error (missing or
//! malformed files), 3 numeric failure (non-finite loss, failed gradient
//! check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use xdcnn::data::{save_scene, synth_generate};
use xdcnn::experiments::{
    eval_checkpoint, run_experiment, train_scratch, DomainSource, ExperimentConfig, ExperimentId, ExperimentOutput,
};
use xdcnn::network::gradcheck::oracle_suite;
use xdcnn::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "xdcnn", version, about = "Cross-domain CNN pre-training and fine-tuning for hyperspectral images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config (defaults to the desk-scale synthetic setup)
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for independent runs
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Checkpoint to fine-tune or evaluate
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train a cross-domain network on the source scenes
    Pretrain,
    /// Fine-tune a pre-trained cross-domain checkpoint on the target scene
    Finetune,
    /// Train on the target scene from random initialisation
    TrainScratch,
    /// Test accuracy of a single-network checkpoint on the target scene
    Eval,
    /// Run one ablation experiment
    Experiment {
        #[arg(value_parser = PossibleValuesParser::new(ExperimentId::ALL.map(ExperimentId::name)))]
        id: String,
    },
    /// Write the configured synthetic scenes as ENVI files plus a config using them
    SynthGen,
    /// Finite-difference check of every layer and of the full backbone
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
        cfg.pretrain_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.checkpoint.is_some() {
        cfg.checkpoint = cli.checkpoint.clone();
    }
    Ok(cfg)
}

fn finish(out: ExperimentOutput, dir: &Path) -> Result<()> {
    out.write(dir)?;
    for c in &out.summary.conditions {
        println!(
            "{:<24} {:<16} mean {:.4}  min {:.4}  max {:.4}  ({} seeds)",
            c.condition,
            c.metric,
            c.mean,
            c.min,
            c.max,
            c.seeds.len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn synth_gen(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.out_dir;
    let mut generated = cfg.clone();
    let scenes = std::iter::once(&mut generated.target).chain(generated.sources.iter_mut());
    for src in scenes {
        if let DomainSource::Synth(s) = src {
            let ds = synth_generate(s)?;
            let manifest = save_scene(&ds, dir)?;
            log::info!("{}: {}x{}x{} -> {}", ds.name, ds.cube.bands, ds.cube.height, ds.cube.width, manifest.display());
            *src = DomainSource::Manifest(manifest.file_name().expect("manifest has a file name").into());
        }
    }
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&generated)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gradcheck(seed: Option<u64>) -> Result<bool> {
    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => (0..10).collect(),
    };
    let entries = oracle_suite(seeds)?;
    let mut ok = true;
    for e in &entries {
        ok &= e.report.pass;
        println!(
            "{:<12} seed {:<3} worst rel {:.2e}  kink-skipped {:>5.1}%  {}",
            e.fragment,
            e.seed,
            e.report.worst_rel(),
            100.0 * e.report.skipped_fraction(),
            if e.report.pass { "pass" } else { "FAIL" }
        );
    }
    println!("{} of {} checks passed", entries.iter().filter(|e| e.report.pass).count(), entries.len());
    Ok(ok)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let dir = cfg.out_dir.clone();
    match &cli.command {
        Command::Pretrain => finish(run_experiment(&cfg, ExperimentId::Pretrain)?, &dir)?,
        Command::Finetune => finish(run_experiment(&cfg, ExperimentId::Finetune)?, &dir)?,
        Command::TrainScratch => finish(train_scratch(&cfg)?, &dir)?,
        Command::Eval => {
            let path = cfg
                .checkpoint
                .clone()
                .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
            finish(eval_checkpoint(&cfg, &path)?, &dir)?
        }
        Command::Experiment { id } => {
            let id = ExperimentId::parse(id).expect("clap restricts the id");
            finish(run_experiment(&cfg, id)?, &dir)?
        }
        Command::SynthGen => synth_gen(&cfg)?,
        Command::Gradcheck => {
            if !gradcheck(cli.seed)? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
