use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentfuse::{Error, Result};
use latentfuse_cli::experiment::{read_report, thread_cap};
use latentfuse_cli::{
    compare, exit_code, generate, prepare_out_dir, run, run_sweep, write_run, write_sweep, ExperimentConfig, Grid,
};

#[derive(Parser)]
#[command(name = "latentfuse", version, about = "Multi-view building attribute classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it on the test split.
    Run(RunArgs),
    /// Train one model per cell of a grid over configuration keys.
    Sweep(SweepArgs),
    /// Print AP deltas of candidate reports against a baseline report.
    Compare(CompareArgs),
    /// Write a synthetic dataset to disk.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Settings {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// perceiver, satellite, street, concat or fvt.
    #[arg(long)]
    model: Option<String>,
    /// Masking strategy for every view: full, crop, inv_crop or rgbm.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    mask_sat: Option<String>,
    #[arg(long)]
    mask_street: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Generate every segment without street views.
    #[arg(long)]
    dataset_with_zero_views: bool,
    /// Extra `key=value` assignment; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Further `--key value` overrides after `--`.
    #[arg(last = true)]
    overrides: Vec<String>,
}

impl Settings {
    /// Defaults, then the file, then flags, then `--set`, then overrides.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        let flags = [
            ("model", self.model.clone()),
            ("mask", self.mask.clone()),
            ("mask_sat", self.mask_sat.clone()),
            ("mask_street", self.mask_street.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("epochs", self.epochs.map(|e| e.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.dataset_with_zero_views {
            cfg.set("zero_views", "true")?;
        }
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            cfg.set(k, v)?;
        }
        cfg.apply_args(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    settings: Settings,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
    /// Run a sweep instead, e.g. `num_latents=1,8,32;latent_dim=8,32,128`.
    #[arg(long)]
    sweep: Option<String>,
    /// Train sweep cells on several threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    settings: Settings,
    /// Grid such as `num_latents=1,8,32;latent_dim=8,32,128`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline `report.json`.
    baseline: PathBuf,
    /// Candidate reports, as `path` or `name=path`.
    #[arg(required = true)]
    candidates: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    settings: Settings,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => {
            let cfg = a.settings.resolve()?;
            match a.sweep.or_else(|| cfg.sweep.clone()) {
                Some(grid) => sweep(cfg.clone(), &grid, a.out.as_deref(), a.overwrite, a.parallel || cfg.parallel),
                None => single(&cfg, a.out.as_deref(), a.overwrite),
            }
        }
        Command::Sweep(a) => {
            let cfg = a.settings.resolve()?;
            let grid = a
                .grid
                .or_else(|| cfg.sweep.clone())
                .ok_or_else(|| Error::Config("sweep needs --grid or a `sweep` key".into()))?;
            let parallel = a.parallel || cfg.parallel;
            sweep(cfg, &grid, a.out.as_deref(), a.overwrite, parallel)
        }
        Command::Compare(a) => {
            let baseline = read_report(&a.baseline)?;
            let candidates = a
                .candidates
                .iter()
                .map(|c| {
                    let (name, path) = match c.split_once('=') {
                        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                        None => (c.clone(), PathBuf::from(c)),
                    };
                    Ok((name, read_report(&path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            print!("{}", compare(&baseline, &candidates));
            Ok(())
        }
        Command::Generate(a) => {
            let cfg = a.settings.resolve()?;
            prepare_out_dir(&a.out, a.overwrite)?;
            let n = generate(&cfg, &a.out)?;
            println!("wrote {n} samples to {}", a.out.display());
            Ok(())
        }
    }
}

fn single(cfg: &ExperimentConfig, out: Option<&Path>, overwrite: bool) -> Result<()> {
    if let Some(out) = out {
        prepare_out_dir(out, overwrite)?;
    }
    let result = run(cfg)?;
    if result.dropped > 0 {
        eprintln!("note: {} samples without street views were withheld from the street model", result.dropped);
    }
    print!("{}", result.report.to_csv(cfg.model.as_str()));
    if let Some(out) = out {
        write_run(out, cfg, &result)?;
    }
    Ok(())
}

fn sweep(cfg: ExperimentConfig, grid: &str, out: Option<&Path>, overwrite: bool, parallel: bool) -> Result<()> {
    let grid = Grid::parse(grid)?;
    if let Some(out) = out {
        prepare_out_dir(out, overwrite)?;
    }
    let threads = if parallel { thread_cap()? } else { 1 };
    let cells = run_sweep(&cfg, &grid, threads)?;
    print!("{}", latentfuse_cli::experiment::heatmap_csv(&grid, &cells));
    if let Some(out) = out {
        write_sweep(out, &grid, &cells)?;
    }
    Ok(())
}
