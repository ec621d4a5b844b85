use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mafgan::constraints::MixOrder;
use mafgan::experiment::{self, ExperimentConfig, Snapshot};
use mafgan::nn::Discriminator;
use mafgan::par::Execution;
use mafgan::verify;

#[derive(Parser)]
#[command(name = "mafgan", version, about = "Manifold-embedding GAN experiments on 2D synthetic data")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a recipe and write its output directory.
    Run {
        /// Recipe file (the `.toml` extension may be omitted).
        recipe: PathBuf,
        /// Replace the recipe's seed list (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override any config key, e.g. `--set train.lr=0.001`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Tabulate final metrics of two or more run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write `<PREFIX>.csv` and `<PREFIX>.json` instead of printing CSV.
        #[arg(long, value_name = "PREFIX")]
        out: Option<PathBuf>,
    },
    /// Theorem suite, gradient checks, metric oracles and determinism.
    Verify {
        /// Deliberately mix embeddings in the wrong order (the affine check must fail).
        #[arg(long, hide = true)]
        break_tc_order: bool,
    },
    /// Recompute a confidence map from a trained seed directory.
    Confmap {
        seed_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        #[arg(long, default_value_t = 3.0)]
        half_width: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continuity probe of a trained discriminator.
    Probe {
        seed_dir: PathBuf,
        #[arg(long, default_value_t = Discriminator::DEPTH - 2)]
        layer: usize,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn recipe_path(p: &Path) -> Result<PathBuf> {
    if p.is_file() {
        return Ok(p.to_path_buf());
    }
    let with_ext = p.with_extension("toml");
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    bail!("no recipe at `{}` or `{}`", p.display(), with_ext.display())
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override `{kv}` is not KEY=VALUE"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(bytes)?),
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Run { recipe, seeds, out, overrides } => {
            let path = recipe_path(&recipe)?;
            let mut cfg = ExperimentConfig::load(&path, &parse_overrides(&overrides)?)
                .with_context(|| format!("loading {}", path.display()))?;
            if !seeds.is_empty() {
                cfg.seeds = seeds;
                cfg.validate()?;
            }
            let report = experiment::run(&cfg, &out, exec)?;
            for s in &report.summaries {
                let fd = s.final_frechet.map_or("-".into(), |f| format!("{f:.4}"));
                let modes = s.final_modes_covered.map_or("-".into(), |m| m.to_string());
                println!("seed {:>3}: {:?}  frechet {fd}  modes {modes}", s.seed, s.status);
            }
            println!("wrote {}", report.dir.display());
            if report.summaries.iter().any(|s| !s.is_complete()) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Compare { runs, out } => {
            let cmp = experiment::compare(&runs)?;
            for w in &cmp.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(prefix) => {
                    cmp.write_csv(fs::File::create(prefix.with_extension("csv"))?)?;
                    cmp.write_json(&prefix.with_extension("json"))?;
                }
                None => cmp.write_csv(io::stdout())?,
            }
        }
        Command::Verify { break_tc_order } => {
            let order = if break_tc_order { MixOrder::Reversed } else { MixOrder::Consistent };
            let report = verify::verify_with(exec, order);
            for c in &report.checks {
                println!("{c}");
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", report.checks.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Confmap { seed_dir, resolution, half_width, out } => {
            let snap = Snapshot::load(&seed_dir)?;
            let map = snap.confidence_map(half_width, resolution, exec)?;
            let mut buf = Vec::new();
            map.write_csv(&mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
        Command::Probe { seed_dir, layer, trials, batch, seed } => {
            let snap = Snapshot::load(&seed_dir)?;
            let stats = snap.probe(layer, trials, batch, seed)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
