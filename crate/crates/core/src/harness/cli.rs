use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioKind};
use super::policy::train_episode;
use super::scenario::build_scenario;
use super::sweeps::{
    energy_plot_data, energy_sweep, latency_plot_data, latency_sweep, ENERGY_POLICIES,
};
use crate::ddpg::{curve_csv, Trainer};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "twinsched",
    version,
    about = "Twin-managed IoT network simulator and transmission scheduler"
)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seeds with this single seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "PATH")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the scheduler; writes checkpoint, learning curve and trace log.
    Train {
        /// Overrides the configured episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write a checkpoint every K episodes.
        #[arg(long, value_name = "K", default_value_t = 0)]
        checkpoint_every: usize,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// p95 latency against per-service volume, both scenarios.
    LatencySweep,
    /// Normalized energy consumption against publisher count.
    EnergySweep,
    /// Re-run a finished training run and compare its outputs byte for byte.
    Replay {
        /// Run directory (defaults to the output directory).
        #[arg(long, value_name = "PATH")]
        run_dir: Option<PathBuf>,
        /// Resume from this intermediate checkpoint instead of starting over.
        #[arg(long, value_name = "PATH")]
        from_checkpoint: Option<PathBuf>,
    },
    /// Parse and validate the configuration.
    ValidateConfig,
}

/// Recorded next to every training run so it can be replayed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub config: ExperimentConfig,
}

pub const MANIFEST: &str = "manifest.toml";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const CURVE: &str = "learning_curve.csv";
pub const TRACE: &str = "trace.log";

/// Runs the command line; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::ValidateConfig => {
            println!("config ok");
            Ok(0)
        }
        Command::Train {
            episodes,
            checkpoint_every,
            resume,
        } => {
            let mut cfg = cfg;
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            let seed = cfg.seeds[0];
            let out = cfg.out_dir.clone();
            let t = train_run(&cfg, seed, &out, checkpoint_every, resume.as_deref())?;
            let last = t.curve.last().map(|r| r.r_total).unwrap_or(f64::NAN);
            println!(
                "trained {} episodes (seed {seed}); last r_total {last}; outputs in {}",
                t.completed,
                out.display()
            );
            Ok(0)
        }
        Command::LatencySweep => {
            let t = latency_sweep(&cfg)?;
            fs::create_dir_all(&cfg.out_dir)?;
            write(&cfg.out_dir, "latency.csv", &t.csv())?;
            for kind in [ScenarioKind::OneService, ScenarioKind::ThreeService] {
                write(
                    &cfg.out_dir,
                    &format!("latency_{}.dat", kind.name()),
                    &latency_plot_data(&t, kind),
                )?;
            }
            print!("{}", t.csv());
            Ok(0)
        }
        Command::EnergySweep => {
            let t = energy_sweep(&cfg, &ENERGY_POLICIES)?;
            fs::create_dir_all(&cfg.out_dir)?;
            write(&cfg.out_dir, "energy.csv", &t.csv())?;
            write(&cfg.out_dir, "energy.dat", &energy_plot_data(&t))?;
            print!("{}", t.csv());
            Ok(0)
        }
        Command::Replay {
            run_dir,
            from_checkpoint,
        } => {
            let dir = run_dir.unwrap_or(cfg.out_dir);
            let verdict = replay(&dir, from_checkpoint.as_deref())?;
            match &verdict {
                Verdict::Identical => println!("IDENTICAL"),
                Verdict::Different(files) => println!("DIFFERENT: {}", files.join(", ")),
            }
            Ok(if verdict == Verdict::Identical { 0 } else { 1 })
        }
    }
}

/// Trains with `seed` and writes manifest, checkpoint, learning curve and trace into `out`.
pub fn train_run(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    checkpoint_every: usize,
    resume: Option<&Path>,
) -> Result<Trainer> {
    fs::create_dir_all(out)?;
    let manifest = RunManifest {
        seed,
        config: cfg.clone(),
    };
    write(
        out,
        MANIFEST,
        &toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let mut sc = build_scenario(cfg, cfg.scenario, cfg.n_publishers, seed, true)?;
    let mut t = match resume {
        Some(p) => {
            let t = Trainer::load(p)?;
            if t.seed != seed || t.episodes != cfg.episodes {
                return Err(Error::Config(
                    "checkpoint does not belong to this run".into(),
                ));
            }
            t
        }
        None => Trainer::new(
            sc.env.n_devices(),
            cfg.ddpg.clone(),
            cfg.episodes,
            seed,
            cfg.whatif,
        )?,
    };
    while !t.is_done() {
        train_episode(cfg, &mut sc.env, &mut t)?;
        if checkpoint_every > 0 && t.completed % checkpoint_every == 0 && !t.is_done() {
            let dir = out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            t.save(&dir.join(format!("episode_{:06}.json", t.completed)))?;
        }
    }
    t.save(&out.join(CHECKPOINT))?;
    write(out, CURVE, &curve_csv(&t.curve))?;
    let mut trace = sc.discovery_trace.take().unwrap_or_default();
    trace.push_str(&sc.env.take_trace().unwrap_or_default());
    write(out, TRACE, &trace)?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Identical,
    Different(Vec<String>),
}

/// Re-runs the training recorded in `dir` into a scratch directory and
/// compares outputs. A resumed replay cannot reproduce the trace of the
/// episodes before the checkpoint, so only checkpoint and curve are compared.
pub fn replay(dir: &Path, from_checkpoint: Option<&Path>) -> Result<Verdict> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: RunManifest = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let scratch = dir.join(".replay");
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    train_run(&m.config, m.seed, &scratch, 0, from_checkpoint)?;
    let files: &[&str] = if from_checkpoint.is_some() {
        &[CHECKPOINT, CURVE]
    } else {
        &[CHECKPOINT, CURVE, TRACE]
    };
    let mut diff = Vec::new();
    for f in files {
        if fs::read(dir.join(f))? != fs::read(scratch.join(f))? {
            diff.push(f.to_string());
        }
    }
    fs::remove_dir_all(&scratch)?;
    Ok(if diff.is_empty() {
        Verdict::Identical
    } else {
        Verdict::Different(diff)
    })
}
