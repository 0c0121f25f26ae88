//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::eval::{evaluate_detector, handle_collisions, handle_csv, handling_metrics};
use crate::pipeline::{
    load_detectors, load_prepared, load_run_config, penetrating_users, prepare, run_seed, save_prepared, seed_dir,
    synthesize, write_seed_run, write_synth,
};
use crate::report::write_report;
use crate::selftest::run_selftest;

#[derive(Debug, Parser)]
#[command(name = "selfcol", about = "Neural self-collision detection trained by active learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML experiment config; unknown keys are rejected.
    #[arg(long, conflicts_with = "profile")]
    pub config: Option<PathBuf>,
    /// Built-in profile: `desk` or `full-<scape|swing|jump|skirt|hand>`.
    #[arg(long)]
    pub profile: Option<String>,
    /// Output directory shared by all subcommands.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let cfg = match (&self.config, &self.profile) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::profile(name)?,
            (None, None) => ExperimentConfig::desk(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize posed meshes and write OBJ files with a manifest.
    Synth(ConfigArgs),
    /// Train the autoencoder on the collision-free meshes.
    TrainAe(ConfigArgs),
    /// Run methods for each seed and write metrics and checkpoints.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Restrict to these methods (default: all configured).
        #[arg(long = "method")]
        methods: Vec<Method>,
        /// Restrict to these seeds (default: all configured).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Re-evaluate a run's detector checkpoints on a fresh test set.
    EvalDetect {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 12345)]
        test_seed: u64,
        /// Test-set size (default: from the run config).
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Re-run collision handling for a run's detector checkpoints.
    EvalHandle {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 12345)]
        handle_seed: u64,
        /// Number of penetrating user codes (default: from the run config).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Summarize all runs under the output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Report directory (default: <out>/report).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Fast internal consistency checks.
    Selftest,
}

/// Process exit status: 0 success, 1 configuration error, 2 runtime failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        1
    } else {
        2
    }
}

fn write_csv(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = c.load()?;
            let (family, synth) = synthesize(&cfg)?;
            let dir = c.out.join("data");
            write_synth(&dir, &family, &synth)?;
            println!(
                "{} meshes, {} collision-free ({:.1}%), written to {}",
                synth.report.count,
                synth.report.collision_free,
                100.0 * synth.report.collision_free_fraction,
                dir.display()
            );
        }
        Command::TrainAe(c) => {
            let cfg = c.load()?;
            let prep = prepare(&cfg)?;
            save_prepared(&c.out, &prep)?;
            fs::write(c.out.join("config.toml"), cfg.to_toml())?;
            println!(
                "loss {:.3e} -> {:.3e}; mean vertex error {:.2}% of diagonal; {} collision-free training meshes",
                prep.train_log.initial_loss(),
                prep.train_log.final_loss(),
                100.0 * prep.reconstruction.mean_vertex_error,
                prep.synth.report.collision_free
            );
        }
        Command::Run { common, methods, seeds } => {
            let mut cfg = common.load()?;
            if !methods.is_empty() {
                cfg.methods = methods;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            cfg.validate()?;
            let prep = load_prepared(&common.out, &cfg)?;
            for &seed in &cfg.seeds {
                let run = run_seed(&cfg, &prep, seed)?;
                if !run.checks.ok() {
                    bail!("seed {seed}: sample invariant violated: {:?}", run.checks);
                }
                let dir = write_seed_run(&common.out, &cfg, &run)?;
                println!("seed {seed}: wrote {}", dir.display());
            }
        }
        Command::EvalDetect {
            out,
            seed,
            method,
            test_seed,
            n_test,
        } => {
            let cfg = load_run_config(&out, seed)?;
            let prep = load_prepared(&out, &cfg)?;
            let dets = load_detectors(&out, seed, method)?;
            let zs = prep.bx.sample_uniform(n_test.unwrap_or(cfg.eval.n_test), test_seed);
            let test = prep.oracle().label_batch(&zs)?;
            let mut csv = String::from("iteration,accuracy,fnr,fpr,positives,total\n");
            for (it, det) in dets.iter().enumerate() {
                let m = evaluate_detector(det, &test)?;
                csv.push_str(&format!("{it},{},{},{},{},{}\n", m.accuracy, m.fnr, m.fpr, m.positives, m.total));
            }
            let path = seed_dir(&out, seed).join(method.slug()).join(format!("detect-{test_seed}.csv"));
            write_csv(&path, &csv)?;
        }
        Command::EvalHandle {
            out,
            seed,
            method,
            handle_seed,
            trials,
        } => {
            let cfg = load_run_config(&out, seed)?;
            let prep = load_prepared(&out, &cfg)?;
            let dets = load_detectors(&out, seed, method)?;
            let oracle = prep.oracle();
            let users = penetrating_users(&prep.bx, &oracle, trials.unwrap_or(cfg.eval.n_handle), handle_seed)?;
            let mdir = seed_dir(&out, seed).join(method.slug());
            let mut csv = String::from("iteration,success_rate,mean_reduction,mean_embedding_diff,feasible,infeasible\n");
            for (it, det) in dets.iter().enumerate() {
                let (records, _) = handle_collisions(det, &prep.ae, &oracle, &users, cfg.eval.objective, &cfg.alm)?;
                let m = handling_metrics(&records);
                csv.push_str(&format!(
                    "{it},{},{},{},{},{}\n",
                    m.success_rate, m.mean_reduction, m.mean_embedding_diff, m.feasible, m.infeasible
                ));
                fs::write(mdir.join(format!("handle-{handle_seed}-{it}.csv")), handle_csv(&records))?;
            }
            write_csv(&mdir.join(format!("handle-{handle_seed}.csv")), &csv)?;
        }
        Command::Report { out, dir } => {
            let dir = dir.unwrap_or_else(|| out.join("report"));
            let rows = write_report(&out, &dir)?;
            print!("{}", fs::read_to_string(dir.join("summary.md"))?);
            println!("{} summary rows written to {}", rows.len(), dir.display());
        }
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                bail!("selftest failed");
            }
        }
    }
    Ok(())
}
