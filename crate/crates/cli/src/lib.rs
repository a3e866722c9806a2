//! Command-line harness: index tables, exact solves, simulation, bounds,
//! verification reports and parameter sweeps, written as CSV and JSON.

pub mod commands;
pub mod policies;
pub mod sweep;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use interdelivery::sim::SimConfig;
use interdelivery::Mode;

use crate::commands::{load_scenario, mode_from_flags, prepare_out};
use crate::policies::{PolicyKind, TieFlag};
use crate::sweep::{Method, Preset, SweepSpec};
use crate::verify::VerifyOptions;

#[derive(Debug, Parser)]
#[command(
    name = "interdelivery",
    version,
    about = "Index scheduling for regular packet delivery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ModeFlag {
    #[default]
    Avg,
    Disc,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    #[arg(long, value_enum, default_value_t = ModeFlag::Avg)]
    pub mode: ModeFlag,
    /// Discount factor, required with `--mode disc`.
    #[arg(long)]
    pub beta: Option<f64>,
}

impl ModeArgs {
    fn mode(&self) -> Result<Mode> {
        mode_from_flags(self.mode == ModeFlag::Disc, self.beta)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate printed, exact and oracle indices per client (index.csv).
    Index {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        /// Largest elapsed time tabulated.
        #[arg(long, default_value_t = 20)]
        nmax: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the joint chain exactly (solve.json, policy.csv).
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        #[arg(long, default_value_t = 50)]
        smax: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate policies (simulate.json, optional trace_<policy>.csv).
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "index")]
        policies: Vec<PolicyKind>,
        #[command(flatten)]
        mode: ModeArgs,
        #[arg(long, default_value_t = 100_000)]
        horizon: u64,
        #[arg(long, default_value_t = 10)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TieFlag::Lowest)]
        tie: TieFlag,
        /// Truncation used when the optimal policy is requested.
        #[arg(long, default_value_t = 50)]
        smax: u32,
        /// Write a slot-by-slot CSV of the first replication.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Capacity and Lagrangian upper bounds (bounds.json, bounds_curve.csv).
    Bounds {
        #[arg(long)]
        scenario: PathBuf,
        /// Grid points of the subsidy curve.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Structural checks and printed-formula comparison (errata.json, errata.md).
    Verify {
        /// Check this scenario's clients instead of the default grid.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        nmax: u32,
        /// Discount factor of the discounted structural checks.
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare policies over a parameter sweep (sweep.csv, summary.json).
    Sweep {
        /// Sweep specification JSON.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, value_enum, value_delimiter = ',')]
        policies: Option<Vec<PolicyKind>>,
        #[arg(long)]
        smax: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        tie: Option<TieFlag>,
        /// Also simulate with this horizon (requires --reps).
        #[arg(long, requires = "reps")]
        horizon: Option<u64>,
        #[arg(long, requires = "horizon")]
        reps: Option<u64>,
        /// With --horizon: skip exact policy evaluation.
        #[arg(long, requires = "horizon")]
        sim_only: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn report(paths: &[&str], out: &Path) {
    for p in paths {
        println!("{}", out.join(p).display());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index {
            scenario,
            mode,
            nmax,
            common,
        } => {
            let sc = load_scenario(&scenario)?;
            let mode = mode.mode()?;
            prepare_out(&common.out)?;
            let rows = commands::index_rows(&sc, mode, nmax)?;
            commands::write_index_csv(&common.out.join("index.csv"), mode, &rows)?;
            report(&["index.csv"], &common.out);
        }
        Command::Solve {
            scenario,
            mode,
            smax,
            common,
        } => {
            let sc = load_scenario(&scenario)?;
            let mode = mode.mode()?;
            prepare_out(&common.out)?;
            let summary = commands::cmd_solve(&sc, mode, smax, &common.out)?;
            if let Some(g) = summary.gain {
                println!("gain {g}");
            }
            report(&["solve.json", "policy.csv"], &common.out);
        }
        Command::Simulate {
            scenario,
            policies,
            mode,
            horizon,
            reps,
            seed,
            tie,
            smax,
            trace,
            common,
        } => {
            let sc = load_scenario(&scenario)?;
            let args = commands::SimulateArgs {
                policies,
                mode: mode.mode()?,
                tie: tie.rule(seed),
                config: SimConfig::new(horizon, reps, seed),
                s_max: smax,
                trace,
            };
            prepare_out(&common.out)?;
            for r in commands::cmd_simulate(&sc, &args, &common.out)? {
                let se = r
                    .result
                    .reward
                    .stderr
                    .map(|s| format!(" ± {s}"))
                    .unwrap_or_default();
                println!("{} {}{se}", r.policy.name(), r.result.reward.mean);
            }
            report(&["simulate.json"], &common.out);
        }
        Command::Bounds {
            scenario,
            resolution,
            common,
        } => {
            let sc = load_scenario(&scenario)?;
            prepare_out(&common.out)?;
            let b = commands::cmd_bounds(&sc, resolution, &common.out)?;
            println!(
                "capacity_bound {}\nlagrangian_bound {}",
                b.capacity_bound, b.lagrangian_bound
            );
            report(&["bounds.json", "bounds_curve.csv"], &common.out);
        }
        Command::Verify {
            scenario,
            nmax,
            beta,
            common,
        } => {
            let mut options = match scenario {
                Some(path) => VerifyOptions::for_scenario(&load_scenario(&path)?),
                None => VerifyOptions::default_grid(),
            };
            options.n_max = nmax;
            options.structure_beta = beta;
            if !options.limit_betas.contains(&beta) {
                options.limit_betas.push(beta);
                options.limit_betas.sort_by(f64::total_cmp);
            }
            prepare_out(&common.out)?;
            let rep = verify::verify(&options)?;
            verify::write_report(&common.out, &rep)?;
            println!(
                "verification {}",
                if rep.passed { "passed" } else { "failed" }
            );
            report(&["errata.json", "errata.md"], &common.out);
        }
        Command::Sweep {
            spec,
            preset,
            policies,
            smax,
            seed,
            tie,
            horizon,
            reps,
            sim_only,
            common,
        } => {
            let mut spec = match (spec, preset) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    SweepSpec::from_json(&text)
                        .with_context(|| format!("invalid sweep spec {}", path.display()))?
                }
                (None, Some(p)) => SweepSpec::preset(p),
                (None, None) => bail!("sweep needs --spec <path> or --preset <fig1|fig2|fig3>"),
            };
            if let Some(p) = policies {
                spec.policies = p;
            }
            if let Some(s) = smax {
                spec.s_max = s;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(t) = tie {
                spec.tie = t;
            }
            if let (Some(horizon), Some(reps)) = (horizon, reps) {
                spec.method = if sim_only {
                    Method::Simulate { horizon, reps }
                } else {
                    Method::Both { horizon, reps }
                };
            }
            prepare_out(&common.out)?;
            let output = sweep::run_sweep(&spec)?;
            sweep::write_sweep(&common.out, &spec, &output)?;
            for p in &output.summary.policies {
                if let (Some(rel), Some(abs), Some(ok)) =
                    (p.max_gap_rel, p.max_gap_abs, p.near_optimal)
                {
                    println!(
                        "{} max_gap_rel {rel} max_gap_abs {abs} near_optimal {ok}",
                        p.policy.name()
                    );
                }
            }
            report(&["sweep.csv", "summary.json"], &common.out);
        }
    }
    Ok(())
}
