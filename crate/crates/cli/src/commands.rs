use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use interdelivery::bounds::{capacity_bound, default_w_range, lagrangian_bound, CurvePoint};
use interdelivery::index::{avg_index_paper, discounted_index_paper};
use interdelivery::jointmdp::{solve_average, solve_discounted, JointMdp, MdpSolution};
use interdelivery::sim::{
    reward_estimates, run_with, trace, RewardEstimates, SimConfig, SimResult,
};
use interdelivery::singlearm::{
    discounted_indifference_index, oracle_table, renewal_index, OracleConfig, SolverConfig,
};
use interdelivery::{DiscountFactor, Mode, Scenario, TieRule};
use serde::Serialize;

use crate::policies::{self, PolicyKind};

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexRow {
    pub client: usize,
    pub n: u32,
    pub printed: f64,
    pub closed_form: f64,
    pub oracle: f64,
}

/// Index values per client for `n = 0..=n_max`: the printed closed form,
/// the exact closed form and the bisection oracle.
pub fn index_rows(scenario: &Scenario, mode: Mode, n_max: u32) -> Result<Vec<IndexRow>> {
    let mut rows = Vec::new();
    for (i, c) in scenario.clients().iter().enumerate() {
        let oracle = oracle_table(c, mode, n_max, &OracleConfig::default())?;
        for n in 0..=n_max {
            let (printed, closed_form) = match mode {
                Mode::Average => (avg_index_paper(n, c), renewal_index(n, c)),
                Mode::Discounted { beta } => (
                    discounted_index_paper(n, c, beta),
                    discounted_indifference_index(n, c, beta),
                ),
            };
            rows.push(IndexRow {
                client: i,
                n,
                printed,
                closed_form,
                oracle: oracle[n as usize],
            });
        }
    }
    Ok(rows)
}

pub fn write_index_csv(path: &Path, mode: Mode, rows: &[IndexRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    match mode {
        Mode::Average => w.write_record(["client", "n", "W_paper", "W_renewal", "W_oracle"])?,
        Mode::Discounted { .. } => {
            w.write_record(["client", "n", "W_paper_disc", "W_indifference", "W_oracle"])?
        }
    }
    for r in rows {
        w.write_record([
            r.client.to_string(),
            r.n.to_string(),
            fmt(r.printed),
            fmt(r.closed_form),
            fmt(r.oracle),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub mode: Mode,
    pub s_max: u32,
    pub states: usize,
    pub gain: Option<f64>,
    /// Value (discounted) or bias (average) of the all-zeros state.
    pub value_at_zero: f64,
    pub residual: f64,
    pub iterations: u64,
    pub policy_csv: String,
}

pub fn solve(scenario: &Scenario, mode: Mode, s_max: u32) -> Result<(JointMdp, MdpSolution)> {
    let mdp = JointMdp::new(scenario, s_max)?;
    let config = SolverConfig::default();
    let sol = match mode {
        Mode::Average => solve_average(&mdp, &config)?,
        Mode::Discounted { beta } => solve_discounted(&mdp, beta.get(), &config)?,
    };
    Ok((mdp, sol))
}

/// Policy table: one row per state with its elapsed times and the served
/// clients (0-based, separated by `;`).
pub fn write_policy_csv(path: &Path, mdp: &JointMdp, sol: &MdpSolution) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let n = mdp.scenario().n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("s_{i}")).collect();
    header.push("serve".into());
    w.write_record(&header)?;
    for x in 0..mdp.num_states() {
        let mut record: Vec<String> = mdp
            .state_at(x)
            .elapsed
            .iter()
            .map(|s| s.to_string())
            .collect();
        let action = &mdp.actions()[sol.policy[x] as usize];
        record.push(
            action
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_solve(scenario: &Scenario, mode: Mode, s_max: u32, out: &Path) -> Result<SolveSummary> {
    let (mdp, sol) = solve(scenario, mode, s_max)?;
    let policy_path = out.join("policy.csv");
    write_policy_csv(&policy_path, &mdp, &sol)?;
    let summary = SolveSummary {
        mode,
        s_max,
        states: mdp.num_states(),
        gain: sol.gain,
        value_at_zero: sol.values[0],
        residual: sol.residual,
        iterations: sol.iterations,
        policy_csv: "policy.csv".into(),
    };
    write_json(&out.join("solve.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub policy: PolicyKind,
    pub estimates: RewardEstimates,
    pub result: SimResult,
}

pub struct SimulateArgs {
    pub policies: Vec<PolicyKind>,
    pub mode: Mode,
    pub tie: TieRule,
    pub config: SimConfig,
    pub s_max: u32,
    pub trace: bool,
}

pub fn cmd_simulate(
    scenario: &Scenario,
    args: &SimulateArgs,
    out: &Path,
) -> Result<Vec<SimulationReport>> {
    let optimal = if args.policies.contains(&PolicyKind::Optimal) {
        Some(solve(scenario, Mode::Average, args.s_max)?)
    } else {
        None
    };
    let mut reports = Vec::new();
    for &kind in &args.policies {
        let policy = policies::build(
            kind,
            scenario,
            args.mode,
            args.tie,
            args.config.seed,
            optimal.as_ref().map(|(m, s)| (m, s)),
        )?;
        let result = run_with(scenario, &policy, &args.config)?;
        if args.trace {
            write_trace(
                &out.join(format!("trace_{}.csv", kind.name())),
                scenario,
                &policy,
                &args.config,
            )?;
        }
        reports.push(SimulationReport {
            policy: kind,
            estimates: reward_estimates(scenario, &result),
            result,
        });
    }
    write_json(&out.join("simulate.json"), &reports)?;
    Ok(reports)
}

/// Slot-by-slot CSV of replication 0.
fn write_trace(
    path: &Path,
    scenario: &Scenario,
    policy: &interdelivery::sim::Policy,
    config: &SimConfig,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["slot", "state", "decision", "deliveries"])?;
    let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(";");
    let mut failure = None;
    trace(scenario, policy, config, 0, &mut |r| {
        if failure.is_some() {
            return;
        }
        let record = [
            r.slot.to_string(),
            join(&mut r.state.elapsed.iter().map(|s| s.to_string())),
            join(&mut r.active.iter().map(|i| i.to_string())),
            join(&mut r.delivered.iter().map(|i| i.to_string())),
        ];
        if let Err(e) = w.write_record(&record) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsSummary {
    pub capacity_bound: f64,
    pub lagrangian_bound: f64,
    pub w_star: f64,
    pub rates: Vec<f64>,
    pub multiplier: f64,
    pub kkt_residual: f64,
    pub thresholds: Vec<u32>,
    pub fallback_clients: Vec<usize>,
    pub curve_csv: String,
}

pub fn bounds(scenario: &Scenario, resolution: usize) -> Result<(BoundsSummary, Vec<CurvePoint>)> {
    let cap = capacity_bound(scenario)?;
    let lag = lagrangian_bound(scenario, default_w_range(scenario), resolution)?;
    Ok((
        BoundsSummary {
            capacity_bound: cap.bound,
            lagrangian_bound: lag.bound,
            w_star: lag.w_star,
            rates: cap.rates,
            multiplier: cap.multiplier,
            kkt_residual: cap.kkt_residual,
            thresholds: lag.thresholds,
            fallback_clients: lag.fallback_clients,
            curve_csv: "bounds_curve.csv".into(),
        },
        lag.curve,
    ))
}

pub fn cmd_bounds(scenario: &Scenario, resolution: usize, out: &Path) -> Result<BoundsSummary> {
    let (summary, curve) = bounds(scenario, resolution)?;
    let mut w = csv::Writer::from_path(out.join("bounds_curve.csv"))?;
    w.write_record(["w", "objective"])?;
    for p in &curve {
        w.write_record([fmt(p.w), fmt(p.value)])?;
    }
    w.flush()?;
    write_json(&out.join("bounds.json"), &summary)?;
    Ok(summary)
}

pub fn mode_from_flags(disc: bool, beta: Option<f64>) -> Result<Mode> {
    if disc {
        let beta = beta.context("--mode disc requires --beta")?;
        Ok(Mode::Discounted {
            beta: DiscountFactor::new(beta)?,
        })
    } else {
        Ok(Mode::Average)
    }
}
