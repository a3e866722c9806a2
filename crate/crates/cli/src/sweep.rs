//! Parameter sweeps comparing scheduling policies against the exact
//! optimum and the upper bounds.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use interdelivery::jointmdp::{evaluate_policy, solve_average, JointMdp, MdpSolution};
use interdelivery::sim::{run_with, SimConfig};
use interdelivery::singlearm::SolverConfig;
use interdelivery::{ClientParams, Error, Mode, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{bounds, write_json};
use crate::policies::{self, PolicyKind, TieFlag};

/// Frozen column order of `sweep.csv`.
pub const COLUMNS: [&str; 9] = [
    "sweep_param",
    "sweep_value",
    "policy",
    "gain_exact",
    "gain_sim",
    "gain_sim_stderr",
    "gap_rel",
    "capacity_bound",
    "lagrangian_bound",
];

/// Written in `gain_exact` when the point exceeds the state-action budget.
pub const BUDGET_MARKER: &str = "budget-exceeded";

const BOUND_RESOLUTION: usize = 50;
const SPOT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "p")]
    P,
    #[serde(rename = "theta")]
    Theta,
    #[serde(rename = "R")]
    R,
}

impl Param {
    fn label(self) -> &'static str {
        match self {
            Param::P => "p",
            Param::Theta => "theta",
            Param::R => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Varied {
    /// 0-based client position.
    pub client: usize,
    pub param: Param,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Method {
    #[default]
    Exact,
    Simulate {
        horizon: u64,
        reps: u64,
    },
    Both {
        horizon: u64,
        reps: u64,
    },
}

impl Method {
    fn exact(self) -> bool {
        matches!(self, Method::Exact | Method::Both { .. })
    }

    fn simulation(self) -> Option<(u64, u64)> {
        match self {
            Method::Exact => None,
            Method::Simulate { horizon, reps } | Method::Both { horizon, reps } => {
                Some((horizon, reps))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotCheck {
    pub s_max: u32,
    pub points: usize,
}

fn default_s_max() -> u32 {
    50
}

fn default_spot_check() -> Option<SpotCheck> {
    Some(SpotCheck {
        s_max: 100,
        points: 3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub base: Scenario,
    pub vary: Varied,
    pub values: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_s_max")]
    pub s_max: u32,
    #[serde(default = "default_spot_check")]
    pub spot_check: Option<SpotCheck>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tie: TieFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Vary p_2 over 0.1..1.0 with p_1 = 0.8, θ = 3, R = 1.
    Fig1,
    /// Vary θ_2 over 1..10 with p = (0.8, 0.6), θ_1 = 3, R = 1.
    Fig2,
    /// Vary R_2 over {0.5, 1, 2, .., 10} with p = (0.8, 0.6), θ = 5, R_1 = 5.
    Fig3,
}

fn two_clients(a: (f64, f64, f64), b: (f64, f64, f64)) -> Scenario {
    let c = |(p, r, t): (f64, f64, f64)| {
        ClientParams::new(p, r, t).expect("preset parameters are valid")
    };
    Scenario::new(vec![c(a), c(b)], 1).expect("preset scenario is valid")
}

impl SweepSpec {
    pub fn preset(preset: Preset) -> SweepSpec {
        let (name, base, param, values) = match preset {
            Preset::Fig1 => (
                "fig1",
                two_clients((0.8, 1.0, 3.0), (0.6, 1.0, 3.0)),
                Param::P,
                (1..=10).map(|j| f64::from(j) / 10.0).collect(),
            ),
            Preset::Fig2 => (
                "fig2",
                two_clients((0.8, 1.0, 3.0), (0.6, 1.0, 3.0)),
                Param::Theta,
                (1..=10).map(f64::from).collect(),
            ),
            Preset::Fig3 => (
                "fig3",
                two_clients((0.8, 5.0, 5.0), (0.6, 1.0, 5.0)),
                Param::R,
                std::iter::once(0.5)
                    .chain((1..=10).map(f64::from))
                    .collect(),
            ),
        };
        SweepSpec {
            name: name.into(),
            base,
            vary: Varied { client: 1, param },
            values,
            policies: vec![PolicyKind::Optimal, PolicyKind::Index],
            method: Method::Exact,
            s_max: default_s_max(),
            spot_check: default_spot_check(),
            seed: 0,
            tie: TieFlag::Lowest,
        }
    }

    pub fn from_json(text: &str) -> Result<SweepSpec> {
        let spec: SweepSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn param_label(&self) -> String {
        format!("clients[{}].{}", self.vary.client, self.vary.param.label())
    }

    pub fn scenario_at(&self, value: f64) -> Result<Scenario> {
        let i = self.vary.client;
        let c = self.base.client(i);
        let (p, r, t) = match self.vary.param {
            Param::P => (value, c.weight, c.theta),
            Param::R => (c.p, value, c.theta),
            Param::Theta => (c.p, c.weight, value),
        };
        let client = ClientParams::new(p, r, t)
            .with_context(|| format!("sweep value {value} for {}", self.param_label()))?;
        Ok(self.base.with_client(i, client)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vary.client >= self.base.n() {
            bail!(
                "vary.client: {} out of range for {} clients",
                self.vary.client,
                self.base.n()
            );
        }
        if self.values.is_empty() {
            bail!("values: at least one sweep value is required");
        }
        if self.policies.is_empty() {
            bail!("policies: at least one policy is required");
        }
        if let Some((horizon, reps)) = self.method.simulation() {
            if horizon == 0 || reps == 0 {
                bail!("method: horizon and reps must be positive");
            }
        }
        if let Some(spot) = self.spot_check {
            if spot.s_max < 1 {
                bail!("spot_check.s_max: must be at least 1");
            }
        }
        for &v in &self.values {
            self.scenario_at(v)?;
        }
        Ok(())
    }
}

/// One cell of the exact-gain column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "value")]
pub enum Exact {
    NotRequested,
    BudgetExceeded,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub sweep_value: f64,
    pub policy: PolicyKind,
    pub gain_exact: Exact,
    pub gain_sim: Option<f64>,
    pub gain_sim_stderr: Option<f64>,
    pub gap_rel: Option<f64>,
    pub capacity_bound: f64,
    pub lagrangian_bound: f64,
    /// Optimal gain of the point, when solved.
    #[serde(skip)]
    pub optimal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotResult {
    pub sweep_value: f64,
    pub s_max: u32,
    pub gain: f64,
    pub spot_s_max: u32,
    pub spot_gain: Option<f64>,
    pub difference: Option<f64>,
    pub within_tolerance: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub max_gap_rel: Option<f64>,
    pub max_gap_abs: Option<f64>,
    /// Within 5% relative, or 0.05 absolute where `|optimal| < 0.2`, at every
    /// exactly evaluated point.
    pub near_optimal: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sweep_value: f64,
    pub policy: PolicyKind,
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub name: String,
    pub sweep_param: String,
    pub values: Vec<f64>,
    pub s_max: u32,
    pub seed: u64,
    pub method: Method,
    pub policies: Vec<PolicySummary>,
    pub skipped_exact: Vec<f64>,
    pub spot_check: Vec<SpotResult>,
    pub violations: Vec<Violation>,
    pub invariants_hold: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<Row>,
    pub summary: SweepSummary,
}

fn solve_point(scenario: &Scenario, s_max: u32) -> Result<Option<(JointMdp, MdpSolution)>> {
    match JointMdp::new(scenario, s_max) {
        Ok(mdp) => {
            let sol = solve_average(&mdp, &SolverConfig::default())?;
            Ok(Some((mdp, sol)))
        }
        Err(Error::BudgetExceeded { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn run_point(spec: &SweepSpec, value: f64) -> Result<Vec<Row>> {
    let scenario = spec.scenario_at(value)?;
    let (bounds, _) = bounds(&scenario, BOUND_RESOLUTION)?;
    let needs_solve = spec.method.exact() || spec.policies.contains(&PolicyKind::Optimal);
    let solved = if needs_solve {
        solve_point(&scenario, spec.s_max)?
    } else {
        None
    };
    let optimal = solved.as_ref().and_then(|(_, s)| s.gain);
    let tie = spec.tie.rule(spec.seed);
    let config = SolverConfig::default();

    let mut rows = Vec::with_capacity(spec.policies.len());
    for &kind in &spec.policies {
        let opt_ref = solved.as_ref().map(|(m, s)| (m, s));
        let policy = match (kind, opt_ref) {
            (PolicyKind::Optimal, None) => None,
            _ => Some(policies::build(
                kind,
                &scenario,
                Mode::Average,
                tie,
                spec.seed,
                opt_ref,
            )?),
        };
        let gain_exact = match (&solved, &policy) {
            _ if !spec.method.exact() => Exact::NotRequested,
            (None, _) | (_, None) => Exact::BudgetExceeded,
            (Some((_, sol)), Some(_)) if kind == PolicyKind::Optimal => {
                Exact::Value(sol.gain.unwrap_or(f64::NAN))
            }
            (Some((mdp, _)), Some(policy)) => {
                let table = policy.to_table(mdp)?;
                let gain = evaluate_policy(mdp, &table, &config)?
                    .gain
                    .unwrap_or(f64::NAN);
                Exact::Value(gain)
            }
        };
        let (gain_sim, gain_sim_stderr) = match (spec.method.simulation(), &policy) {
            (Some((horizon, reps)), Some(policy)) => {
                let res = run_with(&scenario, policy, &SimConfig::new(horizon, reps, spec.seed))?;
                (Some(res.reward.mean), res.reward.stderr)
            }
            _ => (None, None),
        };
        let compared = match gain_exact {
            Exact::Value(g) => Some(g),
            _ => gain_sim,
        };
        let gap_rel = match (optimal, compared) {
            (Some(opt), Some(g)) => Some((opt - g) / opt.abs()),
            _ => None,
        };
        rows.push(Row {
            sweep_value: value,
            policy: kind,
            gain_exact,
            gain_sim,
            gain_sim_stderr,
            gap_rel,
            capacity_bound: bounds.capacity_bound,
            lagrangian_bound: bounds.lagrangian_bound,
            optimal,
        });
    }
    Ok(rows)
}

fn spot_points(n: usize, count: usize) -> Vec<usize> {
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if count >= n {
        return (0..n).collect();
    }
    let mut picks: Vec<usize> = (0..count)
        .map(|j| {
            if count == 1 {
                0
            } else {
                j * (n - 1) / (count - 1)
            }
        })
        .collect();
    picks.dedup();
    picks
}

fn run_spot_check(spec: &SweepSpec, rows: &[Row]) -> Result<Vec<SpotResult>> {
    let Some(spot) = spec.spot_check else {
        return Ok(Vec::new());
    };
    spot_points(spec.values.len(), spot.points)
        .into_par_iter()
        .map(|j| {
            let value = spec.values[j];
            let Some(gain) = rows
                .iter()
                .find(|r| r.sweep_value == value)
                .and_then(|r| r.optimal)
            else {
                return Ok(None);
            };
            let scenario = spec.scenario_at(value)?;
            let spot_gain = solve_point(&scenario, spot.s_max)?.and_then(|(_, s)| s.gain);
            let difference = spot_gain.map(|g| gain - g);
            Ok(Some(SpotResult {
                sweep_value: value,
                s_max: spec.s_max,
                gain,
                spot_s_max: spot.s_max,
                spot_gain,
                difference,
                within_tolerance: difference.map(|d| d.abs() < SPOT_TOL),
            }))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

fn near_optimal(opt: f64, gain: f64) -> bool {
    if opt.abs() < 0.2 {
        (opt - gain).abs() <= 0.05
    } else {
        (opt - gain) / opt.abs() <= 0.05
    }
}

fn summarize(spec: &SweepSpec, rows: &[Row], spot_check: Vec<SpotResult>) -> SweepSummary {
    let mut violations = Vec::new();
    let mut skipped_exact: Vec<f64> = Vec::new();
    for r in rows {
        if r.gain_exact == Exact::BudgetExceeded && !skipped_exact.contains(&r.sweep_value) {
            skipped_exact.push(r.sweep_value);
        }
        let Some(opt) = r.optimal else { continue };
        let mut flag = |check: &str, detail: String| {
            violations.push(Violation {
                sweep_value: r.sweep_value,
                policy: r.policy,
                check: check.into(),
                detail,
            })
        };
        if let (Some(g), Some(se)) = (r.gain_sim, r.gain_sim_stderr) {
            if g > opt + 3.0 * se {
                flag(
                    "sim_below_optimal",
                    format!("simulated {g} > optimal {opt} + 3·{se}"),
                );
            }
        }
        if let Exact::Value(g) = r.gain_exact {
            if g > opt + 1e-8 {
                flag("exact_below_optimal", format!("exact {g} > optimal {opt}"));
            }
        }
        if r.capacity_bound < opt - 1e-6 {
            flag(
                "capacity_bound_dominates",
                format!("{} < {opt}", r.capacity_bound),
            );
        }
        if r.lagrangian_bound < opt - 1e-6 {
            flag(
                "lagrangian_bound_dominates",
                format!("{} < {opt}", r.lagrangian_bound),
            );
        }
    }
    let policies = spec
        .policies
        .iter()
        .map(|&kind| {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.policy == kind)
                .filter_map(|r| match (r.optimal, r.gain_exact) {
                    (Some(opt), Exact::Value(g)) => Some((opt, g)),
                    _ => None,
                })
                .collect();
            let max = |f: &dyn Fn(&(f64, f64)) -> f64| pairs.iter().map(f).reduce(f64::max);
            PolicySummary {
                policy: kind,
                max_gap_rel: max(&|(o, g)| (o - g) / o.abs()),
                max_gap_abs: max(&|(o, g)| o - g),
                near_optimal: (!pairs.is_empty())
                    .then(|| pairs.iter().all(|&(o, g)| near_optimal(o, g))),
            }
        })
        .collect();
    SweepSummary {
        name: spec.name.clone(),
        sweep_param: spec.param_label(),
        values: spec.values.clone(),
        s_max: spec.s_max,
        seed: spec.seed,
        method: spec.method,
        policies,
        skipped_exact,
        spot_check,
        invariants_hold: violations.is_empty(),
        violations,
    }
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let rows: Vec<Row> = spec
        .values
        .par_iter()
        .map(|&v| run_point(spec, v))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let spot = run_spot_check(spec, &rows)?;
    let summary = summarize(spec, &rows, spot);
    Ok(SweepOutput { rows, summary })
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep(out: &Path, spec: &SweepSpec, output: &SweepOutput) -> Result<()> {
    let path = out.join("sweep.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(COLUMNS)?;
    let label = spec.param_label();
    for r in &output.rows {
        let exact = match r.gain_exact {
            Exact::NotRequested => String::new(),
            Exact::BudgetExceeded => BUDGET_MARKER.to_string(),
            Exact::Value(g) => g.to_string(),
        };
        w.write_record([
            label.clone(),
            r.sweep_value.to_string(),
            r.policy.name().to_string(),
            exact,
            cell(r.gain_sim),
            cell(r.gain_sim_stderr),
            cell(r.gap_rel),
            r.capacity_bound.to_string(),
            r.lagrangian_bound.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&out.join("summary.json"), &output.summary)
}
