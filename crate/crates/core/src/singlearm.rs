//! The single-client subsidy problem.
//!
//! One client is considered in isolation and is paid a subsidy `w` for every
//! slot it stays passive. Under a threshold policy `T` the client idles while
//! `s < T` and attempts transmission while `s >= T`. The Whittle index `W(n)`
//! is the smallest subsidy that makes idling optimal in state `n`.
//!
//! This module evaluates threshold policies in closed form (renewal-reward
//! for the average criterion, an exact linear fixed point for the discounted
//! one), solves the truncated arm numerically by relative value iteration and
//! extracts the index by bisection over `w` ([`oracle_index`]).
//!
//! Truncation: on the solved chain the state saturates at `s_max`. Passive at
//! `s_max` stays at `s_max`; active at `s_max` resets to `0` with probability
//! `p` and stays otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{geom_pgf, DiscountFactor, Mode};
use crate::model::ClientParams;

pub const DEFAULT_S_MAX: u32 = 200;
/// States within this distance of `s_max` are ignored by structural checks.
pub const BOUNDARY_MARGIN: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the span seminorm of successive differences falls below this.
    pub tol: f64,
    pub max_iter: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsidyArm {
    pub client: ClientParams,
    pub w: f64,
    pub mode: Mode,
    pub s_max: u32,
}

impl SubsidyArm {
    pub fn new(client: ClientParams, w: f64, mode: Mode, s_max: u32) -> Result<Self> {
        if s_max < 2 {
            return Err(Error::param("s_max", format!("must be >= 2, got {s_max}")));
        }
        if !w.is_finite() {
            return Err(Error::param("w", "subsidy must be finite"));
        }
        Ok(SubsidyArm {
            client,
            w,
            mode,
            s_max,
        })
    }
}

/// Passive for `s < T`, active for `s >= T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThresholdPolicy(pub u32);

impl ThresholdPolicy {
    pub fn is_passive(self, s: u32) -> bool {
        s < self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSolution {
    pub mode: Mode,
    pub w: f64,
    pub s_max: u32,
    /// Discounted: the optimal value function. Average: the bias, zero at state 0.
    pub values: Vec<f64>,
    /// Optimal average reward (average mode only).
    pub gain: Option<f64>,
    /// `passive[s]`: idling is optimal at `s` (ties resolve to passive).
    pub passive: Vec<bool>,
    /// Passive minus active action value, per state.
    pub advantage: Vec<f64>,
    pub residual: f64,
    pub iterations: u64,
}

impl ArmSolution {
    /// The threshold if the policy restricted to `0..limit` is of threshold
    /// type (a passive prefix followed by active states).
    pub fn threshold(&self, limit: u32) -> Option<ThresholdPolicy> {
        let limit = (limit as usize).min(self.passive.len());
        let t = self.passive[..limit].iter().take_while(|&&b| b).count();
        if self.passive[t..limit].iter().any(|&b| b) {
            None
        } else {
            Some(ThresholdPolicy(t as u32))
        }
    }

    fn passive_set(&self, limit: u32) -> Vec<u32> {
        (0..limit.min(self.passive.len() as u32))
            .filter(|&s| self.passive[s as usize])
            .collect()
    }
}

/// Long-run average reward of threshold `T` under subsidy `w` on the
/// untruncated chain, by renewal-reward: a cycle idles through `0..T`
/// then attempts until a geometric success.
pub fn threshold_avg_reward(t: u32, w: f64, client: &ClientParams) -> f64 {
    let (slope, intercept) = threshold_gain_affine(t, client);
    slope * w + intercept
}

/// `(slope, intercept)` of `w ↦ threshold_avg_reward(t, w, client)`.
pub fn threshold_gain_affine(t: u32, client: &ClientParams) -> (f64, f64) {
    let (p, r, tf) = (client.p, client.weight, f64::from(t));
    let cycle_len = tf + 1.0 / p;
    let fixed = r * client.theta - r * tf * (tf - 1.0) / 2.0 - r * (tf / p + (1.0 - p) / (p * p));
    (tf / cycle_len, fixed / cycle_len)
}

/// The subsidy at which thresholds `n` and `n + 1` earn the same average
/// reward: the exact root of two affine functions of `w`.
pub fn renewal_index(n: u32, client: &ClientParams) -> f64 {
    let p = client.p;
    let nf = f64::from(n);
    let (_, b0) = threshold_gain_affine(n, client);
    let (_, b1) = threshold_gain_affine(n + 1, client);
    let slope_gap = p / ((p * nf + 1.0) * (p * nf + p + 1.0));
    (b0 - b1) / slope_gap
}

/// Exact discounted value `c_start(T)` of threshold `T` on the untruncated
/// chain, from the linear fixed-point equations of the policy.
///
/// Active states `s >= T` satisfy `V(s) = A(s) + B·V(0)` with
/// `B = E β^X` and `A(s)` a geometric sum of rewards; passive states are
/// resolved by back substitution from `V(T)`.
pub fn threshold_discounted_value(
    t: u32,
    w: f64,
    client: &ClientParams,
    beta: DiscountFactor,
    start: u32,
) -> f64 {
    let b = beta.get();
    let big_b = geom_pgf(client.p, b).expect("validated parameters");
    let v0 = if t == 0 {
        active_tail(0, client, b) / (1.0 - big_b)
    } else {
        let pass = passive_sum(0, t, w, client, b);
        let bt = b.powi(t as i32);
        (pass + bt * active_tail(t, client, b)) / (1.0 - bt * big_b)
    };
    if start >= t {
        active_tail(start, client, b) + big_b * v0
    } else {
        let vt = active_tail(t, client, b) + big_b * v0;
        passive_sum(start, t, w, client, b) + b.powi((t - start) as i32) * vt
    }
}

/// `E Σ_{j<X} β^j r(s + j)` with `X ~ Geometric(p)`, i.e. the discounted
/// reward collected while attempting from `s` until the first success.
fn active_tail(s: u32, client: &ClientParams, b: f64) -> f64 {
    let q = b * (1.0 - client.p);
    let r = client.weight;
    let theta = if s == 0 { r * client.theta } else { 0.0 };
    -r * (f64::from(s) / (1.0 - q) + q / ((1.0 - q) * (1.0 - q))) + theta
}

/// `Σ_{j=0}^{to-from-1} β^j (w + r(from + j))`.
fn passive_sum(from: u32, to: u32, w: f64, client: &ClientParams, b: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for s in from..to {
        acc += disc * (w + client.reward_at(s));
        disc *= b;
    }
    acc
}

/// Discounted value of threshold `T` from `start`, computed along renewal
/// cycles `start → T → 0 → start` (for `start <= T`); states above the
/// threshold are reached from `c_0` through one attempt phase.
pub fn cycle_discounted_value(
    t: u32,
    w: f64,
    client: &ClientParams,
    beta: DiscountFactor,
    start: u32,
) -> f64 {
    let b = beta.get();
    let x = geom_pgf(client.p, b).expect("validated parameters");
    let through = |i: u32| {
        let reward = passive_sum(i, t, w, client, b)
            + b.powi((t - i) as i32) * active_tail(t, client, b)
            + b.powi((t - i) as i32) * x * passive_sum(0, i, w, client, b);
        reward / (1.0 - b.powi(t as i32) * x)
    };
    if start <= t {
        through(start)
    } else {
        active_tail(start, client, b) + x * through(0)
    }
}

/// Discounted counterpart of [`renewal_index`]: the subsidy with
/// `c_n(n + 1) = c_n(n)`, solved exactly since both sides are affine in `w`.
pub fn discounted_indifference_index(n: u32, client: &ClientParams, beta: DiscountFactor) -> f64 {
    let gap = |w: f64| {
        threshold_discounted_value(n + 1, w, client, beta, n)
            - threshold_discounted_value(n, w, client, beta, n)
    };
    let g0 = gap(0.0);
    let g1 = gap(1.0);
    -g0 / (g1 - g0)
}

/// Solves the truncated arm with default solver settings.
pub fn solve_arm(arm: &SubsidyArm) -> Result<ArmSolution> {
    solve_arm_with(arm, &SolverConfig::default(), None)
}

/// Relative value iteration anchored at state 0, for either criterion.
///
/// Each sweep applies the Bellman operator and subtracts the value at state
/// 0; iteration stops when the span of the update falls below `config.tol`.
/// For `p = 1` in average mode the chain can be periodic, so the operator is
/// mixed with the identity (`h ← ½h + ½Th`), which keeps gain and policy.
/// `warm` seeds the iteration (any vector of the right length).
pub fn solve_arm_with(
    arm: &SubsidyArm,
    config: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<ArmSolution> {
    let c = &arm.client;
    let s_max = arm.s_max as usize;
    let len = s_max + 1;
    let (disc, tau) = match arm.mode {
        Mode::Average => (1.0, if c.p >= 1.0 { 0.5 } else { 0.0 }),
        Mode::Discounted { beta } => (beta.get(), 0.0),
    };
    // Weight on the successor state; the remaining `tau` stays in place.
    let ahead = disc * (1.0 - tau);
    let p = c.p;
    let rewards: Vec<f64> = (0..len as u32).map(|s| c.reward_at(s)).collect();
    let mut h = match warm {
        Some(v) if v.len() == len => {
            let base = v[0];
            v.iter().map(|x| x - base).collect()
        }
        _ => vec![0.0; len],
    };
    let mut next = vec![0.0; len];
    let mut iterations = 0;
    let (mut lo, mut hi);
    loop {
        iterations += 1;
        lo = f64::INFINITY;
        hi = f64::NEG_INFINITY;
        let h0 = h[0];
        for s in 0..len {
            let hn = h[(s + 1).min(s_max)];
            let stay = rewards[s] + tau * h[s];
            let v = stay + (arm.w + ahead * hn).max(ahead * (p * h0 + (1.0 - p) * hn));
            let d = v - h[s];
            lo = lo.min(d);
            hi = hi.max(d);
            next[s] = v;
        }
        let base = next[0];
        for (dst, &src) in h.iter_mut().zip(&next) {
            *dst = src - base;
        }
        let span = hi - lo;
        if span < config.tol {
            break;
        }
        if iterations >= config.max_iter || !span.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                residual: span,
            });
        }
    }
    let mid = 0.5 * (lo + hi);
    let (values, gain) = match arm.mode {
        Mode::Average => (h.iter().map(|x| x * (1.0 - tau)).collect(), Some(mid)),
        Mode::Discounted { .. } => {
            let shift = mid / (1.0 - disc);
            (h.iter().map(|x| x + shift).collect(), None)
        }
    };
    let h0 = h[0];
    let advantage: Vec<f64> = (0..len)
        .map(|s| arm.w + ahead * p * (h[(s + 1).min(s_max)] - h0))
        .collect();
    let passive = advantage.iter().map(|&a| a >= 0.0).collect();
    Ok(ArmSolution {
        mode: arm.mode,
        w: arm.w,
        s_max: arm.s_max,
        values,
        gain,
        passive,
        advantage,
        residual: hi - lo,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub s_max: u32,
    /// Width of the final bisection bracket.
    pub tol: f64,
    pub margin: u32,
    pub solver: SolverConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            s_max: DEFAULT_S_MAX,
            tol: 1e-9,
            margin: BOUNDARY_MARGIN,
            solver: SolverConfig::default(),
        }
    }
}

impl OracleConfig {
    /// A configuration whose truncation leaves the margin above state `n`.
    pub fn covering(&self, n: u32) -> OracleConfig {
        let mut config = self.clone();
        if n + config.margin >= config.s_max {
            config.s_max = n + DEFAULT_S_MAX;
        }
        config
    }
}

/// Numerical Whittle index: the smallest subsidy at which the solved arm
/// idles in state `n`, located by bisection.
pub fn oracle_index(
    n: u32,
    client: &ClientParams,
    mode: Mode,
    config: &OracleConfig,
) -> Result<f64> {
    let mut warm = None;
    oracle_index_warm(n, client, mode, config, &mut warm)
}

/// Oracle indices for `n = 0..=n_max`, sharing warm starts between states.
pub fn oracle_table(
    client: &ClientParams,
    mode: Mode,
    n_max: u32,
    config: &OracleConfig,
) -> Result<Vec<f64>> {
    let mut warm = None;
    (0..=n_max)
        .map(|n| oracle_index_warm(n, client, mode, config, &mut warm))
        .collect()
}

fn closed_form_seed(n: u32, client: &ClientParams, mode: Mode) -> f64 {
    match mode {
        Mode::Average => renewal_index(n, client),
        Mode::Discounted { beta } => discounted_indifference_index(n, client, beta),
    }
}

fn oracle_index_warm(
    n: u32,
    client: &ClientParams,
    mode: Mode,
    config: &OracleConfig,
    warm: &mut Option<Vec<f64>>,
) -> Result<f64> {
    if config.margin < BOUNDARY_MARGIN || n + config.margin >= config.s_max {
        return Err(Error::param(
            "n",
            format!(
                "state {n} is within the margin {} of s_max = {}",
                config.margin, config.s_max
            ),
        ));
    }
    let mut passive_at = |w: f64| -> Result<bool> {
        let arm = SubsidyArm::new(*client, w, mode, config.s_max)?;
        let sol = solve_arm_with(&arm, &config.solver, warm.as_deref())?;
        let passive = sol.passive[n as usize];
        *warm = Some(sol.values);
        Ok(passive)
    };

    let seed = closed_form_seed(n, client, mode);
    let seed = if seed.is_finite() { seed } else { 0.0 };
    let (mut lo, mut hi) = match narrow_bracket(seed, config.tol, &mut passive_at)? {
        Some(bracket) => bracket,
        None => wide_bracket(n, client, seed, config, &mut passive_at)?,
    };
    while hi - lo > config.tol {
        let mid = 0.5 * (lo + hi);
        if passive_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Brackets the flip point around `seed`, doubling the half-width up to ten
/// times. Endpoints are always confirmed by the solver.
fn narrow_bracket(
    seed: f64,
    tol: f64,
    passive_at: &mut impl FnMut(f64) -> Result<bool>,
) -> Result<Option<(f64, f64)>> {
    let mut half = (1e-6 * (1.0 + seed.abs())).max(2.0 * tol);
    for _ in 0..=10 {
        let (lo, hi) = (seed - half, seed + half);
        let lo_active = !passive_at(lo)?;
        let hi_passive = passive_at(hi)?;
        if lo_active && hi_passive {
            return Ok(Some((lo, hi)));
        }
        half *= 2.0;
    }
    Ok(None)
}

/// Fallback bracket `[max(0, seed/2 − 1), 2·seed + R(θ + s_max)]`, expanded
/// geometrically (ten times at most) on either side.
fn wide_bracket(
    n: u32,
    client: &ClientParams,
    seed: f64,
    config: &OracleConfig,
    passive_at: &mut impl FnMut(f64) -> Result<bool>,
) -> Result<(f64, f64)> {
    let mut lo = (seed * 0.5 - 1.0).max(0.0);
    let mut hi = seed * 2.0 + client.weight * (client.theta + f64::from(config.s_max)) + 1.0;
    let mut expansions = 0;
    while passive_at(lo)? {
        if expansions == 10 {
            return Err(Error::NoBracket { state: n, lo, hi });
        }
        lo -= (hi - lo).max(1.0);
        expansions += 1;
    }
    expansions = 0;
    while !passive_at(hi)? {
        if expansions == 10 {
            return Err(Error::NoBracket { state: n, lo, hi });
        }
        hi += (hi - lo).max(1.0);
        expansions += 1;
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    pub values: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
    pub witnesses: Vec<Witness>,
}

impl Check {
    fn from_witnesses(name: &str, detail: String, witnesses: Vec<Witness>) -> Check {
        Check {
            name: name.to_string(),
            status: if witnesses.is_empty() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail,
            witnesses,
        }
    }

    fn not_applicable(name: &str, detail: &str) -> Check {
        Check {
            name: name.to_string(),
            status: CheckStatus::NotApplicable,
            detail: detail.to_string(),
            witnesses: Vec::new(),
        }
    }
}

/// Outcome of [`verify_structure`] for one client and criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub client: ClientParams,
    pub mode: Mode,
    pub n_max: u32,
    pub s_max: u32,
    pub w_grid: Vec<f64>,
    /// Optimal threshold at each grid subsidy, `None` when not threshold type.
    pub thresholds: Vec<Option<u32>>,
    pub oracle_indices: Vec<f64>,
    /// `|W(n) + pβ(c_{n+1}(n) − c_0(n))|` per `n` (discounted mode).
    pub identity_residuals: Vec<f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Tolerance for the index identity and the oracle monotonicity checks.
pub const STRUCTURE_TOL: f64 = 1e-6;

/// Default subsidy grid: 20 points from 0 to 10% past the largest closed-form
/// index on `0..=n_max`.
pub fn default_w_grid(client: &ClientParams, mode: Mode, n_max: u32) -> Vec<f64> {
    let top = closed_form_seed(n_max, client, mode).max(1.0) * 1.1;
    (0..20).map(|i| top * f64::from(i) / 19.0).collect()
}

/// Checks, from solver output, the structural facts that make the index well
/// defined: threshold optimality at every grid subsidy, monotone passive
/// sets, nondecreasing oracle indices, the discounted index identity and the
/// ordering of threshold values above the threshold.
pub fn verify_structure(
    client: &ClientParams,
    mode: Mode,
    w_grid: &[f64],
    n_max: u32,
    config: &OracleConfig,
) -> Result<StructureReport> {
    if w_grid.is_empty() {
        return Err(Error::param("w_grid", "must not be empty"));
    }
    let config = config.covering(n_max + 1);
    let limit = config.s_max - config.margin;
    let mut grid = w_grid.to_vec();
    grid.sort_by(f64::total_cmp);

    let mut warm: Option<Vec<f64>> = None;
    let mut thresholds = Vec::with_capacity(grid.len());
    let mut threshold_failures = Vec::new();
    let mut monotone_failures = Vec::new();
    let mut prev: Option<(f64, Vec<u32>)> = None;
    for &w in &grid {
        let arm = SubsidyArm::new(*client, w, mode, config.s_max)?;
        let sol = solve_arm_with(&arm, &config.solver, warm.as_deref())?;
        let t = sol.threshold(limit);
        if t.is_none() {
            threshold_failures.push(Witness {
                w: Some(w),
                n: None,
                values: sol
                    .passive_set(limit)
                    .iter()
                    .map(|&s| f64::from(s))
                    .collect(),
                note: "passive set is not a prefix".into(),
            });
        }
        thresholds.push(t.map(|t| t.0));
        let set = sol.passive_set(limit);
        if let Some((pw, pset)) = &prev {
            if let Some(&lost) = pset.iter().find(|s| !set.contains(s)) {
                monotone_failures.push(Witness {
                    w: Some(w),
                    n: Some(lost),
                    values: vec![*pw, w],
                    note: "state passive at the smaller subsidy but active at the larger".into(),
                });
            }
        }
        prev = Some((w, set));
        warm = Some(sol.values);
    }

    let oracle_indices = oracle_table(client, mode, n_max, &config)?;
    let increasing_failures: Vec<Witness> = oracle_indices
        .windows(2)
        .enumerate()
        .filter(|(_, pair)| pair[1] < pair[0] - STRUCTURE_TOL)
        .map(|(n, pair)| Witness {
            w: None,
            n: Some(n as u32 + 1),
            values: pair.to_vec(),
            note: "W(n) < W(n-1)".into(),
        })
        .collect();

    let mut checks = vec![
        Check::from_witnesses(
            "threshold_optimal",
            format!("optimal policy is threshold type on states 0..{limit} at every grid subsidy"),
            threshold_failures,
        ),
        Check::from_witnesses(
            "passive_set_monotone",
            "passive set nondecreasing in the subsidy".into(),
            monotone_failures,
        ),
        Check::from_witnesses(
            "oracle_index_nondecreasing",
            format!("oracle W(n) nondecreasing for n <= {n_max}"),
            increasing_failures,
        ),
    ];

    let mut identity_residuals = Vec::new();
    match mode {
        Mode::Discounted { beta } => {
            let pb = client.p * beta.get();
            let mut failures = Vec::new();
            for (n, &w) in oracle_indices.iter().enumerate() {
                let n = n as u32;
                let c_next = threshold_discounted_value(n, w, client, beta, n + 1);
                let c_zero = threshold_discounted_value(n, w, client, beta, 0);
                let residual = (w + pb * (c_next - c_zero)).abs();
                if residual.is_nan() || residual >= STRUCTURE_TOL {
                    failures.push(Witness {
                        w: Some(w),
                        n: Some(n),
                        values: vec![residual, c_next, c_zero],
                        note: "|W(n) + pβ(c_{n+1}(n) − c_0(n))| above tolerance".into(),
                    });
                }
                identity_residuals.push(residual);
            }
            checks.push(Check::from_witnesses(
                "index_identity",
                format!("|W(n) + pβ(c_(n+1)(n) − c_0(n))| < {STRUCTURE_TOL:e} at the oracle index"),
                failures,
            ));

            let mut failures = Vec::new();
            for &w in grid.iter().step_by(4) {
                for t in (0..=n_max).step_by(5) {
                    for i in t..t + 5 {
                        let ci = threshold_discounted_value(t, w, client, beta, i);
                        let cj = threshold_discounted_value(t, w, client, beta, i + 1);
                        let ordered = if client.weight > 0.0 {
                            cj < ci
                        } else {
                            cj <= ci
                        };
                        if !ordered {
                            failures.push(Witness {
                                w: Some(w),
                                n: Some(i),
                                values: vec![f64::from(t), ci, cj],
                                note: "c_(i+1)(T) not below c_i(T) for i >= T".into(),
                            });
                        }
                    }
                }
            }
            checks.push(Check::from_witnesses(
                "values_decrease_above_threshold",
                "c_j(T) < c_i(T) for j > i >= T".into(),
                failures,
            ));
        }
        Mode::Average => {
            checks.push(Check::not_applicable(
                "index_identity",
                "discounted criterion only",
            ));
            checks.push(Check::not_applicable(
                "values_decrease_above_threshold",
                "discounted criterion only",
            ));
        }
    }

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(StructureReport {
        client: *client,
        mode,
        n_max,
        s_max: config.s_max,
        w_grid: grid,
        thresholds,
        oracle_indices,
        identity_residuals,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn client(p: f64, r: f64, theta: f64) -> ClientParams {
        ClientParams::new(p, r, theta).unwrap()
    }

    fn beta(b: f64) -> DiscountFactor {
        DiscountFactor::new(b).unwrap()
    }

    #[test]
    fn threshold_avg_examples() {
        for w in [-3.0, 0.0, 7.5] {
            assert_relative_eq!(threshold_avg_reward(0, w, &client(1.0, 1.0, 2.0)), 2.0);
        }
        assert_relative_eq!(threshold_avg_reward(2, 0.0, &client(1.0, 1.0, 0.0)), -1.0);
    }

    #[test]
    fn threshold_discounted_examples() {
        let b = beta(0.7);
        for w in [0.0, 4.0] {
            assert_relative_eq!(
                threshold_discounted_value(0, w, &client(1.0, 1.0, 0.0), b, 0),
                0.0
            );
            assert_relative_eq!(
                threshold_discounted_value(0, w, &client(1.0, 1.0, 2.0), b, 0),
                2.0 / 0.3,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn discounted_value_routes_agree() {
        let b = beta(0.9);
        for &(p, theta) in &[(0.8, 3.0), (0.3, 0.0), (1.0, 5.0)] {
            let c = client(p, 1.5, theta);
            for t in [0, 1, 3, 8] {
                for start in 0..12 {
                    let direct = threshold_discounted_value(t, 1.25, &c, b, start);
                    let cycle = cycle_discounted_value(t, 1.25, &c, b, start);
                    assert_relative_eq!(direct, cycle, epsilon = 1e-10, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn renewal_index_matches_simplified_form() {
        // Indifference between thresholds n and n+1 reduces to
        // Rpθ + R(1 + n) + Rp·n(n+1)/2.
        for &(p, r, theta) in &[
            (0.2, 1.0, 0.0),
            (0.5, 1.0, 3.0),
            (0.8, 2.5, 10.0),
            (1.0, 1.0, 1.0),
        ] {
            let c = client(p, r, theta);
            for n in 0..300u32 {
                let nf = f64::from(n);
                let expected = r * p * theta + r * (1.0 + nf) + r * p * nf * (nf + 1.0) / 2.0;
                assert_relative_eq!(renewal_index(n, &c), expected, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn renewal_index_degenerate_cases() {
        let c = client(0.5, 0.0, 3.0);
        assert!((0..40).all(|n| renewal_index(n, &c) == 0.0));
        // Small p: the index tends to R(1 + n), not to zero.
        let tiny = client(1e-6, 1.0, 3.0);
        for n in [0, 5, 20] {
            assert_relative_eq!(
                renewal_index(n, &tiny),
                1.0 + f64::from(n),
                max_relative = 1e-4
            );
        }
    }

    #[test]
    fn discounted_indifference_limit() {
        // As β → 1 the discounted indifference subsidy approaches the
        // average-criterion one; at n = 0 it is pβR[θ + 1/(1−β+pβ)].
        let c = client(0.6, 1.0, 3.0);
        let b = beta(0.9);
        let expected = 0.6 * 0.9 * (3.0 + 1.0 / (1.0 - 0.9 + 0.54));
        assert_relative_eq!(
            discounted_indifference_index(0, &c, b),
            expected,
            max_relative = 1e-10
        );
        for n in [0, 4, 12] {
            let near = discounted_indifference_index(n, &c, beta(0.99999));
            assert_relative_eq!(near, renewal_index(n, &c), max_relative = 1e-3);
        }
    }

    #[test]
    fn indifference_gap_is_affine_increasing() {
        let b = beta(0.9);
        let c = client(0.7, 1.0, 3.0);
        for n in 0..10 {
            let gap = |w| {
                threshold_discounted_value(n + 1, w, &c, b, n)
                    - threshold_discounted_value(n, w, &c, b, n)
            };
            let (g0, g1, g2) = (gap(0.0), gap(1.0), gap(2.0));
            assert!(g0 < 0.0, "gap negative at zero subsidy");
            assert!(g1 > g0);
            assert_relative_eq!(g2 - g1, g1 - g0, max_relative = 1e-8);
        }
    }

    #[test]
    fn solve_arm_extreme_subsidies() {
        let c = client(0.8, 1.0, 3.0);
        let arm = SubsidyArm::new(c, 1e5, Mode::Average, 60).unwrap();
        let sol = solve_arm(&arm).unwrap();
        assert!(sol.passive[..59].iter().all(|&b| b));

        for mode in [Mode::Average, Mode::discounted(0.9).unwrap()] {
            let arm = SubsidyArm::new(c, 0.0, mode, 60).unwrap();
            let sol = solve_arm(&arm).unwrap();
            assert!(sol.passive.iter().all(|&b| !b), "{mode:?}");
        }
    }

    #[test]
    fn solve_arm_threshold_at_moderate_subsidy() {
        // W(0) = 3.4 < 5 < W(1) = 5.2, so the threshold is 1.
        let arm = SubsidyArm::new(client(0.8, 1.0, 3.0), 5.0, Mode::Average, 200).unwrap();
        let sol = solve_arm(&arm).unwrap();
        assert_eq!(sol.threshold(190), Some(ThresholdPolicy(1)));
        assert_relative_eq!(
            sol.gain.unwrap(),
            threshold_avg_reward(1, 5.0, &arm.client),
            epsilon = 1e-8
        );
    }

    #[test]
    fn solve_arm_gain_matches_renewal_for_deterministic_chain() {
        // p = 1 exercises the aperiodicity mixing.
        let c = client(1.0, 1.0, 2.0);
        let w = 0.5 * (renewal_index(2, &c) + renewal_index(3, &c));
        let sol = solve_arm(&SubsidyArm::new(c, w, Mode::Average, 50).unwrap()).unwrap();
        assert_eq!(sol.threshold(40), Some(ThresholdPolicy(3)));
        assert_relative_eq!(
            sol.gain.unwrap(),
            threshold_avg_reward(3, w, &c),
            epsilon = 1e-8
        );
    }

    #[test]
    fn oracle_matches_renewal_index() {
        let config = OracleConfig::default();
        for &(p, theta) in &[(0.2, 3.0), (0.8, 0.0), (1.0, 10.0)] {
            let c = client(p, 1.0, theta);
            for n in [0, 2, 9] {
                let oracle = oracle_index(n, &c, Mode::Average, &config).unwrap();
                assert!((oracle - renewal_index(n, &c)).abs() < 1e-6, "p={p} n={n}");
            }
        }
    }

    #[test]
    fn oracle_degenerate_weight_is_zero() {
        let c = client(0.5, 0.0, 3.0);
        for mode in [Mode::Average, Mode::discounted(0.9).unwrap()] {
            let w = oracle_index(3, &c, mode, &OracleConfig::default()).unwrap();
            assert!(w.abs() < 1e-8, "{w}");
        }
    }

    #[test]
    fn oracle_tolerance_contract_and_truncation_invariance() {
        let c = client(0.5, 1.0, 3.0);
        let coarse = OracleConfig {
            tol: 1e-6,
            ..OracleConfig::default()
        };
        let fine = OracleConfig {
            tol: 1e-8,
            ..OracleConfig::default()
        };
        let a = oracle_index(4, &c, Mode::Average, &coarse).unwrap();
        let b = oracle_index(4, &c, Mode::Average, &fine).unwrap();
        assert!((a - b).abs() <= 1e-6);

        let doubled = OracleConfig {
            s_max: 400,
            ..fine.clone()
        };
        let d = oracle_index(4, &c, Mode::Average, &doubled).unwrap();
        assert!((d - b).abs() < fine.tol * 2.0, "{d} vs {b}");
    }

    #[test]
    fn oracle_rejects_states_near_truncation() {
        let c = client(0.5, 1.0, 3.0);
        let config = OracleConfig {
            s_max: 30,
            ..OracleConfig::default()
        };
        assert!(oracle_index(25, &c, Mode::Average, &config).is_err());
    }

    #[test]
    fn discounted_oracle_matches_indifference_index() {
        let c = client(0.8, 1.0, 3.0);
        let mode = Mode::discounted(0.9).unwrap();
        for n in [0, 3, 10] {
            let oracle = oracle_index(n, &c, mode, &OracleConfig::default()).unwrap();
            let exact = discounted_indifference_index(n, &c, beta(0.9));
            assert!((oracle - exact).abs() < 1e-6, "n={n}: {oracle} vs {exact}");
        }
    }

    #[test]
    fn structure_report_deterministic_client() {
        let c = client(1.0, 1.0, 0.0);
        let grid: Vec<f64> = (0..20).map(|i| f64::from(i) * 3.0).collect();
        let report =
            verify_structure(&c, Mode::Average, &grid, 8, &OracleConfig::default()).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        let ts: Vec<u32> = report.thresholds.iter().map(|t| t.unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        assert!(ts.last().unwrap() > &0);
    }

    #[test]
    fn structure_report_discounted_identity() {
        let c = client(0.8, 1.0, 3.0);
        let mode = Mode::discounted(0.9).unwrap();
        let grid = default_w_grid(&c, mode, 20);
        let report = verify_structure(&c, mode, &grid, 20, &OracleConfig::default()).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        assert!(report.identity_residuals.iter().all(|&r| r < 1e-6));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"index_identity\""));
    }

    #[test]
    fn structure_report_flags_empty_grid() {
        let c = client(0.8, 1.0, 3.0);
        assert!(verify_structure(&c, Mode::Average, &[], 5, &OracleConfig::default()).is_err());
    }
}
