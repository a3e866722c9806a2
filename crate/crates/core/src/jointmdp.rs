//! Exact dynamic programming on the truncated joint state space.
//!
//! States are the tuples `(s_1, .., s_N)` with `0 <= s_i <= s_max`,
//! enumerated row-major (the last client varies fastest). Elapsed times
//! saturate at `s_max` when no delivery happens. Actions are the K-subsets of
//! clients in lexicographic order.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Mode;
use crate::model::{Scenario, ScheduleDecision, SystemState};
use crate::singlearm::SolverConfig;

/// State-action pairs allowed by default.
pub const DEFAULT_BUDGET: u128 = 50_000_000;

/// Relative tolerance for preferring an earlier action in greedy selection.
const TIE_EPS: f64 = 1e-9;

/// Sweeps below this many states run on the calling thread.
const PAR_MIN_STATES: usize = 8192;

#[derive(Debug, Clone)]
struct Outcome {
    prob: f64,
    /// Clients delivered under this outcome.
    delivered: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct JointMdp {
    scenario: Scenario,
    s_max: u32,
    strides: Vec<usize>,
    actions: Vec<Vec<usize>>,
    outcomes: Vec<Vec<Outcome>>,
    rewards: Vec<f64>,
    /// Index of the state reached when nobody is delivered.
    aged: Vec<u32>,
    /// Row-major `[state][client]` elapsed times after ageing.
    aged_digits: Vec<u32>,
}

/// Number of state-action pairs of the truncated joint chain.
pub fn state_action_pairs(n: usize, k: usize, s_max: u32) -> u128 {
    let states = (u128::from(s_max) + 1).saturating_pow(n as u32);
    states.saturating_mul(binomial(n, k))
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

impl JointMdp {
    pub fn new(scenario: &Scenario, s_max: u32) -> Result<Self> {
        Self::with_budget(scenario, s_max, DEFAULT_BUDGET)
    }

    pub fn with_budget(scenario: &Scenario, s_max: u32, budget: u128) -> Result<Self> {
        if s_max < 1 {
            return Err(Error::param("s_max", "must be at least 1"));
        }
        let n = scenario.n();
        let k = scenario.k();
        let required = state_action_pairs(n, k, s_max);
        if required > budget || required > u128::from(u32::MAX) {
            return Err(Error::BudgetExceeded {
                required,
                budget: budget.min(u128::from(u32::MAX)),
            });
        }
        let side = s_max as usize + 1;
        let states = side.pow(n as u32);
        let mut strides = vec![1; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }

        let actions: Vec<Vec<usize>> = (0..n).combinations(k).collect();
        let outcomes = actions
            .iter()
            .map(|active| {
                (0..1usize << active.len())
                    .map(|mask| {
                        let mut prob = 1.0;
                        let mut delivered = Vec::new();
                        for (bit, &i) in active.iter().enumerate() {
                            let p = scenario.client(i).p;
                            if mask >> bit & 1 == 1 {
                                prob *= p;
                                delivered.push(i);
                            } else {
                                prob *= 1.0 - p;
                            }
                        }
                        Outcome { prob, delivered }
                    })
                    .filter(|o| o.prob > 0.0)
                    .collect()
            })
            .collect();

        let mut rewards = Vec::with_capacity(states);
        let mut aged = Vec::with_capacity(states);
        let mut aged_digits = Vec::with_capacity(states * n);
        let mut digits = vec![0u32; n];
        for _ in 0..states {
            let mut r = 0.0;
            let mut a = 0usize;
            for (i, &s) in digits.iter().enumerate() {
                r += scenario.client(i).reward_at(s);
                let up = (s + 1).min(s_max);
                a += up as usize * strides[i];
                aged_digits.push(up);
            }
            rewards.push(r);
            aged.push(a as u32);
            for d in digits.iter_mut().rev() {
                if *d < s_max {
                    *d += 1;
                    break;
                }
                *d = 0;
            }
        }

        Ok(JointMdp {
            scenario: scenario.clone(),
            s_max,
            strides,
            actions,
            outcomes,
            rewards,
            aged,
            aged_digits,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn s_max(&self) -> u32 {
        self.s_max
    }

    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    /// K-subsets in lexicographic order; a policy stores indices into this.
    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn action_index(&self, active: &[usize]) -> Option<u32> {
        self.actions
            .binary_search_by(|a| a.as_slice().cmp(active))
            .ok()
            .map(|i| i as u32)
    }

    /// Row-major index of `state`, with elapsed times clamped to `s_max`.
    pub fn state_index(&self, state: &SystemState) -> usize {
        state
            .elapsed
            .iter()
            .zip(&self.strides)
            .map(|(&s, &stride)| s.min(self.s_max) as usize * stride)
            .sum()
    }

    pub fn state_at(&self, index: usize) -> SystemState {
        let side = self.s_max as usize + 1;
        SystemState::new(
            self.strides
                .iter()
                .map(|&stride| (index / stride % side) as u32)
                .collect(),
        )
    }

    pub fn reward(&self, index: usize) -> f64 {
        self.rewards[index]
    }

    /// `Σ_{s'} P(s' | s, a) h(s')`.
    fn expect(&self, state: usize, action: usize, h: &[f64]) -> f64 {
        let n = self.strides.len();
        let digits = &self.aged_digits[state * n..(state + 1) * n];
        let base = self.aged[state] as usize;
        self.outcomes[action]
            .iter()
            .map(|o| {
                let next = o
                    .delivered
                    .iter()
                    .fold(base, |acc, &i| acc - digits[i] as usize * self.strides[i]);
                o.prob * h[next]
            })
            .sum()
    }

    fn best_value(&self, state: usize, h: &[f64]) -> f64 {
        (0..self.actions.len())
            .map(|a| self.expect(state, a, h))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn best_action(&self, state: usize, h: &[f64]) -> (usize, f64) {
        let q: Vec<f64> = (0..self.actions.len())
            .map(|a| self.expect(state, a, h))
            .collect();
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = TIE_EPS * (1.0 + best.abs());
        let a = q.iter().position(|&v| v >= best - slack).unwrap_or(0);
        (a, best)
    }

    /// All successor states of `(state, action)` with probabilities.
    pub fn transitions(&self, state: usize, action: u32) -> Vec<(usize, f64)> {
        let n = self.strides.len();
        let digits = &self.aged_digits[state * n..(state + 1) * n];
        let base = self.aged[state] as usize;
        self.outcomes[action as usize]
            .iter()
            .map(|o| {
                let next = o
                    .delivered
                    .iter()
                    .fold(base, |acc, &i| acc - digits[i] as usize * self.strides[i]);
                (next, o.prob)
            })
            .collect()
    }

    fn has_certain_delivery(&self) -> bool {
        self.scenario.clients().iter().any(|c| c.p >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolution {
    pub mode: Mode,
    /// Optimal average reward; `None` in discounted mode.
    pub gain: Option<f64>,
    /// Bias (average mode, zero at the all-zeros state) or discounted value.
    pub values: Vec<f64>,
    /// Greedy action index for every state.
    pub policy: Vec<u32>,
    pub residual: f64,
    pub iterations: u64,
}

impl MdpSolution {
    pub fn decision(&self, mdp: &JointMdp, state: &SystemState) -> ScheduleDecision {
        let a = self.policy[mdp.state_index(state)] as usize;
        ScheduleDecision::from_sorted_unchecked(mdp.actions[a].clone())
    }

    pub fn table(&self) -> PolicyTable {
        PolicyTable::Stationary(self.policy.clone())
    }
}

/// A policy on the truncated state space, as an action index per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyTable {
    Stationary(Vec<u32>),
    /// `phases[t mod L][state]`: a policy that also depends on the slot
    /// number through a fixed cycle, such as time-based round-robin.
    Cyclic(Vec<Vec<u32>>),
    /// A uniformly random K-subset every slot.
    UniformRandom,
}

impl PolicyTable {
    fn phases(&self) -> usize {
        match self {
            PolicyTable::Cyclic(p) => p.len(),
            _ => 1,
        }
    }

    fn check(&self, mdp: &JointMdp) -> Result<()> {
        let tables: &[Vec<u32>] = match self {
            PolicyTable::Stationary(t) => std::slice::from_ref(t),
            PolicyTable::Cyclic(t) if t.is_empty() => {
                return Err(Error::param("policy", "cyclic policy has no phases"))
            }
            PolicyTable::Cyclic(t) => t,
            PolicyTable::UniformRandom => return Ok(()),
        };
        for t in tables {
            if t.len() != mdp.num_states() {
                return Err(Error::param(
                    "policy",
                    format!("{} entries for {} states", t.len(), mdp.num_states()),
                ));
            }
            if let Some(&a) = t.iter().find(|&&a| a as usize >= mdp.actions.len()) {
                return Err(Error::param(
                    "policy",
                    format!("action index {a} out of range"),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of evaluating a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub gain: Option<f64>,
    /// Phase-major values `[phase][state]` (bias or discounted value).
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: u64,
}

struct Sweep {
    lo: f64,
    hi: f64,
}

/// Runs `update(state, h)` over every state until the span of `h' − h`
/// drops below `tol`, re-anchoring at index 0 after each sweep.
fn iterate(
    len: usize,
    tol: f64,
    max_iter: u64,
    update: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Result<(Vec<f64>, Sweep, u64)> {
    let mut h = vec![0.0; len];
    let mut next = vec![0.0; len];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let sweep = if len >= PAR_MIN_STATES {
            next.par_iter_mut()
                .enumerate()
                .map(|(x, dst)| {
                    *dst = update(x, &h);
                    let d = *dst - h[x];
                    (d, d)
                })
                .reduce(
                    || (f64::INFINITY, f64::NEG_INFINITY),
                    |a, b| (a.0.min(b.0), a.1.max(b.1)),
                )
        } else {
            let mut acc = (f64::INFINITY, f64::NEG_INFINITY);
            for (x, dst) in next.iter_mut().enumerate() {
                *dst = update(x, &h);
                let d = *dst - h[x];
                acc = (acc.0.min(d), acc.1.max(d));
            }
            acc
        };
        let base = next[0];
        for (dst, &src) in h.iter_mut().zip(&next) {
            *dst = src - base;
        }
        let span = sweep.1 - sweep.0;
        if span < tol {
            return Ok((
                h,
                Sweep {
                    lo: sweep.0,
                    hi: sweep.1,
                },
                iterations,
            ));
        }
        if iterations >= max_iter || !span.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                residual: span,
            });
        }
    }
}

/// Optimal average reward by relative value iteration anchored at the
/// all-zeros state.
///
/// When some client delivers with certainty the chain may be periodic, so
/// the Bellman operator is mixed with the identity (`h ← ½h + ½Th`), which
/// leaves gain and optimal policy unchanged.
pub fn solve_average(mdp: &JointMdp, config: &SolverConfig) -> Result<MdpSolution> {
    let tau = if mdp.has_certain_delivery() { 0.5 } else { 0.0 };
    let ahead = 1.0 - tau;
    let (h, sweep, iterations) = iterate(mdp.num_states(), config.tol, config.max_iter, |x, h| {
        mdp.rewards[x] + tau * h[x] + ahead * mdp.best_value(x, h)
    })?;
    let policy = greedy(mdp, &h);
    Ok(MdpSolution {
        mode: Mode::Average,
        gain: Some(0.5 * (sweep.lo + sweep.hi)),
        values: h.iter().map(|v| v * ahead).collect(),
        policy,
        residual: sweep.hi - sweep.lo,
        iterations,
    })
}

/// Optimal discounted value by value iteration.
///
/// Iterates until the span of the update is below
/// `tol·(1−β)/(2β)` and then applies the standard span extrapolation, so
/// each returned value is within `tol/4` of the optimum.
pub fn solve_discounted(mdp: &JointMdp, beta: f64, config: &SolverConfig) -> Result<MdpSolution> {
    let mode = Mode::discounted(beta)?;
    let tol = config.tol * (1.0 - beta) / (2.0 * beta);
    let (h, sweep, iterations) = iterate(mdp.num_states(), tol, config.max_iter, |x, h| {
        mdp.rewards[x] + beta * mdp.best_value(x, h)
    })?;
    let policy = greedy(mdp, &h);
    let shift = 0.5 * (sweep.lo + sweep.hi) / (1.0 - beta);
    Ok(MdpSolution {
        mode,
        gain: None,
        values: h.iter().map(|v| v + shift).collect(),
        policy,
        residual: sweep.hi - sweep.lo,
        iterations,
    })
}

fn greedy(mdp: &JointMdp, h: &[f64]) -> Vec<u32> {
    let pick = |x: usize| mdp.best_action(x, h).0 as u32;
    if mdp.num_states() >= PAR_MIN_STATES {
        (0..mdp.num_states()).into_par_iter().map(pick).collect()
    } else {
        (0..mdp.num_states()).map(pick).collect()
    }
}

fn policy_expect(mdp: &JointMdp, policy: &PolicyTable, phase: usize, x: usize, h: &[f64]) -> f64 {
    match policy {
        PolicyTable::Stationary(t) => mdp.expect(x, t[x] as usize, h),
        PolicyTable::Cyclic(t) => mdp.expect(x, t[phase][x] as usize, h),
        PolicyTable::UniformRandom => {
            let m = mdp.actions.len();
            (0..m).map(|a| mdp.expect(x, a, h)).sum::<f64>() / m as f64
        }
    }
}

fn evaluate(
    mdp: &JointMdp,
    policy: &PolicyTable,
    disc: f64,
    tau: f64,
    tol: f64,
    max_iter: u64,
) -> Result<(Vec<f64>, Sweep, u64)> {
    policy.check(mdp)?;
    let states = mdp.num_states();
    let phases = policy.phases();
    let ahead = disc * (1.0 - tau);
    iterate(states * phases, tol, max_iter, |y, h| {
        let (phase, x) = (y / states, y % states);
        let following = &h[(phase + 1) % phases * states..][..states];
        mdp.rewards[x] + tau * h[y] + ahead * policy_expect(mdp, policy, phase, x, following)
    })
}

/// Exact average reward of `policy` on the truncated chain.
///
/// Cyclic policies are evaluated on the chain augmented with the phase.
pub fn evaluate_policy(
    mdp: &JointMdp,
    policy: &PolicyTable,
    config: &SolverConfig,
) -> Result<PolicyEvaluation> {
    let tau = if mdp.has_certain_delivery() || policy.phases() > 1 {
        0.5
    } else {
        0.0
    };
    let (h, sweep, iterations) = evaluate(mdp, policy, 1.0, tau, config.tol, config.max_iter)?;
    Ok(PolicyEvaluation {
        gain: Some(0.5 * (sweep.lo + sweep.hi)),
        values: h.iter().map(|v| v * (1.0 - tau)).collect(),
        residual: sweep.hi - sweep.lo,
        iterations,
    })
}

/// Discounted value of `policy`, with the same stopping rule as
/// [`solve_discounted`].
pub fn evaluate_policy_discounted(
    mdp: &JointMdp,
    policy: &PolicyTable,
    beta: f64,
    config: &SolverConfig,
) -> Result<PolicyEvaluation> {
    Mode::discounted(beta)?;
    let tol = config.tol * (1.0 - beta) / (2.0 * beta);
    let (h, sweep, iterations) = evaluate(mdp, policy, beta, 0.0, tol, config.max_iter)?;
    let shift = 0.5 * (sweep.lo + sweep.hi) / (1.0 - beta);
    Ok(PolicyEvaluation {
        gain: None,
        values: h.iter().map(|v| v + shift).collect(),
        residual: sweep.hi - sweep.lo,
        iterations,
    })
}

/// Optimal `horizon`-slot total rewards `V_t`, `t = 0..=horizon`, where
/// `V_0 = 0` and `V_t = r + max_a E[V_{t−1}]`.
pub fn finite_horizon_values(mdp: &JointMdp, horizon: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; mdp.num_states()]];
    for t in 0..horizon {
        let prev = &out[t];
        let v = (0..mdp.num_states())
            .map(|x| mdp.rewards[x] + mdp.best_value(x, prev))
            .collect();
        out.push(v);
    }
    out
}

/// Tabulates a state-feedback rule as a stationary policy.
pub fn tabulate(
    mdp: &JointMdp,
    mut decide: impl FnMut(&SystemState) -> Result<ScheduleDecision>,
) -> Result<PolicyTable> {
    (0..mdp.num_states())
        .map(|x| {
            let d = decide(&mdp.state_at(x))?;
            mdp.action_index(d.active()).ok_or_else(|| {
                Error::InvalidDecision(format!("{:?} is not a K-subset", d.active()))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(PolicyTable::Stationary)
}

/// Time-based round-robin: slot `t` serves clients `tK, .., tK+K−1`
/// (mod N), one phase per slot of the cycle.
pub fn round_robin_table(mdp: &JointMdp) -> PolicyTable {
    let n = mdp.scenario.n();
    let k = mdp.scenario.k();
    let period = n / gcd(n, k);
    let phases = (0..period)
        .map(|t| {
            let mut active: Vec<usize> = (0..k).map(|j| (t * k + j) % n).collect();
            active.sort_unstable();
            let a = mdp
                .action_index(&active)
                .expect("round-robin set is a K-subset");
            vec![a; mdp.num_states()]
        })
        .collect();
    PolicyTable::Cyclic(phases)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
