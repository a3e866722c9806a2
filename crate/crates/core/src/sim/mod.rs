//! Slot-level Monte Carlo simulation.
//!
//! Each replication starts from the all-zeros state and runs `horizon`
//! slots. Slot `t` earns the instantaneous reward of the state it starts
//! in, then the policy's clients are served and the state is updated.
//! Channel outcomes for replication `r` come from a ChaCha8 generator
//! seeded with `seed` on stream `r`, drawing one uniform per active
//! client in ascending client order.

mod policy;
mod stats;

pub use policy::Policy;
pub use stats::Welford;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{draw_deliveries, Scenario, SystemState};

/// Default share of the horizon discarded before averaging the reward.
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub replications: u64,
    pub seed: u64,
    /// Share of the horizon excluded from the warm-up-adjusted reward.
    pub warmup_fraction: f64,
}

impl SimConfig {
    pub fn new(horizon: u64, replications: u64, seed: u64) -> Self {
        SimConfig {
            horizon,
            replications,
            seed,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
        }
    }

    fn warmup(&self) -> u64 {
        ((self.horizon as f64 * self.warmup_fraction).floor() as u64).min(self.horizon - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if self.replications < 1 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::param("warmup_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One slot of a trajectory, as passed to a trace observer.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord<'a> {
    pub slot: u64,
    pub state: &'a SystemState,
    pub active: &'a [usize],
    pub delivered: &'a [usize],
}

/// Per-client statistics of completed inter-delivery intervals. The first
/// interval runs from the start of the trajectory to the first delivery;
/// the interval still open at the horizon is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClientStats {
    pub deliveries: u64,
    pub intervals: Welford,
    /// `Σ D(D−1)/2` over completed intervals.
    pub sum_half_sq: f64,
}

impl ClientStats {
    /// Mean inter-delivery time, `∞` when nothing was delivered.
    pub fn mean_interval(&self) -> f64 {
        self.intervals.mean().unwrap_or(f64::INFINITY)
    }

    fn merge(&self, other: &ClientStats) -> ClientStats {
        ClientStats {
            deliveries: self.deliveries + other.deliveries,
            intervals: self.intervals.merge(&other.intervals),
            sum_half_sq: self.sum_half_sq + other.sum_half_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    /// Time-average reward over the whole horizon.
    pub reward: f64,
    /// Time-average reward after the warm-up prefix.
    pub reward_after_warmup: f64,
    pub clients: Vec<ClientStats>,
    /// Elapsed times at the end of the horizon.
    pub final_elapsed: Vec<u32>,
}

impl ReplicationSummary {
    /// `Σ_i R_i (θ_i N_i − Σ_l D_l(D_l−1)/2) / t` for this replication.
    pub fn reduced_reward(&self, scenario: &Scenario, horizon: u64) -> f64 {
        reduced_form(scenario, &self.clients, horizon as f64)
    }

    /// Exact difference between the time-average reward and the reduced
    /// form: the open interval at the horizon contributes
    /// `R_i (θ_i [s_i(H) ≥ 1] − s_i(H)(s_i(H)−1)/2) / H`.
    pub fn boundary_term(&self, scenario: &Scenario, horizon: u64) -> f64 {
        self.final_elapsed
            .iter()
            .zip(scenario.clients())
            .map(|(&s, c)| {
                let s = f64::from(s);
                let open = if s >= 1.0 { c.theta } else { 0.0 };
                c.weight * (open - s * (s - 1.0) / 2.0)
            })
            .sum::<f64>()
            / horizon as f64
    }

    /// `Σ_i R_i (θ_i + s_i(H)²/2) / H`, which dominates the boundary term.
    pub fn boundary_bound(&self, scenario: &Scenario, horizon: u64) -> f64 {
        self.final_elapsed
            .iter()
            .zip(scenario.clients())
            .map(|(&s, c)| c.weight * (c.theta + f64::from(s).powi(2) / 2.0))
            .sum::<f64>()
            / horizon as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error across replications; absent with one replication.
    pub stderr: Option<f64>,
}

impl From<&Welford> for Estimate {
    fn from(w: &Welford) -> Self {
        Estimate {
            mean: w.mean,
            stderr: w.stderr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    pub horizon: u64,
    pub replications: u64,
    pub seed: u64,
    pub warmup: u64,
    /// Whole-horizon time-average reward.
    pub reward: Estimate,
    pub reward_after_warmup: Estimate,
    /// Pooled over replications.
    pub clients: Vec<ClientStats>,
    pub runs: Vec<ReplicationSummary>,
}

/// Simulates `replications` trajectories of `horizon` slots.
pub fn run(
    scenario: &Scenario,
    policy: &Policy,
    horizon: u64,
    replications: u64,
    seed: u64,
) -> Result<SimResult> {
    run_with(
        scenario,
        policy,
        &SimConfig::new(horizon, replications, seed),
    )
}

pub fn run_with(scenario: &Scenario, policy: &Policy, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let runs = (0..config.replications)
        .into_par_iter()
        .map(|rep| replicate(scenario, policy, config, rep, None))
        .collect::<Result<Vec<_>>>()?;

    let reward: Welford = runs.iter().map(|r| r.reward).collect();
    let warm: Welford = runs.iter().map(|r| r.reward_after_warmup).collect();
    let clients = runs
        .iter()
        .fold(vec![ClientStats::default(); scenario.n()], |acc, r| {
            acc.iter()
                .zip(&r.clients)
                .map(|(a, b)| a.merge(b))
                .collect()
        });
    Ok(SimResult {
        policy: policy.name().to_string(),
        horizon: config.horizon,
        replications: config.replications,
        seed: config.seed,
        warmup: config.warmup(),
        reward: Estimate::from(&reward),
        reward_after_warmup: Estimate::from(&warm),
        clients,
        runs,
    })
}

/// Runs replication `rep` alone, reporting every slot to `observer`.
pub fn trace(
    scenario: &Scenario,
    policy: &Policy,
    config: &SimConfig,
    rep: u64,
    observer: &mut dyn FnMut(&SlotRecord<'_>),
) -> Result<ReplicationSummary> {
    config.validate()?;
    replicate(scenario, policy, config, rep, Some(observer))
}

fn replicate(
    scenario: &Scenario,
    policy: &Policy,
    config: &SimConfig,
    rep: u64,
    mut observer: Option<&mut dyn FnMut(&SlotRecord<'_>)>,
) -> Result<ReplicationSummary> {
    let n = scenario.n();
    let k = scenario.k();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep);
    let mut runner = policy.runner(scenario, config.seed, rep)?;
    let warmup = config.warmup();

    let mut state = scenario.initial_state();
    let mut active = Vec::with_capacity(k);
    let mut delivered = Vec::with_capacity(k);
    let mut clients = vec![ClientStats::default(); n];
    let mut total = 0.0;
    let mut after_warmup = 0.0;
    for t in 0..config.horizon {
        let r: f64 = state
            .elapsed
            .iter()
            .zip(scenario.clients())
            .map(|(&s, c)| c.reward_at(s))
            .sum();
        total += r;
        if t >= warmup {
            after_warmup += r;
        }

        runner.decide(t, &state, &mut active)?;
        let valid = active.len() == k
            && active.windows(2).all(|w| w[0] < w[1])
            && active.iter().all(|&i| i < n);
        if !valid {
            return Err(Error::InvalidDecision(format!(
                "{} chose {:?} at slot {t} in state {:?} (replication {rep})",
                policy.name(),
                active,
                state.elapsed
            )));
        }
        draw_deliveries(&active, |i| scenario.client(i).p, &mut rng, &mut delivered);

        if let Some(obs) = observer.as_deref_mut() {
            obs(&SlotRecord {
                slot: t,
                state: &state,
                active: &active,
                delivered: &delivered,
            });
        }
        for &i in &delivered {
            let d = f64::from(state.elapsed[i]) + 1.0;
            let st = &mut clients[i];
            st.deliveries += 1;
            st.intervals.push(d);
            st.sum_half_sq += d * (d - 1.0) / 2.0;
        }
        let mut next = delivered.iter().peekable();
        for (i, s) in state.elapsed.iter_mut().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
                *s = 0;
            } else {
                *s += 1;
            }
        }
    }
    Ok(ReplicationSummary {
        reward: total / config.horizon as f64,
        reward_after_warmup: after_warmup / (config.horizon - warmup) as f64,
        clients,
        final_elapsed: state.elapsed,
    })
}

fn reduced_form(scenario: &Scenario, clients: &[ClientStats], slots: f64) -> f64 {
    clients
        .iter()
        .zip(scenario.clients())
        .map(|(st, c)| c.weight * (c.theta * st.deliveries as f64 - st.sum_half_sq) / slots)
        .sum()
}

/// The three reward estimates from one simulation, pooled over
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimates {
    /// Time-average instantaneous reward.
    pub avg_instantaneous: f64,
    /// `Σ R_i (θ_i/D̄_i − Var D_i)`; absent when some client has fewer than
    /// two completed intervals.
    pub eq1_form: Option<f64>,
    /// `Σ R_i (θ_i N_i − Σ D(D−1)/2) / t`.
    pub reduced_form: f64,
    /// Clients with no completed delivery (their `D̄` is infinite).
    pub undelivered: Vec<usize>,
}

pub fn reward_estimates(scenario: &Scenario, result: &SimResult) -> RewardEstimates {
    let slots = (result.horizon * result.replications) as f64;
    let undelivered = result
        .clients
        .iter()
        .enumerate()
        .filter(|(_, st)| st.deliveries == 0)
        .map(|(i, _)| i)
        .collect();
    let eq1_form = result
        .clients
        .iter()
        .zip(scenario.clients())
        .map(|(st, c)| {
            let mean = st.intervals.mean()?;
            let var = st.intervals.variance()?;
            Some(c.weight * (c.theta / mean - var))
        })
        .sum();
    RewardEstimates {
        avg_instantaneous: result.reward.mean,
        eq1_form,
        reduced_form: reduced_form(scenario, &result.clients, slots),
        undelivered,
    }
}
