//! Problem domain: clients, scenarios, the elapsed-time state and its
//! controlled evolution, and the per-slot reward.
//!
//! Each slot the access point picks `K` of `N` clients. An attempted client
//! `i` is delivered with probability `p_i`, independently of everything else.
//! The state `s_i` counts slots since client `i`'s last delivery and the
//! reward collected in state `s` is `Σ_i R_i (θ_i·[s_i = 0] − s_i)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-client channel reliability, weight and throughput/regularity trade-off.
///
/// `weight` may be zero (a degenerate client whose rewards vanish); scenarios
/// require it to be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClient")]
pub struct ClientParams {
    pub p: f64,
    #[serde(rename = "R")]
    pub weight: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    p: f64,
    #[serde(rename = "R")]
    weight: f64,
    theta: f64,
}

impl TryFrom<RawClient> for ClientParams {
    type Error = Error;

    fn try_from(raw: RawClient) -> Result<Self> {
        ClientParams::new(raw.p, raw.weight, raw.theta)
    }
}

impl ClientParams {
    pub fn new(p: f64, weight: f64, theta: f64) -> Result<Self> {
        let client = ClientParams { p, weight, theta };
        client.validate("")?;
        Ok(client)
    }

    fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::param(
                format!("{prefix}p"),
                format!("must lie in (0, 1], got {}", self.p),
            ));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::param(
                format!("{prefix}R"),
                format!("must be a finite non-negative weight, got {}", self.weight),
            ));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::param(
                format!("{prefix}theta"),
                format!("must be finite and >= 0, got {}", self.theta),
            ));
        }
        Ok(())
    }

    /// Reward collected in one slot spent at elapsed time `s`, excluding any subsidy.
    #[inline]
    pub fn reward_at(&self, s: u32) -> f64 {
        if s == 0 {
            self.weight * self.theta
        } else {
            -self.weight * f64::from(s)
        }
    }
}

/// `N` clients sharing `K` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario")]
pub struct Scenario {
    clients: Vec<ClientParams>,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    clients: Vec<RawClient>,
    #[serde(rename = "K")]
    k: usize,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        let clients = raw
            .clients
            .into_iter()
            .map(|c| ClientParams {
                p: c.p,
                weight: c.weight,
                theta: c.theta,
            })
            .collect();
        Scenario::new(clients, raw.k)
    }
}

impl Scenario {
    pub fn new(clients: Vec<ClientParams>, k: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::param("clients", "at least one client is required"));
        }
        for (i, c) in clients.iter().enumerate() {
            let prefix = format!("clients[{i}].");
            c.validate(&prefix)?;
            if c.weight <= 0.0 {
                return Err(Error::param(
                    format!("{prefix}R"),
                    format!("must be > 0 in a scenario, got {}", c.weight),
                ));
            }
        }
        if k == 0 || k > clients.len() {
            return Err(Error::param(
                "K",
                format!("must satisfy 1 <= K <= N = {}, got {k}", clients.len()),
            ));
        }
        Ok(Scenario { clients, k })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn clients(&self) -> &[ClientParams] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> &ClientParams {
        &self.clients[i]
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Returns a copy with client `i` replaced. The result is re-validated.
    pub fn with_client(&self, i: usize, client: ClientParams) -> Result<Self> {
        let mut clients = self.clients.clone();
        clients[i] = client;
        Scenario::new(clients, self.k)
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState::zeros(self.n())
    }
}

/// Slots elapsed since each client's latest delivery.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub elapsed: Vec<u32>,
}

impl SystemState {
    pub fn new(elapsed: Vec<u32>) -> Self {
        SystemState { elapsed }
    }

    pub fn zeros(n: usize) -> Self {
        SystemState {
            elapsed: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.elapsed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elapsed.is_empty()
    }
}

/// The set of clients granted a channel in one slot, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleDecision {
    active: Vec<usize>,
}

impl ScheduleDecision {
    /// Validates cardinality `K`, distinctness and range against `scenario`.
    pub fn new(mut active: Vec<usize>, scenario: &Scenario) -> Result<Self> {
        active.sort_unstable();
        let decision = ScheduleDecision { active };
        decision.check(scenario)?;
        Ok(decision)
    }

    /// Builds a decision without checking it against a scenario; indices are
    /// sorted and must be distinct.
    pub fn from_sorted_unchecked(active: Vec<usize>) -> Self {
        debug_assert!(active.windows(2).all(|w| w[0] < w[1]));
        ScheduleDecision { active }
    }

    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        if self.active.len() != scenario.k() {
            return Err(Error::InvalidDecision(format!(
                "expected {} active clients, got {:?}",
                scenario.k(),
                self.active
            )));
        }
        if self.active.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDecision(format!(
                "duplicate client in {:?}",
                self.active
            )));
        }
        if let Some(&bad) = self.active.iter().find(|&&i| i >= scenario.n()) {
            return Err(Error::InvalidDecision(format!(
                "client {bad} out of range for N = {}",
                scenario.n()
            )));
        }
        Ok(())
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeliveryOutcome {
    pub delivered: Vec<usize>,
}

impl DeliveryOutcome {
    pub fn new(mut delivered: Vec<usize>) -> Self {
        delivered.sort_unstable();
        delivered.dedup();
        DeliveryOutcome { delivered }
    }
}

/// Applies one slot of the state update: delivered clients reset to zero,
/// all others age by one.
pub fn step(
    state: &SystemState,
    decision: &ScheduleDecision,
    outcome: &DeliveryOutcome,
) -> Result<SystemState> {
    if let Some(&bad) = outcome.delivered.iter().find(|&&i| !decision.contains(i)) {
        return Err(Error::InvalidOutcome(format!(
            "client {bad} delivered but active set is {:?}",
            decision.active()
        )));
    }
    let elapsed = state
        .elapsed
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if outcome.delivered.contains(&i) {
                0
            } else {
                s + 1
            }
        })
        .collect();
    Ok(SystemState { elapsed })
}

/// Draws delivery successes for `active` (ascending) from `probabilities`,
/// one uniform draw per active client in that order.
///
/// Probabilities outside `(0, 1]` are allowed here: `0` never delivers.
pub fn draw_deliveries<R: Rng + ?Sized>(
    active: &[usize],
    probabilities: impl Fn(usize) -> f64,
    rng: &mut R,
    delivered: &mut Vec<usize>,
) {
    delivered.clear();
    for &i in active {
        let u: f64 = rng.random();
        if u < probabilities(i) {
            delivered.push(i);
        }
    }
}

/// Samples the channel for one slot and applies [`step`].
pub fn sample_step<R: Rng + ?Sized>(
    state: &SystemState,
    decision: &ScheduleDecision,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(SystemState, DeliveryOutcome)> {
    if state.len() != scenario.n() {
        return Err(Error::param(
            "state",
            format!(
                "has {} entries, scenario has {} clients",
                state.len(),
                scenario.n()
            ),
        ));
    }
    decision.check(scenario)?;
    let mut delivered = Vec::with_capacity(decision.active().len());
    draw_deliveries(
        decision.active(),
        |i| scenario.client(i).p,
        rng,
        &mut delivered,
    );
    let outcome = DeliveryOutcome { delivered };
    let next = step(state, decision, &outcome)?;
    Ok((next, outcome))
}

/// `Σ_i R_i (θ_i·[s_i = 0] − s_i)`.
pub fn instantaneous_reward(state: &SystemState, scenario: &Scenario) -> f64 {
    debug_assert_eq!(state.len(), scenario.n());
    state
        .elapsed
        .iter()
        .zip(scenario.clients())
        .map(|(&s, c)| c.reward_at(s))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(ps: &[f64], k: usize) -> Scenario {
        let clients = ps
            .iter()
            .map(|&p| ClientParams::new(p, 1.0, 3.0).unwrap())
            .collect();
        Scenario::new(clients, k).unwrap()
    }

    #[test]
    fn step_examples() {
        let sc = scenario(&[0.5, 0.5], 1);
        let d1 = ScheduleDecision::new(vec![1], &sc).unwrap();
        let next = step(
            &SystemState::new(vec![2, 5]),
            &d1,
            &DeliveryOutcome::new(vec![1]),
        )
        .unwrap();
        assert_eq!(next.elapsed, vec![3, 0]);

        let d0 = ScheduleDecision::new(vec![0], &sc).unwrap();
        let next = step(&SystemState::zeros(2), &d0, &DeliveryOutcome::default()).unwrap();
        assert_eq!(next.elapsed, vec![1, 1]);

        let single = scenario(&[0.5], 1);
        let d = ScheduleDecision::new(vec![0], &single).unwrap();
        let next = step(
            &SystemState::new(vec![7]),
            &d,
            &DeliveryOutcome::new(vec![0]),
        )
        .unwrap();
        assert_eq!(next.elapsed, vec![0]);
    }

    #[test]
    fn step_rejects_delivery_outside_active_set() {
        let sc = scenario(&[0.5, 0.5], 1);
        let d = ScheduleDecision::new(vec![0], &sc).unwrap();
        let err = step(&SystemState::zeros(2), &d, &DeliveryOutcome::new(vec![1])).unwrap_err();
        assert!(matches!(err, Error::InvalidOutcome(_)));
    }

    #[test]
    fn decision_validation() {
        let sc = scenario(&[0.5, 0.5, 0.5], 2);
        assert!(ScheduleDecision::new(vec![0], &sc).is_err());
        assert!(ScheduleDecision::new(vec![1, 1], &sc).is_err());
        assert!(ScheduleDecision::new(vec![0, 3], &sc).is_err());
        assert_eq!(
            ScheduleDecision::new(vec![2, 0], &sc).unwrap().active(),
            &[0, 2]
        );
    }

    #[test]
    fn reward_examples() {
        let sc = scenario(&[0.5, 0.5], 1);
        assert_eq!(
            instantaneous_reward(&SystemState::new(vec![0, 4]), &sc),
            -1.0
        );
        assert_eq!(instantaneous_reward(&SystemState::zeros(2), &sc), 6.0);
        let single = Scenario::new(vec![ClientParams::new(0.5, 2.0, 5.0).unwrap()], 1).unwrap();
        assert_eq!(
            instantaneous_reward(&SystemState::new(vec![3]), &single),
            -6.0
        );
    }

    #[test]
    fn certain_and_impossible_delivery() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = scenario(&[1.0, 1.0, 1.0], 2);
        let d = ScheduleDecision::new(vec![0, 2], &sc).unwrap();
        let mut state = sc.initial_state();
        for _ in 0..1000 {
            let (next, out) = sample_step(&state, &d, &sc, &mut rng).unwrap();
            assert_eq!(out.delivered, vec![0, 2]);
            state = next;
        }
        let mut delivered = Vec::new();
        for _ in 0..1000 {
            draw_deliveries(&[0, 1], |_| 0.0, &mut rng, &mut delivered);
            assert!(delivered.is_empty());
        }
    }

    #[test]
    fn empirical_delivery_rate() {
        // 1e6 Bernoulli(0.8) draws: sd of the rate is 4e-4, so 0.002 is 5 sd.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut delivered = Vec::new();
        let mut hits = 0u64;
        let trials = 1_000_000;
        for _ in 0..trials {
            draw_deliveries(&[0], |_| 0.8, &mut rng, &mut delivered);
            hits += delivered.len() as u64;
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.8).abs() < 0.002, "rate {rate}");
    }

    #[test]
    fn sample_step_is_reproducible() {
        let sc = scenario(&[0.3, 0.7, 0.5], 2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = ScheduleDecision::new(vec![1, 2], &sc).unwrap();
            let mut state = sc.initial_state();
            let mut trace = Vec::new();
            for _ in 0..200 {
                let (next, _) = sample_step(&state, &d, &sc, &mut rng).unwrap();
                trace.push(next.clone());
                state = next;
            }
            trace
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn scenario_json_roundtrip_and_field_errors() {
        let text =
            r#"{"clients":[{"p":0.8,"R":1.0,"theta":3.0},{"p":0.6,"R":1.0,"theta":3.0}],"K":1}"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.n(), 2);
        assert_eq!(sc.k(), 1);
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);

        let bad_p =
            r#"{"clients":[{"p":0.8,"R":1.0,"theta":3.0},{"p":1.5,"R":1.0,"theta":3.0}],"K":1}"#;
        let msg = Scenario::from_json(bad_p).unwrap_err().to_string();
        assert!(msg.contains("clients[1].p"), "{msg}");

        let bad_k = r#"{"clients":[{"p":0.8,"R":1.0,"theta":3.0}],"K":2}"#;
        assert!(Scenario::from_json(bad_k)
            .unwrap_err()
            .to_string()
            .contains('K'));

        let zero_r = r#"{"clients":[{"p":0.8,"R":0.0,"theta":3.0}],"K":1}"#;
        assert!(Scenario::from_json(zero_r)
            .unwrap_err()
            .to_string()
            .contains("clients[0].R"));

        let missing = r#"{"clients":[{"p":0.8,"theta":3.0}],"K":1}"#;
        assert!(Scenario::from_json(missing)
            .unwrap_err()
            .to_string()
            .contains('R'));

        let neg_theta = r#"{"clients":[{"p":0.8,"R":1.0,"theta":-1.0}],"K":1}"#;
        assert!(Scenario::from_json(neg_theta)
            .unwrap_err()
            .to_string()
            .contains("theta"));
    }
}
