use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{rank_top_k, IndexTable, TieRule};
use crate::jointmdp::{round_robin_table, tabulate, JointMdp, MdpSolution, PolicyTable};
use crate::model::{Scenario, ScheduleDecision, SystemState};

/// A scheduling rule for the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Serve the `K` largest `W_i(s_i)`.
    Index {
        tables: Vec<IndexTable>,
        tie: TieRule,
    },
    /// Follow an exact solver's policy, with elapsed times clamped to the
    /// table's truncation level.
    OptimalTable {
        s_max: u32,
        actions: Vec<Vec<usize>>,
        policy: Vec<u32>,
    },
    /// Serve the `K` largest elapsed times.
    MaxElapsed { tie: TieRule },
    /// Slot `t` serves clients `tK, .., tK+K−1` (mod N).
    RoundRobin,
    /// A uniformly random K-subset each slot from a dedicated random stream.
    RandomK { seed: u64 },
}

impl Policy {
    pub fn optimal(mdp: &JointMdp, solution: &MdpSolution) -> Self {
        Policy::OptimalTable {
            s_max: mdp.s_max(),
            actions: mdp.actions().to_vec(),
            policy: solution.policy.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Index { .. } => "index",
            Policy::OptimalTable { .. } => "optimal",
            Policy::MaxElapsed { .. } => "max-elapsed",
            Policy::RoundRobin => "round-robin",
            Policy::RandomK { .. } => "random-k",
        }
    }

    /// The same rule as a table on `mdp`'s truncated state space.
    pub fn to_table(&self, mdp: &JointMdp) -> Result<PolicyTable> {
        match self {
            Policy::RoundRobin => Ok(round_robin_table(mdp)),
            Policy::RandomK { .. } => Ok(PolicyTable::UniformRandom),
            Policy::OptimalTable { s_max, policy, .. } if *s_max == mdp.s_max() => {
                Ok(PolicyTable::Stationary(policy.clone()))
            }
            _ => {
                let mut runner = self.runner(mdp.scenario(), 0, 0)?;
                let mut active = Vec::new();
                tabulate(mdp, |s| {
                    runner.decide(0, s, &mut active)?;
                    Ok(ScheduleDecision::from_sorted_unchecked(active.clone()))
                })
            }
        }
    }

    /// Per-replication decision state.
    pub(crate) fn runner(&self, scenario: &Scenario, seed: u64, stream: u64) -> Result<Runner<'_>> {
        let n = scenario.n();
        let k = scenario.k();
        if let Policy::Index { tables, .. } = self {
            if tables.len() != n {
                return Err(Error::param(
                    "policy",
                    format!("{} index tables for {} clients", tables.len(), n),
                ));
            }
        }
        let rng = match self {
            Policy::RandomK { seed: own } => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ own.rotate_left(32) ^ 0x5241_4e44_4f4d_4b00);
                rng.set_stream(stream);
                Some(rng)
            }
            _ => None,
        };
        Ok(Runner {
            policy: self,
            tables: match self {
                Policy::Index { tables, .. } => tables.clone(),
                _ => Vec::new(),
            },
            n,
            k,
            values: vec![0.0; n],
            rng,
        })
    }
}

pub(crate) struct Runner<'a> {
    policy: &'a Policy,
    tables: Vec<IndexTable>,
    n: usize,
    k: usize,
    values: Vec<f64>,
    rng: Option<ChaCha8Rng>,
}

impl Runner<'_> {
    /// Writes the ascending active set for slot `t` into `out`.
    pub(crate) fn decide(
        &mut self,
        t: u64,
        state: &SystemState,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        match self.policy {
            Policy::Index { tie, .. } => {
                for (i, &s) in state.elapsed.iter().enumerate() {
                    if s > self.tables[i].n_max() {
                        self.tables[i] = self.tables[i].extended_to(s)?;
                    }
                    self.values[i] = self.tables[i].index(s)?;
                }
                rank_top_k(&self.values, state, self.k, *tie, out);
            }
            Policy::MaxElapsed { tie } => {
                for (v, &s) in self.values.iter_mut().zip(&state.elapsed) {
                    *v = f64::from(s);
                }
                rank_top_k(&self.values, state, self.k, *tie, out);
            }
            Policy::OptimalTable {
                s_max,
                actions,
                policy,
            } => {
                let side = *s_max as usize + 1;
                let x = state
                    .elapsed
                    .iter()
                    .fold(0usize, |acc, &s| acc * side + s.min(*s_max) as usize);
                let a = *policy.get(x).ok_or_else(|| {
                    Error::InvalidDecision(format!(
                        "state {:?} outside the policy table",
                        state.elapsed
                    ))
                })?;
                out.clear();
                out.extend_from_slice(actions.get(a as usize).ok_or_else(|| {
                    Error::InvalidDecision(format!("action index {a} outside the action list"))
                })?);
            }
            Policy::RoundRobin => {
                let start = (t % self.n as u64) as usize * self.k;
                out.clear();
                out.extend((0..self.k).map(|j| (start + j) % self.n));
                out.sort_unstable();
            }
            Policy::RandomK { .. } => {
                let rng = self.rng.as_mut().expect("random-k runner owns a stream");
                out.clear();
                out.extend(sample(rng, self.n, self.k));
                out.sort_unstable();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{IndexSource, Mode};
    use crate::model::ClientParams;

    fn scenario(n: usize, k: usize) -> Scenario {
        let c = ClientParams::new(0.5, 1.0, 2.0).unwrap();
        Scenario::new(vec![c; n], k).unwrap()
    }

    #[test]
    fn round_robin_cycles_through_clients() {
        let sc = scenario(3, 2);
        let policy = Policy::RoundRobin;
        let mut r = policy.runner(&sc, 0, 0).unwrap();
        let state = sc.initial_state();
        let mut out = Vec::new();
        let seq: Vec<Vec<usize>> = (0..3)
            .map(|t| {
                r.decide(t, &state, &mut out).unwrap();
                out.clone()
            })
            .collect();
        assert_eq!(seq, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn random_k_draws_valid_subsets_reproducibly() {
        let sc = scenario(5, 2);
        let policy = Policy::RandomK { seed: 9 };
        let draw = |stream| {
            let mut r = policy.runner(&sc, 1, stream).unwrap();
            let mut out = Vec::new();
            (0..50)
                .map(|t| {
                    r.decide(t, &sc.initial_state(), &mut out).unwrap();
                    assert_eq!(out.len(), 2);
                    assert!(out[0] < out[1] && out[1] < 5);
                    out.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn index_tables_extend_past_their_range() {
        let sc = scenario(2, 1);
        let tables = sc
            .clients()
            .iter()
            .map(|c| IndexTable::closed_form(*c, Mode::Average, IndexSource::Renewal, 4))
            .collect();
        let policy = Policy::Index {
            tables,
            tie: TieRule::LowestIndex,
        };
        let mut r = policy.runner(&sc, 0, 0).unwrap();
        let mut out = Vec::new();
        r.decide(0, &SystemState::new(vec![3, 40]), &mut out)
            .unwrap();
        assert_eq!(out, vec![1]);
    }

    #[test]
    fn optimal_table_clamps_states() {
        let sc = scenario(2, 1);
        let policy = Policy::OptimalTable {
            s_max: 2,
            actions: vec![vec![0], vec![1]],
            policy: vec![0, 0, 0, 0, 0, 0, 0, 0, 1],
        };
        let mut r = policy.runner(&sc, 0, 0).unwrap();
        let mut out = Vec::new();
        r.decide(0, &SystemState::new(vec![7, 9]), &mut out)
            .unwrap();
        assert_eq!(out, vec![1]);
    }

    #[test]
    fn mismatched_tables_are_rejected() {
        let sc = scenario(3, 1);
        let policy = Policy::Index {
            tables: vec![],
            tie: TieRule::LowestIndex,
        };
        assert!(policy.runner(&sc, 0, 0).is_err());
    }
}
