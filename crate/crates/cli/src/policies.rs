use anyhow::{bail, Result};
use clap::ValueEnum;
use interdelivery::jointmdp::{JointMdp, MdpSolution};
use interdelivery::sim::Policy;
use interdelivery::{IndexSource, IndexTable, Mode, Scenario, TieRule};
use serde::{Deserialize, Serialize};

/// Index values tabulated up front; larger states are computed on demand.
const TABLE_N_MAX: u32 = 512;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Exact optimal policy of the truncated joint chain.
    Optimal,
    /// Top-K by the renewal (exact indifference) index.
    Index,
    /// Top-K by the printed closed-form index.
    IndexPaper,
    /// Top-K by elapsed time.
    MaxElapsed,
    /// Time-based round-robin.
    RoundRobin,
    /// Uniformly random K-subset per slot.
    RandomK,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Optimal => "optimal",
            PolicyKind::Index => "index",
            PolicyKind::IndexPaper => "index-paper",
            PolicyKind::MaxElapsed => "max-elapsed",
            PolicyKind::RoundRobin => "round-robin",
            PolicyKind::RandomK => "random-k",
        }
    }
}

/// Tie handling as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TieFlag {
    #[default]
    Lowest,
    Random,
}

impl TieFlag {
    pub fn rule(self, seed: u64) -> TieRule {
        match self {
            TieFlag::Lowest => TieRule::LowestIndex,
            TieFlag::Random => TieRule::Random { seed },
        }
    }
}

pub fn index_tables(scenario: &Scenario, mode: Mode, source: IndexSource) -> Vec<IndexTable> {
    scenario
        .clients()
        .iter()
        .map(|c| IndexTable::closed_form(*c, mode, source, TABLE_N_MAX))
        .collect()
}

/// Builds a simulator policy. `optimal` is required for [`PolicyKind::Optimal`].
pub fn build(
    kind: PolicyKind,
    scenario: &Scenario,
    mode: Mode,
    tie: TieRule,
    seed: u64,
    optimal: Option<(&JointMdp, &MdpSolution)>,
) -> Result<Policy> {
    Ok(match kind {
        PolicyKind::Optimal => match optimal {
            Some((mdp, sol)) => Policy::optimal(mdp, sol),
            None => bail!("the optimal policy needs an exact solve of the joint chain"),
        },
        PolicyKind::Index => Policy::Index {
            tables: index_tables(scenario, mode, IndexSource::Renewal),
            tie,
        },
        PolicyKind::IndexPaper => Policy::Index {
            tables: index_tables(scenario, mode, IndexSource::PaperClosedForm),
            tie,
        },
        PolicyKind::MaxElapsed => Policy::MaxElapsed { tie },
        PolicyKind::RoundRobin => Policy::RoundRobin,
        PolicyKind::RandomK => Policy::RandomK { seed },
    })
}
