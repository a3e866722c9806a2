//! Whittle index tables and the top-K index policy rule.
//!
//! Three sources of index values are kept side by side:
//!
//! * [`IndexSource::PaperClosedForm`]: literal transcriptions of the printed
//!   closed forms ([`avg_index_paper`], [`discounted_index_paper`]). They are
//!   kept for comparison only; both disagree with the subsidy oracle.
//! * [`IndexSource::Renewal`]: the exact indifference subsidy between adjacent
//!   thresholds, see [`crate::singlearm::renewal_index`].
//! * [`IndexSource::Oracle`]: subsidy bisection on the solved single-arm MDP,
//!   the reference every other source is checked against.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClientParams, ScheduleDecision, SystemState};
use crate::singlearm::{self, OracleConfig};

/// Default number of tabulated states before on-demand extension.
pub const DEFAULT_N_MAX: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DiscountFactor(f64);

impl DiscountFactor {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta < 1.0 {
            Ok(DiscountFactor(beta))
        } else {
            Err(Error::param(
                "beta",
                format!("must lie in (0, 1), got {beta}"),
            ))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DiscountFactor {
    type Error = Error;
    fn try_from(beta: f64) -> Result<Self> {
        DiscountFactor::new(beta)
    }
}

impl From<DiscountFactor> for f64 {
    fn from(beta: DiscountFactor) -> f64 {
        beta.0
    }
}

/// Optimality criterion of the single-arm and joint problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    Average,
    Discounted { beta: DiscountFactor },
}

impl Mode {
    pub fn discounted(beta: f64) -> Result<Self> {
        Ok(Mode::Discounted {
            beta: DiscountFactor::new(beta)?,
        })
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            Mode::Average => None,
            Mode::Discounted { beta } => Some(beta.get()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexSource {
    #[serde(rename = "closed-form-paper")]
    PaperClosedForm,
    #[serde(rename = "closed-form-renewal")]
    Renewal,
    Oracle,
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("p", format!("must lie in (0, 1], got {p}")))
    }
}

/// `E β^X` for `X ~ Geometric(p)` on `{1, 2, ...}`: `pβ / (1 − (1−p)β)`.
pub fn geom_pgf(p: f64, beta: f64) -> Result<f64> {
    check_p(p)?;
    let beta = DiscountFactor::new(beta)?.get();
    Ok(p * beta / (1.0 - (1.0 - p) * beta))
}

/// `E[X β^X]` for `X ~ Geometric(p)`: `pβ / (1 − (1−p)β)²`.
pub fn geom_weighted(p: f64, beta: f64) -> Result<f64> {
    check_p(p)?;
    let beta = DiscountFactor::new(beta)?.get();
    let d = 1.0 - (1.0 - p) * beta;
    Ok(p * beta / (d * d))
}

/// Printed closed form of the discounted index, `pβ(f1 − f2 − f3 + f4)/f5`.
///
/// The printed `f1..f5` carry no weight; the combination is scaled by `R` so
/// that `R = 1` reproduces the printed value exactly. The result is not the
/// discounted Whittle index: at `n = 0` it equals `pβR[θ − 1/(1−β+pβ)]`,
/// whereas the subsidy oracle gives `pβR[θ + 1/(1−β+pβ)]`.
pub fn discounted_index_paper(n: u32, client: &ClientParams, beta: DiscountFactor) -> f64 {
    let (p, b) = (client.p, beta.get());
    let x = p * b / (1.0 - (1.0 - p) * b);
    let d = 1.0 - (1.0 - p) * b;
    let y = p * b / (d * d);
    let nf = f64::from(n);
    let bn = b.powi(n as i32);
    let omb = 1.0 - b;
    let f1 = (1.0 - bn) / (omb * omb) * ((1.0 - x) * (nf * omb + b) - y * omb);
    let f2 = (b * (1.0 - bn) - bn * nf * omb) / (omb * omb) * (1.0 - x);
    let f3 = (1.0 - x) / omb * (1.0 - bn * x);
    let f4 = client.theta * (1.0 - x);
    let f5 = 1.0 - bn * x - p * b * ((1.0 - bn) / omb) * (1.0 - x);
    client.weight * p * b * (f1 - f2 - f3 + f4) / f5
}

/// Printed closed form of the average-cost index,
/// `nRp(n/2 + (1−p)/(1+p) + 1/2) + Rpθ`.
pub fn avg_index_paper(n: u32, client: &ClientParams) -> f64 {
    let (p, r, nf) = (client.p, client.weight, f64::from(n));
    nf * r * p * (nf / 2.0 + (1.0 - p) / (1.0 + p) + 0.5) + r * p * client.theta
}

/// Index values `W(0..=n_max)` for one client, tagged with how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    pub client: ClientParams,
    pub mode: Mode,
    pub source: IndexSource,
    values: Vec<f64>,
    #[serde(skip)]
    oracle: Option<OracleConfig>,
}

impl IndexTable {
    /// Tabulates `n = 0..=n_max` from a closed form (`PaperClosedForm` or `Renewal`).
    ///
    /// # Panics
    /// If `source` is `Oracle`; use [`IndexTable::oracle`].
    pub fn closed_form(client: ClientParams, mode: Mode, source: IndexSource, n_max: u32) -> Self {
        assert_ne!(
            source,
            IndexSource::Oracle,
            "oracle tables need a solver configuration"
        );
        let values = (0..=n_max)
            .map(|n| closed_form_value(&client, mode, source, n))
            .collect();
        IndexTable {
            client,
            mode,
            source,
            values,
            oracle: None,
        }
    }

    /// Tabulates `n = 0..=n_max` with the subsidy-bisection oracle. `config.s_max`
    /// is raised when needed so every `n` keeps the required margin.
    pub fn oracle(
        client: ClientParams,
        mode: Mode,
        n_max: u32,
        config: &OracleConfig,
    ) -> Result<Self> {
        let config = config.covering(n_max);
        let values = singlearm::oracle_table(&client, mode, n_max, &config)?;
        Ok(IndexTable {
            client,
            mode,
            source: IndexSource::Oracle,
            values,
            oracle: Some(config),
        })
    }

    pub fn build(
        client: ClientParams,
        mode: Mode,
        source: IndexSource,
        n_max: u32,
        config: &OracleConfig,
    ) -> Result<Self> {
        match source {
            IndexSource::Oracle => IndexTable::oracle(client, mode, n_max, config),
            _ => Ok(IndexTable::closed_form(client, mode, source, n_max)),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest tabulated state.
    pub fn n_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn get(&self, n: u32) -> Option<f64> {
        self.values.get(n as usize).copied()
    }

    /// `W(n)`, computed on the fly when `n` lies beyond the table.
    pub fn index(&self, n: u32) -> Result<f64> {
        if let Some(v) = self.get(n) {
            return Ok(v);
        }
        match self.source {
            IndexSource::Oracle => {
                let config = self.oracle.clone().unwrap_or_default().covering(n);
                singlearm::oracle_index(n, &self.client, self.mode, &config)
            }
            source => Ok(closed_form_value(&self.client, self.mode, source, n)),
        }
    }

    /// A new table covering at least `n`, growing by doubling.
    pub fn extended_to(&self, n: u32) -> Result<IndexTable> {
        if n <= self.n_max() {
            return Ok(self.clone());
        }
        let mut new_max = self.n_max().max(1);
        while new_max < n {
            new_max = new_max.saturating_mul(2);
        }
        let mut table = self.clone();
        match self.source {
            IndexSource::Oracle => {
                let config = self.oracle.clone().unwrap_or_default().covering(new_max);
                for m in self.n_max() + 1..=new_max {
                    table.values.push(singlearm::oracle_index(
                        m,
                        &self.client,
                        self.mode,
                        &config,
                    )?);
                }
                table.oracle = Some(config);
            }
            source => {
                for m in self.n_max() + 1..=new_max {
                    table
                        .values
                        .push(closed_form_value(&self.client, self.mode, source, m));
                }
            }
        }
        Ok(table)
    }
}

fn closed_form_value(client: &ClientParams, mode: Mode, source: IndexSource, n: u32) -> f64 {
    match (source, mode) {
        (IndexSource::PaperClosedForm, Mode::Average) => avg_index_paper(n, client),
        (IndexSource::PaperClosedForm, Mode::Discounted { beta }) => {
            discounted_index_paper(n, client, beta)
        }
        (IndexSource::Renewal, Mode::Average) => singlearm::renewal_index(n, client),
        (IndexSource::Renewal, Mode::Discounted { beta }) => {
            singlearm::discounted_indifference_index(n, client, beta)
        }
        (IndexSource::Oracle, _) => unreachable!("oracle values are not closed form"),
    }
}

/// How equal index values are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TieRule {
    #[default]
    LowestIndex,
    /// Ties ordered by a seeded hash of `(state, client)`; still a
    /// deterministic function of the state.
    Random { seed: u64 },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TieRule {
    fn key(&self, state: &SystemState, i: usize) -> u64 {
        match *self {
            TieRule::LowestIndex => i as u64,
            TieRule::Random { seed } => {
                let mut h = splitmix(seed);
                for &s in &state.elapsed {
                    h = splitmix(h ^ u64::from(s));
                }
                splitmix(h ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d))
            }
        }
    }
}

/// Orders clients by descending `values[i]`, then by the tie rule, and keeps
/// the first `k` (returned ascending) in `out`.
pub fn rank_top_k(
    values: &[f64],
    state: &SystemState,
    k: usize,
    tie: TieRule,
    out: &mut Vec<usize>,
) {
    out.clear();
    out.extend(0..values.len());
    out.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => tie.key(state, a).cmp(&tie.key(state, b)),
        other => other,
    });
    out.truncate(k);
    out.sort_unstable();
}

/// Serves the `k` clients with the largest `W_i(s_i)`.
pub fn select_topk(
    state: &SystemState,
    tables: &[IndexTable],
    k: usize,
    tie: TieRule,
) -> Result<ScheduleDecision> {
    if tables.len() != state.len() {
        return Err(Error::param(
            "index_tables",
            format!("{} tables for {} clients", tables.len(), state.len()),
        ));
    }
    if k == 0 || k > tables.len() {
        return Err(Error::param(
            "K",
            format!("must satisfy 1 <= K <= {}", tables.len()),
        ));
    }
    let values = tables
        .iter()
        .zip(&state.elapsed)
        .map(|(t, &s)| t.index(s))
        .collect::<Result<Vec<_>>>()?;
    let mut active = Vec::with_capacity(k);
    rank_top_k(&values, state, k, tie, &mut active);
    Ok(ScheduleDecision::from_sorted_unchecked(active))
}
