//! Upper bounds on the optimal average reward.
//!
//! The capacity bound relaxes the scheduling constraint to long-run
//! delivery rates: client `i` delivered at rate `x_i` costs `x_i/p_i`
//! channel-slots per slot, and at most `K` are available. The Lagrangian
//! bound prices the channel constraint with a subsidy `w` and solves each
//! client separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Mode;
use crate::model::{ClientParams, Scenario};
use crate::singlearm::{renewal_index, solve_arm, threshold_avg_reward, SubsidyArm, DEFAULT_S_MAX};

/// Consecutive decreases of the threshold gain that end the search.
pub const THRESHOLD_PATIENCE: u32 = 10;
/// Largest threshold the search visits.
pub const THRESHOLD_CAP: u32 = 10_000;

/// An unrestricted single-arm gain beating the best threshold by more than
/// this replaces the threshold value.
const FALLBACK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityBoundResult {
    pub bound: f64,
    /// Per-client delivery rates `x_i = 1/D̄_i` at the optimum.
    pub rates: Vec<f64>,
    /// Multiplier of the capacity constraint.
    pub multiplier: f64,
    /// Largest stationarity or complementary-slackness violation.
    pub kkt_residual: f64,
    /// `K − Σ x_i/p_i`, nonnegative up to rounding.
    pub capacity_slack: f64,
}

/// Maximizes `Σ R_i [θ_i x_i − (1/x_i − 1)/2]` subject to
/// `Σ x_i/p_i ≤ K`.
///
/// Every term is strictly increasing in `x_i`, so the constraint binds and
/// stationarity `R_i (θ_i + 1/(2x_i²)) = λ/p_i` gives `x_i(λ)` in closed
/// form; `λ` is found by bisection on `Σ x_i(λ)/p_i = K`.
pub fn capacity_bound(scenario: &Scenario) -> Result<CapacityBoundResult> {
    let clients = scenario.clients();
    let k = scenario.k() as f64;
    if let Some(i) = clients.iter().position(|c| c.p.is_nan() || c.p <= 0.0) {
        return Err(Error::param(format!("clients[{i}].p"), "must be positive"));
    }
    let rate = |c: &ClientParams, lambda: f64| {
        let excess = lambda / (c.p * c.weight) - c.theta;
        if excess > 0.0 {
            1.0 / (2.0 * excess).sqrt()
        } else {
            f64::INFINITY
        }
    };
    let load = |lambda: f64| clients.iter().map(|c| rate(c, lambda) / c.p).sum::<f64>();

    // Below `lo` some rate is unbounded; grow `hi` until the load fits.
    let lo0 = clients
        .iter()
        .map(|c| c.p * c.weight * c.theta)
        .fold(0.0, f64::max);
    let mut lo = lo0;
    let mut hi = lo0.max(1e-12) * 2.0 + 1.0;
    let mut grow = 0;
    while load(hi) > k {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::NotConverged {
                iterations: grow,
                residual: load(hi) - k,
            });
        }
    }
    let mut iterations = 0;
    while hi - lo > 1e-15 * hi && iterations < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if load(mid) > k {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let lambda = hi;
    let rates: Vec<f64> = clients.iter().map(|c| rate(c, lambda)).collect();
    let used: f64 = rates.iter().zip(clients).map(|(x, c)| x / c.p).sum();
    let stationarity = rates
        .iter()
        .zip(clients)
        .map(|(&x, c)| {
            (c.p * c.weight * (c.theta + 0.5 / (x * x)) - lambda).abs() / lambda.max(1.0)
        })
        .fold(0.0, f64::max);
    let slackness = lambda * (k - used).abs() / lambda.max(1.0);
    let bound = rates
        .iter()
        .zip(clients)
        .map(|(&x, c)| c.weight * (c.theta * x - (1.0 / x - 1.0) / 2.0))
        .sum();
    Ok(CapacityBoundResult {
        bound,
        rates,
        multiplier: lambda,
        kkt_residual: stationarity.max(slackness),
        capacity_slack: k - used,
    })
}

/// Best threshold `T` for one arm under subsidy `w`, searching upward until
/// the gain has decreased [`THRESHOLD_PATIENCE`] times in a row. Ties go to
/// the smallest `T`.
pub fn best_threshold(client: &ClientParams, w: f64) -> Result<(u32, f64)> {
    let mut best = (0, threshold_avg_reward(0, w, client));
    let mut prev = best.1;
    let mut falling = 0;
    for t in 1..=THRESHOLD_CAP {
        let g = threshold_avg_reward(t, w, client);
        if g > best.1 + 1e-12 * (1.0 + best.1.abs()) {
            best = (t, g);
        }
        falling = if g < prev { falling + 1 } else { 0 };
        prev = g;
        if falling >= THRESHOLD_PATIENCE {
            return Ok(best);
        }
    }
    Err(Error::ThresholdCutoff {
        t_max: THRESHOLD_CAP,
    })
}

/// `Σ_i max_T g_i(T, w) − w (N − K)` with the maximizing thresholds.
pub fn lagrangian_objective(scenario: &Scenario, w: f64) -> Result<(f64, Vec<u32>)> {
    let mut total = -w * (scenario.n() - scenario.k()) as f64;
    let mut thresholds = Vec::with_capacity(scenario.n());
    for c in scenario.clients() {
        let (t, g) = best_threshold(c, w)?;
        total += g;
        thresholds.push(t);
    }
    Ok((total, thresholds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub w: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianBoundResult {
    pub bound: f64,
    pub w_star: f64,
    /// Per-client best thresholds at `w_star`.
    pub thresholds: Vec<u32>,
    /// Clients whose unrestricted single-arm optimum at `w_star` beat every
    /// threshold policy and replaced it in `bound`.
    pub fallback_clients: Vec<usize>,
    /// The objective on the evaluation grid, ascending in `w`.
    pub curve: Vec<CurvePoint>,
}

/// Minimizes the Lagrangian objective over `w ∈ w_range`.
///
/// The objective is convex and piecewise affine with kinks at the
/// per-client renewal indices, so the minimum over the range is attained at
/// one of those kinks or at an endpoint; those candidates are evaluated
/// along with a uniform grid of `resolution` points used for the curve.
pub fn lagrangian_bound(
    scenario: &Scenario,
    w_range: (f64, f64),
    resolution: usize,
) -> Result<LagrangianBoundResult> {
    let (lo, hi) = w_range;
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
        return Err(Error::param(
            "w_range",
            format!("[{lo}, {hi}] must be a nonempty range within [0, ∞)"),
        ));
    }
    if resolution < 2 {
        return Err(Error::param("resolution", "need at least 2 grid points"));
    }
    let grid: Vec<f64> = (0..resolution)
        .map(|j| lo + (hi - lo) * j as f64 / (resolution - 1) as f64)
        .collect();
    let mut curve = Vec::with_capacity(resolution);
    for &w in &grid {
        curve.push(CurvePoint {
            w,
            value: lagrangian_objective(scenario, w)?.0,
        });
    }

    let mut candidates = vec![lo, hi];
    for c in scenario.clients() {
        for n in 0..THRESHOLD_CAP {
            let w = renewal_index(n, c);
            if w > hi {
                break;
            }
            if w >= lo {
                candidates.push(w);
            }
        }
    }
    let mut best = (f64::INFINITY, lo);
    for w in candidates.into_iter().chain(grid) {
        let (v, _) = lagrangian_objective(scenario, w)?;
        if v < best.0 || (v == best.0 && w < best.1) {
            best = (v, w);
        }
    }
    let (mut bound, w_star) = best;
    let (_, thresholds) = lagrangian_objective(scenario, w_star)?;

    let mut fallback_clients = Vec::new();
    for (i, c) in scenario.clients().iter().enumerate() {
        let arm = SubsidyArm::new(*c, w_star, Mode::Average, DEFAULT_S_MAX)?;
        let unrestricted = solve_arm(&arm)?.gain.unwrap_or(f64::NEG_INFINITY);
        let restricted = threshold_avg_reward(thresholds[i], w_star, c);
        if unrestricted > restricted + FALLBACK_TOL * (1.0 + restricted.abs()) {
            bound += unrestricted - restricted;
            fallback_clients.push(i);
        }
    }
    Ok(LagrangianBoundResult {
        bound,
        w_star,
        thresholds,
        fallback_clients,
        curve,
    })
}

/// A subsidy range guaranteed to contain the minimizer: the objective's
/// slope is `Σ_i pT_i/(pT_i+1) − (N−K)` and becomes nonnegative once every
/// client's threshold is large enough.
pub fn default_w_range(scenario: &Scenario) -> (f64, f64) {
    let n = scenario.n();
    let k = scenario.k();
    let need = (n - k) as f64;
    // Threshold at which one client's slope reaches (N−K)/N.
    let frac = need / n as f64;
    let top = scenario
        .clients()
        .iter()
        .map(|c| {
            let t = if frac >= 1.0 {
                0.0
            } else {
                (frac / (c.p * (1.0 - frac))).ceil()
            };
            renewal_index(t as u32 + 1, c)
        })
        .fold(0.0, f64::max);
    (0.0, 1.5 * top + 1.0)
}
