//! Whittle-index scheduling for the mean/variance trade-off of packet
//! inter-delivery times: `N` clients share `K` unreliable channels and the
//! scheduler trades throughput against regularity of deliveries.
//!
//! * [`model`]: clients, scenarios, state evolution and the per-slot reward.
//! * [`index`]: closed-form index values and the top-K index rule.
//! * [`singlearm`]: the subsidy problem for one client, threshold policies
//!   and the numerical index oracle.
//! * [`jointmdp`]: exact solution of the joint problem on a truncated grid.
//! * [`bounds`]: capacity and Lagrangian upper bounds on the optimal reward.
//! * [`sim`]: slot-level Monte Carlo simulation and the policy zoo.

pub mod bounds;
pub mod error;
pub mod index;
pub mod jointmdp;
pub mod model;
pub mod sim;
pub mod singlearm;

pub use error::{Error, Result};
pub use index::{DiscountFactor, IndexSource, IndexTable, Mode, TieRule};
pub use model::{ClientParams, DeliveryOutcome, Scenario, ScheduleDecision, SystemState};
