//! Dynamic pricing and storage planning for a network of EV charging stations.
//!
//! A provider buys energy from the wholesale market, stores it, and posts an
//! hourly price at each station. Demand responds linearly to the posted
//! prices. The planners choose prices and purchases to maximize a utility
//! that trades revenue against user satisfaction, grid stress and storage.

pub mod demand;
pub mod error;
pub mod planner;
pub mod qp;
pub mod scenario;
pub mod simulate;
pub mod utility;

pub use demand::{ElasticityModel, RlsState};
pub use error::{Error, Result};
pub use planner::{GridConfig, Plan, Policy, ValueTable};
pub use qp::{LinearConstraintSet, QpSolution, QuadForm};
pub use scenario::{EconomicParams, MarketScenario, Profile};
pub use simulate::{Execution, SimConfig, SimReport, TrueMarket};
pub use utility::{Decision, StageContext, UtilityBreakdown};
