//! Loading and shuttling automation: which wells hold ions, how vacancies
//! are refilled from the buffer, and the stochastic life of each ion.

mod manager;
mod planner;

pub use manager::{EnsembleManager, IonId, ShuttleEvent, ShuttleEventKind, SiteView, Slot};
pub use planner::{
    group_cap, plan_refill, scenario_catalog, validate_plan, Move, MovePlan, PlanViolation,
    Scenario,
};
