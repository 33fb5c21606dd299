//! Plan-and-execute orchestration of tool modules over a query/cache state.

pub mod baselines;
pub mod eval;
pub mod executor;
pub mod gateway;
pub mod inventory;
pub mod modules;
pub mod plan;
pub mod planner;
pub mod stub;
pub mod text;
pub mod types;
