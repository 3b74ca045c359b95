//! Pessimistic model-based learning: maximum-likelihood dynamics, a
//! total-variation confidence region around them, and policy search
//! against the least favorable member of an ensemble inside that region.

mod dynamics;
mod planner;
mod probe;
mod synthetic;


pub use dynamics::{
    fit_mle, in_confidence_region, init_rng, tv_from_distance, tv_point, DynamicsConfig, DynamicsModel, FitConfig, FitMethod,
    FitOutcome, RegionTest,
};
pub use planner::{
    fit_ensemble, member_seed, model_value, pessimistic_policy, prescribed_zeta, reinforce_step, rollouts,
    write_planner_log, Ensemble, ModelBasedConfig, PlannerLog, PlannerOutcome, RolloutSpec, RolloutTask, Trajectory,
    PLANNER_LOG_HEADER,
};
pub use probe::{median_by_size, mle_consistency_probe, write_probe, ProbeRow, PROBE_HEADER};
pub use synthetic::{synthetic_reward, SyntheticTask};
