//! Offline datasets and the empirical Bellman losses built on them.

mod dataset;
mod losses;
mod tabular;


pub use dataset::{collect, episode_rng, Behavior, Dataset, DatasetMeta, Subsample, Transition};
pub use losses::{
    backup_targets, bellman_error, bellman_loss, build_q, build_support_value, enumerate_support, exact_expected_f,
    expected_f, next_supports, q_value, regression_loss, regression_loss_grad, sample_support, support,
    support_value, ActionExpectation, BellmanErrorReport, InnerSearch, Support,
};
pub use tabular::{one_hot, tabular_dataset};
