//! Pessimistic model-free learning: a critic held to a small Bellman error
//! while minimizing the initial value, and an actor maximizing that value.

mod critic;
mod eval;
mod report;
mod train;

#[cfg(test)]
mod tests;

pub use critic::{Architecture, Critic, CriticConfig, CriticNet};
pub use eval::{episode_returns, evaluate, EvalSummary};
pub use report::{pessimism_report, PessimismReport, ReportOptions};
pub use train::{
    actor_step, critic_objective_grad, critic_steps, initial_bank, initial_value, train, train_with, write_log,
    CriticBatch, IterationLog, ModelFreeConfig, TrainOutcome, LOG_HEADER,
};
