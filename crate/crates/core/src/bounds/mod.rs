//! Norm budgets, closed-form bounds and randomized checks of them.

mod budget;
pub mod calculators;
pub mod lipschitz;
pub mod sampling;
pub mod tabular;
pub mod verify;

pub use budget::{conjugate_constant, conjugate_exponent, NormBudget};
pub use calculators::{
    gen_bound_model_based, gen_bound_model_free, prescribed_bellman_budget, prescribed_radius, subopt_bound_model_based,
    subopt_bound_model_free, BoundInputs,
};
pub use lipschitz::{
    attention_input_lipschitz, output_norm_bound, param_distance, rff_lipschitz_bounds, softmax_l1_check, RffLipschitz,
};
pub use tabular::{concentrability_tabular, TabularMdp};
