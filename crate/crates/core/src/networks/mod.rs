//! Permutation-aware function classes built on the autodiff tape.

mod checkpoint;
mod deep_sets;
mod mlp;
mod policy;
mod set_transformer;
mod tabular;

#[cfg(test)]
mod tests;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, ModelKind};
pub use deep_sets::DeepSets;
pub use mlp::Mlp;
pub use policy::{JointPolicy, PolicyNet, UniformPolicy};
pub use set_transformer::{LayerParams, LayerVars, SetTransformerParams, SetTransformerValue};
pub use tabular::{TabularPolicy, TabularQ};

use crate::error::{dim, Result};
use crate::tensor::{Graph, Matrix, Var};

/// `SM(q·kᵀ)·v`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if k.rows() != v.rows() {
        return Err(dim("attention", format!("{} keys but {} values", k.rows(), v.rows())));
    }
    q.matmul_t(k)?.row_softmax().matmul(v)
}

/// Row-wise ReLU feedforward: `[rFF(X)]_{ik} = Σ_j a_kj·ReLU(b_kjᵀ X_i)`.
///
/// `ff_out` is 1×(d·m) and `ff_in` is d×(d·m), both indexed by `k·m + j`.
pub fn rff(x: &Matrix, ff_out: &Matrix, ff_in: &Matrix, m: usize) -> Result<Matrix> {
    let d = x.cols();
    if ff_in.shape() != (d, d * m) || ff_out.shape() != (1, d * m) {
        return Err(dim(
            "rff",
            format!("weights {:?}/{:?} for input width {d} and m = {m}", ff_out.shape(), ff_in.shape()),
        ));
    }
    x.matmul(ff_in)?.relu().mul_row_broadcast(ff_out)?.group_sum_cols(m)
}

/// Appends each agent's one-hot action to its state row: N×d_S → N×(d_S + n_actions).
pub fn joint_input(states: &Matrix, actions: &[usize], n_actions: usize) -> Result<Matrix> {
    if actions.len() != states.rows() {
        return Err(dim("joint_input", format!("{} actions for {} agents", actions.len(), states.rows())));
    }
    let onehot = Matrix::from_fn(states.rows(), n_actions, |r, c| if actions[r] == c { 1.0 } else { 0.0 });
    states.hcat(&onehot)
}

/// A scalar-valued network trained through the tape.
///
/// Parameter blocks are exposed in a fixed order; `build` receives graph
/// handles for them in that same order.
pub trait ValueNetwork: Clone + Send + Sync {
    fn blocks(&self) -> Vec<&Matrix>;

    fn blocks_mut(&mut self) -> Vec<&mut Matrix>;

    fn build(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var>;

    /// Pulls parameters back into the model's admissible set, if it has one.
    fn project(&mut self) {}

    /// Whether the parameters lie in the admissible set; unconstrained models always do.
    fn within_budget(&self) -> bool {
        true
    }

    fn input_dim(&self) -> usize;

    fn register(&self, graph: &mut Graph, differentiable: bool) -> Vec<Var> {
        self.blocks()
            .into_iter()
            .map(|m| if differentiable { graph.param(m.clone()) } else { graph.constant(m.clone()) })
            .collect()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.blocks().iter().map(|m| m.shape()).collect()
    }

    fn value(&self, x: &Matrix) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.build(&mut g, &vars, xv)?;
        Ok(g.scalar(out))
    }

    fn apply_step(&mut self, grads: &[Matrix], lr: f64) {
        for (p, g) in self.blocks_mut().into_iter().zip(grads) {
            p.axpy(-lr, g);
        }
    }
}
