//! Lookup-table value function and policy for finite MDPs.

use crate::error::{dim, Result};
use crate::tensor::{Graph, Matrix, Var};

use super::{JointPolicy, ValueNetwork};

/// `Q(s, a)` stored as an S×A table; input rows are `[onehot(s), onehot(a)]`
/// and the output sums over rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    pub table: Matrix,
}

impl TabularQ {
    pub fn new(table: Matrix) -> Self {
        Self { table }
    }

    pub fn zeros(states: usize, actions: usize) -> Self {
        Self { table: Matrix::zeros(states, actions) }
    }
}

impl ValueNetwork for TabularQ {
    fn blocks(&self) -> Vec<&Matrix> {
        vec![&self.table]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.table]
    }

    fn build(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let (s, a) = self.table.shape();
        if g.value(x).cols() != s + a {
            return Err(dim("tabular q", format!("input width {} for {s} states and {a} actions", g.value(x).cols())));
        }
        let state = g.slice_cols(x, 0, s)?;
        let action = g.slice_cols(x, s, a)?;
        let row = g.matmul(state, vars[0])?;
        let picked = g.mul(row, action)?;
        Ok(g.sum(picked))
    }

    fn input_dim(&self) -> usize {
        self.table.rows() + self.table.cols()
    }
}

/// Policy table `π(a|s)` over one-hot state rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub table: Matrix,
}

impl JointPolicy for TabularPolicy {
    fn n_actions(&self) -> usize {
        self.table.cols()
    }

    fn probs(&self, states: &Matrix) -> Matrix {
        states.matmul(&self.table).expect("one-hot state rows")
    }
}
