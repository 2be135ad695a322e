//! Dense-cost linear programs in standard form and an in-house revised
//! simplex solver.
//!
//! Every transport and barycenter problem in this crate is posed as
//! `min cᵀx  s.t.  A x = b,  x ≥ 0` with a column-sparse `A`.

mod lu;
mod simplex;

use crate::error::{Error, Result};

/// Solver tolerances and limits.
#[derive(Debug, Clone)]
pub struct LpOptions {
    /// Primal feasibility tolerance.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub optimality_tol: f64,
    /// Smallest admissible pivot element in the ratio test.
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Eta updates accumulated before the basis is refactorized.
    pub refactor_interval: usize,
    /// Columns priced per partial-pricing block.
    pub pricing_chunk: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
    /// Relative size of the anti-degeneracy right-hand-side perturbation;
    /// zero disables it.
    pub perturbation: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-10,
            pivot_tol: 1e-9,
            max_iterations: 5_000_000,
            refactor_interval: 100,
            pricing_chunk: 2_000,
            degenerate_switch: 200,
            perturbation: 1e-7,
        }
    }
}

/// `min cᵀx  s.t.  A x = b,  x ≥ 0` with `A` stored by columns.
#[derive(Debug, Clone)]
pub struct StandardLp {
    n_rows: usize,
    costs: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    rhs: Vec<f64>,
}

/// Optimal basic solution of a [`StandardLp`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Simplex multipliers, one per equality row.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl StandardLp {
    pub fn new(n_rows: usize) -> Self {
        Self {
            n_rows,
            costs: Vec::new(),
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
            rhs: vec![0.0; n_rows],
        }
    }

    /// Reserves room for `cols` columns holding `nnz` nonzeros in total.
    pub fn with_capacity(n_rows: usize, cols: usize, nnz: usize) -> Self {
        let mut lp = Self::new(n_rows);
        lp.costs.reserve(cols);
        lp.col_ptr.reserve(cols);
        lp.row_idx.reserve(nnz);
        lp.values.reserve(nnz);
        lp
    }

    /// Appends a column and returns its index.
    pub fn push_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        for &(r, v) in entries {
            debug_assert!(r < self.n_rows, "row {r} out of range");
            self.row_idx.push(r);
            self.values.push(v);
        }
        self.costs.push(cost);
        self.col_ptr.push(self.row_idx.len());
        self.costs.len() - 1
    }

    pub fn set_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] = value;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Largest violation of `A x = b`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n_rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (r, v) in self.column(j) {
                    ax[r] += v * xj;
                }
            }
        }
        ax.iter().zip(&self.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn solve(&self, opts: &LpOptions) -> Result<LpSolution> {
        if self.n_rows == 0 {
            return Err(Error::InvalidInput("linear program has no constraints".into()));
        }
        if self.costs.iter().chain(&self.rhs).chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("linear program has non-finite data".into()));
        }
        if opts.perturbation > 0.0 {
            if let Some(sol) = simplex::Simplex::new(self, opts, true)?.solve()? {
                return Ok(sol);
            }
        }
        simplex::Simplex::new(self, opts, false)?
            .solve()?
            .ok_or_else(|| Error::Numerical("simplex ended at an infeasible basis".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_standard_form_problem() {
        // min -x1 - 2x2  s.t. x1 + x2 + s1 = 4, x1 + 3x2 + s2 = 6
        let mut lp = StandardLp::new(2);
        lp.push_column(-1.0, &[(0, 1.0), (1, 1.0)]);
        lp.push_column(-2.0, &[(0, 1.0), (1, 3.0)]);
        lp.push_column(0.0, &[(0, 1.0)]);
        lp.push_column(0.0, &[(1, 1.0)]);
        lp.set_rhs(0, 4.0);
        lp.set_rhs(1, 6.0);
        let sol = lp.solve(&LpOptions::default()).unwrap();
        // optimum at x1 = 3, x2 = 1 with value -5
        assert!((sol.objective + 5.0).abs() < 1e-12);
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
        assert!((sol.x[1] - 1.0).abs() < 1e-12);
        assert!(lp.residual(&sol.x) < 1e-12);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // x1 - x2 = -1, 2x1 - 2x2 = -2 (redundant), x1 + x2 = 3
        let mut lp = StandardLp::new(3);
        lp.push_column(1.0, &[(0, 1.0), (1, 2.0), (2, 1.0)]);
        lp.push_column(1.0, &[(0, -1.0), (1, -2.0), (2, 1.0)]);
        lp.set_rhs(0, -1.0);
        lp.set_rhs(1, -2.0);
        lp.set_rhs(2, 3.0);
        let sol = lp.solve(&LpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.x[1] - 2.0).abs() < 1e-12);
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_program_is_rejected() {
        let mut lp = StandardLp::new(1);
        lp.push_column(1.0, &[(0, 1.0)]);
        lp.set_rhs(0, -1.0);
        assert!(matches!(lp.solve(&LpOptions::default()), Err(Error::Numerical(_))));
    }

    #[test]
    fn duals_certify_optimality() {
        // 3x3 assignment problem
        let cost = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let mut lp = StandardLp::new(6);
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                lp.push_column(c, &[(i, 1.0), (3 + j, 1.0)]);
            }
        }
        for r in 0..6 {
            lp.set_rhs(r, 1.0);
        }
        let sol = lp.solve(&LpOptions::default()).unwrap();
        assert!((sol.objective - 5.0).abs() < 1e-12);
        let dual_obj: f64 = sol.duals.iter().sum();
        assert!((dual_obj - sol.objective).abs() < 1e-9);
        for j in 0..lp.n_cols() {
            let rc = lp.costs()[j] - lp.column(j).map(|(r, v)| v * sol.duals[r]).sum::<f64>();
            assert!(rc > -1e-9);
        }
    }
}
