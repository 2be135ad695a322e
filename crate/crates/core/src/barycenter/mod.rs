//! Fixed-support Wasserstein-2 barycenters of empirical measures.
//!
//! The barycenter lives on a [`Grid`]; its weights solve a linear program in
//! the couplings between the grid and each input measure. For problems too
//! large for the exact solver an entropically regularized approximation is
//! available.

mod entropic;
mod grid;

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use entropic::{solve_barycenter_entropic, EntropicMode, EntropicOptions};
pub use grid::{build_grid, build_grid_with_cap, default_mesh, Grid, DEFAULT_BINS, GRID_CAP};

use crate::error::{Error, Result};
use crate::functionals::{pushforward, Functional};
use crate::lp::{LpOptions, StandardLp};
use crate::measures::{make_measure, CostMatrix, EmpiricalMeasure, Weights};
use crate::models::DrawSet;

/// Default limit on the number of LP variables, `g·Σ s_j + g`.
pub const BARYCENTER_LP_CAP: usize = 500_000;

/// Weights below this are zeroed after a solve.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    ExactLp,
    Entropic,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::ExactLp => "exact-lp",
            SolverKind::Entropic => "entropic",
        })
    }
}

/// Barycenter weights on a fixed set of atoms, with solver metadata.
#[derive(Debug, Clone)]
pub struct BarycenterSolution {
    /// Weight of each grid atom; on the simplex.
    pub weights: Array1<f64>,
    /// Couplings `T_j` (grid × subset atoms), when retained.
    pub plans: Option<Vec<Array2<f64>>>,
    /// `Σ_j ⟨T_j, D_j⟩`.
    pub objective: f64,
    pub solver: SolverKind,
    pub iterations: usize,
    pub converged: bool,
    /// Regularization strength, entropic solver only.
    pub regularization: Option<f64>,
    pub tolerance: f64,
}

impl BarycenterSolution {
    /// Number of atoms with positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// The barycenter as a measure on `atoms`.
    pub fn measure(&self, atoms: ArrayView2<'_, f64>) -> Result<EmpiricalMeasure> {
        if atoms.nrows() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), found: atoms.nrows() });
        }
        make_measure(atoms.to_owned(), Weights::Explicit(self.weights.to_vec()))
    }
}

/// Options for [`solve_barycenter_lp`].
#[derive(Debug, Clone)]
pub struct LpBarycenterOptions {
    pub cap: usize,
    pub keep_plans: bool,
    pub lp: LpOptions,
}

impl Default for LpBarycenterOptions {
    fn default() -> Self {
        Self { cap: BARYCENTER_LP_CAP, keep_plans: false, lp: LpOptions::default() }
    }
}

pub(crate) fn check_inputs(costs: &[CostMatrix], weights: &[ArrayView1<'_, f64>]) -> Result<usize> {
    let first = costs.first().ok_or_else(|| Error::InvalidInput("no cost matrices given".into()))?;
    if costs.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: costs.len(), found: weights.len() });
    }
    let g = first.nrows();
    if g == 0 {
        return Err(Error::InvalidInput("grid has no atoms".into()));
    }
    for (j, (c, w)) in costs.iter().zip(weights).enumerate() {
        if c.nrows() != g {
            return Err(Error::DimensionMismatch { expected: g, found: c.nrows() });
        }
        if c.ncols() != w.len() {
            return Err(Error::DimensionMismatch { expected: c.ncols(), found: w.len() });
        }
        let total: f64 = w.sum();
        if w.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!("weights of subset {j} are not on the simplex")));
        }
    }
    Ok(g)
}

/// Zeroes weights below [`WEIGHT_FLOOR`] and renormalizes.
pub(crate) fn clean_weights(mut w: Array1<f64>) -> Array1<f64> {
    w.mapv_inplace(|x| if x < WEIGHT_FLOOR { 0.0 } else { x });
    let total = w.sum();
    w /= total;
    w
}

/// Exact barycenter weights on the grid rows of `costs`.
///
/// Variables are the column-major entries of each coupling `T_j` followed by
/// the grid weights `a`. Constraints: `Σ a = 1`, every row sum of `T_j`
/// equals `a`, and every column sum of `T_j` equals the subset weights.
pub fn solve_barycenter_lp(costs: &[CostMatrix], weights: &[ArrayView1<'_, f64>]) -> Result<BarycenterSolution> {
    solve_barycenter_lp_with(costs, weights, &LpBarycenterOptions::default())
}

pub fn solve_barycenter_lp_with(
    costs: &[CostMatrix],
    weights: &[ArrayView1<'_, f64>],
    opts: &LpBarycenterOptions,
) -> Result<BarycenterSolution> {
    let g = check_inputs(costs, weights)?;
    let k = costs.len();
    let total_s: usize = costs.iter().map(|c| c.ncols()).sum();
    let n_vars = g * total_s + g;
    if n_vars > opts.cap {
        return Err(Error::CapExceeded {
            what: "barycenter linear program",
            size: n_vars,
            cap: opts.cap,
            advice: "use a coarser grid, fewer draws, or the entropic solver",
        });
    }
    let n_rows = 1 + k * g + total_s;
    let mut lp = StandardLp::with_capacity(n_rows, n_vars, 2 * g * total_s + (k + 1) * g);
    let mut col_offset = 0;
    for (j, c) in costs.iter().enumerate() {
        for v in 0..c.ncols() {
            let col_row = 1 + k * g + col_offset + v;
            for u in 0..g {
                lp.push_column(c.get(u, v), &[(1 + j * g + u, 1.0), (col_row, 1.0)]);
            }
        }
        col_offset += c.ncols();
    }
    let mut entries = Vec::with_capacity(k + 1);
    for u in 0..g {
        entries.clear();
        entries.push((0, 1.0));
        entries.extend((0..k).map(|j| (1 + j * g + u, -1.0)));
        lp.push_column(0.0, &entries);
    }
    lp.set_rhs(0, 1.0);
    let mut row = 1 + k * g;
    for w in weights {
        for &x in w.iter() {
            lp.set_rhs(row, x);
            row += 1;
        }
    }

    let sol = lp.solve(&opts.lp)?;
    let residual = lp.residual(&sol.x);
    if residual > 1e-8 {
        return Err(Error::Numerical(format!("barycenter LP solution violates constraints by {residual:.3e}")));
    }
    let a = clean_weights(Array1::from_iter(sol.x[g * total_s..].iter().copied()));
    let plans = opts.keep_plans.then(|| {
        let mut offset = 0;
        costs
            .iter()
            .map(|c| {
                let s = c.ncols();
                let block = &sol.x[offset..offset + g * s];
                offset += g * s;
                Array2::from_shape_fn((g, s), |(u, v)| block[v * g + u])
            })
            .collect()
    });
    Ok(BarycenterSolution {
        weights: a,
        plans,
        objective: sol.objective.max(0.0),
        solver: SolverKind::ExactLp,
        iterations: sol.iterations,
        converged: true,
        regularization: None,
        tolerance: opts.lp.feasibility_tol,
    })
}

/// How [`wasp`] picks a solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Exact LP when `g·Σ s_j` is within the LP cap, entropic otherwise.
    #[default]
    Auto,
    Exact,
    Entropic,
}

/// Settings for [`wasp`].
#[derive(Debug, Clone)]
pub struct WaspOptions {
    /// Grid spacing; `None` means [`default_mesh`].
    pub mesh: Option<f64>,
    /// Fixed per-dimension atom counts, overriding `mesh`.
    pub counts: Option<Vec<usize>>,
    pub padding: f64,
    pub grid_cap: usize,
    pub solver: SolverChoice,
    pub lp: LpBarycenterOptions,
    pub entropic: EntropicOptions,
}

impl Default for WaspOptions {
    fn default() -> Self {
        Self {
            mesh: None,
            counts: None,
            padding: 0.0,
            grid_cap: GRID_CAP,
            solver: SolverChoice::Auto,
            lp: LpBarycenterOptions::default(),
            entropic: EntropicOptions::default(),
        }
    }
}

/// A combined posterior: the grid, the barycenter measure and solver details.
#[derive(Debug, Clone)]
pub struct WaspEstimate {
    pub grid: Grid,
    pub measure: EmpiricalMeasure,
    pub solution: BarycenterSolution,
}

/// JSON summary of a combine step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub solver: SolverKind,
    pub iterations: usize,
    pub converged: bool,
    pub support_size: usize,
    pub grid_counts: Vec<usize>,
    pub mesh: f64,
    pub regularization: Option<f64>,
    pub wall_time_secs: f64,
}

impl WaspEstimate {
    pub fn report(&self, wall_time_secs: f64) -> SolveReport {
        SolveReport {
            objective: self.solution.objective,
            solver: self.solution.solver,
            iterations: self.solution.iterations,
            converged: self.solution.converged,
            support_size: self.solution.support_size(),
            grid_counts: self.grid.counts().to_vec(),
            mesh: self.grid.mesh(),
            regularization: self.solution.regularization,
            wall_time_secs,
        }
    }
}

/// Barycenter of the uniform empirical measures on the rows of each sample
/// matrix.
pub fn wasp_from_samples(sets: &[ArrayView2<'_, f64>], opts: &WaspOptions) -> Result<WaspEstimate> {
    let grid = match &opts.counts {
        Some(counts) => {
            let mesh_probe = build_grid_with_cap(sets, 1.0, opts.padding, usize::MAX)?;
            Grid::from_counts_with_cap(mesh_probe.lower().to_vec(), mesh_probe.upper().to_vec(), counts.clone(), opts.grid_cap)?
        }
        None => {
            let mesh = match opts.mesh {
                Some(m) => m,
                None => default_mesh(sets)?,
            };
            build_grid_with_cap(sets, mesh, opts.padding, opts.grid_cap)?
        }
    };
    if sets.len() == 1 {
        // one subset: its own empirical measure is the barycenter
        let measure = EmpiricalMeasure::uniform(sets[0].to_owned())?;
        let solution = BarycenterSolution {
            weights: measure.weights().to_owned(),
            plans: None,
            objective: 0.0,
            solver: SolverKind::ExactLp,
            iterations: 0,
            converged: true,
            regularization: None,
            tolerance: 0.0,
        };
        return Ok(WaspEstimate { grid, measure, solution });
    }
    let costs: Vec<CostMatrix> = sets
        .par_iter()
        .map(|s| CostMatrix::between(grid.atoms(), s.view()))
        .collect::<Result<_>>()?;
    let weights: Vec<Array1<f64>> = sets.iter().map(|s| Array1::from_elem(s.nrows(), 1.0 / s.nrows() as f64)).collect();
    let views: Vec<ArrayView1<'_, f64>> = weights.iter().map(|w| w.view()).collect();
    let total_s: usize = sets.iter().map(|s| s.nrows()).sum();
    let use_exact = match opts.solver {
        SolverChoice::Exact => true,
        SolverChoice::Entropic => false,
        SolverChoice::Auto => grid.len() * total_s <= opts.lp.cap,
    };
    let solution = if use_exact {
        solve_barycenter_lp_with(&costs, &views, &opts.lp)?
    } else {
        solve_barycenter_entropic(&costs, &views, &opts.entropic)?
    };
    let measure = solution.measure(grid.atoms())?;
    Ok(WaspEstimate { grid, measure, solution })
}

/// Barycenter of subset draw sets, optionally after pushing every draw
/// through `functional`.
pub fn wasp(sets: &[DrawSet], functional: Option<&Functional>, opts: &WaspOptions) -> Result<WaspEstimate> {
    let pushed: Vec<DrawSet> = match functional {
        Some(f) => sets.iter().map(|d| pushforward(d, f)).collect::<Result<_>>()?,
        None => sets.to_vec(),
    };
    let views: Vec<ArrayView2<'_, f64>> = pushed.iter().map(|d| d.draws()).collect();
    wasp_from_samples(&views, opts)
}

/// Runs [`wasp_from_samples`] and times it.
pub fn wasp_timed(sets: &[ArrayView2<'_, f64>], opts: &WaspOptions) -> Result<(WaspEstimate, f64)> {
    let start = Instant::now();
    let est = wasp_from_samples(sets, opts)?;
    Ok((est, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::moments;
    use ndarray::array;

    fn costs_for(grid: &Array2<f64>, sets: &[Array2<f64>]) -> Vec<CostMatrix> {
        sets.iter().map(|s| CostMatrix::between(grid.view(), s.view()).unwrap()).collect()
    }

    fn uniform(n: usize) -> Array1<f64> {
        Array1::from_elem(n, 1.0 / n as f64)
    }

    #[test]
    fn two_diracs_on_four_atoms() {
        let grid = array![[1.0], [2.0], [3.0], [4.0]];
        let costs = costs_for(&grid, &[array![[0.0]], array![[4.0]]]);
        let w = [uniform(1), uniform(1)];
        let views: Vec<_> = w.iter().map(|x| x.view()).collect();
        let sol = solve_barycenter_lp(&costs, &views).unwrap();
        assert_eq!(sol.weights.to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        // summed (not averaged) cost at atom 2: 4 + 4
        assert!((sol.objective - 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_measure_is_its_own_barycenter() {
        let grid = array![[0.0], [1.0]];
        let costs = costs_for(&grid, &[array![[0.0], [1.0]]]);
        let w = uniform(2);
        let sol = solve_barycenter_lp(&costs, &[w.view()]).unwrap();
        assert!((&sol.weights - &w).iter().all(|d| d.abs() < 1e-12));
        assert!(sol.objective.abs() < 1e-12);
    }

    #[test]
    fn identical_measures_fixed_point() {
        let grid = array![[0.0], [1.0]];
        let s = array![[0.0], [1.0]];
        let costs = costs_for(&grid, &[s.clone(), s]);
        let w = uniform(2);
        let opts = LpBarycenterOptions { keep_plans: true, ..Default::default() };
        let sol = solve_barycenter_lp_with(&costs, &[w.view(), w.view()], &opts).unwrap();
        assert!((&sol.weights - &w).iter().all(|d| d.abs() < 1e-12));
        assert!(sol.objective.abs() < 1e-12);
        for t in sol.plans.unwrap() {
            assert!((t.sum_axis(ndarray::Axis(1)) - &sol.weights).iter().all(|d| d.abs() < 1e-8));
            assert!((t.sum_axis(ndarray::Axis(0)) - &w).iter().all(|d| d.abs() < 1e-8));
        }
    }

    #[test]
    fn lp_cap_is_enforced() {
        let grid = Array2::zeros((10, 1));
        let costs = costs_for(&grid, &[Array2::zeros((10, 1))]);
        let w = uniform(10);
        let opts = LpBarycenterOptions { cap: 50, ..Default::default() };
        assert!(matches!(solve_barycenter_lp_with(&costs, &[w.view()], &opts), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn wasp_two_points_in_the_plane() {
        let sets = [array![[0.0, 0.0]], array![[2.0, 2.0]]];
        let views: Vec<_> = sets.iter().map(|s| s.view()).collect();
        let opts = WaspOptions { mesh: Some(1.0), ..Default::default() };
        let est = wasp_from_samples(&views, &opts).unwrap();
        // grid {1,2}², nearest atom to (1,1) is (1,1) itself
        assert_eq!(est.grid.len(), 4);
        let best = est.solution.weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(est.grid.atoms().row(best).to_vec(), vec![1.0, 1.0]);
        assert!((est.solution.weights[best] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_subsets_keep_their_mean() {
        let s = array![[0.0], [0.5], [1.0], [3.0]];
        let views = vec![s.view(); 3];
        let opts = WaspOptions { mesh: Some(0.5), ..Default::default() };
        let est = wasp_from_samples(&views, &opts).unwrap();
        let (m, _) = moments(&est.measure);
        assert!((m[0] - 1.125).abs() <= 0.5 + 1e-12);
    }

    #[test]
    fn single_subset_returns_its_measure() {
        let s = array![[0.0], [1.0], [5.0]];
        let est = wasp_from_samples(&[s.view()], &WaspOptions::default()).unwrap();
        assert_eq!(est.measure.atoms(), s.view());
        assert_eq!(est.solution.objective, 0.0);
    }
}
