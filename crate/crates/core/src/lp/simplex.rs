//! Two-phase primal revised simplex for `min cᵀx, A x = b, x ≥ 0`.
//!
//! The basis inverse is kept as a sparse LU factorization followed by a file
//! of eta updates, refactorized periodically. Entering columns come from
//! partial Dantzig pricing; after a run of degenerate pivots the solver
//! switches to Bland's lowest-index rule until the objective moves again.
//! Ties in the ratio test always go to the lowest variable index.
//!
//! Transport-like programs are massively degenerate. Optionally the solve
//! runs on the right-hand side `b + Aξ` for a tiny deterministic `ξ > 0`,
//! which keeps the program feasible but makes almost every pivot move. The
//! final basis is then re-evaluated at the true `b`; reduced costs do not
//! depend on `b`, so the basis is optimal whenever it stays primal feasible.

use super::lu::LuFactors;
use super::{LpOptions, LpSolution, StandardLp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Eta {
    pos: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

pub(super) struct Simplex<'a> {
    lp: &'a StandardLp,
    opts: &'a LpOptions,
    /// right-hand side the iterations currently work with
    rhs: Vec<f64>,
    m: usize,
    n: usize,
    /// sign of each artificial column (artificial `i` is `sign[i] · e_i`)
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    /// position in the basis, or `usize::MAX` when nonbasic
    position: Vec<usize>,
    x_basic: Vec<f64>,
    /// artificials that left the basis are never priced again
    retired: Vec<bool>,
    lu: LuFactors,
    etas: Vec<Eta>,
    eta_nnz: usize,
    iterations: usize,
    pricing_cursor: usize,
    degenerate_run: usize,
    bland: bool,
    // scratch
    work_rows: Vec<f64>,
    work_pos: Vec<f64>,
    col_buf: Vec<(usize, f64)>,
}

impl<'a> Simplex<'a> {
    pub(super) fn new(lp: &'a StandardLp, opts: &'a LpOptions, perturb: bool) -> Result<Self> {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let rhs = if perturb { perturbed_rhs(lp, opts.perturbation) } else { lp.rhs().to_vec() };
        let art_sign: Vec<f64> = rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let basis: Vec<usize> = (n..n + m).collect();
        let mut position = vec![usize::MAX; n + m];
        for (p, &v) in basis.iter().enumerate() {
            position[v] = p;
        }
        let x_basic: Vec<f64> = rhs.iter().map(|b| b.abs()).collect();
        let mut s = Simplex {
            lp,
            opts,
            rhs,
            m,
            n,
            art_sign,
            basis,
            position,
            x_basic,
            retired: vec![false; m],
            lu: LuFactors::default(),
            etas: Vec::new(),
            eta_nnz: 0,
            iterations: 0,
            pricing_cursor: 0,
            degenerate_run: 0,
            bland: false,
            work_rows: vec![0.0; m],
            work_pos: vec![0.0; m],
            col_buf: Vec::new(),
        };
        s.refactor()?;
        Ok(s)
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.n
    }

    fn cost(&self, var: usize, phase: Phase) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(var) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if self.is_artificial(var) {
                    0.0
                } else {
                    self.lp.costs()[var]
                }
            }
        }
    }

    fn column_into(&self, var: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.is_artificial(var) {
            let i = var - self.n;
            out.push((i, self.art_sign[i]));
        } else {
            out.extend(self.lp.column(var));
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let cols: Vec<Vec<(usize, f64)>> = self
            .basis
            .iter()
            .map(|&v| {
                let mut c = Vec::new();
                self.column_into(v, &mut c);
                c
            })
            .collect();
        self.lu = LuFactors::factorize(self.m, |p| &cols[p])
            .map_err(|_| Error::Numerical("simplex basis became singular".into()))?;
        self.etas.clear();
        self.eta_nnz = 0;
        // recompute basic values from scratch to shed accumulated drift
        self.work_rows.copy_from_slice(&self.rhs);
        let mut x = vec![0.0; self.m];
        self.lu.solve(&mut self.work_rows, &mut x);
        for v in x.iter_mut() {
            if *v < 0.0 && *v > -self.opts.feasibility_tol {
                *v = 0.0;
            }
        }
        self.x_basic = x;
        Ok(())
    }

    /// `B⁻¹ a` for a column given by row entries; result indexed by position.
    fn ftran(&mut self, col: &[(usize, f64)], out: &mut [f64]) {
        self.work_rows.iter_mut().for_each(|v| *v = 0.0);
        for &(r, v) in col {
            self.work_rows[r] += v;
        }
        self.lu.solve(&mut self.work_rows, out);
        for eta in &self.etas {
            let xp = out[eta.pos] / eta.pivot;
            out[eta.pos] = xp;
            if xp != 0.0 {
                for &(i, a) in &eta.entries {
                    out[i] -= a * xp;
                }
            }
        }
    }

    /// Simplex multipliers `y` with `Bᵀ y = c_B`.
    fn duals(&mut self, phase: Phase, y: &mut [f64]) {
        for p in 0..self.m {
            self.work_pos[p] = self.cost(self.basis[p], phase);
        }
        for eta in self.etas.iter().rev() {
            let mut acc = self.work_pos[eta.pos];
            for &(i, a) in &eta.entries {
                acc -= a * self.work_pos[i];
            }
            self.work_pos[eta.pos] = acc / eta.pivot;
        }
        self.lu.solve_transpose(&mut self.work_pos, y);
    }

    fn reduced_cost(&self, var: usize, phase: Phase, y: &[f64]) -> f64 {
        let mut d = self.cost(var, phase);
        if self.is_artificial(var) {
            let i = var - self.n;
            d -= self.art_sign[i] * y[i];
        } else {
            for (r, v) in self.lp.column(var) {
                d -= v * y[r];
            }
        }
        d
    }

    fn eligible(&self, var: usize, phase: Phase) -> bool {
        if self.position[var] != usize::MAX {
            return false;
        }
        if self.is_artificial(var) {
            // artificials never re-enter once they leave
            return phase == Phase::One && !self.retired[var - self.n];
        }
        true
    }

    /// Picks an entering variable, or `None` at optimality.
    fn price(&mut self, phase: Phase, y: &[f64]) -> Option<usize> {
        let tol = self.opts.optimality_tol;
        let total = self.n;
        if self.bland {
            return (0..total).find(|&j| self.eligible(j, phase) && self.reduced_cost(j, phase, y) < -tol);
        }
        let chunk = self.opts.pricing_chunk.max(1).min(total.max(1));
        let mut scanned = 0;
        let mut best: Option<(f64, usize)> = None;
        let mut j = self.pricing_cursor % total.max(1);
        while scanned < total {
            if self.eligible(j, phase) {
                let d = self.reduced_cost(j, phase, y);
                if d < -tol && best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                    best = Some((d, j));
                }
            }
            scanned += 1;
            j += 1;
            if j == total {
                j = 0;
            }
            if scanned % chunk == 0 && best.is_some() {
                break;
            }
        }
        self.pricing_cursor = j;
        best.map(|(_, j)| j)
    }

    /// Ratio test over the basic positions. Returns `(position, step)`.
    fn ratio_test(&self, alpha: &[f64], phase: Phase) -> Option<(usize, f64)> {
        let piv_tol = self.opts.pivot_tol;
        let ratio = |p: usize| -> Option<f64> {
            let a = alpha[p];
            if phase == Phase::Two && self.is_artificial(self.basis[p]) {
                // basic artificials are pinned at zero in phase two
                (a.abs() > piv_tol).then_some(0.0)
            } else {
                (a > piv_tol).then(|| self.x_basic[p].max(0.0) / a)
            }
        };
        let min_ratio = (0..self.m).filter_map(ratio).fold(f64::INFINITY, f64::min);
        if !min_ratio.is_finite() {
            return None;
        }
        let tie = 1e-12 * (1.0 + min_ratio);
        (0..self.m)
            .filter(|&p| ratio(p).is_some_and(|r| r <= min_ratio + tie))
            .min_by_key(|&p| self.basis[p])
            .map(|p| (p, ratio(p).unwrap_or(min_ratio)))
    }

    fn pivot(&mut self, entering: usize, leave_pos: usize, step: f64, alpha: &[f64]) -> Result<()> {
        for p in 0..self.m {
            if alpha[p] != 0.0 {
                self.x_basic[p] -= step * alpha[p];
                if self.x_basic[p] < 0.0 && self.x_basic[p] > -self.opts.feasibility_tol {
                    self.x_basic[p] = 0.0;
                }
            }
        }
        self.x_basic[leave_pos] = step;
        let leaving = self.basis[leave_pos];
        if self.is_artificial(leaving) {
            self.retired[leaving - self.n] = true;
        }
        self.position[leaving] = usize::MAX;
        self.position[entering] = leave_pos;
        self.basis[leave_pos] = entering;

        let entries: Vec<(usize, f64)> = alpha
            .iter()
            .enumerate()
            .filter(|&(p, &a)| p != leave_pos && a.abs() > 1e-14)
            .map(|(p, &a)| (p, a))
            .collect();
        self.eta_nnz += entries.len() + 1;
        self.etas.push(Eta {
            pos: leave_pos,
            pivot: alpha[leave_pos],
            entries,
        });
        if self.etas.len() >= self.opts.refactor_interval || self.eta_nnz > 4 * self.lu.nnz() + 10 * self.m {
            self.refactor()?;
        }
        Ok(())
    }

    fn run_phase(&mut self, phase: Phase) -> Result<()> {
        let mut y = vec![0.0; self.m];
        let mut alpha = vec![0.0; self.m];
        let mut col = std::mem::take(&mut self.col_buf);
        self.bland = false;
        self.degenerate_run = 0;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::NotConverged {
                    iterations: self.iterations,
                    detail: format!(
                        "simplex hit the pivot limit in phase {}; primal infeasibility {:.3e}",
                        if phase == Phase::One { 1 } else { 2 },
                        self.artificial_mass()
                    ),
                });
            }
            self.duals(phase, &mut y);
            let Some(entering) = self.price(phase, &y) else {
                break;
            };
            self.column_into(entering, &mut col);
            self.ftran(&col, &mut alpha);
            let Some((leave_pos, step)) = self.ratio_test(&alpha, phase) else {
                return Err(Error::Numerical("linear program is unbounded".into()));
            };
            self.pivot(entering, leave_pos, step, &alpha)?;
            self.iterations += 1;
            if step == 0.0 {
                self.degenerate_run += 1;
                if self.degenerate_run > self.opts.degenerate_switch {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
                self.bland = false;
            }
        }
        self.col_buf = col;
        Ok(())
    }

    fn artificial_mass(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.x_basic)
            .filter(|(&v, _)| self.is_artificial(v))
            .map(|(_, &x)| x.abs())
            .sum()
    }

    /// Runs both phases. Returns `Ok(None)` when a perturbed solve ends in a
    /// basis that is infeasible at the true right-hand side.
    pub(super) fn solve(mut self) -> Result<Option<LpSolution>> {
        self.run_phase(Phase::One)?;
        self.refactor()?;
        let infeasibility = self.artificial_mass();
        let scale = 1.0 + self.rhs.iter().map(|b| b.abs()).sum::<f64>();
        if infeasibility > self.opts.feasibility_tol * scale {
            return Err(Error::Numerical(format!(
                "linear program is infeasible (phase-one residual {infeasibility:.3e})"
            )));
        }
        self.run_phase(Phase::Two)?;
        let perturbed = self.rhs.as_slice() != self.lp.rhs();
        if perturbed {
            self.rhs.copy_from_slice(self.lp.rhs());
        }
        self.refactor()?;
        if perturbed {
            let worst = self.x_basic.iter().copied().fold(0.0, f64::min);
            if worst < -self.opts.feasibility_tol || self.artificial_mass() > self.opts.feasibility_tol * scale {
                log::debug!("perturbed basis infeasible at the true right-hand side ({worst:.3e}); re-solving");
                return Ok(None);
            }
        }

        let mut x = vec![0.0; self.n];
        for (p, &v) in self.basis.iter().enumerate() {
            if v < self.n {
                x[v] = self.x_basic[p].max(0.0);
            }
        }
        let objective = x.iter().zip(self.lp.costs()).map(|(xi, ci)| xi * ci).sum();
        let mut duals = vec![0.0; self.m];
        self.duals(Phase::Two, &mut duals);
        Ok(Some(LpSolution {
            x,
            objective,
            duals,
            iterations: self.iterations,
        }))
    }
}

/// `b + Aξ` with `ξ_j` in `[δ/2, δ]` drawn from a fixed hash of `j`, where
/// `δ` is `relative · max|b|` divided by the longest row.
fn perturbed_rhs(lp: &StandardLp, relative: f64) -> Vec<f64> {
    let mut rhs = lp.rhs().to_vec();
    let mut row_len = vec![0usize; lp.n_rows()];
    for j in 0..lp.n_cols() {
        for (r, _) in lp.column(j) {
            row_len[r] += 1;
        }
    }
    let longest = row_len.iter().copied().max().unwrap_or(1).max(1);
    let size = rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let delta = relative * size / longest as f64;
    if delta == 0.0 {
        return rhs;
    }
    for j in 0..lp.n_cols() {
        let u = (crate::rng::splitmix64(j as u64) >> 11) as f64 / (1u64 << 53) as f64;
        let xi = delta * (0.5 + 0.5 * u);
        for (r, v) in lp.column(j) {
            rhs[r] += v * xi;
        }
    }
    rhs
}
