//! Entropically regularized barycenters by iterative Bregman projections.
//!
//! The log-domain mode keeps dual potentials `f_j`, `h_j` and a stabilized
//! kernel `exp((f_j ⊕ h_j − D_j)/λ)`; scalings are absorbed into the
//! potentials whenever they drift far from one. The regularization is
//! decreased geometrically from a coarse value to the target, reusing
//! potentials between stages. The returned couplings are rounded onto the
//! exact marginal constraints, so the reported objective is that of a
//! feasible point of the unregularized program.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{check_inputs, clean_weights, BarycenterSolution, SolverKind};
use crate::error::{Error, Result};
use crate::measures::CostMatrix;

/// Scalings whose log exceeds this in magnitude are absorbed.
const ABSORB_THRESHOLD: f64 = 30.0;
const LOG_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropicMode {
    /// Stabilized iterations with absorption and regularization scaling.
    #[default]
    Log,
    /// Plain scaling iterations; fails if the kernel underflows.
    Standard,
}

#[derive(Debug, Clone)]
pub struct EntropicOptions {
    /// Absolute regularization; `None` means `relative_regularization`
    /// times the median cost entry.
    pub regularization: Option<f64>,
    pub relative_regularization: f64,
    pub max_iter: usize,
    /// Stop when successive weight vectors differ by less than this in L1.
    pub tol: f64,
    pub mode: EntropicMode,
    pub keep_plans: bool,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        Self {
            regularization: None,
            relative_regularization: 0.005,
            max_iter: 10_000,
            tol: 1e-7,
            mode: EntropicMode::Log,
            keep_plans: false,
        }
    }
}

fn median_cost(costs: &[CostMatrix]) -> f64 {
    let mut all: Vec<f64> = costs.iter().flat_map(|c| c.entries().iter().copied().collect::<Vec<_>>()).collect();
    let mid = all.len() / 2;
    let (_, m, _) = all.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

struct Block<'a> {
    cost: &'a CostMatrix,
    target: ArrayView1<'a, f64>,
    f: Array1<f64>,
    h: Array1<f64>,
    lambda: f64,
    kernel: Array2<f64>,
    u: Array1<f64>,
    v: Array1<f64>,
    kv: Array1<f64>,
    // log of the rows of K̃v, exact even where the product underflows
    log_kv: Array1<f64>,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

impl<'a> Block<'a> {
    fn new(cost: &'a CostMatrix, target: ArrayView1<'a, f64>) -> Self {
        let (g, s) = cost.entries().dim();
        Self {
            cost,
            target,
            f: Array1::zeros(g),
            h: Array1::zeros(s),
            lambda: 1.0,
            kernel: Array2::zeros((g, s)),
            u: Array1::ones(g),
            v: Array1::ones(s),
            kv: Array1::ones(g),
            log_kv: Array1::zeros(g),
        }
    }

    fn rebuild_kernel(&mut self, lambda: f64) {
        self.lambda = lambda;
        let d = self.cost.entries();
        for ((u, v), k) in self.kernel.indexed_iter_mut() {
            *k = ((self.f[u] + self.h[v] - d[[u, v]]) / lambda).exp();
        }
    }

    fn absorb(&mut self) {
        let lambda = self.lambda;
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += lambda * safe_ln(*u);
            *u = 1.0;
        }
        for (h, v) in self.h.iter_mut().zip(self.v.iter_mut()) {
            *h += lambda * safe_ln(*v);
            *v = 1.0;
        }
        self.rebuild_kernel(lambda);
    }

    fn needs_absorb(&self) -> bool {
        let big = |x: &f64| !(safe_ln(*x).abs() <= ABSORB_THRESHOLD);
        self.u.iter().any(big) || self.v.iter().any(big)
    }

    /// `log (K̃v)_r` from the potentials, for rows whose product underflowed.
    fn row_log(&self, r: usize) -> f64 {
        let d = self.cost.entries();
        log_sum_exp(
            self.v
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(c, &v)| (self.f[r] + self.h[c] - d[[r, c]]) / self.lambda + v.ln()),
        )
    }

    /// `log (K̃ᵀu)_c` from the potentials.
    fn column_log(&self, c: usize) -> f64 {
        let d = self.cost.entries();
        log_sum_exp(
            self.u
                .iter()
                .enumerate()
                .filter(|(_, &u)| u > 0.0)
                .map(|(r, &u)| (self.f[r] + self.h[c] - d[[r, c]]) / self.lambda + u.ln()),
        )
    }

    /// Column scaling. In the standard mode returns `false` if a column of
    /// the kernel vanished or overflowed; in the log mode such columns are
    /// rescaled exactly through their potential.
    fn update_v(&mut self, mode: EntropicMode) -> bool {
        let ktu = self.kernel.t().dot(&self.u);
        let mut ok = true;
        let mut shifted = false;
        for c in 0..self.v.len() {
            let (b, k) = (self.target[c], ktu[c]);
            if b == 0.0 {
                self.v[c] = 0.0;
                continue;
            }
            let v = b / k;
            if k > 0.0 && v.is_finite() && v > 0.0 {
                self.v[c] = v;
                continue;
            }
            match mode {
                EntropicMode::Standard => {
                    ok = false;
                    self.v[c] = f64::MAX;
                }
                EntropicMode::Log => {
                    self.h[c] += self.lambda * (b.ln() - self.column_log(c));
                    self.v[c] = 1.0;
                    shifted = true;
                }
            }
        }
        if shifted {
            self.rebuild_kernel(self.lambda);
        }
        self.kv = self.kernel.dot(&self.v);
        for r in 0..self.kv.len() {
            let kv = self.kv[r];
            self.log_kv[r] = if kv > 0.0 && kv.is_finite() { kv.ln() } else { self.row_log(r) };
        }
        ok
    }

    /// Log of the current first marginal, `ũ ⊙ K̃ṽ`.
    fn log_marginal(&self) -> Array1<f64> {
        Array1::from_iter(self.u.iter().zip(self.log_kv.iter()).map(|(&u, &lkv)| u.ln() + lkv))
    }

    fn update_u(&mut self, log_a: &Array1<f64>, mode: EntropicMode) -> bool {
        let mut ok = true;
        let mut shifted = false;
        for r in 0..self.u.len() {
            let log_u = log_a[r] - self.log_kv[r];
            if log_u.is_finite() && log_u.abs() <= -LOG_FLOOR {
                self.u[r] = log_u.exp();
                continue;
            }
            match mode {
                EntropicMode::Standard => {
                    ok = false;
                    self.u[r] = f64::MAX;
                }
                EntropicMode::Log if log_u.is_finite() => {
                    self.f[r] += self.lambda * log_u;
                    self.u[r] = 1.0;
                    shifted = true;
                }
                EntropicMode::Log => {
                    ok = false;
                    self.u[r] = 1.0;
                }
            }
        }
        if shifted {
            self.rebuild_kernel(self.lambda);
        }
        ok
    }

    fn plan(&self) -> Array2<f64> {
        let mut p = self.kernel.clone();
        for (mut row, &u) in p.rows_mut().into_iter().zip(self.u.iter()) {
            for (x, &v) in row.iter_mut().zip(self.v.iter()) {
                *x *= u * v;
            }
        }
        p
    }
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// Projects a nonnegative matrix onto the couplings with marginals
/// `(rows, cols)`: shrink over-full rows and columns, then spread the
/// remaining deficit with a rank-one correction.
fn round_to_marginals(mut p: Array2<f64>, rows: ArrayView1<'_, f64>, cols: ArrayView1<'_, f64>) -> Array2<f64> {
    p.mapv_inplace(|x| if x.is_finite() && x > 0.0 { x } else { 0.0 });
    let r = p.sum_axis(Axis(1));
    for (mut row, (&have, &want)) in p.rows_mut().into_iter().zip(r.iter().zip(rows.iter())) {
        if have > want {
            row *= want / have;
        }
    }
    let c = p.sum_axis(Axis(0));
    for (mut col, (&have, &want)) in p.columns_mut().into_iter().zip(c.iter().zip(cols.iter())) {
        if have > want {
            col *= want / have;
        }
    }
    let err_r: Array1<f64> = &rows - &p.sum_axis(Axis(1));
    let err_c: Array1<f64> = &cols - &p.sum_axis(Axis(0));
    let mass: f64 = err_r.iter().map(|x| x.max(0.0)).sum();
    if mass > 0.0 {
        for (u, mut row) in p.rows_mut().into_iter().enumerate() {
            let eu = err_r[u].max(0.0);
            if eu > 0.0 {
                row.zip_mut_with(&err_c, |x, &ec| *x += eu * ec.max(0.0) / mass);
            }
        }
    }
    p
}

fn underflow(lambda: f64) -> Error {
    Error::Numerical(format!(
        "scaling vectors under- or overflowed at regularization {lambda:.3e}; use the log-domain mode"
    ))
}

/// Approximate barycenter weights by entropic regularization.
pub fn solve_barycenter_entropic(
    costs: &[CostMatrix],
    weights: &[ArrayView1<'_, f64>],
    opts: &EntropicOptions,
) -> Result<BarycenterSolution> {
    let g = check_inputs(costs, weights)?;
    let k = costs.len() as f64;
    let max_cost = costs.iter().map(|c| c.max()).fold(0.0, f64::max);
    let lambda = match opts.regularization {
        Some(l) => l,
        None => {
            let med = median_cost(costs);
            opts.relative_regularization * if med > 0.0 { med } else { max_cost.max(1.0) }
        }
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("regularization must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidInput("entropic solver needs tol > 0 and max_iter ≥ 1".into()));
    }

    // regularization schedule: halve from a level where the raw kernel is
    // well conditioned down to the target
    let mut schedule = Vec::new();
    if opts.mode == EntropicMode::Log {
        let mut l = (max_cost / 50.0).max(lambda);
        while l > lambda {
            schedule.push(l);
            l *= 0.5;
        }
    }
    schedule.push(lambda);

    let mut blocks: Vec<Block<'_>> = costs.iter().zip(weights).map(|(c, w)| Block::new(c, *w)).collect();
    let mut log_a = Array1::from_elem(g, -(g as f64).ln());
    let mut a = log_a.mapv(f64::exp);
    let mut iterations = 0;
    let mut converged = false;
    let last_stage = schedule.len() - 1;

    for (stage, &lam) in schedule.iter().enumerate() {
        // Restarting from potentials biases the projections by Σ_j ⟨a, f_j⟩
        // unless the row potentials cancel across subsets.
        let mean_f = blocks.iter().fold(Array1::<f64>::zeros(g), |acc, b| acc + &b.f) / k;
        for b in blocks.iter_mut() {
            b.f -= &mean_f;
            b.u.fill(1.0);
            b.v.fill(1.0);
            b.rebuild_kernel(lam);
        }
        if opts.mode == EntropicMode::Standard
            && blocks.iter().any(|b| b.kernel.sum_axis(Axis(1)).iter().any(|&x| x == 0.0) || b.kernel.sum_axis(Axis(0)).iter().any(|&x| x == 0.0))
        {
            return Err(Error::Numerical(format!(
                "kernel underflows at regularization {lam:.3e}; use the log-domain mode"
            )));
        }
        let stage_tol = if stage == last_stage { opts.tol } else { opts.tol.max(1e-4) };
        loop {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            for b in blocks.iter_mut() {
                let ok = b.update_v(opts.mode);
                match opts.mode {
                    EntropicMode::Log if b.needs_absorb() => {
                        b.absorb();
                        b.update_v(opts.mode);
                    }
                    EntropicMode::Standard if !ok => return Err(underflow(lam)),
                    _ => {}
                }
            }
            log_a.fill(0.0);
            for b in &blocks {
                log_a.zip_mut_with(&b.log_marginal(), |x, &y| *x += y / k);
            }
            // keep a on the simplex in log space
            let shift = log_a.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let norm = log_a.iter().map(|x| (x - shift).exp()).sum::<f64>().ln() + shift;
            log_a.mapv_inplace(|x| x - norm);
            for b in blocks.iter_mut() {
                if !b.update_u(&log_a, opts.mode) {
                    return Err(match opts.mode {
                        EntropicMode::Standard => underflow(lam),
                        EntropicMode::Log => Error::Numerical("entropic scalings became non-finite".into()),
                    });
                }
                if opts.mode == EntropicMode::Log && b.needs_absorb() {
                    b.absorb();
                }
            }
            let next = log_a.mapv(f64::exp);
            let change: f64 = next.iter().zip(a.iter()).map(|(x, y)| (x - y).abs()).sum();
            a = next;
            if !change.is_finite() {
                return Err(Error::Numerical("entropic iterations produced non-finite weights".into()));
            }
            if change < stage_tol {
                    if stage == last_stage {
                    converged = true;
                }
                break;
            }
        }
    }

    let a = clean_weights(a);
    let mut objective = 0.0;
    let mut plans = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let p = round_to_marginals(b.plan(), a.view(), b.target);
        objective += (&p * &b.cost.entries()).sum();
        if opts.keep_plans {
            plans.push(p);
        }
    }
    Ok(BarycenterSolution {
        weights: a,
        plans: opts.keep_plans.then_some(plans),
        objective,
        solver: SolverKind::Entropic,
        iterations,
        converged,
        regularization: Some(lambda),
        tolerance: opts.tol,
    })
}
