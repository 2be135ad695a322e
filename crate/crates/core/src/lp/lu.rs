//! Sparse LU factorization of simplex bases.
//!
//! Pivots are chosen with a Markowitz-style rule that takes column and row
//! singletons first. Bases of transport-type programs are close to
//! triangular, so most steps are singletons and fill-in stays small.

use std::collections::BTreeSet;

/// Entries with magnitude below this are dropped during elimination.
const DROP_TOL: f64 = 1e-13;
/// Relative threshold for accepting a pivot against the largest entry of its column.
const PIVOT_THRESHOLD: f64 = 0.01;
/// Absolute floor on pivot magnitude.
const PIVOT_FLOOR: f64 = 1e-11;
/// How many lowest-count columns are inspected in a general Markowitz step.
const MARKOWITZ_SEARCH: usize = 4;

#[derive(Debug)]
pub(crate) struct Singular;

/// `P B Q = L U` stored as an ordered list of elimination steps.
///
/// Step `k` pivots on row `pivot_row[k]` and basis position `pivot_col[k]`.
/// `L_k` holds the row multipliers applied during that step, `U_k` the
/// off-diagonal entries of the pivot row.
#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactors {
    m: usize,
    pivot_row: Vec<usize>,
    pivot_col: Vec<usize>,
    pivot_val: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
}

impl LuFactors {
    /// Factorizes the `m × m` matrix whose column `c` is `column(c)`, given
    /// as `(row, value)` pairs.
    pub(crate) fn factorize<'a, F>(m: usize, column: F) -> Result<Self, Singular>
    where
        F: Fn(usize) -> &'a [(usize, f64)],
    {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for c in 0..m {
            for &(r, v) in column(c) {
                if v.abs() > DROP_TOL {
                    rows[r].push((c, v));
                    col_rows[c].push(r);
                }
            }
        }
        let mut row_count: Vec<usize> = rows.iter().map(Vec::len).collect();
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];

        let mut col_set: BTreeSet<(usize, usize)> = (0..m).map(|c| (col_count[c], c)).collect();
        let mut row_singletons: Vec<usize> = (0..m).filter(|&r| row_count[r] == 1).collect();

        let mut lu = LuFactors {
            m,
            l_start: vec![0],
            u_start: vec![0],
            ..Default::default()
        };
        // scatter position of a column inside the row being updated
        let mut slot = vec![usize::MAX; m];

        for _step in 0..m {
            let (r, c) = choose_pivot(
                &rows,
                &col_rows,
                &row_count,
                &row_done,
                &mut col_set,
                &mut row_singletons,
            )
            .ok_or(Singular)?;
            let pivot = entry(&rows[r], c).ok_or(Singular)?;
            if pivot.abs() < PIVOT_FLOOR {
                return Err(Singular);
            }

            // Pivot row becomes U_k; its columns lose one active entry.
            let pivot_row = std::mem::take(&mut rows[r]);
            for &(cc, v) in &pivot_row {
                if cc != c {
                    lu.u_idx.push(cc);
                    lu.u_val.push(v);
                    col_set.remove(&(col_count[cc], cc));
                    col_count[cc] -= 1;
                    col_set.insert((col_count[cc], cc));
                }
            }
            row_done[r] = true;
            col_done[c] = true;
            col_set.remove(&(col_count[c], c));

            // Eliminate column c from the remaining rows.
            let targets: Vec<usize> = std::mem::take(&mut col_rows[c]);
            for i in targets {
                if row_done[i] {
                    continue;
                }
                let Some(pos) = rows[i].iter().position(|&(cc, _)| cc == c) else {
                    continue;
                };
                let a_ic = rows[i].swap_remove(pos).1;
                row_count[i] -= 1;
                let f = a_ic / pivot;
                lu.l_idx.push(i);
                lu.l_val.push(f);

                let row_i = &mut rows[i];
                for (k, &(cc, _)) in row_i.iter().enumerate() {
                    slot[cc] = k;
                }
                for &(cc, v) in &pivot_row {
                    if cc == c {
                        continue;
                    }
                    if slot[cc] != usize::MAX {
                        row_i[slot[cc]].1 -= f * v;
                    } else {
                        slot[cc] = row_i.len();
                        row_i.push((cc, -f * v));
                        col_rows[cc].push(i);
                        col_set.remove(&(col_count[cc], cc));
                        col_count[cc] += 1;
                        col_set.insert((col_count[cc], cc));
                        row_count[i] += 1;
                    }
                }
                for &(cc, _) in row_i.iter() {
                    slot[cc] = usize::MAX;
                }
                // drop cancellations
                let before = row_i.len();
                let mut dropped: Vec<usize> = Vec::new();
                row_i.retain(|&(cc, v)| {
                    if v.abs() <= DROP_TOL {
                        dropped.push(cc);
                        false
                    } else {
                        true
                    }
                });
                if before != row_i.len() {
                    row_count[i] = row_i.len();
                    for cc in dropped {
                        col_set.remove(&(col_count[cc], cc));
                        col_count[cc] -= 1;
                        col_set.insert((col_count[cc], cc));
                    }
                }
                if row_count[i] == 1 {
                    row_singletons.push(i);
                }
            }
            lu.pivot_row.push(r);
            lu.pivot_col.push(c);
            lu.pivot_val.push(pivot);
            lu.l_start.push(lu.l_idx.len());
            lu.u_start.push(lu.u_idx.len());
        }
        debug_assert!(col_done.iter().all(|&d| d));
        Ok(lu)
    }

    /// Solves `B x = b`. `b` is indexed by row on entry; `x` by basis position.
    pub(crate) fn solve(&self, b: &mut [f64], x: &mut [f64]) {
        for k in 0..self.m {
            let br = b[self.pivot_row[k]];
            if br != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[t]] -= self.l_val[t] * br;
                }
            }
        }
        for k in (0..self.m).rev() {
            let mut acc = b[self.pivot_row[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                acc -= self.u_val[t] * x[self.u_idx[t]];
            }
            x[self.pivot_col[k]] = acc / self.pivot_val[k];
        }
    }

    /// Solves `Bᵀ y = d`. `d` is indexed by basis position on entry (and is
    /// clobbered); `y` comes back indexed by row.
    pub(crate) fn solve_transpose(&self, d: &mut [f64], y: &mut [f64]) {
        for k in 0..self.m {
            let w = d[self.pivot_col[k]] / self.pivot_val[k];
            y[self.pivot_row[k]] = w;
            if w != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    d[self.u_idx[t]] -= self.u_val[t] * w;
                }
            }
        }
        for k in (0..self.m).rev() {
            let r = self.pivot_row[k];
            let mut acc = y[r];
            for t in self.l_start[k]..self.l_start[k + 1] {
                acc -= self.l_val[t] * y[self.l_idx[t]];
            }
            y[r] = acc;
        }
    }

    pub(crate) fn nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.m
    }
}

fn entry(row: &[(usize, f64)], c: usize) -> Option<f64> {
    row.iter().find(|&&(cc, _)| cc == c).map(|&(_, v)| v)
}

fn column_max(rows: &[Vec<(usize, f64)>], col_rows: &[usize], row_done: &[bool], c: usize) -> f64 {
    col_rows
        .iter()
        .filter(|&&r| !row_done[r])
        .filter_map(|&r| entry(&rows[r], c))
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

fn choose_pivot(
    rows: &[Vec<(usize, f64)>],
    col_rows: &[Vec<usize>],
    row_count: &[usize],
    row_done: &[bool],
    col_set: &mut BTreeSet<(usize, usize)>,
    row_singletons: &mut Vec<usize>,
) -> Option<(usize, usize)> {
    let &(count, c) = col_set.iter().next()?;
    if count == 0 {
        return None;
    }
    if count == 1 {
        let r = col_rows[c]
            .iter()
            .copied()
            .find(|&r| !row_done[r] && entry(&rows[r], c).is_some())?;
        return Some((r, c));
    }

    while let Some(r) = row_singletons.pop() {
        if row_done[r] || row_count[r] != 1 {
            continue;
        }
        let (c, v) = rows[r][0];
        let cmax = column_max(rows, &col_rows[c], row_done, c);
        if v.abs() >= PIVOT_THRESHOLD * cmax && v.abs() > PIVOT_FLOOR {
            return Some((r, c));
        }
    }

    markowitz(rows, col_rows, row_count, row_done, col_set.iter().take(MARKOWITZ_SEARCH))
        .or_else(|| markowitz(rows, col_rows, row_count, row_done, col_set.iter()))
}

fn markowitz<'a>(
    rows: &[Vec<(usize, f64)>],
    col_rows: &[Vec<usize>],
    row_count: &[usize],
    row_done: &[bool],
    candidates: impl Iterator<Item = &'a (usize, usize)>,
) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, usize)> = None;
    for &(cc_count, c) in candidates {
        let cmax = column_max(rows, &col_rows[c], row_done, c);
        for &r in &col_rows[c] {
            if row_done[r] {
                continue;
            }
            let Some(v) = entry(&rows[r], c) else { continue };
            if v.abs() < PIVOT_THRESHOLD * cmax || v.abs() <= PIVOT_FLOOR {
                continue;
            }
            let cost = (row_count[r] - 1) * (cc_count - 1);
            if best.is_none_or(|(b, _, _)| cost < b) {
                best = Some((cost, r, c));
            }
        }
    }
    best.map(|(_, r, c)| (r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_columns(a: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
        let m = a.len();
        (0..m)
            .map(|c| (0..m).filter(|&r| a[r][c] != 0.0).map(|r| (r, a[r][c])).collect())
            .collect()
    }

    #[test]
    fn solves_dense_system_and_transpose() {
        let a = vec![
            vec![4.0, 1.0, 0.0, 2.0],
            vec![1.0, 3.0, 1.0, 0.0],
            vec![0.0, 1.0, 5.0, 1.0],
            vec![2.0, 0.0, 1.0, 6.0],
        ];
        let cols = dense_columns(&a);
        let lu = LuFactors::factorize(4, |c| &cols[c]).unwrap();
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut b: Vec<f64> = (0..4).map(|r| (0..4).map(|c| a[r][c] * x_true[c]).sum()).collect();
        let mut x = vec![0.0; 4];
        lu.solve(&mut b, &mut x);
        for c in 0..4 {
            assert!((x[c] - x_true[c]).abs() < 1e-12);
        }
        let mut d: Vec<f64> = (0..4).map(|c| (0..4).map(|r| a[r][c] * x_true[r]).sum()).collect();
        let mut y = vec![0.0; 4];
        lu.solve_transpose(&mut d, &mut y);
        for r in 0..4 {
            assert!((y[r] - x_true[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_triangular_basis() {
        // a transport-like basis: columns with two unit entries plus one slack
        let cols: Vec<Vec<(usize, f64)>> = vec![
            vec![(0, 1.0), (2, 1.0)],
            vec![(1, 1.0), (2, 1.0)],
            vec![(1, 1.0), (3, 1.0)],
            vec![(3, -1.0)],
        ];
        let lu = LuFactors::factorize(4, |c| &cols[c]).unwrap();
        let mut b = vec![0.3, 0.7, 0.5, 0.5];
        let mut x = vec![0.0; 4];
        lu.solve(&mut b, &mut x);
        // verify B x = b
        let mut bx = [0.0; 4];
        for (c, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                bx[r] += v * x[c];
            }
        }
        for (got, want) in bx.iter().zip([0.3, 0.7, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let cols: Vec<Vec<(usize, f64)>> = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]];
        assert!(LuFactors::factorize(2, |c| &cols[c]).is_err());
    }
}
