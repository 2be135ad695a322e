use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Default limit on the number of grid atoms.
pub const GRID_CAP: usize = 10_000;

/// Bins per dimension used by [`default_mesh`].
pub const DEFAULT_BINS: f64 = 40.0;

/// Tensor-product lattice supporting a barycenter.
///
/// Along dimension `r` the atoms sit at `lower + (i / count) · (upper − lower)`
/// for `i = 1..=count`, so the lower bound itself is never an atom while the
/// upper bound always is. A dimension with zero range gets one atom at its
/// common value. Atoms are listed in lexicographic order, last coordinate
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    mesh: f64,
    atoms: Array2<f64>,
}

/// Largest per-dimension pooled range divided by 40 (1 when every range is 0).
pub fn default_mesh(sets: &[ArrayView2<'_, f64>]) -> Result<f64> {
    let (lo, hi) = pooled_bounds(sets)?;
    let widest = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    Ok(if widest > 0.0 { widest / DEFAULT_BINS } else { 1.0 })
}

fn pooled_bounds(sets: &[ArrayView2<'_, f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = sets.first().ok_or_else(|| Error::InvalidInput("no subset samples given".into()))?;
    let q = first.ncols();
    if q == 0 {
        return Err(Error::InvalidInput("samples have no coordinates".into()));
    }
    let mut lo = vec![f64::INFINITY; q];
    let mut hi = vec![f64::NEG_INFINITY; q];
    for (j, set) in sets.iter().enumerate() {
        if set.ncols() != q {
            return Err(Error::DimensionMismatch { expected: q, found: set.ncols() });
        }
        if set.nrows() == 0 {
            return Err(Error::InvalidInput(format!("subset {j} has no samples")));
        }
        for row in set.rows() {
            for (r, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::InvalidInput(format!("subset {j} has a non-finite sample")));
                }
                lo[r] = lo[r].min(x);
                hi[r] = hi[r].max(x);
            }
        }
    }
    Ok((lo, hi))
}

/// Grid over the pooled bounding box of `sets` with spacing `mesh`, widened by
/// `padding` times the range on each side.
pub fn build_grid(sets: &[ArrayView2<'_, f64>], mesh: f64, padding: f64) -> Result<Grid> {
    build_grid_with_cap(sets, mesh, padding, GRID_CAP)
}

pub fn build_grid_with_cap(sets: &[ArrayView2<'_, f64>], mesh: f64, padding: f64, cap: usize) -> Result<Grid> {
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(Error::InvalidInput(format!("mesh must be positive, got {mesh}")));
    }
    if !(padding >= 0.0 && padding.is_finite()) {
        return Err(Error::InvalidInput(format!("padding must be nonnegative, got {padding}")));
    }
    let (mut lo, mut hi) = pooled_bounds(sets)?;
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        let pad = padding * (*h - *l);
        *l -= pad;
        *h += pad;
    }
    let counts: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| {
            let range = h - l;
            if range > 0.0 {
                // shave rounding noise so an exact multiple of the mesh is not bumped up
                ((range / mesh) * (1.0 - 1e-12)).ceil().max(1.0) as usize
            } else {
                1
            }
        })
        .collect();
    Grid::assemble(lo, hi, counts, mesh, cap)
}

impl Grid {
    /// Grid with explicit per-dimension atom counts.
    pub fn from_counts(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        Self::from_counts_with_cap(lower, upper, counts, GRID_CAP)
    }

    pub fn from_counts_with_cap(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>, cap: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != counts.len() || lower.is_empty() {
            return Err(Error::InvalidInput("grid bounds and counts must have one entry per dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidInput("grid bounds must be finite with lower ≤ upper".into()));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidInput("grid counts must be positive".into()));
        }
        let mesh = lower
            .iter()
            .zip(&upper)
            .zip(&counts)
            .map(|((l, h), &c)| (h - l) / c as f64)
            .fold(0.0, f64::max);
        Self::assemble(lower, upper, counts, if mesh > 0.0 { mesh } else { 1.0 }, cap)
    }

    fn assemble(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>, mesh: f64, cap: usize) -> Result<Self> {
        let g = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c)).unwrap_or(usize::MAX);
        if g > cap {
            return Err(Error::CapExceeded {
                what: "barycenter grid",
                size: g,
                cap,
                advice: "increase the mesh size",
            });
        }
        let q = counts.len();
        let coords: Vec<Vec<f64>> = (0..q)
            .map(|r| {
                let range = upper[r] - lower[r];
                if range > 0.0 {
                    (1..=counts[r]).map(|i| lower[r] + (i as f64 / counts[r] as f64) * range).collect()
                } else {
                    vec![lower[r]; counts[r]]
                }
            })
            .collect();
        let mut atoms = Array2::zeros((g, q));
        for (u, mut row) in atoms.rows_mut().into_iter().enumerate() {
            let mut rest = u;
            for r in (0..q).rev() {
                row[r] = coords[r][rest % counts[r]];
                rest /= counts[r];
            }
        }
        Ok(Self { lower, upper, counts, mesh, atoms })
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }
}
