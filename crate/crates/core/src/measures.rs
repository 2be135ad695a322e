//! Weighted point clouds in `R^q`, squared-Euclidean costs and exact
//! Wasserstein-2 distances.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::lp::{LpOptions, StandardLp};

/// Default limit on `g·s` for [`w2_exact`].
pub const W2_EXACT_CAP: usize = 250_000;

#[cfg(test)]
const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Weights passed to [`make_measure`].
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Uniform,
    Explicit(Vec<f64>),
}

/// Finitely many atoms with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Array2<f64>,
    weights: Array1<f64>,
}

/// Builds a measure, renormalizing explicit weights.
pub fn make_measure(atoms: Array2<f64>, weights: Weights) -> Result<EmpiricalMeasure> {
    let (s, q) = atoms.dim();
    if s == 0 {
        return Err(Error::InvalidInput("measure needs at least one atom".into()));
    }
    if q == 0 {
        return Err(Error::InvalidInput("atoms must have at least one coordinate".into()));
    }
    if let Some(((i, r), v)) = atoms.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("atom {i} coordinate {r} is not finite ({v})")));
    }
    let weights = match weights {
        Weights::Uniform => Array1::from_elem(s, 1.0 / s as f64),
        Weights::Explicit(w) => {
            if w.len() != s {
                return Err(Error::DimensionMismatch { expected: s, found: w.len() });
            }
            if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidInput(format!("weight {i} is negative or not finite ({v})")));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidInput("weights sum to zero".into()));
            }
            Array1::from_iter(w.into_iter().map(|v| v / total))
        }
    };
    Ok(EmpiricalMeasure { atoms, weights })
}

impl EmpiricalMeasure {
    /// Equal weight on every row of `atoms`.
    pub fn uniform(atoms: Array2<f64>) -> Result<Self> {
        make_measure(atoms, Weights::Uniform)
    }

    /// A single atom at `point`.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        let atoms = Array2::from_shape_vec((1, point.len()), point.to_vec())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::uniform(atoms)
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimension of the ambient space.
    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    /// True when every weight equals `1/s` up to rounding.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-12)
    }

    /// Moves every atom by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.dim(), shift.len())?;
        let mut atoms = self.atoms.clone();
        for mut row in atoms.rows_mut() {
            row.iter_mut().zip(shift).for_each(|(x, s)| *x += s);
        }
        Ok(Self { atoms, weights: self.weights.clone() })
    }

    /// Writes `w,x1,...,xq` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim()).map(|r| format!("x{r}")));
        wtr.write_record(&header)?;
        for (w, row) in self.weights.iter().zip(self.atoms.rows()) {
            let mut rec = vec![format!("{w:.16e}")];
            rec.extend(row.iter().map(|x| format!("{x:.16e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("w") || headers.len() < 2 {
            return Err(Error::InvalidInput("measure CSV must start with columns w,x1,...".into()));
        }
        let q = headers.len() - 1;
        let mut weights = Vec::new();
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = parse_row(&rec)?;
            weights.push(vals[0]);
            coords.extend_from_slice(&vals[1..]);
        }
        let atoms = Array2::from_shape_vec((weights.len(), q), coords)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        make_measure(atoms, Weights::Explicit(weights))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn parse_row(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("cannot parse '{f}' as a number")))
        })
        .collect()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Pairwise squared Euclidean distances, rows indexed by the first measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    /// Squared distances between the rows of `a` and `b`.
    pub fn between(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        check_dim(a.ncols(), b.ncols())?;
        let mut entries = Array2::zeros((a.nrows(), b.nrows()));
        for (u, mut row) in entries.axis_iter_mut(Axis(0)).enumerate() {
            let x = a.row(u);
            for (v, c) in row.iter_mut().enumerate() {
                *c = x.iter().zip(b.row(v)).map(|(p, q)| (p - q) * (p - q)).sum();
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.entries[[u, v]]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

pub fn squared_cost(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<CostMatrix> {
    CostMatrix::between(a.atoms(), b.atoms())
}

/// Optimal coupling between two measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    coupling: Array2<f64>,
    objective: f64,
}

impl TransportPlan {
    pub fn coupling(&self) -> ArrayView2<'_, f64> {
        self.coupling.view()
    }

    /// Total transport cost, i.e. the squared distance.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Largest deviation of the row and column sums from the given marginals.
    pub fn marginal_error(&self, source: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> f64 {
        let rows = self.coupling.sum_axis(Axis(1));
        let cols = self.coupling.sum_axis(Axis(0));
        let r = rows.iter().zip(source).map(|(a, b)| (a - b).abs());
        let c = cols.iter().zip(target).map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

/// Exact W2 distance and an optimal plan, capped at [`W2_EXACT_CAP`] variables.
pub fn w2_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, TransportPlan)> {
    w2_exact_with_cap(mu, nu, W2_EXACT_CAP)
}

pub fn w2_exact_with_cap(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cap: usize) -> Result<(f64, TransportPlan)> {
    let cost = squared_cost(mu, nu)?;
    let (g, s) = (mu.len(), nu.len());
    if g * s > cap {
        return Err(Error::CapExceeded {
            what: "transport problem",
            size: g * s,
            cap,
            advice: "thin the draws or use the entropic solver",
        });
    }
    let mut lp = StandardLp::with_capacity(g + s, g * s, 2 * g * s);
    for u in 0..g {
        for v in 0..s {
            lp.push_column(cost.get(u, v), &[(u, 1.0), (g + v, 1.0)]);
        }
    }
    for (u, &w) in mu.weights.iter().enumerate() {
        lp.set_rhs(u, w);
    }
    for (v, &w) in nu.weights.iter().enumerate() {
        lp.set_rhs(g + v, w);
    }
    let sol = lp.solve(&LpOptions::default())?;
    let coupling = Array2::from_shape_vec((g, s), sol.x).expect("plan shape");
    let objective = sol.objective.max(0.0);
    let plan = TransportPlan { coupling, objective };
    let err = plan.marginal_error(mu.weights(), nu.weights());
    if err > 1e-8 {
        return Err(Error::Numerical(format!("transport plan marginals off by {err:.3e}")));
    }
    Ok((objective.sqrt(), plan))
}

/// W2 between two uniform measures of equal size `s ≤ 8` by checking every
/// permutation.
pub fn w2_bruteforce_uniform(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let s = mu.len();
    if nu.len() != s {
        return Err(Error::InvalidInput(format!("sizes differ: {s} vs {}", nu.len())));
    }
    if s > 8 {
        return Err(Error::InvalidInput(format!("{s} atoms is too many for enumeration (max 8)")));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::InvalidInput("brute force needs uniform weights".into()));
    }
    let cost = squared_cost(mu, nu)?;
    let mut perm: Vec<usize> = (0..s).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>();
    let mut best = total(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; s];
    let mut i = 0;
    while i < s {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / s as f64).max(0.0).sqrt())
}

/// Weighted mean and (population) covariance.
pub fn moments(mu: &EmpiricalMeasure) -> (Array1<f64>, Array2<f64>) {
    let q = mu.dim();
    let mut mean = Array1::zeros(q);
    for (w, row) in mu.weights.iter().zip(mu.atoms.rows()) {
        mean.scaled_add(*w, &row);
    }
    let mut cov = Array2::zeros((q, q));
    for (w, row) in mu.weights.iter().zip(mu.atoms.rows()) {
        let d = &row - &mean;
        for a in 0..q {
            for b in 0..q {
                cov[[a, b]] += w * d[a] * d[b];
            }
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_and_renormalized_weights() {
        let m = make_measure(array![[0.0], [1.0]], Weights::Uniform).unwrap();
        assert_eq!(m.weights().to_vec(), vec![0.5, 0.5]);
        let m = make_measure(array![[1.0, 2.0]], Weights::Explicit(vec![3.0])).unwrap();
        assert_eq!(m.weights().to_vec(), vec![1.0]);
        let m = make_measure(array![[0.0], [1.0], [2.0]], Weights::Explicit(vec![1.0, 1.0, 2.0])).unwrap();
        assert_eq!(m.weights().to_vec(), vec![0.25, 0.25, 0.5]);
        assert!((m.weights().sum() - 1.0).abs() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn invalid_measures_are_rejected() {
        assert!(make_measure(Array2::zeros((0, 1)), Weights::Uniform).is_err());
        assert!(make_measure(array![[0.0], [1.0]], Weights::Explicit(vec![1.0, -1.0])).is_err());
        assert!(make_measure(array![[f64::NAN]], Weights::Uniform).is_err());
        assert!(make_measure(array![[0.0]], Weights::Explicit(vec![0.0])).is_err());
    }

    #[test]
    fn cost_matrix_examples() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert_eq!(squared_cost(&a, &b).unwrap().entries(), array![[25.0]]);
        let a = EmpiricalMeasure::uniform(array![[0.0], [1.0]]).unwrap();
        assert_eq!(squared_cost(&a, &a).unwrap().entries(), array![[0.0, 1.0], [1.0, 0.0]]);
        let a = EmpiricalMeasure::uniform(array![[0.0], [2.0]]).unwrap();
        let b = EmpiricalMeasure::dirac(&[1.0]).unwrap();
        assert_eq!(squared_cost(&a, &b).unwrap().entries(), array![[1.0], [1.0]]);
        assert!(squared_cost(&a, &EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn exact_distance_examples() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert!((w2_exact(&a, &b).unwrap().0 - 5.0).abs() < 1e-12);

        let mu = EmpiricalMeasure::uniform(array![[0.0], [1.0]]).unwrap();
        let nu = EmpiricalMeasure::uniform(array![[1.0], [2.0]]).unwrap();
        assert!((w2_exact(&mu, &nu).unwrap().0 - 1.0).abs() < 1e-12);
        assert!((w2_bruteforce_uniform(&mu, &nu).unwrap() - 1.0).abs() < 1e-12);

        let mu = make_measure(array![[0.0], [1.0], [5.0]], Weights::Explicit(vec![0.2, 0.3, 0.5])).unwrap();
        let (d, plan) = w2_exact(&mu, &mu).unwrap();
        assert!(d.abs() < 1e-12);
        let diag = Array2::from_diag(&mu.weights());
        assert!((&plan.coupling() - &diag).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn brute_force_examples() {
        let mu = EmpiricalMeasure::uniform(array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let nu = EmpiricalMeasure::uniform(array![[0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!((w2_bruteforce_uniform(&mu, &nu).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(w2_bruteforce_uniform(&mu, &mu).unwrap(), 0.0);
        let big = EmpiricalMeasure::uniform(Array2::zeros((9, 1))).unwrap();
        assert!(w2_bruteforce_uniform(&big, &big).is_err());
        let w = make_measure(array![[0.0], [1.0]], Weights::Explicit(vec![1.0, 2.0])).unwrap();
        assert!(w2_bruteforce_uniform(&w, &w).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let mu = EmpiricalMeasure::uniform(Array2::zeros((10, 1))).unwrap();
        assert!(matches!(w2_exact_with_cap(&mu, &mu, 99), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn moment_examples() {
        let (m, c) = moments(&EmpiricalMeasure::uniform(array![[0.0], [2.0]]).unwrap());
        assert_eq!((m[0], c[[0, 0]]), (1.0, 1.0));
        let (m, c) = moments(&EmpiricalMeasure::dirac(&[1.0, -2.0]).unwrap());
        assert_eq!(m.to_vec(), vec![1.0, -2.0]);
        assert!(c.iter().all(|v| *v == 0.0));
        let mu = make_measure(array![[0.0], [4.0]], Weights::Explicit(vec![0.25, 0.75])).unwrap();
        assert_eq!(moments(&mu).0[0], 3.0);
    }

    #[test]
    fn csv_round_trip() {
        let mu = make_measure(array![[0.1, 1.0 / 3.0], [-2.5e-7, 7.0]], Weights::Explicit(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("w,x1,x2\n"));
        let back = EmpiricalMeasure::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.atoms(), mu.atoms());
        assert!((&back.weights() - &mu.weights()).iter().all(|d| d.abs() < 1e-15));
    }
}
