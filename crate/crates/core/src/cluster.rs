//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub labels: Vec<usize>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters the rows of `data` into `k` groups.
pub fn kmeans<R: Rng + ?Sized>(data: ArrayView2<'_, f64>, k: usize, iterations: usize, rng: &mut R) -> Result<KMeans> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot form {k} clusters from {n} rows")));
    }
    let q = data.ncols();
    let mut centers = Array2::zeros((k, q));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let mut nearest: Vec<f64> = data.rows().into_iter().map(|x| sq_dist(x, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            nearest
                .iter()
                .position(|&d| {
                    acc += d;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (d, x) in nearest.iter_mut().zip(data.rows()) {
            *d = d.min(sq_dist(x, centers.row(c)));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, x) in data.rows().into_iter().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(x, centers.row(c)), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or(0);
            changed |= labels[i] != best;
            labels[i] = best;
        }
        let mut sums = Array2::<f64>::zeros((k, q));
        let mut counts = vec![0usize; k];
        for (x, &l) in data.rows().into_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &x);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(KMeans { centers, labels })
}
