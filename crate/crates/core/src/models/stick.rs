//! Truncated stick-breaking updates shared by the nonparametric mixtures.
//!
//! All `l*` stick proportions are drawn, including the last one, and the
//! resulting weights are renormalized when stored.

use rand::Rng;

use super::dist::{beta, gamma};

/// Beta parameters of every stick proportion given cluster sizes.
pub fn stick_conditionals(counts: &[usize], alpha: f64, gamma_power: f64) -> Vec<(f64, f64)> {
    let mut above: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&n| {
            above -= n;
            (1.0 + gamma_power * n as f64, alpha + gamma_power * above as f64)
        })
        .collect()
}

/// Shape and rate of the concentration's conditional.
pub fn concentration_conditional(a_alpha: f64, b_alpha: f64, sticks: &[f64]) -> (f64, f64) {
    let shape = a_alpha + sticks.len() as f64;
    let rate = b_alpha - sticks.iter().map(|v| (-v).ln_1p()).sum::<f64>();
    assert!(rate > 0.0, "stick proportions must lie in (0, 1)");
    (shape, rate)
}

pub fn draw_sticks<R: Rng + ?Sized>(rng: &mut R, counts: &[usize], alpha: f64, gamma_power: f64, out: &mut [f64]) {
    for (v, (a, b)) in out.iter_mut().zip(stick_conditionals(counts, alpha, gamma_power)) {
        *v = beta(rng, a, b);
    }
}

pub fn draw_concentration<R: Rng + ?Sized>(rng: &mut R, a_alpha: f64, b_alpha: f64, sticks: &[f64]) -> f64 {
    let (shape, rate) = concentration_conditional(a_alpha, b_alpha, sticks);
    gamma(rng, shape, rate).max(f64::MIN_POSITIVE)
}

/// `log ν_h = log V_h + Σ_{l<h} log(1 − V_l)`.
pub fn log_stick_weights(sticks: &[f64], out: &mut [f64]) {
    let mut rest = 0.0;
    for (o, &v) in out.iter_mut().zip(sticks) {
        *o = v.ln() + rest;
        rest += (-v).ln_1p();
    }
}

/// Stick weights normalized to sum to one.
pub fn normalized_weights(sticks: &[f64]) -> Vec<f64> {
    let mut logw = vec![0.0; sticks.len()];
    log_stick_weights(sticks, &mut logw);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Stick proportions implied by normalized weights; the last one is 1.
pub fn sticks_from_weights(weights: &[f64]) -> Vec<f64> {
    let mut left = 1.0;
    weights
        .iter()
        .map(|&w| {
            let v = if left > 0.0 { (w / left).clamp(0.0, 1.0) } else { 1.0 };
            left -= w;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_parameters_count_later_clusters() {
        let got = stick_conditionals(&[3, 0, 2], 0.5, 2.0);
        assert_eq!(got, vec![(7.0, 4.5), (1.0, 4.5), (5.0, 0.5)]);
    }

    #[test]
    fn weights_round_trip() {
        let w = normalized_weights(&[0.5, 0.5, 0.5]);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.5 / 0.875).abs() < 1e-15);
        let v = sticks_from_weights(&w);
        assert!((v[0] - w[0]).abs() < 1e-15 && (v[2] - 1.0).abs() < 1e-12);
    }
}
