//! With `γ = 1` every tempered full conditional must be the ordinary
//! conjugate update, written out here from the textbook formulas. With an
//! integer `γ` it must equal the untempered update on `γ`-fold counts.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wasp::models::dpm::{location_conditional, variance_conditional};
use wasp::models::gmm::{covariance_conditional, mean_conditional, weights_conditional};
use wasp::models::parafac::profile_conditional;
use wasp::models::stick::{concentration_conditional, stick_conditionals};
use wasp::models::{DpmPrior, GmmPrior};

const CASES: u32 = 32;

fn gmm_prior() -> impl Strategy<Value = GmmPrior> {
    (2usize..5, 0.1..3.0f64, 0.001..1.0f64, 1.0..6.0f64, 0.5..8.0f64).prop_map(|(components, conc, kappa, df, scale)| GmmPrior {
        components,
        concentration: Some(conc),
        mean_precision: kappa,
        iw_df: df,
        iw_scale: scale,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn mixture_weights(prior in gmm_prior(), counts in prop::collection::vec(0usize..500, 2..5)) {
        let got = weights_conditional(&prior, &counts, 1.0);
        let textbook: Vec<f64> = counts.iter().map(|&n| prior.concentration.unwrap() + n as f64).collect();
        prop_assert_eq!(&got, &textbook);
        let doubled: Vec<usize> = counts.iter().map(|n| 2 * n).collect();
        prop_assert_eq!(weights_conditional(&prior, &counts, 2.0), weights_conditional(&prior, &doubled, 1.0));
    }

    #[test]
    fn mixture_mean(prior in gmm_prior(), n in 1usize..400, sum in prop::collection::vec(-200.0..200.0f64, 1..4)) {
        // prior mean 0 with covariance Σ/κ: posterior mean Σy/(κ+n), covariance Σ/(κ+n)
        let got = mean_conditional(&prior, n, &sum, 1.0);
        let precision = prior.mean_precision + n as f64;
        prop_assert_eq!(got.precision, precision);
        for (g, s) in got.mean.iter().zip(&sum) {
            prop_assert_eq!(*g, s / precision);
        }
        let tripled = mean_conditional(&prior, 3 * n, &sum.iter().map(|s| 3.0 * s).collect::<Vec<_>>(), 1.0);
        let tempered = mean_conditional(&prior, n, &sum, 3.0);
        prop_assert_eq!(tempered.precision, tripled.precision);
        for (a, b) in tempered.mean.iter().zip(&tripled.mean) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn mixture_covariance(prior in gmm_prior(), n in 0usize..400, mu in prop::collection::vec(-3.0..3.0f64, 2), s in (0.1..50.0f64, -10.0..10.0f64, 0.1..50.0f64)) {
        let scatter = DMatrix::from_row_slice(2, 2, &[s.0, s.1, s.1, s.2]);
        let mean = DVector::from_vec(mu.clone());
        let (df, scale) = covariance_conditional(&prior, n, &scatter, &mean, 1.0);
        // Σ | μ, y ~ IW(ν0 + n + 1, Ψ + Σ(y−μ)(y−μ)ᵀ + κ μ μᵀ)
        prop_assert_eq!(df, prior.iw_df + n as f64 + 1.0);
        for a in 0..2 {
            for b in 0..2 {
                let psi = if a == b { prior.iw_scale } else { 0.0 };
                let want = psi + scatter[(a, b)] + mu[a] * mu[b] * prior.mean_precision;
                prop_assert_eq!(scale[(a, b)], want);
            }
        }
    }

    #[test]
    fn density_location(n in 0usize..300, sum in -300.0..300.0f64, var in 0.01..20.0f64) {
        // μ | σ², x with prior N(0, σ²): N(Σx/(n+1), σ²/(n+1))
        let (m, v) = location_conditional(n, sum, var, 1.0);
        prop_assert_eq!(m, sum / (n as f64 + 1.0));
        prop_assert_eq!(v, var / (n as f64 + 1.0));
        let (mt, vt) = location_conditional(n, sum, var, 4.0);
        let (m4, v4) = location_conditional(4 * n, 4.0 * sum, var, 1.0);
        prop_assert_eq!((mt, vt), (m4, v4));
    }

    #[test]
    fn density_variance(a in 2.1..6.0f64, b in 0.1..5.0f64, n in 0usize..300, sq in 0.0..500.0f64, mu in -4.0..4.0f64) {
        let prior = DpmPrior { a_sigma: a, b_sigma: b, ..DpmPrior::default() };
        // σ² | μ, x with the N(0, σ²) location prior: IG(a + (n+1)/2, b + Σ(x−μ)²/2 + μ²/2)
        let (shape, scale) = variance_conditional(&prior, n, sq, mu, 1.0);
        prop_assert_eq!(shape, (n as f64 + 1.0) / 2.0 + a);
        prop_assert_eq!(scale, sq / 2.0 + mu * mu / 2.0 + b);
    }

    #[test]
    fn stick_proportions(counts in prop::collection::vec(0usize..200, 1..20), alpha in 0.05..5.0f64) {
        // V_h ~ Beta(1 + n_h, α + Σ_{l>h} n_l)
        let got = stick_conditionals(&counts, alpha, 1.0);
        for (h, &(a, b)) in got.iter().enumerate() {
            let later: usize = counts[h + 1..].iter().sum();
            prop_assert_eq!(a, 1.0 + counts[h] as f64);
            prop_assert_eq!(b, alpha + later as f64);
        }
        let doubled: Vec<usize> = counts.iter().map(|n| 2 * n).collect();
        prop_assert_eq!(stick_conditionals(&counts, alpha, 2.0), stick_conditionals(&doubled, alpha, 1.0));
    }

    #[test]
    fn stick_concentration(sticks in prop::collection::vec(0.01..0.99f64, 1..20), a in 0.1..3.0f64, b in 0.1..3.0f64) {
        // α | V ~ Gamma(a + L, b − Σ log(1 − V_h)); no data enters
        let (shape, rate) = concentration_conditional(a, b, &sticks);
        prop_assert_eq!(shape, a + sticks.len() as f64);
        let want = b - sticks.iter().map(|v| (1.0 - v).ln()).sum::<f64>();
        prop_assert!((rate - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn latent_class_profiles(counts in prop::collection::vec(0usize..400, 2..6)) {
        // ψ | z, x ~ Dirichlet(1/d + n_c)
        let d = counts.len() as f64;
        let got = profile_conditional(&counts, 1.0);
        let textbook: Vec<f64> = counts.iter().map(|&n| 1.0 / d + n as f64).collect();
        prop_assert_eq!(&got, &textbook);
        let tripled: Vec<usize> = counts.iter().map(|n| 3 * n).collect();
        prop_assert_eq!(profile_conditional(&counts, 3.0), profile_conditional(&tripled, 1.0));
    }
}

#[test]
fn logistic_tempering_scales_the_likelihood_only() {
    use ndarray::array;
    use wasp::models::{log_likelihood_and_prior, tempered_log_posterior, LogisticPrior, ModelSpec};
    let spec = ModelSpec::Logistic(LogisticPrior { prior_scale: 2.0 });
    let shard = array![[0.5, -1.0, 1.0], [1.5, 0.2, 0.0], [-0.3, 0.7, 1.0]];
    for theta in [array![0.0, 0.0], array![0.7, -1.1], array![-2.0, 0.4]] {
        // Bernoulli-logit log likelihood and N(0, 4 I) log prior, up to constants
        let textbook_lik: f64 = shard
            .rows()
            .into_iter()
            .map(|r| {
                let eta: f64 = r[0] * theta[0] + r[1] * theta[1];
                let p: f64 = 1.0 / (1.0 + (-eta).exp());
                if r[2] == 1.0 { p.ln() } else { (1.0 - p).ln() }
            })
            .sum();
        let (lik, _) = log_likelihood_and_prior(&spec, theta.view(), shard.view()).unwrap();
        assert!((lik - textbook_lik).abs() < 1e-12);
        let diff = tempered_log_posterior(&spec, theta.view(), shard.view(), 1.0).unwrap()
            - tempered_log_posterior(&spec, array![0.0, 0.0].view(), shard.view(), 1.0).unwrap();
        let textbook_prior = -(theta[0] * theta[0] + theta[1] * theta[1]) / 8.0;
        let at_zero = 3.0 * 0.5f64.ln();
        assert!((diff - (textbook_lik + textbook_prior - at_zero)).abs() < 1e-12);
    }
}
