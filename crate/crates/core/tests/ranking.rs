mod common;

use ksqi_core::ranking::{log_likelihood, mle_ranking, PairwiseMatrix};
use proptest::prelude::*;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

const PLANTED: [f64; 4] = [0.6, 0.2, -0.2, -0.6];

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

fn forward(mu: &[f64]) -> Vec<Vec<f64>> {
    let n = std_normal();
    mu.iter().map(|&a| mu.iter().map(|&b| n.cdf(a - b)).collect()).collect()
}

/// Stationarity of the zero-sum likelihood, evaluated with a separate normal
/// implementation.
fn gradient_oracle(r: &[Vec<f64>], mu: &[f64]) -> f64 {
    let n = std_normal();
    let k = mu.len();
    let mut g = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let d = mu[i] - mu[j];
                let h = r[i][j] * n.pdf(d) / n.cdf(d);
                g[i] += h;
                g[j] -= h;
            }
        }
    }
    let m = g.iter().sum::<f64>() / k as f64;
    g.iter().map(|x| (x - m).abs()).fold(0.0, f64::max)
}

#[test]
fn planted_scores_recovered_from_exact_probabilities() {
    let r = forward(&PLANTED);
    let pm = PairwiseMatrix::complete(r.clone(), 100).unwrap();
    let rr = mle_ranking(&pm, 1e-10).unwrap();
    for (a, b) in rr.mu.iter().zip(PLANTED) {
        assert!((a - b).abs() <= 1e-4, "{:?}", rr.mu);
    }
    assert!(gradient_oracle(&r, &rr.mu) <= 1e-6);
    assert_eq!(rr.order(), vec![0, 1, 2, 3]);
}

#[test]
fn order_survives_binomial_sampling() {
    let p = forward(&PLANTED);
    let mut kept = 0;
    for rep in 0..100u64 {
        let mut rng = common::rng(1000 + rep);
        let mut wins = vec![vec![0u64; 4]; 4];
        for i in 0..4 {
            for j in (i + 1)..4 {
                let w = Binomial::new(100, p[i][j]).unwrap().sample(&mut rng);
                wins[i][j] = w;
                wins[j][i] = 100 - w;
            }
        }
        let counts = vec![vec![100u64; 4]; 4];
        let labels = (0..4).map(|k| format!("m{k}")).collect();
        let pm = PairwiseMatrix::from_wins(labels, &wins, counts).unwrap();
        if mle_ranking(&pm, 1e-9).unwrap().order() == vec![0, 1, 2, 3] {
            kept += 1;
        }
    }
    assert!(kept >= 95, "order kept in {kept}/100");
}

#[test]
fn all_even_matrix_gives_zero_scores() {
    let pm = PairwiseMatrix::<f64>::complete(vec![vec![0.5; 3]; 3], 10).unwrap();
    let rr = mle_ranking(&pm, 1e-12).unwrap();
    assert!(rr.mu.iter().all(|m| m.abs() <= 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn likelihood_ignores_common_shift(mu in proptest::collection::vec(-2.0..2.0f64, 3..6), c in -5.0..5.0f64) {
        let pm = PairwiseMatrix::complete(forward(&mu), 50).unwrap();
        let shifted: Vec<f64> = mu.iter().map(|m| m + c).collect();
        let (a, b) = (log_likelihood(&pm, &mu), log_likelihood(&pm, &shifted));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn dominant_model_ranks_first(mu in proptest::collection::vec(-1.0..1.0f64, 3..6), lead in 0.1..1.0f64) {
        let mut mu = mu;
        let top = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mu[0] = top + lead;
        let rr = mle_ranking(&PairwiseMatrix::complete(forward(&mu), 50).unwrap(), 1e-10).unwrap();
        prop_assert_eq!(rr.order()[0], 0);
    }

    #[test]
    fn scores_sum_to_zero_and_are_stationary(mu in proptest::collection::vec(-1.5..1.5f64, 2..6)) {
        let r = forward(&mu);
        let rr = mle_ranking(&PairwiseMatrix::complete(r.clone(), 20).unwrap(), 1e-10).unwrap();
        prop_assert!(rr.mu.iter().sum::<f64>().abs() <= 1e-9);
        prop_assert!(gradient_oracle(&r, &rr.mu) <= 1e-6);
    }
}
