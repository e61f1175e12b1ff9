//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ksqi_core::constraints::{ConstraintSystem, RowLabel};
use ksqi_core::linalg::{DenseMatrix, SparseMatrix};
use ksqi_core::qp::QpProblem;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Least-squares projection onto `x_0 <= x_1 <= ...` by pooling adjacent
/// violators.
pub fn pav_non_decreasing(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

pub fn pav_non_increasing(y: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    pav_non_decreasing(&neg).into_iter().map(|v| -v).collect()
}

/// Rows `x_k - x_{k+1} <= 0` for `k = 0..n-1`.
pub fn chain_system(n: usize, decreasing: bool) -> ConstraintSystem<f64> {
    let s = if decreasing { -1.0 } else { 1.0 };
    let mut trips = Vec::new();
    for k in 0..n - 1 {
        trips.push((k, k, s));
        trips.push((k, k + 1, -s));
    }
    let mut cs = ConstraintSystem::unconstrained(n);
    cs.ineq_matrix = SparseMatrix::from_triplets(n - 1, n, &trips);
    cs.ineq_bound = vec![0.0; n - 1];
    cs.ineq_labels = vec![cs_label(); n - 1];
    cs
}

/// `lo <= x <= hi` componentwise.
pub fn box_system(lo: &[f64], hi: &[f64]) -> ConstraintSystem<f64> {
    let n = lo.len();
    let mut trips = Vec::new();
    let mut bound = Vec::new();
    for k in 0..n {
        trips.push((k, k, 1.0));
        bound.push(hi[k]);
    }
    for k in 0..n {
        trips.push((n + k, k, -1.0));
        bound.push(-lo[k]);
    }
    let mut cs = ConstraintSystem::unconstrained(n);
    cs.ineq_matrix = SparseMatrix::from_triplets(2 * n, n, &trips);
    cs.ineq_bound = bound;
    cs.ineq_labels = vec![cs_label(); 2 * n];
    cs
}

fn cs_label() -> RowLabel {
    RowLabel::S1
}

/// `A^T A + 0.1 I` for a random square `A`.
pub fn random_pd(n: usize, r: &mut ChaCha8Rng) -> DenseMatrix<f64> {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| a[k][i] * a[k][j]).sum();
            m.set(i, j, v + if i == j { 0.1 } else { 0.0 });
        }
    }
    m
}

pub fn objective(p: &QpProblem<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += 0.5 * x[i] * p.quad_matrix.get(i, j) * x[j];
        }
        v += p.lin_vector[i] * x[i];
    }
    v
}

/// Best objective over `samples` random points mapped into the feasible set
/// by `project`, drawn around `centre` with spread `scale`.
pub fn best_projected_sample(
    p: &QpProblem<f64>,
    centre: &[f64],
    scale: f64,
    samples: usize,
    project: impl Fn(&mut [f64]),
    r: &mut ChaCha8Rng,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; centre.len()];
    for s in 0..samples {
        // shrink the spread over time so late samples refine
        let sc = scale * (1.0 - s as f64 / samples as f64).powi(3) + 1e-6;
        for (xi, ci) in x.iter_mut().zip(centre) {
            *xi = ci + sc * r.gen_range(-1.0..1.0);
        }
        project(&mut x);
        best = best.min(objective(p, &x));
    }
    best
}

/// Pearson correlation by the textbook formula.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Kendall tau-b by enumerating all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let (a, b) = (x[i] - x[j], y[i] - y[j]);
            if a == 0.0 && b == 0.0 {
            } else if a == 0.0 {
                tx += 1.0;
            } else if b == 0.0 {
                ty += 1.0;
            } else if a * b > 0.0 {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

/// Three representations, four 2 s segments, with per-segment size and
/// quality jitter.
pub fn dp_ladder() -> ksqi_core::synth::BitrateLadder {
    use ksqi_core::synth::{BitrateLadder, Representation};
    let mut r = rng(42);
    let reps = [(1.0e6, 45.0), (2.5e6, 68.0), (5.0e6, 86.0)]
        .iter()
        .map(|&(bps, q)| Representation {
            segment_bytes: (0..4).map(|_| bps * 2.0 / 8.0 * r.gen_range(0.8..1.2)).collect(),
            quality: (0..4).map(|_| (q + r.gen_range(-6.0..6.0f64)).clamp(0.0, 100.0)).collect(),
        })
        .collect();
    BitrateLadder {
        representations: reps,
        segment_duration: 2.0,
    }
}

/// Five throughput patterns on 1 s samples: flat, falling, rising,
/// oscillating, and a low link with an outage.
pub fn dp_traces() -> Vec<ksqi_core::synth::NetworkTrace> {
    use ksqi_core::synth::NetworkTrace;
    let pattern: [fn(usize) -> f64; 5] = [
        |_| 3.0e6,
        |k| if k < 4 { 6.0e6 } else { 1.2e6 },
        |k| if k < 5 { 0.9e6 } else { 5.5e6 },
        |k| if k % 4 < 2 { 4.5e6 } else { 1.0e6 },
        |k| if (3..6).contains(&k) { 0.05e6 } else { 1.6e6 },
    ];
    pattern
        .iter()
        .map(|f| NetworkTrace::from_samples((0..120).map(|k| (k as f64, f(k))).collect()).unwrap())
        .collect()
}
