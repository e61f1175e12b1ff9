//! Global scores from paired-comparison preferences under a probit
//! (Thurstone case V) model: `P(i beats j) = Phi(mu_i - mu_j)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("matrix is not square ({rows} rows, row {row} has {len} entries)")]
    Shape { rows: usize, row: usize, len: usize },
    #[error("r[{i}][{j}] = {value} outside [0, 1]")]
    Probability { i: usize, j: usize, value: f64 },
    #[error("r[{i}][{j}] + r[{j}][{i}] = {sum}, expected 1")]
    Complement { i: usize, j: usize, sum: f64 },
    #[error("trial counts are not symmetric at ({i}, {j})")]
    Counts { i: usize, j: usize },
    #[error("comparison graph is disconnected: {}", format_components(.0))]
    Disconnected(Vec<Vec<String>>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no convergence after {iterations} iterations (gradient {gradient:e})")]
    NotConverged { iterations: usize, gradient: f64 },
    #[error("fewer than two models")]
    TooFew,
}

fn format_components(c: &[Vec<String>]) -> String {
    c.iter().map(|g| format!("{{{}}}", g.join(", "))).collect::<Vec<_>>().join(" ")
}

/// Standard normal CDF.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5 * libm::erfc(-x.as_f64() / std::f64::consts::SQRT_2))
}

fn normal_pdf<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    T::lit((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Empirical preferences: `r[i][j]` is the fraction of `counts[i][j]` trials
/// in which `i` was preferred over `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PairwiseMatrix<T> {
    pub labels: Vec<String>,
    pub r: Vec<Vec<T>>,
    pub counts: Vec<Vec<u64>>,
}

impl<T: Scalar> PairwiseMatrix<T> {
    pub fn new(labels: Vec<String>, r: Vec<Vec<T>>, counts: Vec<Vec<u64>>) -> Result<Self, RankingError> {
        let k = r.len();
        for (row, v) in r.iter().enumerate() {
            if v.len() != k {
                return Err(RankingError::Shape { rows: k, row, len: v.len() });
            }
        }
        if counts.len() != k {
            return Err(RankingError::Shape { rows: k, row: counts.len(), len: 0 });
        }
        for (row, v) in counts.iter().enumerate() {
            if v.len() != k {
                return Err(RankingError::Shape { rows: k, row, len: v.len() });
            }
        }
        let tol = T::epsilon().sqrt();
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let v = r[i][j];
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(RankingError::Probability { i, j, value: v.as_f64() });
                }
                if counts[i][j] != counts[j][i] {
                    return Err(RankingError::Counts { i, j });
                }
                if counts[i][j] > 0 && (v + r[j][i] - T::one()).abs() > tol {
                    return Err(RankingError::Complement {
                        i,
                        j,
                        sum: (v + r[j][i]).as_f64(),
                    });
                }
            }
        }
        let labels = if labels.len() == k { labels } else { (0..k).map(|i| format!("m{i}")).collect() };
        Ok(Self { labels, r, counts })
    }

    /// Every pair compared `trials` times with exact probabilities `r`.
    pub fn complete(r: Vec<Vec<T>>, trials: u64) -> Result<Self, RankingError> {
        let k = r.len();
        let counts = (0..k).map(|i| (0..k).map(|j| if i == j { 0 } else { trials }).collect()).collect();
        Self::new(Vec::new(), r, counts)
    }

    /// From win counts: `wins[i][j]` of `counts[i][j]` trials went to `i`.
    pub fn from_wins(labels: Vec<String>, wins: &[Vec<u64>], counts: Vec<Vec<u64>>) -> Result<Self, RankingError> {
        let k = wins.len();
        let r = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let n = counts.get(i).and_then(|c| c.get(j)).copied().unwrap_or(0);
                        if i == j || n == 0 {
                            T::lit(0.5)
                        } else {
                            T::from_usize_lossy(wins[i][j] as usize) / T::from_usize_lossy(n as usize)
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(labels, r, counts)
    }

    /// Reads `model_i,model_j,wins_i,trials` rows (header required). Rows for
    /// the same pair accumulate in either orientation; models are numbered in
    /// order of first appearance.
    pub fn parse_csv(text: &str) -> Result<Self, RankingError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n + 2;
            let err = |message: String| RankingError::Parse { line, message };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", rec.len())));
            }
            let mut id = |name: &str| {
                *index.entry(name.to_string()).or_insert_with(|| {
                    labels.push(name.to_string());
                    labels.len() - 1
                })
            };
            let (i, j) = (id(&rec[0]), id(&rec[1]));
            if i == j {
                return Err(err("a model compared with itself".into()));
            }
            let wins: u64 = rec[2].parse().map_err(|e| err(format!("wins_i: {e}")))?;
            let trials: u64 = rec[3].parse().map_err(|e| err(format!("trials: {e}")))?;
            if wins > trials {
                return Err(err(format!("{wins} wins out of {trials} trials")));
            }
            rows.push((i, j, wins, trials));
        }
        let k = labels.len();
        let mut wins = vec![vec![0u64; k]; k];
        let mut counts = vec![vec![0u64; k]; k];
        for (i, j, w, t) in rows {
            wins[i][j] += w;
            wins[j][i] += t - w;
            counts[i][j] += t;
            counts[j][i] += t;
        }
        Self::from_wins(labels, &wins, counts)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Connected components of the comparison graph, as index lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let k = self.len();
        let mut seen = vec![false; k];
        let mut out = Vec::new();
        for s in 0..k {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut at = 0;
            while at < comp.len() {
                let i = comp[at];
                at += 1;
                for j in 0..k {
                    if !seen[j] && self.counts[i][j] > 0 {
                        seen[j] = true;
                        comp.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Moves probabilities of exactly 0 or 1 to `1/(2n)` from the boundary,
    /// `n` being the pair's trial count. Returns the clipped matrix and the
    /// cells that changed.
    pub fn clipped(&self) -> (Self, Vec<(usize, usize)>) {
        let mut out = self.clone();
        let mut cells = Vec::new();
        for i in 0..self.len() {
            for j in 0..self.len() {
                let n = self.counts[i][j];
                if i == j || n == 0 {
                    continue;
                }
                let eps = T::one() / T::lit(2.0 * n as f64);
                let v = self.r[i][j];
                let c = if v <= T::zero() {
                    eps
                } else if v >= T::one() {
                    T::one() - eps
                } else {
                    v
                };
                if c != v {
                    out.r[i][j] = c;
                    cells.push((i, j));
                }
            }
        }
        (out, cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RankingResult<T> {
    pub labels: Vec<String>,
    /// Zero-sum scores.
    pub mu: Vec<T>,
    pub log_likelihood: T,
    pub iterations: usize,
    pub gradient_norm: T,
    /// Cells moved off 0 or 1 before fitting.
    pub clipped: Vec<(usize, usize)>,
}

impl<T: Scalar> RankingResult<T> {
    /// Indices sorted by decreasing score (stable for ties).
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mu.len()).collect();
        idx.sort_by(|&a, &b| self.mu[b].partial_cmp(&self.mu[a]).unwrap_or(std::cmp::Ordering::Equal));
        idx
    }

    /// `rank,model,mu` rows in decreasing score.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "model", "mu"]).expect("in-memory write");
        for (rank, i) in self.order().into_iter().enumerate() {
            w.write_record([(rank + 1).to_string(), self.labels[i].clone(), format!("{}", self.mu[i])])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

pub fn log_likelihood<T: Scalar>(pm: &PairwiseMatrix<T>, mu: &[T]) -> T {
    let mut l = T::zero();
    for i in 0..pm.len() {
        for j in 0..pm.len() {
            if i != j && pm.counts[i][j] > 0 && pm.r[i][j] > T::zero() {
                l = l + pm.r[i][j] * normal_cdf(mu[i] - mu[j]).ln();
            }
        }
    }
    l
}

/// Gradient projected onto the zero-sum subspace.
fn gradient<T: Scalar>(pm: &PairwiseMatrix<T>, mu: &[T]) -> Vec<T> {
    let k = pm.len();
    let mut g = vec![T::zero(); k];
    for i in 0..k {
        for j in 0..k {
            if i == j || pm.counts[i][j] == 0 {
                continue;
            }
            let d = mu[i] - mu[j];
            let h = pm.r[i][j] * normal_pdf(d) / normal_cdf(d);
            g[i] = g[i] + h;
            g[j] = g[j] - h;
        }
    }
    let m = crate::scalar::mean(&g);
    g.into_iter().map(|x| x - m).collect()
}

const MAX_ITERATIONS: usize = 1_000_000;
const ARMIJO: f64 = 1e-4;

/// Maximum-likelihood scores by projected gradient ascent with backtracking.
///
/// The log-likelihood is concave and never decreases between accepted
/// iterates; iteration stops once the projected gradient's infinity norm is
/// at most `tol`.
pub fn mle_ranking<T: Scalar>(pm: &PairwiseMatrix<T>, tol: T) -> Result<RankingResult<T>, RankingError> {
    let k = pm.len();
    if k < 2 {
        return Err(RankingError::TooFew);
    }
    let comps = pm.components();
    if comps.len() > 1 {
        return Err(RankingError::Disconnected(
            comps
                .into_iter()
                .map(|c| c.into_iter().map(|i| pm.labels[i].clone()).collect())
                .collect(),
        ));
    }
    let (pm_c, clipped) = pm.clipped();
    let mut mu = vec![T::zero(); k];
    let mut l = log_likelihood(&pm_c, &mu);
    let mut step = T::one();
    for it in 0..MAX_ITERATIONS {
        let g = gradient(&pm_c, &mu);
        let gnorm = crate::scalar::norm_inf(&g);
        if gnorm <= tol {
            let m = crate::scalar::mean(&mu);
            mu.iter_mut().for_each(|x| *x = *x - m);
            return Ok(RankingResult {
                labels: pm.labels.clone(),
                log_likelihood: log_likelihood(&pm_c, &mu),
                mu,
                iterations: it,
                gradient_norm: gnorm,
                clipped,
            });
        }
        let g2 = crate::scalar::dot(&g, &g);
        step = step * T::lit(2.0);
        loop {
            let cand: Vec<T> = mu.iter().zip(&g).map(|(m, d)| *m + step * *d).collect();
            let lc = log_likelihood(&pm_c, &cand);
            // Near the optimum the sufficient-increase test drowns in rounding;
            // a non-negative slope at the end point certifies ascent by concavity.
            let slope = crate::scalar::dot(&gradient(&pm_c, &cand), &g);
            if lc >= l + T::lit(ARMIJO) * step * g2 || slope >= T::zero() {
                let noise = T::lit(8.0) * T::epsilon() * l.abs().max(T::one());
                assert!(lc >= l - noise, "log-likelihood decreased on an accepted step");
                mu = cand;
                l = lc;
                break;
            }
            step = step * T::lit(0.5);
            if step < T::epsilon() {
                // no representable ascent left: the gradient is at noise level
                return Err(RankingError::NotConverged {
                    iterations: it,
                    gradient: gnorm.as_f64(),
                });
            }
        }
    }
    Err(RankingError::NotConverged {
        iterations: MAX_ITERATIONS,
        gradient: crate::scalar::norm_inf(&gradient(&pm_c, &mu)).as_f64(),
    })
}

/// `Phi(mu_i - mu_j)` for every pair.
pub fn preference_probability<T: Scalar>(rr: &RankingResult<T>) -> Vec<Vec<T>> {
    rr.mu
        .iter()
        .map(|&a| rr.mu.iter().map(|&b| normal_cdf(a - b)).collect())
        .collect()
}
