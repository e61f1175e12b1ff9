//! Correlation criteria, the VQEG logistic mapping, MOS rescaling, the
//! variance-ratio significance test and report tables.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::linalg::{Cholesky, DenseMatrix};
use crate::scalar::{mean, Scalar};
use crate::session::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("{0} is undefined for constant input")]
    Undefined(&'static str),
    #[error("significance test needs at least 50 residuals per model (got {0}); the normality assumption does not hold below that")]
    TooFewResiduals(usize),
    #[error("confidence must lie in (0, 1)")]
    Confidence,
    #[error("degenerate MOS scale ({0}, {1})")]
    DegenerateScale(f64, f64),
    #[error("non-finite input value")]
    NonFinite,
}

fn check_pair<T: Scalar>(x: &[T], y: &[T], need: usize) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::Length(x.len(), y.len()));
    }
    if x.len() < need {
        return Err(MetricError::TooFew {
            need,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn pearson<T: Scalar>(x: &[T], y: &[T], what: &'static str) -> Result<T, MetricError> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(MetricError::Undefined(what));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

/// Pearson linear correlation.
pub fn plcc<T: Scalar>(x: &[T], y: &[T]) -> Result<T, MetricError> {
    check_pair(x, y, 3)?;
    pearson(x, y, "PLCC")
}

/// 1-based ranks with ties given their average rank.
pub fn ranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite values"));
    let mut r = vec![T::zero(); x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let avg = T::from_usize_lossy(k + e + 2) / T::lit(2.0);
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank-order correlation (Pearson on average ranks).
pub fn srcc<T: Scalar>(x: &[T], y: &[T]) -> Result<T, MetricError> {
    check_pair(x, y, 3)?;
    pearson(&ranks(x), &ranks(y), "SRCC")
}

/// Kendall rank correlation, tie-adjusted (tau-b).
pub fn krcc<T: Scalar>(x: &[T], y: &[T]) -> Result<T, MetricError> {
    check_pair(x, y, 3)?;
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    tie_x += 1;
                    tie_y += 1;
                }
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                (a, b) if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tie_x) as f64) * ((n0 - tie_y) as f64);
    if denom == 0.0 {
        return Err(MetricError::Undefined("KRCC"));
    }
    Ok(T::lit((conc - disc) as f64 / denom.sqrt()))
}

/// `(b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
pub fn logistic4<T: Scalar>(params: &[T; 4], x: T) -> T {
    let [b1, b2, b3, b4] = *params;
    (b1 - b2) / (T::one() + (-(x - b3) / b4.abs()).exp()) + b2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mapping {
    Logistic,
    /// The logistic fit failed or did worse than a straight line.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VqegFit<T> {
    pub mapping: Mapping,
    /// Logistic `[b1, b2, b3, b4]`, or `[slope, intercept, 0, 0]` for the linear map.
    pub params: [T; 4],
    pub mapped: Vec<T>,
    pub sse: T,
    pub warning: Option<String>,
}

impl<T: Scalar> VqegFit<T> {
    pub fn apply(&self, x: T) -> T {
        match self.mapping {
            Mapping::Logistic => logistic4(&self.params, x),
            Mapping::Linear => self.params[0] * x + self.params[1],
        }
    }

    pub fn residuals(&self, mos: &[T]) -> Vec<T> {
        self.mapped.iter().zip(mos).map(|(a, b)| *a - *b).collect()
    }
}

const LOGISTIC_STARTS: usize = 12;

/// Fits the monotone 4-parameter logistic from objective scores to MOS by
/// seeded multi-start Levenberg-Marquardt.
pub fn vqeg_map<T: Scalar>(objective: &[T], mos: &[T], seed: u64) -> Result<VqegFit<T>, MetricError> {
    check_pair(objective, mos, 5)?;
    let x: Vec<f64> = objective.iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = mos.iter().map(|v| v.as_f64()).collect();
    let (mx, sx) = mean_std(&x);
    let (my, sy) = mean_std(&y);
    let linear = linear_fit(&x, &y);

    let mut best: Option<([f64; 4], f64)> = None;
    if sx > 0.0 && sy > 0.0 {
        let zx: Vec<f64> = x.iter().map(|v| (v - mx) / sx).collect();
        let zy: Vec<f64> = y.iter().map(|v| (v - my) / sy).collect();
        let (lo, hi) = zy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..LOGISTIC_STARTS {
            let start = match k {
                0 => [hi, lo, 0.0, 1.0],
                1 => [lo, hi, 0.0, 1.0],
                _ => {
                    let amp: f64 = rng.gen_range(0.5..2.0);
                    let mid = 0.5 * (lo + hi);
                    let half = 0.5 * (hi - lo) * amp;
                    let (a, b) = if rng.gen_bool(0.5) { (mid + half, mid - half) } else { (mid - half, mid + half) };
                    [a, b, rng.gen_range(-1.5..1.5), rng.gen_range(0.2..3.0)]
                }
            };
            if let Some((p, sse)) = levenberg_marquardt(&zx, &zy, start) {
                if best.is_none_or(|(_, b)| sse < b) {
                    best = Some((p, sse));
                }
            }
        }
        best = best.map(|(p, sse)| {
            (
                [my + sy * p[0], my + sy * p[1], mx + sx * p[2], sx * p[3].abs()],
                sse * sy * sy,
            )
        });
    }

    let lit = |v: f64| T::lit(v);
    match best {
        Some((p, sse)) if sse.is_finite() && sse < linear.2 => {
            let params = p.map(lit);
            let mapped = objective.iter().map(|&v| logistic4(&params, v)).collect();
            Ok(VqegFit {
                mapping: Mapping::Logistic,
                params,
                mapped,
                sse: lit(sse),
                warning: None,
            })
        }
        other => {
            let (slope, icpt, sse) = linear;
            let warning = match other {
                None => "logistic fit failed; using linear map".to_string(),
                Some(_) => "logistic fit did not improve on a linear map; using linear map".to_string(),
            };
            Ok(VqegFit {
                mapping: Mapping::Linear,
                params: [lit(slope), lit(icpt), T::zero(), T::zero()],
                mapped: objective.iter().map(|&v| lit(slope) * v + lit(icpt)).collect(),
                sse: lit(sse),
                warning: Some(warning),
            })
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Least-squares line; slope 0 when `x` is constant.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let sse = x.iter().zip(y).map(|(a, b)| (slope * a + icpt - b).powi(2)).sum();
    (slope, icpt, sse)
}

fn levenberg_marquardt(x: &[f64], y: &[f64], start: [f64; 4]) -> Option<([f64; 4], f64)> {
    let sse_of = |p: &[f64; 4]| -> f64 { x.iter().zip(y).map(|(&a, &b)| (logistic4(p, a) - b).powi(2)).sum() };
    let mut p = start;
    let mut sse = sse_of(&p);
    let mut mu = 1e-3;
    for _ in 0..300 {
        let mut jtj = DenseMatrix::zeros(4, 4);
        let mut jtr = [0.0; 4];
        let s = p[3].abs().max(1e-12);
        for (&xi, &yi) in x.iter().zip(y) {
            let z = (xi - p[2]) / s;
            let g = 1.0 / (1.0 + (-z).exp());
            let dg = g * (1.0 - g);
            let amp = p[0] - p[1];
            let j = [g, 1.0 - g, -amp * dg / s, -amp * dg * z / s * p[3].signum()];
            let r = logistic4(&p, xi) - yi;
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj.add_to(a, b, j[a] * j[b]);
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for a in 0..4 {
                damped.add_to(a, a, mu * (jtj.get(a, a) + 1e-12));
            }
            let Ok(ch) = Cholesky::factor(&damped) else {
                mu *= 10.0;
                continue;
            };
            let step = ch.solve(&jtr.map(|v| -v));
            let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let c_sse = sse_of(&cand);
            if c_sse.is_finite() && c_sse < sse {
                let rel = (sse - c_sse) / sse.max(1e-300);
                p = cand;
                sse = c_sse;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    return Some((p, sse));
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    sse.is_finite().then_some((p, sse))
}

/// Affine map of `value` from `from` onto `to`.
pub fn rescale_value<T: Scalar>(value: T, from: (T, T), to: (T, T)) -> T {
    to.0 + (value - from.0) * (to.1 - to.0) / (from.1 - from.0)
}

/// Maps every MOS in the dataset from its declared scale onto `target`.
pub fn rescale_mos<T: Scalar>(ds: &Dataset<T>, target: (T, T)) -> Result<Dataset<T>, MetricError> {
    let (lo, hi) = ds.mos_scale;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(MetricError::DegenerateScale(lo.as_f64(), hi.as_f64()));
    }
    let mut out = ds.clone();
    for s in &mut out.sessions {
        s.mos = s.mos.map(|m| rescale_value(m, (lo, hi), target));
    }
    out.mos_scale = target;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    /// Row model has significantly smaller residual variance.
    Better,
    Worse,
    Indistinguishable,
    Diagonal,
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Better => "1",
            Self::Worse => "0",
            Self::Indistinguishable | Self::Diagonal => "-",
        })
    }
}

pub const MIN_SIGNIFICANCE_SAMPLES: usize = 50;

fn sample_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Pairwise two-sided F-tests on residual variances.
pub fn significance_matrix<T: Scalar>(
    residuals: &[Vec<T>],
    confidence: f64,
) -> Result<Vec<Vec<Significance>>, MetricError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricError::Confidence);
    }
    if let Some(short) = residuals.iter().find(|r| r.len() < MIN_SIGNIFICANCE_SAMPLES) {
        return Err(MetricError::TooFewResiduals(short.len()));
    }
    let vars: Vec<(f64, f64)> = residuals
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|x| x.as_f64()).collect();
            (sample_variance(&v), (v.len() - 1) as f64)
        })
        .collect();
    let k = residuals.len();
    let alpha = 1.0 - confidence;
    let mut out = vec![vec![Significance::Diagonal; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let (vi, di) = vars[i];
            let (vj, dj) = vars[j];
            let dist = FisherSnedecor::new(di, dj).expect("positive degrees of freedom");
            let ratio = if vj > 0.0 { vi / vj } else if vi > 0.0 { f64::INFINITY } else { 1.0 };
            let (lo, hi) = (dist.inverse_cdf(alpha / 2.0), dist.inverse_cdf(1.0 - alpha / 2.0));
            let (a, b) = if ratio < lo {
                (Significance::Better, Significance::Worse)
            } else if ratio > hi {
                (Significance::Worse, Significance::Better)
            } else {
                (Significance::Indistinguishable, Significance::Indistinguishable)
            };
            out[i][j] = a;
            out[j][i] = b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Plcc,
    Srcc,
    Krcc,
}

impl Correlations {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Plcc => self.plcc,
            Criterion::Srcc => self.srcc,
            Criterion::Krcc => self.krcc,
        }
    }
}

/// Outcome for one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub scores: Correlations,
    pub mapping: VqegFit<f64>,
    pub residuals: Vec<f64>,
}

/// PLCC on logistic-mapped predictions, SRCC and KRCC on raw predictions.
pub fn evaluate_predictions(predicted: &[f64], mos: &[f64], seed: u64) -> Result<CellResult, MetricError> {
    let fit = vqeg_map(predicted, mos, seed)?;
    let scores = Correlations {
        plcc: plcc(&fit.mapped, mos)?,
        srcc: srcc(predicted, mos)?,
        krcc: krcc(predicted, mos)?,
    };
    Ok(CellResult {
        residuals: fit.residuals(mos),
        scores,
        mapping: fit,
    })
}

/// Correlations per (model, dataset) plus the dataset sizes for weighting.
#[derive(Debug, Clone, Default)]
pub struct EvaluationReport {
    pub datasets: Vec<(String, usize)>,
    pub models: Vec<String>,
    pub cells: BTreeMap<(String, String), CellResult>,
}

impl EvaluationReport {
    pub fn add_dataset(&mut self, name: &str, n_sessions: usize) {
        if !self.datasets.iter().any(|(d, _)| d == name) {
            self.datasets.push((name.to_string(), n_sessions));
        }
    }

    pub fn insert(&mut self, model: &str, dataset: &str, cell: CellResult) {
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        self.cells.insert((model.to_string(), dataset.to_string()), cell);
    }

    pub fn get(&self, model: &str, dataset: &str) -> Option<&CellResult> {
        self.cells.get(&(model.to_string(), dataset.to_string()))
    }

    /// Plain and session-count-weighted averages over the datasets the model
    /// was evaluated on.
    pub fn averages(&self, model: &str, c: Criterion) -> Option<(f64, f64)> {
        let mut sum = 0.0;
        let mut wsum = 0.0;
        let mut count = 0usize;
        let mut weight = 0usize;
        for (d, n) in &self.datasets {
            if let Some(cell) = self.get(model, d) {
                let v = cell.scores.get(c);
                sum += v;
                wsum += v * *n as f64;
                count += 1;
                weight += n;
            }
        }
        (count > 0 && weight > 0).then(|| (sum / count as f64, wsum / weight as f64))
    }

    /// One criterion as a CSV table: models as rows, datasets then
    /// `Average` and `Weighted Average` as columns, `---` where missing.
    pub fn to_csv(&self, c: Criterion) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string()];
        header.extend(self.datasets.iter().map(|(d, _)| d.clone()));
        header.push("Average".into());
        header.push("Weighted Average".into());
        w.write_record(&header).expect("in-memory write");
        for m in &self.models {
            let mut row = vec![m.clone()];
            for (d, _) in &self.datasets {
                row.push(self.get(m, d).map_or("---".into(), |cell| format!("{}", cell.scores.get(c))));
            }
            match self.averages(m, c) {
                Some((a, wa)) => {
                    row.push(format!("{a}"));
                    row.push(format!("{wa}"));
                }
                None => {
                    row.push("---".into());
                    row.push("---".into());
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Pools each model's residuals over all datasets, in dataset order.
    pub fn pooled_residuals(&self, model: &str) -> Vec<f64> {
        self.datasets
            .iter()
            .filter_map(|(d, _)| self.get(model, d))
            .flat_map(|c| c.residuals.iter().copied())
            .collect()
    }
}

/// Significance matrix as CSV with `1` (row better), `0` (row worse) and `-`.
pub fn significance_csv(names: &[String], m: &[Vec<Significance>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (name, row) in names.iter().zip(m) {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(ToString::to_string));
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
