//! Parametric reference QoE models with least-squares fitted coefficients.
//!
//! Every model has the shape
//!
//! ```text
//! score = intercept + presentation + rebuffering + switching
//! ```
//!
//! where each term is one regressor times one coefficient, except the
//! exponential rebuffering term `alpha * exp(-beta * tau_total)`, whose
//! offset `gamma` is the intercept. Switching magnitudes are measured in the
//! same feature as the presentation term (bitrate, QP or quality), or in
//! quality when the model has no presentation term.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{least_squares, LeastSquares};
use crate::predict::{ChunkContext, ChunkView, ChunkwiseQoe, PredictError};
use crate::scalar::Scalar;
use crate::session::{session_features, Dataset, FeatureSummary, Session, DEFAULT_QUALITY_MAX};

pub const REGISTRY_FORMAT: &str = "ksqi-baselines";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{model}: chunk {chunk} has no {field}")]
    MissingFeature {
        model: String,
        chunk: usize,
        field: &'static str,
    },
    #[error("{model}: chunk {chunk} has non-positive bitrate, logarithm undefined")]
    NonPositiveBitrate { model: String, chunk: usize },
    #[error("{model}: design matrix is rank deficient in column(s) {}", columns.join(", "))]
    RankDeficient { model: String, columns: Vec<String> },
    #[error("session {0} has no MOS")]
    Unlabeled(usize),
    #[error("no training sessions")]
    Empty,
    #[error("{model} needs {expected} coefficients, got {found}")]
    Arity {
        model: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown baseline '{0}'")]
    Unknown(String),
    #[error("malformed registry: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresentationTerm {
    None,
    LinearBitrate,
    LogBitrate,
    LinearQp,
    LinearVqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RebufferTerm {
    Linear,
    /// `alpha * exp(-beta * tau_total)`, offset by the intercept.
    Exponential,
    /// `ln(1 + tau_total)`.
    Logarithmic,
    /// Each stall weighted by the quality just before it, on a unit scale.
    VqaInformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchingTerm {
    None,
    Linear,
    /// `ln(1 + total switch magnitude)`.
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub name: String,
    pub presentation: PresentationTerm,
    pub rebuffer: RebufferTerm,
    pub switching: SwitchingTerm,
}

impl BaselineSpec {
    pub fn new(
        name: impl Into<String>,
        presentation: PresentationTerm,
        rebuffer: RebufferTerm,
        switching: SwitchingTerm,
    ) -> Self {
        Self {
            name: name.into(),
            presentation,
            rebuffer,
            switching,
        }
    }

    /// Coefficient names in storage order.
    pub fn coefficient_names(&self) -> Vec<&'static str> {
        let mut v = vec!["intercept"];
        if self.presentation != PresentationTerm::None {
            v.push("presentation");
        }
        v.push("rebuffer");
        if self.rebuffer == RebufferTerm::Exponential {
            v.push("rebuffer_rate");
        }
        if self.switching != SwitchingTerm::None {
            v.push("switching");
        }
        v
    }

    pub fn arity(&self) -> usize {
        self.coefficient_names().len()
    }

    /// Whether the session score is a sum of per-chunk terms.
    pub fn is_chunkwise(&self) -> bool {
        matches!(self.rebuffer, RebufferTerm::Linear | RebufferTerm::VqaInformed)
            && self.switching != SwitchingTerm::Logarithmic
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:?}, {:?}, {:?})", self.name, self.presentation, self.rebuffer, self.switching)
    }
}

/// The reference model forms, by name.
pub fn registry() -> Vec<BaselineSpec> {
    use PresentationTerm as P;
    use RebufferTerm as R;
    use SwitchingTerm as W;
    vec![
        BaselineSpec::new("FTW", P::None, R::Exponential, W::None),
        BaselineSpec::new("Mok2011", P::None, R::Linear, W::Linear),
        BaselineSpec::new("Liu2012", P::LinearBitrate, R::Linear, W::Linear),
        BaselineSpec::new("Xue2014", P::LinearQp, R::Linear, W::None),
        BaselineSpec::new("Yin2015", P::LinearBitrate, R::Linear, W::Linear),
        BaselineSpec::new("Spiteri2016", P::LogBitrate, R::Linear, W::Linear),
        BaselineSpec::new("Bentaleb2016", P::LinearVqa, R::Linear, W::Linear),
        BaselineSpec::new("SQI", P::LinearVqa, R::VqaInformed, W::None),
    ]
}

pub fn spec_by_name(name: &str) -> Result<BaselineSpec, BaselineError> {
    registry()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| BaselineError::Unknown(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitReport<T> {
    pub n_sessions: usize,
    pub mse: T,
    /// MSE of the all-zero model on the same targets.
    pub zero_model_mse: T,
    pub max_abs_residual: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FittedBaseline<T> {
    pub spec: BaselineSpec,
    pub coefficients: Vec<(String, T)>,
    pub fit_report: Option<FitReport<T>>,
}

impl<T: Scalar> FittedBaseline<T> {
    /// Coefficients given in `spec.coefficient_names()` order.
    pub fn with_coefficients(spec: BaselineSpec, values: &[T]) -> Result<Self, BaselineError> {
        let names = spec.coefficient_names();
        if names.len() != values.len() {
            return Err(BaselineError::Arity {
                model: spec.name.clone(),
                expected: names.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            coefficients: names.iter().map(|n| n.to_string()).zip(values.iter().copied()).collect(),
            spec,
            fit_report: None,
        })
    }

    pub fn coefficient(&self, name: &str) -> T {
        self.coefficients
            .iter()
            .find(|(n, _)| n == name)
            .map_or(T::zero(), |&(_, v)| v)
    }

    fn check_arity(&self) -> Result<(), BaselineError> {
        let names = self.spec.coefficient_names();
        if names.len() != self.coefficients.len() || names.iter().zip(&self.coefficients).any(|(a, (b, _))| a != b) {
            return Err(BaselineError::Arity {
                model: self.spec.name.clone(),
                expected: names.len(),
                found: self.coefficients.len(),
            });
        }
        Ok(())
    }
}

/// Value of each additive term of a baseline score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValues<T> {
    pub intercept: T,
    pub presentation: T,
    pub rebuffer: T,
    pub switching: T,
}

impl<T: Scalar> TermValues<T> {
    pub fn total(&self) -> T {
        self.intercept + self.presentation + self.rebuffer + self.switching
    }
}

/// Session-level regressors of one spec, before coefficients are applied.
#[derive(Debug, Clone, Copy)]
struct Regressors<T> {
    presentation: T,
    /// Total stall seconds for the exponential form, otherwise the regressor.
    rebuffer: T,
    switching: T,
}

fn presentation_feature<T: Scalar>(spec: &BaselineSpec, c: &ChunkView<T>, chunk: usize) -> Result<T, BaselineError> {
    let missing = |field| BaselineError::MissingFeature {
        model: spec.name.clone(),
        chunk,
        field,
    };
    match spec.presentation {
        PresentationTerm::None | PresentationTerm::LinearVqa => Ok(c.quality),
        PresentationTerm::LinearBitrate => c.bitrate_kbps.ok_or_else(|| missing("bitrate_kbps")),
        PresentationTerm::LogBitrate => {
            let b = c.bitrate_kbps.ok_or_else(|| missing("bitrate_kbps"))?;
            if b <= T::zero() {
                return Err(BaselineError::NonPositiveBitrate {
                    model: spec.name.clone(),
                    chunk,
                });
            }
            Ok(b.ln())
        }
        PresentationTerm::LinearQp => c.qp.ok_or_else(|| missing("qp")),
    }
}

fn stall_weight<T: Scalar>(spec: &BaselineSpec, prev: Option<&ChunkView<T>>, cur: &ChunkView<T>) -> T {
    match spec.rebuffer {
        RebufferTerm::VqaInformed => prev.unwrap_or(cur).quality / T::lit(DEFAULT_QUALITY_MAX),
        _ => T::one(),
    }
}

fn regressors<T: Scalar>(
    spec: &BaselineSpec,
    s: &Session<T>,
    features: &FeatureSummary<T>,
) -> Result<Regressors<T>, BaselineError> {
    let quality_based = matches!(spec.presentation, PresentationTerm::None | PresentationTerm::LinearVqa);
    let (mean_x, switch_sum) = if quality_based {
        (features.mean_quality, features.total_switch_magnitude)
    } else {
        let views: Vec<ChunkView<T>> = s.chunks.iter().map(ChunkView::from).collect();
        let x = views
            .iter()
            .enumerate()
            .map(|(k, v)| presentation_feature(spec, v, k))
            .collect::<Result<Vec<T>, _>>()?;
        let mean = x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len().max(1));
        (mean, x.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
    };
    let tau = features.total_rebuffer_seconds;
    let rebuffer = match spec.rebuffer {
        RebufferTerm::Linear | RebufferTerm::Exponential => tau,
        RebufferTerm::Logarithmic => tau.ln_1p(),
        RebufferTerm::VqaInformed => {
            let views: Vec<ChunkView<T>> = s.chunks.iter().map(ChunkView::from).collect();
            s.chunks
                .iter()
                .enumerate()
                .map(|(k, c)| stall_weight(spec, k.checked_sub(1).map(|p| &views[p]), &views[k]) * c.rebuffering_before)
                .sum()
        }
    };
    let switching = match spec.switching {
        SwitchingTerm::None => T::zero(),
        SwitchingTerm::Linear => switch_sum,
        SwitchingTerm::Logarithmic => switch_sum.ln_1p(),
    };
    Ok(Regressors {
        presentation: if spec.presentation == PresentationTerm::None { T::zero() } else { mean_x },
        rebuffer,
        switching,
    })
}

/// Per-term decomposition of a baseline score.
pub fn baseline_terms<T: Scalar>(
    f: &FittedBaseline<T>,
    s: &Session<T>,
    features: &FeatureSummary<T>,
) -> Result<TermValues<T>, BaselineError> {
    f.check_arity()?;
    let r = regressors(&f.spec, s, features)?;
    let rebuffer = match f.spec.rebuffer {
        RebufferTerm::Exponential => f.coefficient("rebuffer") * (-f.coefficient("rebuffer_rate") * r.rebuffer).exp(),
        _ => f.coefficient("rebuffer") * r.rebuffer,
    };
    Ok(TermValues {
        intercept: f.coefficient("intercept"),
        presentation: f.coefficient("presentation") * r.presentation,
        rebuffer,
        switching: f.coefficient("switching") * r.switching,
    })
}

pub fn predict_baseline<T: Scalar>(
    f: &FittedBaseline<T>,
    s: &Session<T>,
    features: &FeatureSummary<T>,
) -> Result<T, BaselineError> {
    Ok(baseline_terms(f, s, features)?.total())
}

/// Quality-informed stall model with its default coefficients: mean quality
/// minus one point per second of stall at full quality.
pub fn sqi_default<T: Scalar>() -> FittedBaseline<T> {
    FittedBaseline::with_coefficients(spec_by_name("SQI").expect("SQI registered"), &[T::zero(), T::one(), -T::one()])
        .expect("arity")
}

pub fn sqi_baseline<T: Scalar>(s: &Session<T>) -> Result<T, BaselineError> {
    predict_baseline(&sqi_default(), s, &session_features(s))
}

/// Starting decay rates for the exponential form are drawn log-uniformly
/// from this range.
const RATE_RANGE: (f64, f64) = (1e-3, 10.0);
const RATE_STARTS: usize = 16;

/// Fits `spec` to labeled sessions by least squares on the MOS.
///
/// Linear-in-parameter forms are solved directly; the exponential form is
/// reduced to a one-dimensional search over the decay rate (the remaining
/// coefficients are linear given the rate) from seeded starting points.
pub fn fit_baseline<T: Scalar>(
    spec: &BaselineSpec,
    sessions: &[Session<T>],
    seed: u64,
) -> Result<FittedBaseline<T>, BaselineError> {
    if sessions.is_empty() {
        return Err(BaselineError::Empty);
    }
    let mut y = Vec::with_capacity(sessions.len());
    let mut regs = Vec::with_capacity(sessions.len());
    for (k, s) in sessions.iter().enumerate() {
        y.push(s.mos.ok_or(BaselineError::Unlabeled(k))?);
        regs.push(regressors(spec, s, &session_features(s))?);
    }
    let names = spec.coefficient_names();
    let coefs = match spec.rebuffer {
        RebufferTerm::Exponential => fit_exponential(spec, &regs, &y, seed)?,
        _ => solve_linear(spec, &regs, &y, None)?,
    };
    let mut fitted = FittedBaseline {
        spec: spec.clone(),
        coefficients: names.iter().map(|n| n.to_string()).zip(coefs).collect(),
        fit_report: None,
    };
    let pred = sessions
        .iter()
        .map(|s| predict_baseline(&fitted, s, &session_features(s)))
        .collect::<Result<Vec<T>, _>>()?;
    let m = T::from_usize_lossy(y.len());
    fitted.fit_report = Some(FitReport {
        n_sessions: y.len(),
        mse: pred.iter().zip(&y).map(|(p, t)| (*p - *t).powi(2)).sum::<T>() / m,
        zero_model_mse: y.iter().map(|t| t.powi(2)).sum::<T>() / m,
        max_abs_residual: pred.iter().zip(&y).fold(T::zero(), |a, (p, t)| a.max((*p - *t).abs())),
    });
    Ok(fitted)
}

pub fn fit_baseline_dataset<T: Scalar>(
    spec: &BaselineSpec,
    ds: &Dataset<T>,
    seed: u64,
) -> Result<FittedBaseline<T>, BaselineError> {
    fit_baseline(spec, &ds.sessions, seed)
}

/// Design columns in coefficient order; the exponential column uses `rate`.
fn design<T: Scalar>(spec: &BaselineSpec, regs: &[Regressors<T>], rate: Option<T>) -> Vec<(&'static str, Vec<T>)> {
    let mut cols = vec![("intercept", vec![T::one(); regs.len()])];
    if spec.presentation != PresentationTerm::None {
        cols.push(("presentation", regs.iter().map(|r| r.presentation).collect()));
    }
    cols.push((
        "rebuffer",
        match rate {
            Some(b) => regs.iter().map(|r| (-b * r.rebuffer).exp()).collect(),
            None => regs.iter().map(|r| r.rebuffer).collect(),
        },
    ));
    if spec.switching != SwitchingTerm::None {
        cols.push(("switching", regs.iter().map(|r| r.switching).collect()));
    }
    cols
}

fn solve_linear<T: Scalar>(
    spec: &BaselineSpec,
    regs: &[Regressors<T>],
    y: &[T],
    rate: Option<T>,
) -> Result<Vec<T>, BaselineError> {
    let cols = design(spec, regs, rate);
    let columns: Vec<Vec<T>> = cols.iter().map(|(_, c)| c.clone()).collect();
    match least_squares(&columns, y, T::epsilon().sqrt()) {
        LeastSquares::Solved(mut b) => {
            if let Some(rate) = rate {
                let at = spec.coefficient_names().iter().position(|n| *n == "rebuffer_rate").expect("rate slot");
                b.insert(at, rate);
            }
            Ok(b)
        }
        LeastSquares::RankDeficient(bad) => Err(BaselineError::RankDeficient {
            model: spec.name.clone(),
            columns: bad.into_iter().map(|k| cols[k].0.to_string()).collect(),
        }),
    }
}

fn fit_exponential<T: Scalar>(
    spec: &BaselineSpec,
    regs: &[Regressors<T>],
    y: &[T],
    seed: u64,
) -> Result<Vec<T>, BaselineError> {
    let sse = |log_rate: f64| -> Option<(f64, Vec<T>)> {
        let b = solve_linear(spec, regs, y, Some(T::lit(log_rate.exp()))).ok()?;
        let f = FittedBaseline {
            spec: spec.clone(),
            coefficients: spec.coefficient_names().iter().map(|n| n.to_string()).zip(b.iter().copied()).collect(),
            fit_report: None,
        };
        let mut e = 0.0;
        for (r, t) in regs.iter().zip(y) {
            let v = f.coefficient("intercept")
                + f.coefficient("presentation") * r.presentation
                + f.coefficient("rebuffer") * (-f.coefficient("rebuffer_rate") * r.rebuffer).exp()
                + f.coefficient("switching") * r.switching;
            e += (v - *t).as_f64().powi(2);
        }
        e.is_finite().then_some((e, b))
    };

    let (lo, hi) = (RATE_RANGE.0.ln(), RATE_RANGE.1.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<T>)> = None;
    for _ in 0..RATE_STARTS {
        let start = rng.gen_range(lo..=hi);
        let width = (hi - lo) / RATE_STARTS as f64;
        if let Some(cand) = golden_section(&sse, (start - width).max(lo), (start + width).min(hi)) {
            if best.as_ref().is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        }
    }
    match best {
        Some((_, b)) => Ok(b),
        // every rate gave a dependent design: report it at a mid-range rate
        None => solve_linear(spec, regs, y, Some(T::lit((0.5 * (lo + hi)).exp()))),
    }
}

fn golden_section<T, F>(f: &F, mut a: f64, mut b: f64) -> Option<(f64, Vec<T>)>
where
    F: Fn(f64) -> Option<(f64, Vec<T>)>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let val = |x: f64| f(x).map_or(f64::INFINITY, |v| v.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (val(c), val(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = val(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = val(d);
        }
    }
    [a, b, 0.5 * (a + b)]
        .into_iter()
        .filter_map(f)
        .min_by(|x, y| x.0.total_cmp(&y.0))
}

impl<T: Scalar> ChunkwiseQoe<T> for FittedBaseline<T> {
    fn chunk_term(&self, ctx: &ChunkContext<T>) -> Result<T, PredictError> {
        if !self.spec.is_chunkwise() {
            return Err(PredictError::NotChunkwise(self.spec.name.clone()));
        }
        let feature = |v: &ChunkView<T>, k| {
            presentation_feature(&self.spec, v, k).map_err(|e| match e {
                BaselineError::MissingFeature { chunk, field, .. } => PredictError::MissingFeature { chunk, field },
                other => PredictError::NotChunkwise(other.to_string()),
            })
        };
        let n = T::from_usize_lossy(ctx.n_chunks);
        let x = feature(&ctx.cur, ctx.index)?;
        let mut q = self.coefficient("intercept");
        if self.spec.presentation != PresentationTerm::None {
            q = q + self.coefficient("presentation") * x;
        }
        q = q + self.coefficient("rebuffer") * stall_weight(&self.spec, ctx.prev.as_ref(), &ctx.cur) * ctx.rebuffer * n;
        if let (SwitchingTerm::Linear, Some(prev)) = (self.spec.switching, ctx.prev.as_ref()) {
            let xp = feature(prev, ctx.index - 1)?;
            q = q + self.coefficient("switching") * (x - xp).abs() * n;
        }
        Ok(q)
    }

    fn initial_buffering_term(&self, _n_chunks: usize, _seconds: T) -> Result<T, PredictError> {
        Ok(T::zero())
    }
}

/// Stored set of fitted baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BaselineRegistry<T> {
    pub format: String,
    pub models: Vec<FittedBaseline<T>>,
}

impl<T: Scalar> BaselineRegistry<T> {
    pub fn new(models: Vec<FittedBaseline<T>>) -> Self {
        Self {
            format: REGISTRY_FORMAT.to_string(),
            models,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        let r: Self = serde_json::from_str(text).map_err(|e| BaselineError::Registry(e.to_string()))?;
        if r.format != REGISTRY_FORMAT {
            return Err(BaselineError::Registry(format!("format '{}'", r.format)));
        }
        for m in &r.models {
            m.check_arity()?;
        }
        Ok(r)
    }
}
