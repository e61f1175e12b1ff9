//! Per-chunk and per-session QoE prediction with a trained model.
//!
//! `Q_t = P_t + S(P_{t-1}, tau_t) + A(P_{t-1}, P_t)`, averaged over chunks.
//! Before the first chunk the viewer's expectation is a reference quality of
//! 80% of the scale; initial buffering is charged against it at one ninth of a
//! mid-session stall.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, QoEGrid};
use crate::model::KsqiModel;
use crate::scalar::Scalar;
use crate::session::{validate_session_with_max, Chunk, Session, SessionError};

/// Reference quality before playback, as a fraction of the quality scale.
pub const REFERENCE_QUALITY_FRACTION: f64 = 0.8;
/// Initial buffering counts this many times less than a mid-session stall.
pub const INITIAL_BUFFERING_DISCOUNT: f64 = 9.0;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Domain(#[from] GridError),
    #[error("chunk index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("chunk {chunk}: {field} is required by this model")]
    MissingFeature { chunk: usize, field: &'static str },
    #[error("model '{0}' is not a sum of per-chunk terms")]
    NotChunkwise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Charge `A(P_ref, P_1)` on the first chunk.
    pub first_chunk_adaptation: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            first_chunk_adaptation: true,
        }
    }
}

impl PredictOptions {
    /// The convention the model was trained under.
    pub fn for_model<T: Scalar>(m: &KsqiModel<T>) -> Self {
        Self {
            first_chunk_adaptation: m.provenance().first_chunk_adaptation,
        }
    }
}

/// Rebuffering QoE `S(p, tau)`.
///
/// Bilinear inside the grid; beyond `tau_max` the last two stall columns are
/// extended linearly.
pub fn rebuffering_penalty<T: Scalar>(m: &KsqiModel<T>, p: T, tau: T) -> Result<T, PredictError> {
    interpolate_rebuffering(m.s_grid(), p, tau)
}

pub(crate) fn interpolate_rebuffering<T: Scalar>(g: &QoEGrid<T>, p: T, tau: T) -> Result<T, PredictError> {
    let spec = &g.spec;
    check_quality(spec.quality_max, "p", p)?;
    if !(tau >= T::zero()) || !tau.is_finite() {
        return Err(GridError::OutOfDomain {
            what: "tau",
            value: tau.as_f64(),
            domain: "[0, inf)".into(),
        }
        .into());
    }
    let nf = T::from_usize_lossy(spec.n_steps);
    let u = p * nf / spec.quality_max;
    let v = tau * nf / spec.rebuffer_max;
    if v <= nf {
        return Ok(bilinear(g, u, v));
    }
    let last = bilinear(g, u, nf);
    let before = bilinear(g, u, nf - T::one());
    Ok(last + (v - nf) * (last - before))
}

/// Adaptation QoE `A(p_prev, p_cur - p_prev)`.
///
/// Interpolates on the (from, to) index square, split into triangles along
/// the main diagonal so that `A(p, p) = 0` exactly and the surface stays
/// monotone in the destination quality.
pub fn adaptation_delta<T: Scalar>(m: &KsqiModel<T>, p_prev: T, p_cur: T) -> Result<T, PredictError> {
    interpolate_adaptation(m.a_grid(), p_prev, p_cur)
}

pub(crate) fn interpolate_adaptation<T: Scalar>(g: &QoEGrid<T>, p_prev: T, p_cur: T) -> Result<T, PredictError> {
    let spec = &g.spec;
    check_quality(spec.quality_max, "p_prev", p_prev)?;
    check_quality(spec.quality_max, "p_cur", p_cur)?;
    if p_prev == p_cur {
        return Ok(T::zero());
    }
    let nf = T::from_usize_lossy(spec.n_steps);
    let (i0, fu) = split(p_prev * nf / spec.quality_max, spec.n_steps);
    let (j0, fv) = split(p_cur * nf / spec.quality_max, spec.n_steps);
    let one = T::one();
    let a00 = g.get(i0, j0);
    let a11 = g.get(i0 + 1, j0 + 1);
    Ok(if fu >= fv {
        (one - fu) * a00 + (fu - fv) * g.get(i0 + 1, j0) + fv * a11
    } else {
        (one - fv) * a00 + (fv - fu) * g.get(i0, j0 + 1) + fu * a11
    })
}

fn check_quality<T: Scalar>(max: T, what: &'static str, p: T) -> Result<(), GridError> {
    if p >= T::zero() && p <= max {
        Ok(())
    } else {
        Err(GridError::OutOfDomain {
            what,
            value: p.as_f64(),
            domain: format!("[0, {max}]"),
        })
    }
}

/// Cell index and fractional offset of a coordinate in `[0, n]`.
fn split<T: Scalar>(x: T, n: usize) -> (usize, T) {
    let i = x.floor().to_usize().unwrap_or(0).min(n - 1);
    (i, x - T::from_usize_lossy(i))
}

fn bilinear<T: Scalar>(g: &QoEGrid<T>, u: T, v: T) -> T {
    let n = g.spec.n_steps;
    let (i, fu) = split(u, n);
    let (j, fv) = split(v, n);
    let one = T::one();
    (one - fu) * ((one - fv) * g.get(i, j) + fv * g.get(i, j + 1))
        + fu * ((one - fv) * g.get(i + 1, j) + fv * g.get(i + 1, j + 1))
}

/// Features of one chunk visible to a per-chunk QoE term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkView<T> {
    pub quality: T,
    pub bitrate_kbps: Option<T>,
    pub qp: Option<T>,
}

impl<T: Scalar> From<&Chunk<T>> for ChunkView<T> {
    fn from(c: &Chunk<T>) -> Self {
        Self {
            quality: c.presentation_quality,
            bitrate_kbps: c.bitrate_kbps,
            qp: c.qp,
        }
    }
}

/// Everything a per-chunk term may depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkContext<T> {
    /// 0-based position in the session.
    pub index: usize,
    pub n_chunks: usize,
    pub prev: Option<ChunkView<T>>,
    pub cur: ChunkView<T>,
    /// Stall immediately before this chunk.
    pub rebuffer: T,
}

/// A QoE model whose session score is `(initial term + sum of chunk terms) / T`.
///
/// The offline-optimal search relies on this shape to accumulate scores
/// segment by segment.
pub trait ChunkwiseQoe<T: Scalar> {
    fn chunk_term(&self, ctx: &ChunkContext<T>) -> Result<T, PredictError>;

    fn initial_buffering_term(&self, n_chunks: usize, seconds: T) -> Result<T, PredictError>;

    fn session_score(&self, s: &Session<T>) -> Result<T, PredictError> {
        let n = s.chunks.len();
        let mut total = self.initial_buffering_term(n, s.initial_buffering)?;
        for t in 0..n {
            total = total + self.chunk_term(&context(s, t))?;
        }
        Ok(total / T::from_usize_lossy(n.max(1)))
    }
}

pub fn context<T: Scalar>(s: &Session<T>, t: usize) -> ChunkContext<T> {
    ChunkContext {
        index: t,
        n_chunks: s.chunks.len(),
        prev: t.checked_sub(1).map(|p| (&s.chunks[p]).into()),
        cur: (&s.chunks[t]).into(),
        rebuffer: s.chunks[t].rebuffering_before,
    }
}

/// A model paired with the prediction convention to apply.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a, T> {
    pub model: &'a KsqiModel<T>,
    pub options: PredictOptions,
}

impl<'a, T: Scalar> Predictor<'a, T> {
    pub fn new(model: &'a KsqiModel<T>) -> Self {
        Self {
            model,
            options: PredictOptions::for_model(model),
        }
    }

    pub fn with_options(model: &'a KsqiModel<T>, options: PredictOptions) -> Self {
        Self { model, options }
    }

    fn reference(&self) -> T {
        self.model.spec().quality_max * T::lit(REFERENCE_QUALITY_FRACTION)
    }
}

impl<T: Scalar> ChunkwiseQoe<T> for Predictor<'_, T> {
    fn chunk_term(&self, ctx: &ChunkContext<T>) -> Result<T, PredictError> {
        let p = ctx.cur.quality;
        let prev = ctx.prev.map_or(self.reference(), |c| c.quality);
        let s = rebuffering_penalty(self.model, prev, ctx.rebuffer)?;
        let a = if ctx.prev.is_some() || self.options.first_chunk_adaptation {
            adaptation_delta(self.model, prev, p)?
        } else {
            T::zero()
        };
        Ok(p + s + a)
    }

    fn initial_buffering_term(&self, _n_chunks: usize, seconds: T) -> Result<T, PredictError> {
        Ok(rebuffering_penalty(self.model, self.reference(), seconds)? / T::lit(INITIAL_BUFFERING_DISCOUNT))
    }
}

/// `Q_t` for the 1-based chunk `t`.
pub fn chunk_qoe<T: Scalar>(
    m: &KsqiModel<T>,
    s: &Session<T>,
    t: usize,
    options: PredictOptions,
) -> Result<T, PredictError> {
    if t == 0 || t > s.chunks.len() {
        return Err(PredictError::IndexOutOfRange {
            index: t,
            len: s.chunks.len(),
        });
    }
    let pr = Predictor::with_options(m, options);
    let mut q = pr.chunk_term(&context(s, t - 1))?;
    if t == 1 {
        q = q + pr.initial_buffering_term(s.chunks.len(), s.initial_buffering)?;
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PredictionTrace<T> {
    pub per_chunk_q: Vec<T>,
    pub cumulative: Vec<T>,
    pub final_score: T,
}

impl<T: Scalar> PredictionTrace<T> {
    /// Running mean `Y_t = ((t - 1) Y_{t-1} + Q_t) / t`.
    pub fn from_chunks(per_chunk_q: Vec<T>) -> Self {
        let mut cumulative = Vec::with_capacity(per_chunk_q.len());
        let mut y = T::zero();
        for (k, &q) in per_chunk_q.iter().enumerate() {
            let t = T::from_usize_lossy(k + 1);
            y = if k == 0 { q } else { ((t - T::one()) * y + q) / t };
            cumulative.push(y);
        }
        Self {
            final_score: cumulative.last().copied().unwrap_or(T::zero()),
            per_chunk_q,
            cumulative,
        }
    }
}

pub fn session_qoe<T: Scalar>(
    m: &KsqiModel<T>,
    s: &Session<T>,
    options: PredictOptions,
) -> Result<PredictionTrace<T>, PredictError> {
    let v = validate_session_with_max(s, m.spec().quality_max);
    if !v.is_empty() {
        return Err(SessionError::Invalid(v).into());
    }
    let q = (1..=s.chunks.len())
        .map(|t| chunk_qoe(m, s, t, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionTrace::from_chunks(q))
}

/// Output document for one predicted session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PredictionDocument<T> {
    pub model_sha256: String,
    pub first_chunk_adaptation: bool,
    #[serde(flatten)]
    pub trace: PredictionTrace<T>,
}

impl<T: Scalar> PredictionDocument<T> {
    pub fn new(m: &KsqiModel<T>, options: PredictOptions, trace: PredictionTrace<T>) -> Self {
        Self {
            model_sha256: m.content_hash(),
            first_chunk_adaptation: options.first_chunk_adaptation,
            trace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridKind, GridSpec};
    use crate::model::Provenance;

    fn model() -> KsqiModel<f64> {
        let spec = GridSpec::default();
        let s = QoEGrid::from_physical(GridKind::Rebuffering, spec, |p, t| -t * (1.0 + p / 100.0));
        let a = QoEGrid::from_physical(GridKind::Adaptation, spec, |p, dp| {
            if dp > 0.0 {
                (0.3 - 0.1 * p / 100.0) * dp
            } else {
                (0.4 + 0.2 * p / 100.0) * dp
            }
        });
        KsqiModel::new(s, a, 1.0, Provenance::default()).unwrap()
    }

    #[test]
    fn node_reproduction() {
        let m = model();
        assert_eq!(rebuffering_penalty(&m, 80.0, 4.0).unwrap(), m.s_grid().get(8, 4));
        assert_eq!(rebuffering_penalty(&m, 35.0, 0.0).unwrap(), 0.0);
        assert_eq!(adaptation_delta(&m, 80.0, 60.0).unwrap(), m.a_grid().get(8, 6));
        assert_eq!(adaptation_delta(&m, 50.0, 50.0).unwrap(), 0.0);
        assert_eq!(adaptation_delta(&m, 37.3, 37.3).unwrap(), 0.0);
    }

    #[test]
    fn extrapolates_past_tau_max() {
        let spec = GridSpec::default();
        let mut s = QoEGrid::zeros(GridKind::Rebuffering, spec);
        for i in 0..11 {
            for j in 1..11 {
                s.set(i, j, -(j as f64) * 0.7);
            }
            s.set(i, 9, -6.0);
            s.set(i, 10, -7.0);
        }
        let m = KsqiModel::new(s, QoEGrid::zeros(GridKind::Adaptation, spec), 1.0, Provenance {
            constraints: vec![],
            ..Provenance::default()
        })
        .unwrap();
        assert!((rebuffering_penalty(&m, 55.0, 12.0).unwrap() + 9.0).abs() < 1e-12);
    }

    #[test]
    fn adaptation_spot_monotonicity() {
        let m = model();
        let a = adaptation_delta(&m, 80.0, 40.0).unwrap();
        let b = adaptation_delta(&m, 80.0, 60.0).unwrap();
        assert!(a <= b && b <= 0.0);
        assert!(adaptation_delta(&m, 101.0, 50.0).is_err());
    }

    #[test]
    fn chunk_and_session_examples() {
        let m = model();
        let opts = PredictOptions::default();
        let flat = Session::from_series(&[80.0; 5], &[0.0; 5], 2.0);
        let tr = session_qoe(&m, &flat, opts).unwrap();
        assert!(tr.per_chunk_q.iter().all(|&q| q == 80.0));

        let stall = Session::from_series(&[80.0, 80.0, 80.0], &[0.0, 4.0, 0.0], 2.0);
        assert_eq!(chunk_qoe(&m, &stall, 2, opts).unwrap(), 80.0 + rebuffering_penalty(&m, 80.0, 4.0).unwrap());

        let ib = Session::from_series(&[60.0, 60.0], &[0.0, 0.0], 2.0).with_initial_buffering(9.0);
        let q1 = chunk_qoe(&m, &ib, 1, opts).unwrap();
        let expect = 60.0 + rebuffering_penalty(&m, 80.0, 9.0).unwrap() / 9.0 + adaptation_delta(&m, 80.0, 60.0).unwrap();
        assert!((q1 - expect).abs() < 1e-12);
        let off = PredictOptions { first_chunk_adaptation: false };
        let q1_off = chunk_qoe(&m, &ib, 1, off).unwrap();
        assert!((q1_off - (60.0 + rebuffering_penalty(&m, 80.0, 9.0).unwrap() / 9.0)).abs() < 1e-12);
        assert!(matches!(chunk_qoe(&m, &ib, 3, opts), Err(PredictError::IndexOutOfRange { .. })));
    }

    #[test]
    fn moving_average() {
        let tr = PredictionTrace::from_chunks(vec![80.0, 60.0]);
        assert_eq!(tr.cumulative, vec![80.0, 70.0]);
        assert_eq!(tr.final_score, 70.0);
    }

    #[test]
    fn trait_score_matches_trace() {
        let m = model();
        let s = Session::from_series(&[40.0, 70.0, 70.0, 20.0], &[1.0, 0.0, 3.5, 0.0], 2.0).with_initial_buffering(2.0);
        let tr = session_qoe(&m, &s, PredictOptions::default()).unwrap();
        let via_trait = Predictor::new(&m).session_score(&s).unwrap();
        assert!((tr.final_score - via_trait).abs() < 1e-12);
    }
}
