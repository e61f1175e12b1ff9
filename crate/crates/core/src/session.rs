//! Streaming session records, their on-disk JSON format, and feature summaries.
//!
//! A session is an ordered list of chunks. Each chunk carries its presentation
//! quality (an externally computed perceptual score on the `[0, P]` scale), the
//! stall that happened immediately before it started playing, and its duration.
//! Stalls therefore sit *between* chunk `t-1` and chunk `t`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Upper end of the presentation-quality scale used when none is given.
pub const DEFAULT_QUALITY_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid session: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("dataset '{name}': session {index}: {source}")]
    InDataset {
        name: String,
        index: usize,
        #[source]
        source: Box<SessionError>,
    },
    #[error("dataset '{0}': degenerate or inverted mos_scale")]
    BadScale(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl SessionError {
    fn from_json(e: serde_json::Error) -> Self {
        SessionError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// One playback chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Chunk<T> {
    #[serde(rename = "quality")]
    pub presentation_quality: T,
    #[serde(rename = "rebuffer_s", default = "zero")]
    pub rebuffering_before: T,
    #[serde(rename = "duration_s")]
    pub duration: T,
    /// Encoded bitrate, needed only by bitrate-driven baseline models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitrate_kbps: Option<T>,
    /// Quantization parameter, needed only by QP-driven baseline models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<T>,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> Chunk<T> {
    pub fn new(presentation_quality: T, rebuffering_before: T, duration: T) -> Self {
        Self {
            presentation_quality,
            rebuffering_before,
            duration,
            bitrate_kbps: None,
            qp: None,
        }
    }

    pub fn with_bitrate(mut self, kbps: T) -> Self {
        self.bitrate_kbps = Some(kbps);
        self
    }

    pub fn with_qp(mut self, qp: T) -> Self {
        self.qp = Some(qp);
        self
    }
}

/// One streaming session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Session<T> {
    #[serde(rename = "initial_buffering_s", default = "zero")]
    pub initial_buffering: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos: Option<T>,
    pub chunks: Vec<Chunk<T>>,
}

impl<T: Scalar> Session<T> {
    pub fn new(chunks: Vec<Chunk<T>>) -> Self {
        Self {
            initial_buffering: T::zero(),
            mos: None,
            chunks,
        }
    }

    /// Session with constant chunk duration built from quality and stall lists.
    pub fn from_series(qualities: &[T], stalls: &[T], duration: T) -> Self {
        assert_eq!(qualities.len(), stalls.len());
        Self::new(
            qualities
                .iter()
                .zip(stalls)
                .map(|(&q, &s)| Chunk::new(q, s, duration))
                .collect(),
        )
    }

    pub fn with_mos(mut self, mos: T) -> Self {
        self.mos = Some(mos);
        self
    }

    pub fn with_initial_buffering(mut self, seconds: T) -> Self {
        self.initial_buffering = seconds;
        self
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn qualities(&self) -> impl Iterator<Item = T> + '_ {
        self.chunks.iter().map(|c| c.presentation_quality)
    }
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    /// 1-based chunk number, `None` for session-level fields.
    pub chunk: Option<usize>,
    pub bound: String,
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.chunk {
            Some(c) => write!(f, "chunk {c}: {} {} (got {})", self.field, self.bound, self.value),
            None => write!(f, "{} {} (got {})", self.field, self.bound, self.value),
        }
    }
}

/// Checks every session invariant on the default `[0, 100]` quality scale.
pub fn validate_session<T: Scalar>(s: &Session<T>) -> Vec<Violation> {
    validate_session_with_max(s, T::lit(DEFAULT_QUALITY_MAX))
}

/// Checks every session invariant; violations come back in chunk order.
pub fn validate_session_with_max<T: Scalar>(s: &Session<T>, quality_max: T) -> Vec<Violation> {
    let mut out = Vec::new();
    let max_label = fmt_bound(quality_max);
    if !(s.initial_buffering >= T::zero()) {
        out.push(Violation {
            field: "initial_buffering",
            chunk: None,
            bound: ">= 0".into(),
            value: s.initial_buffering.as_f64(),
        });
    }
    if s.chunks.is_empty() {
        out.push(Violation {
            field: "chunks",
            chunk: None,
            bound: "non-empty".into(),
            value: 0.0,
        });
    }
    if let Some(m) = s.mos {
        if !m.is_finite() {
            out.push(Violation {
                field: "mos",
                chunk: None,
                bound: "finite".into(),
                value: m.as_f64(),
            });
        }
    }
    for (k, c) in s.chunks.iter().enumerate() {
        let idx = Some(k + 1);
        let q = c.presentation_quality;
        if !(q >= T::zero() && q <= quality_max) {
            out.push(Violation {
                field: "presentation_quality",
                chunk: idx,
                bound: format!("out of [0,{max_label}]"),
                value: q.as_f64(),
            });
        }
        if !(c.rebuffering_before >= T::zero()) {
            out.push(Violation {
                field: "rebuffering_before",
                chunk: idx,
                bound: ">= 0".into(),
                value: c.rebuffering_before.as_f64(),
            });
        }
        if !(c.duration > T::zero()) {
            out.push(Violation {
                field: "duration",
                chunk: idx,
                bound: "> 0".into(),
                value: c.duration.as_f64(),
            });
        }
    }
    out
}

fn fmt_bound<T: Scalar>(v: T) -> String {
    let f = v.as_f64();
    if f.fract() == 0.0 {
        format!("{}", f as i64)
    } else {
        format!("{f}")
    }
}

/// Parses one session document and validates it.
pub fn parse_session_log<T: Scalar>(text: &str) -> Result<Session<T>, SessionError> {
    let s: Session<T> = serde_json::from_str(text).map_err(SessionError::from_json)?;
    let v = validate_session(&s);
    if v.is_empty() {
        Ok(s)
    } else {
        Err(SessionError::Invalid(v))
    }
}

pub fn serialize_session<T: Scalar>(s: &Session<T>) -> String {
    serde_json::to_string_pretty(s).expect("session serializes")
}

/// Aggregate session statistics used by the parametric baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureSummary<T> {
    pub mean_quality: T,
    /// Sum of mid-session stalls; initial buffering is not included.
    pub total_rebuffer_seconds: T,
    pub rebuffer_count: usize,
    pub total_switch_magnitude: T,
    pub session_seconds: T,
}

pub fn session_features<T: Scalar>(s: &Session<T>) -> FeatureSummary<T> {
    let n = s.chunks.len();
    let mean_quality = if n == 0 {
        T::zero()
    } else {
        s.qualities().sum::<T>() / T::from_usize_lossy(n)
    };
    let total_rebuffer_seconds = s.chunks.iter().map(|c| c.rebuffering_before).sum();
    let rebuffer_count = s
        .chunks
        .iter()
        .filter(|c| c.rebuffering_before > T::zero())
        .count();
    let total_switch_magnitude = s
        .chunks
        .windows(2)
        .map(|w| (w[1].presentation_quality - w[0].presentation_quality).abs())
        .sum();
    let session_seconds = s.chunks.iter().map(|c| c.duration).sum();
    FeatureSummary {
        mean_quality,
        total_rebuffer_seconds,
        rebuffer_count,
        total_switch_magnitude,
        session_seconds,
    }
}

/// A named collection of sessions rated on a common MOS scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub name: String,
    pub mos_scale: (T, T),
    pub sessions: Vec<Session<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, mos_scale: (T, T), sessions: Vec<Session<T>>) -> Self {
        Self {
            name: name.into(),
            mos_scale,
            sessions,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(self.mos_scale.1 > self.mos_scale.0) {
            return Err(SessionError::BadScale(self.name.clone()));
        }
        for (i, s) in self.sessions.iter().enumerate() {
            let v = validate_session(s);
            if !v.is_empty() {
                return Err(SessionError::InDataset {
                    name: self.name.clone(),
                    index: i,
                    source: Box::new(SessionError::Invalid(v)),
                });
            }
        }
        Ok(())
    }

    pub fn mos_values(&self) -> Option<Vec<T>> {
        self.sessions.iter().map(|s| s.mos).collect()
    }
}

pub fn parse_dataset<T: Scalar>(text: &str) -> Result<Dataset<T>, SessionError> {
    let ds: Dataset<T> = serde_json::from_str(text).map_err(SessionError::from_json)?;
    ds.validate()?;
    Ok(ds)
}

pub fn serialize_dataset<T: Scalar>(ds: &Dataset<T>) -> String {
    serde_json::to_string_pretty(ds).expect("dataset serializes")
}

pub fn read_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn read_session<T: Scalar>(path: &Path) -> Result<Session<T>, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_session_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_chunk_log() {
        let s: Session<f64> = parse_session_log(
            r#"{"initial_buffering_s": 0, "chunks": [
                {"quality": 80, "duration_s": 2},
                {"quality": 80, "rebuffer_s": 0, "duration_s": 2}]}"#,
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.initial_buffering, 0.0);
        assert_eq!(s.mos, None);
        assert!(s.qualities().all(|q| q == 80.0));
    }

    #[test]
    fn rejects_quality_above_scale() {
        let err = parse_session_log::<f64>(
            r#"{"initial_buffering_s": 0, "chunks": [{"quality": 130, "duration_s": 2}]}"#,
        )
        .unwrap_err();
        match err {
            SessionError::Invalid(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].field, "presentation_quality");
                assert_eq!(v[0].bound, "out of [0,100]");
                assert!(err_string(&v).contains("presentation_quality out of [0,100]"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    fn err_string(v: &[Violation]) -> String {
        join_violations(v)
    }

    #[test]
    fn malformed_document_reports_location() {
        let err = parse_session_log::<f64>("{\n \"chunks\": [ {\"quality\": 1, }]\n}").unwrap_err();
        match err {
            SessionError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let missing = parse_session_log::<f64>(r#"{"chunks": [{"quality": 1}]}"#).unwrap_err();
        assert!(missing.to_string().contains("duration_s"), "{missing}");
    }

    #[test]
    fn long_log_with_single_stall() {
        let chunks: Vec<String> = (1..=300)
            .map(|c| {
                let stall = if c == 151 { 4.0 } else { 0.0 };
                format!(r#"{{"quality": 70, "rebuffer_s": {stall}, "duration_s": 2}}"#)
            })
            .collect();
        let doc = format!(r#"{{"initial_buffering_s": 1.5, "chunks": [{}]}}"#, chunks.join(","));
        let s: Session<f64> = parse_session_log(&doc).unwrap();
        let expected: f64 = s.chunks.iter().map(|c| c.rebuffering_before).sum();
        let f = session_features(&s);
        assert_eq!(f.total_rebuffer_seconds, expected);
        assert_eq!(f.total_rebuffer_seconds, 4.0);
        assert_eq!(f.rebuffer_count, 1);
        assert_eq!(s.chunks[150].rebuffering_before, 4.0);
    }

    #[test]
    fn validate_reports_duration_at_chunk_three() {
        let mut s = Session::from_series(&[50.0, 50.0, 50.0, 50.0], &[0.0; 4], 2.0);
        assert!(validate_session(&s).is_empty());
        s.chunks[2].duration = 0.0;
        let v = validate_session(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].chunk, Some(3));
        assert_eq!(v[0].bound, "> 0");
    }

    #[test]
    fn two_violations_in_chunk_order() {
        let mut s = Session::from_series(&[50.0, 50.0, 50.0, 50.0], &[0.0; 4], 2.0);
        s.chunks[3].presentation_quality = -1.0;
        s.chunks[1].rebuffering_before = -0.5;
        let v = validate_session(&s);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].chunk, Some(2));
        assert_eq!(v[0].field, "rebuffering_before");
        assert_eq!(v[1].chunk, Some(4));
    }

    #[test]
    fn features_by_hand() {
        let s = Session::from_series(&[70.0; 4], &[0.0; 4], 2.0);
        let f = session_features(&s);
        assert_eq!(f.mean_quality, 70.0);
        assert_eq!(f.total_switch_magnitude, 0.0);
        assert_eq!(f.rebuffer_count, 0);
        assert_eq!(f.session_seconds, 8.0);

        let s = Session::from_series(&[60.0, 80.0, 60.0], &[0.0; 3], 2.0);
        assert_eq!(session_features(&s).total_switch_magnitude, 40.0);

        let s = Session::from_series(&[50.0; 4], &[0.0, 2.0, 0.0, 3.0], 2.0);
        let f = session_features(&s);
        assert_eq!(f.rebuffer_count, 2);
        assert_eq!(f.total_rebuffer_seconds, 5.0);
    }

    #[test]
    fn dataset_rejects_bad_scale() {
        let ds: Dataset<f64> = Dataset::new("x", (5.0, 1.0), vec![]);
        assert!(matches!(ds.validate(), Err(SessionError::BadScale(_))));
    }

    fn arb_chunk() -> impl Strategy<Value = Chunk<f64>> {
        (0.0..=100.0f64, prop_oneof![Just(0.0), 0.0..20.0f64], 0.1..10.0f64, proptest::option::of(100.0..8000.0f64))
            .prop_map(|(q, r, d, b)| Chunk {
                presentation_quality: q,
                rebuffering_before: r,
                duration: d,
                bitrate_kbps: b,
                qp: None,
            })
    }

    fn arb_session() -> impl Strategy<Value = Session<f64>> {
        (
            proptest::collection::vec(arb_chunk(), 1..40),
            0.0..10.0f64,
            proptest::option::of(1.0..5.0f64),
        )
            .prop_map(|(chunks, ib, mos)| Session {
                initial_buffering: ib,
                mos,
                chunks,
            })
    }

    proptest! {
        #[test]
        fn round_trip(s in arb_session()) {
            let back: Session<f64> = parse_session_log(&serialize_session(&s)).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn reversal_keeps_switch_and_mean(s in arb_session()) {
            let mut r = s.clone();
            r.chunks.reverse();
            let (a, b) = (session_features(&s), session_features(&r));
            prop_assert!((a.total_switch_magnitude - b.total_switch_magnitude).abs() <= 1e-9 * (1.0 + a.total_switch_magnitude));
            prop_assert!((a.mean_quality - b.mean_quality).abs() <= 1e-9);
        }

        #[test]
        fn validation_exact_on_invariants(
            s in arb_session(),
            corrupt in proptest::option::of((0usize..40, 0u8..3)),
        ) {
            let mut s = s;
            let mut expect_invalid = false;
            if let Some((k, what)) = corrupt {
                let k = k % s.chunks.len();
                match what {
                    0 => s.chunks[k].presentation_quality = 100.5,
                    1 => s.chunks[k].rebuffering_before = -0.1,
                    _ => s.chunks[k].duration = 0.0,
                }
                expect_invalid = true;
            }
            prop_assert_eq!(validate_session(&s).is_empty(), !expect_invalid);
        }
    }
}
