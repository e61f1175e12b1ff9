//! Throughput-trace replay and offline-optimal session synthesis.
//!
//! Two player models share one set of rules. The fluid player works in
//! continuous time. The quantized player rounds every download up to a whole
//! number of `buffer_quantum` ticks and keeps time and buffer as integers.
//! The optimal search and its brute-force oracle both run on the quantized
//! player, so their results can be compared bit for bit.
//!
//! Player rules:
//! * downloads are sequential and start as soon as the buffer has room for
//!   another segment (otherwise the player idles until it has);
//! * playback starts once the buffer holds `startup_threshold` seconds, or
//!   after the last download if it never does;
//! * after startup the buffer drains during downloads, and an empty buffer
//!   stalls playback until the segment arrives. That stall is charged to the
//!   arriving segment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predict::{ChunkContext, ChunkView, ChunkwiseQoe, PredictError};
use crate::scalar::Scalar;
use crate::session::{Chunk, Session, DEFAULT_QUALITY_MAX};

/// Brute-force enumeration limits.
pub const BRUTE_FORCE_MAX_SEGMENTS: usize = 8;
pub const BRUTE_FORCE_MAX_REPRESENTATIONS: usize = 4;

/// Guard against floating noise when snapping seconds to ticks.
const TICK_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trace: {0}")]
    Trace(String),
    #[error("invalid ladder: {0}")]
    Ladder(String),
    #[error("invalid player config: {0}")]
    Config(String),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace exhausted while downloading segment {segment} (at {at_s:.3} s, trace ends at {end_s:.3} s)")]
    TraceExhausted { segment: usize, at_s: f64, end_s: f64 },
    #[error("{found} choices for {expected} segments")]
    ChoiceLength { expected: usize, found: usize },
    #[error("segment {segment}: representation {index} does not exist")]
    ChoiceOutOfRange { segment: usize, index: usize },
    #[error("brute force limited to {BRUTE_FORCE_MAX_SEGMENTS} segments and {BRUTE_FORCE_MAX_REPRESENTATIONS} representations, got {segments} x {representations}")]
    TooLarge { segments: usize, representations: usize },
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Piecewise-constant throughput: sample `k` holds on `[t_k, t_{k+1})` and
/// the last one until `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTrace {
    samples: Vec<(f64, f64)>,
    end: f64,
}

impl NetworkTrace {
    pub fn new(samples: Vec<(f64, f64)>, end: f64) -> Result<Self, SynthError> {
        if samples.is_empty() {
            return Err(SynthError::Trace("no samples".into()));
        }
        for (k, &(t, bps)) in samples.iter().enumerate() {
            if !t.is_finite() {
                return Err(SynthError::Trace(format!("sample {k}: timestamp {t} not finite")));
            }
            if !(bps > 0.0) {
                return Err(SynthError::Trace(format!("sample {k}: throughput {bps} not positive")));
            }
            if k > 0 && t <= samples[k - 1].0 {
                return Err(SynthError::Trace(format!("sample {k}: timestamps not strictly increasing")));
            }
        }
        if !(end > samples[samples.len() - 1].0) {
            return Err(SynthError::Trace("end must follow the last sample".into()));
        }
        Ok(Self { samples, end })
    }

    /// Samples read from a file; the last one lasts as long as the interval
    /// before it (one second for a single sample).
    pub fn from_samples(samples: Vec<(f64, f64)>) -> Result<Self, SynthError> {
        let n = samples.len();
        let end = match n {
            0 => 0.0,
            1 => samples[0].0 + 1.0,
            _ => 2.0 * samples[n - 1].0 - samples[n - 2].0,
        };
        Self::new(samples, end)
    }

    pub fn constant(bps: f64) -> Self {
        Self::new(vec![(0.0, bps)], f64::INFINITY).expect("positive throughput")
    }

    /// Two columns per line, `timestamp_s throughput_bps`, separated by
    /// whitespace or a comma. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut samples = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let err = |message: String| SynthError::Parse { line: k + 1, message };
            if fields.len() != 2 {
                return Err(err(format!("expected 2 columns, found {}", fields.len())));
            }
            let num = |f: &str| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}")));
            samples.push((num(fields[0])?, num(fields[1])?));
        }
        Self::from_samples(samples)
    }

    pub fn start(&self) -> f64 {
        self.samples[0].0
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Seconds needed to receive `bits` starting at absolute time `t`, or
    /// `None` if the trace ends first.
    pub fn transfer_time(&self, t: f64, bits: f64) -> Option<f64> {
        if bits <= 0.0 {
            return Some(0.0);
        }
        let mut k = self.samples.partition_point(|s| s.0 <= t).saturating_sub(1);
        let mut now = t.max(self.start());
        let mut left = bits;
        loop {
            let seg_end = self.samples.get(k + 1).map_or(self.end, |s| s.0);
            if now >= seg_end {
                if k + 1 >= self.samples.len() {
                    return None;
                }
                k += 1;
                continue;
            }
            let bps = self.samples[k].1;
            let cap = bps * (seg_end - now);
            if left <= cap {
                return Some(now + left / bps - t);
            }
            left -= cap;
            now = seg_end;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub segment_bytes: Vec<f64>,
    pub quality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    pub representations: Vec<Representation>,
    pub segment_duration: f64,
}

impl BitrateLadder {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Ladder(m));
        if self.representations.is_empty() {
            return bad("no representations".into());
        }
        if !(self.segment_duration > 0.0 && self.segment_duration.is_finite()) {
            return bad(format!("segment_duration {} not positive", self.segment_duration));
        }
        let n = self.representations[0].segment_bytes.len();
        if n == 0 {
            return bad("no segments".into());
        }
        for (r, rep) in self.representations.iter().enumerate() {
            if rep.segment_bytes.len() != n || rep.quality.len() != n {
                return bad(format!("representation {r} does not have {n} segments"));
            }
            if let Some(k) = rep.segment_bytes.iter().position(|b| !(*b >= 0.0 && b.is_finite())) {
                return bad(format!("representation {r}, segment {k}: size must be finite and non-negative"));
            }
            if let Some(k) = rep.quality.iter().position(|q| !(0.0..=DEFAULT_QUALITY_MAX).contains(q)) {
                return bad(format!("representation {r}, segment {k}: quality out of [0,{DEFAULT_QUALITY_MAX}]"));
            }
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.representations.first().map_or(0, |r| r.segment_bytes.len())
    }

    pub fn n_representations(&self) -> usize {
        self.representations.len()
    }

    pub fn bits(&self, segment: usize, rep: usize) -> f64 {
        8.0 * self.representations[rep].segment_bytes[segment]
    }

    pub fn chunk<T: Scalar>(&self, segment: usize, rep: usize, stall: f64) -> Chunk<T> {
        let kbps = self.bits(segment, rep) / self.segment_duration / 1000.0;
        Chunk::new(
            T::lit(self.representations[rep].quality[segment]),
            T::lit(stall),
            T::lit(self.segment_duration),
        )
        .with_bitrate(T::lit(kbps))
    }

    fn check_choices(&self, choices: &[usize]) -> Result<(), SynthError> {
        if choices.len() != self.n_segments() {
            return Err(SynthError::ChoiceLength {
                expected: self.n_segments(),
                found: choices.len(),
            });
        }
        if let Some((segment, &index)) = choices.iter().enumerate().find(|(_, &c)| c >= self.n_representations()) {
            return Err(SynthError::ChoiceOutOfRange { segment, index });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerConfig {
    pub buffer_capacity: f64,
    pub startup_threshold: f64,
    pub buffer_quantum: f64,
}

impl Default for PlayerConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 60.0,
            startup_threshold: 2.0,
            buffer_quantum: 0.1,
        }
    }
}

impl PlayerConfig {
    /// Defaults with the startup threshold set to one segment.
    pub fn for_ladder(ladder: &BitrateLadder) -> Self {
        Self {
            startup_threshold: ladder.segment_duration,
            ..Self::default()
        }
    }

    pub fn validate(&self, ladder: &BitrateLadder) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(self.startup_threshold > 0.0) {
            return bad("startup_threshold must be positive".into());
        }
        if !(self.buffer_capacity >= self.startup_threshold) {
            return bad("buffer_capacity must be at least startup_threshold".into());
        }
        if !(self.buffer_capacity >= ladder.segment_duration) {
            return bad("buffer_capacity must hold one segment".into());
        }
        if !(self.buffer_quantum > 0.0 && self.buffer_quantum.is_finite()) {
            return bad("buffer_quantum must be positive".into());
        }
        let ratio = ladder.segment_duration / self.buffer_quantum;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return bad(format!(
                "segment_duration {} is not a multiple of buffer_quantum {}",
                ladder.segment_duration, self.buffer_quantum
            ));
        }
        Ok(())
    }
}

/// Timeline of one fluid-model replay, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackLog {
    pub download_s: Vec<f64>,
    /// Wait for buffer room before each download.
    pub idle_s: Vec<f64>,
    pub stall_s: Vec<f64>,
    pub initial_buffering_s: f64,
    /// Wall-clock time from the trace start to the end of the last download.
    pub wall_clock_s: f64,
    /// Buffer level after the last download.
    pub final_buffer_s: f64,
}

fn build_session<T: Scalar>(ladder: &BitrateLadder, choices: &[usize], stalls: &[f64], initial: f64) -> Session<T> {
    Session::new(
        choices
            .iter()
            .enumerate()
            .map(|(k, &r)| ladder.chunk(k, r, stalls[k]))
            .collect(),
    )
    .with_initial_buffering(T::lit(initial))
}

/// Replays `choices` through the fluid player.
pub fn simulate_download<T: Scalar>(
    ladder: &BitrateLadder,
    choices: &[usize],
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
) -> Result<(Session<T>, PlaybackLog), SynthError> {
    ladder.validate()?;
    cfg.validate(ladder)?;
    ladder.check_choices(choices)?;
    let seg = ladder.segment_duration;
    let t0 = trace.start();
    let (mut w, mut b) = (0.0_f64, 0.0_f64);
    let mut started = None;
    let mut log = PlaybackLog {
        download_s: Vec::new(),
        idle_s: Vec::new(),
        stall_s: Vec::new(),
        initial_buffering_s: 0.0,
        wall_clock_s: 0.0,
        final_buffer_s: 0.0,
    };
    for (k, &r) in choices.iter().enumerate() {
        if started.is_none() && b + seg > cfg.buffer_capacity {
            started = Some(w);
        }
        let idle = if started.is_some() { (b + seg - cfg.buffer_capacity).max(0.0) } else { 0.0 };
        w += idle;
        b -= idle;
        let d = trace.transfer_time(t0 + w, ladder.bits(k, r)).ok_or(SynthError::TraceExhausted {
            segment: k,
            at_s: t0 + w,
            end_s: trace.end(),
        })?;
        let stall = if started.is_some() {
            let s = (d - b).max(0.0);
            b = (b - d).max(0.0);
            s
        } else {
            0.0
        };
        w += d;
        b += seg;
        if started.is_none() && b >= cfg.startup_threshold {
            started = Some(w);
        }
        log.download_s.push(d);
        log.idle_s.push(idle);
        log.stall_s.push(stall);
    }
    log.initial_buffering_s = started.unwrap_or(w);
    log.wall_clock_s = w;
    log.final_buffer_s = b;
    let session = build_session(ladder, choices, &log.stall_s, log.initial_buffering_s);
    Ok((session, log))
}

/// Integer player state, in ticks of `buffer_quantum`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct TickState {
    clock: u64,
    buffer: u64,
    /// Playback start time once playing.
    started: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TickStep {
    idle: u64,
    download: u64,
    stall: u64,
}

#[derive(Debug, Clone, Copy)]
struct TickPlayer {
    quantum: f64,
    segment: u64,
    capacity: u64,
    startup: u64,
    t0: f64,
}

impl TickPlayer {
    fn new(ladder: &BitrateLadder, trace: &NetworkTrace, cfg: &PlayerConfig) -> Result<Self, SynthError> {
        ladder.validate()?;
        cfg.validate(ladder)?;
        let q = cfg.buffer_quantum;
        Ok(Self {
            quantum: q,
            segment: (ladder.segment_duration / q).round() as u64,
            capacity: (cfg.buffer_capacity / q + TICK_SLACK).floor() as u64,
            startup: (cfg.startup_threshold / q - TICK_SLACK).ceil().max(1.0) as u64,
            t0: trace.start(),
        })
    }

    fn seconds(&self, ticks: u64) -> f64 {
        ticks as f64 * self.quantum
    }

    fn step(&self, st: &mut TickState, bits: f64, trace: &NetworkTrace, segment: usize) -> Result<TickStep, SynthError> {
        if st.started.is_none() && st.buffer + self.segment > self.capacity {
            st.started = Some(st.clock);
        }
        let idle = if st.started.is_some() { (st.buffer + self.segment).saturating_sub(self.capacity) } else { 0 };
        st.clock += idle;
        st.buffer -= idle;
        let at = self.t0 + self.seconds(st.clock);
        let d = trace.transfer_time(at, bits).ok_or(SynthError::TraceExhausted {
            segment,
            at_s: at,
            end_s: trace.end(),
        })?;
        let download = (d / self.quantum - TICK_SLACK).ceil().max(0.0) as u64;
        let stall = if st.started.is_some() {
            let s = download.saturating_sub(st.buffer);
            st.buffer = st.buffer.saturating_sub(download);
            s
        } else {
            0
        };
        st.clock += download;
        st.buffer += self.segment;
        if st.started.is_none() && st.buffer >= self.startup {
            st.started = Some(st.clock);
        }
        Ok(TickStep { idle, download, stall })
    }
}

/// Timeline of one quantized replay, in ticks of `quantum_s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickLog {
    pub download: Vec<u64>,
    pub idle: Vec<u64>,
    pub stall: Vec<u64>,
    pub initial_buffering: u64,
    pub wall_clock: u64,
    pub final_buffer: u64,
    pub segment: u64,
}

/// Replays `choices` through the quantized player.
pub fn simulate_quantized<T: Scalar>(
    ladder: &BitrateLadder,
    choices: &[usize],
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
) -> Result<(Session<T>, TickLog), SynthError> {
    let player = TickPlayer::new(ladder, trace, cfg)?;
    ladder.check_choices(choices)?;
    let mut st = TickState {
        clock: 0,
        buffer: 0,
        started: None,
    };
    let mut log = TickLog {
        download: Vec::new(),
        idle: Vec::new(),
        stall: Vec::new(),
        initial_buffering: 0,
        wall_clock: 0,
        final_buffer: 0,
        segment: player.segment,
    };
    for (k, &r) in choices.iter().enumerate() {
        let s = player.step(&mut st, ladder.bits(k, r), trace, k)?;
        log.download.push(s.download);
        log.idle.push(s.idle);
        log.stall.push(s.stall);
    }
    log.initial_buffering = st.started.unwrap_or(st.clock);
    log.wall_clock = st.clock;
    log.final_buffer = st.buffer;
    let stalls: Vec<f64> = log.stall.iter().map(|&t| player.seconds(t)).collect();
    let session = build_session(ladder, choices, &stalls, player.seconds(log.initial_buffering));
    Ok((session, log))
}

/// A chosen representation sequence with its session and model score.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis<T> {
    pub choices: Vec<usize>,
    pub session: Session<T>,
    pub score: T,
}

/// Scores `choices` on the quantized player.
pub fn evaluate_choices<T: Scalar, Q: ChunkwiseQoe<T> + ?Sized>(
    ladder: &BitrateLadder,
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
    qoe: &Q,
    choices: &[usize],
) -> Result<Synthesis<T>, SynthError> {
    let (session, _) = simulate_quantized(ladder, choices, trace, cfg)?;
    let score = qoe.session_score(&session)?;
    Ok(Synthesis {
        choices: choices.to_vec(),
        session,
        score,
    })
}

fn better<T: Scalar>(a: (T, &[usize]), b: (T, &[usize])) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Exhaustive search over all `b^d` sequences in lexicographic order.
pub fn brute_force_optimal<T: Scalar, Q: ChunkwiseQoe<T> + ?Sized>(
    ladder: &BitrateLadder,
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
    qoe: &Q,
) -> Result<Synthesis<T>, SynthError> {
    ladder.validate()?;
    let (d, b) = (ladder.n_segments(), ladder.n_representations());
    if d > BRUTE_FORCE_MAX_SEGMENTS || b > BRUTE_FORCE_MAX_REPRESENTATIONS {
        return Err(SynthError::TooLarge {
            segments: d,
            representations: b,
        });
    }
    let mut choices = vec![0usize; d];
    let mut best: Option<Synthesis<T>> = None;
    let mut exhausted = None;
    loop {
        match evaluate_choices(ladder, trace, cfg, qoe, &choices) {
            Ok(s) => {
                if best.as_ref().is_none_or(|cur| s.score > cur.score) {
                    best = Some(s);
                }
            }
            Err(e @ SynthError::TraceExhausted { .. }) => {
                exhausted.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
        // odometer, last segment fastest
        let mut k = d;
        loop {
            if k == 0 {
                return best.ok_or_else(|| exhausted.expect("some sequence was tried"));
            }
            k -= 1;
            choices[k] += 1;
            if choices[k] < b {
                break;
            }
            choices[k] = 0;
        }
    }
}

/// Partial path in the forward search.
#[derive(Debug, Clone)]
struct Partial<T> {
    path: Vec<usize>,
    stalls: Vec<u64>,
    /// `initial term + chunk terms so far` once playback has started.
    value: T,
    /// Chunk terms accumulated before playback started.
    pending: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum StateKey {
    /// Before startup the initial-buffering term is unknown, so paths are
    /// kept apart.
    Pending(Vec<usize>),
    Playing { prev: usize, clock: u64, buffer: u64 },
}

/// Offline-optimal representation sequence for `qoe` with full knowledge of
/// the trace, by forward dynamic programming over quantized player states.
///
/// Scores are accumulated in the same order as `session_score`, and ties are
/// broken toward the lexicographically smallest sequence, so the result is
/// identical to `brute_force_optimal` on the same instance.
pub fn dp_optimal_session<T: Scalar, Q: ChunkwiseQoe<T> + ?Sized>(
    ladder: &BitrateLadder,
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
    qoe: &Q,
) -> Result<Synthesis<T>, SynthError> {
    let player = TickPlayer::new(ladder, trace, cfg)?;
    let n = ladder.n_segments();
    let n_t = T::from_usize_lossy(n);
    let mut layer: BTreeMap<StateKey, (TickState, Partial<T>)> = BTreeMap::new();
    layer.insert(
        StateKey::Pending(Vec::new()),
        (
            TickState {
                clock: 0,
                buffer: 0,
                started: None,
            },
            Partial {
                path: Vec::new(),
                stalls: Vec::new(),
                value: T::zero(),
                pending: Vec::new(),
            },
        ),
    );
    let mut exhausted = None;
    for k in 0..n {
        let mut next: BTreeMap<StateKey, (TickState, Partial<T>)> = BTreeMap::new();
        for (st, part) in layer.values() {
            for r in 0..ladder.n_representations() {
                let mut s = *st;
                let step = match player.step(&mut s, ladder.bits(k, r), trace, k) {
                    Ok(step) => step,
                    Err(e @ SynthError::TraceExhausted { .. }) => {
                        exhausted.get_or_insert(e);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let cur: Chunk<T> = ladder.chunk(k, r, player.seconds(step.stall));
                let prev = part.path.last().map(|&p| ChunkView::from(&ladder.chunk::<T>(k - 1, p, 0.0)));
                let term = qoe.chunk_term(&ChunkContext {
                    index: k,
                    n_chunks: n,
                    prev,
                    cur: ChunkView::from(&cur),
                    rebuffer: cur.rebuffering_before,
                })?;
                let mut p = part.clone();
                p.path.push(r);
                p.stalls.push(step.stall);
                let was_playing = st.started.is_some();
                // the last segment forces startup
                let start = s.started.or((k + 1 == n).then_some(s.clock));
                match (was_playing, start) {
                    (true, _) => p.value = p.value + term,
                    (false, Some(t)) => {
                        p.pending.push(term);
                        let mut v = qoe.initial_buffering_term(n, T::lit(player.seconds(t)))?;
                        for x in p.pending.drain(..) {
                            v = v + x;
                        }
                        p.value = v;
                    }
                    (false, None) => p.pending.push(term),
                }
                let key = if s.started.is_some() {
                    StateKey::Playing {
                        prev: r,
                        clock: s.clock,
                        buffer: s.buffer,
                    }
                } else {
                    StateKey::Pending(p.path.clone())
                };
                // playing states with equal keys share their future
                let keep = next.get(&key).is_none_or(|(_, old)| better((p.value, &p.path), (old.value, &old.path)));
                if keep {
                    s.started = start;
                    next.insert(key, (s, p));
                }
            }
        }
        if next.is_empty() {
            return Err(exhausted.expect("an empty layer means every branch ran out of trace"));
        }
        layer = next;
    }
    let best = layer
        .into_values()
        .map(|(_, p)| p)
        .reduce(|a, b| if better((b.value / n_t, &b.path), (a.value / n_t, &a.path)) { b } else { a })
        .expect("non-empty final layer");
    let (session, _) = simulate_quantized::<T>(ladder, &best.path, trace, cfg)?;
    let score = qoe.session_score(&session)?;
    debug_assert!(score == best.value / n_t);
    Ok(Synthesis {
        choices: best.path,
        session,
        score,
    })
}

/// Every segment at the same representation.
pub fn fixed_quality_choices(ladder: &BitrateLadder, rep: usize) -> Vec<usize> {
    vec![rep; ladder.n_segments()]
}

/// Rate matching: the highest representation whose segment bitrate does not
/// exceed the throughput measured on the previous download (the first trace
/// sample before any download).
pub fn greedy_rate_choices(
    ladder: &BitrateLadder,
    trace: &NetworkTrace,
    cfg: &PlayerConfig,
) -> Result<Vec<usize>, SynthError> {
    let player = TickPlayer::new(ladder, trace, cfg)?;
    let mut st = TickState {
        clock: 0,
        buffer: 0,
        started: None,
    };
    let mut estimate = trace.samples()[0].1;
    let mut choices = Vec::with_capacity(ladder.n_segments());
    for k in 0..ladder.n_segments() {
        let r = (0..ladder.n_representations())
            .rev()
            .find(|&r| ladder.bits(k, r) / ladder.segment_duration <= estimate)
            .unwrap_or(0);
        let bits = ladder.bits(k, r);
        let before = st.clock;
        let step = player.step(&mut st, bits, trace, k)?;
        let elapsed = player.seconds(st.clock - before - step.idle);
        if elapsed > 0.0 && bits > 0.0 {
            estimate = bits / elapsed;
        }
        choices.push(r);
    }
    Ok(choices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::PredictError;

    /// Mean quality minus two points per stall second.
    struct Simple;

    impl ChunkwiseQoe<f64> for Simple {
        fn chunk_term(&self, ctx: &ChunkContext<f64>) -> Result<f64, PredictError> {
            Ok(ctx.cur.quality - 2.0 * ctx.rebuffer * ctx.n_chunks as f64)
        }
        fn initial_buffering_term(&self, n: usize, s: f64) -> Result<f64, PredictError> {
            Ok(-0.5 * s * n as f64)
        }
    }

    fn ladder(bytes: &[f64], quality: &[f64], n: usize) -> BitrateLadder {
        BitrateLadder {
            representations: bytes
                .iter()
                .zip(quality)
                .map(|(&b, &q)| Representation {
                    segment_bytes: vec![b; n],
                    quality: vec![q; n],
                })
                .collect(),
            segment_duration: 2.0,
        }
    }

    #[test]
    fn infinite_throughput_never_stalls() {
        let l = ladder(&[1e5, 1e6], &[40.0, 80.0], 5);
        let trace = NetworkTrace::constant(f64::INFINITY);
        let (s, log) = simulate_download::<f64>(&l, &[1, 0, 1, 1, 0], &trace, &PlayerConfig::default()).unwrap();
        assert!(s.chunks.iter().all(|c| c.rebuffering_before == 0.0));
        assert_eq!(log.initial_buffering_s, 0.0);
    }

    #[test]
    fn one_megabit_at_one_megabit_per_second() {
        let l = BitrateLadder {
            representations: vec![Representation {
                segment_bytes: vec![125_000.0],
                quality: vec![70.0],
            }],
            segment_duration: 1.0,
        };
        let cfg = PlayerConfig {
            startup_threshold: 1.0,
            ..PlayerConfig::default()
        };
        let (s, _) = simulate_download::<f64>(&l, &[0], &NetworkTrace::constant(1e6), &cfg).unwrap();
        assert_eq!(s.initial_buffering, 1.0);
        let (s, log) = simulate_quantized::<f64>(&l, &[0], &NetworkTrace::constant(1e6), &cfg).unwrap();
        assert_eq!(s.initial_buffering, 1.0);
        assert_eq!(log.initial_buffering, 10);
    }

    #[test]
    fn matched_bitrate_reaches_steady_state() {
        // 2 s segments of 500 kB at 2 Mbit/s: each download takes exactly 2 s
        let l = ladder(&[500_000.0], &[60.0], 10);
        let (s, log) = simulate_download::<f64>(&l, &[0; 10], &NetworkTrace::constant(2e6), &PlayerConfig::default()).unwrap();
        assert_eq!(log.initial_buffering_s, 2.0);
        assert!(s.chunks.iter().all(|c| c.rebuffering_before == 0.0));
        assert!(log.download_s.iter().all(|&d| d == 2.0));
    }

    #[test]
    fn trace_exhaustion_is_reported() {
        let l = ladder(&[1e6], &[60.0], 3);
        let trace = NetworkTrace::new(vec![(0.0, 1e6)], 5.0).unwrap();
        assert!(matches!(
            simulate_download::<f64>(&l, &[0, 0, 0], &trace, &PlayerConfig::default()),
            Err(SynthError::TraceExhausted { segment: 0, .. })
        ));
    }

    #[test]
    fn transfer_spans_samples() {
        let trace = NetworkTrace::new(vec![(0.0, 1e6), (1.0, 2e6), (2.0, 4e6)], 10.0).unwrap();
        // 1 Mbit in the first second, 2 in the next, 1 more at 4 Mbit/s
        assert_eq!(trace.transfer_time(0.0, 4e6), Some(2.25));
        assert_eq!(trace.transfer_time(1.5, 1e6), Some(0.5));
        assert_eq!(trace.transfer_time(9.0, 1e8), None);
    }

    #[test]
    fn parse_trace_file() {
        let t = NetworkTrace::parse("# t bps\n0 1000000\n1.0, 2000000\n\n2 500000\n").unwrap();
        assert_eq!(t.samples().len(), 3);
        assert_eq!(t.end(), 3.0);
        assert!(matches!(NetworkTrace::parse("0 1 2"), Err(SynthError::Parse { line: 1, .. })));
        assert!(NetworkTrace::parse("0 1\n0 2").is_err());
    }

    #[test]
    fn dominance_picks_top_under_infinite_throughput() {
        let l = ladder(&[1e5, 1e6], &[40.0, 80.0], 2);
        let r = dp_optimal_session(&l, &NetworkTrace::constant(f64::INFINITY), &PlayerConfig::default(), &Simple).unwrap();
        assert_eq!(r.choices, vec![1, 1]);
    }

    #[test]
    fn identical_representations_choose_lowest() {
        let l = ladder(&[1e5, 1e5, 1e5], &[50.0, 50.0, 50.0], 3);
        let trace = NetworkTrace::constant(1e6);
        let cfg = PlayerConfig::default();
        assert_eq!(dp_optimal_session(&l, &trace, &cfg, &Simple).unwrap().choices, vec![0, 0, 0]);
        assert_eq!(brute_force_optimal(&l, &trace, &cfg, &Simple).unwrap().choices, vec![0, 0, 0]);
    }

    #[test]
    fn brute_force_guard() {
        let l = ladder(&[1e5; 5], &[50.0; 5], 2);
        assert!(matches!(
            brute_force_optimal(&l, &NetworkTrace::constant(1e6), &PlayerConfig::default(), &Simple),
            Err(SynthError::TooLarge { .. })
        ));
    }

    #[test]
    fn quantum_must_divide_segment() {
        let l = ladder(&[1e5], &[50.0], 2);
        let cfg = PlayerConfig {
            buffer_quantum: 0.3,
            ..PlayerConfig::default()
        };
        assert!(matches!(cfg.validate(&l), Err(SynthError::Config(_))));
    }
}
