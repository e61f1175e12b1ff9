//! Synthetic training data drawn from a known feasible model.
//!
//! The reference surfaces are
//!
//! * `S*(p, tau) = -3 (1 + p/P) tau^0.7` (concave in `tau`, so superadditive
//!   as a penalty, and steeper after better quality);
//! * `A*(p, dp) = (0.3 - 0.1 p/P) dp` for upswitches and
//!   `(0.4 + 0.2 p/P) dp` for downswitches.
//!
//! Both satisfy every constraint family. Ratings are the model's own
//! prediction plus optional Gaussian noise, so a noiseless coverage set is
//! reproduced exactly by the binned training design.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::{GridKind, GridSpec, QoEGrid};
use crate::model::{KsqiModel, ModelError, Provenance};
use crate::predict::{ChunkwiseQoe, PredictError, PredictOptions, Predictor};
use crate::scalar::Scalar;
use crate::session::{Chunk, Session};
use crate::train::TrainingSet;

pub fn reference_rebuffering<T: Scalar>(p: T, tau: T, quality_max: T) -> T {
    -T::lit(3.0) * (T::one() + p / quality_max) * tau.powf(T::lit(0.7))
}

pub fn reference_adaptation<T: Scalar>(p: T, dp: T, quality_max: T) -> T {
    let u = p / quality_max;
    if dp >= T::zero() {
        (T::lit(0.3) - T::lit(0.1) * u) * dp
    } else {
        (T::lit(0.4) + T::lit(0.2) * u) * dp
    }
}

/// The reference surfaces sampled on `spec`.
pub fn reference_model<T: Scalar>(spec: GridSpec<T>, first_chunk_adaptation: bool) -> Result<KsqiModel<T>, ModelError> {
    let pm = spec.quality_max;
    let s = QoEGrid::from_physical(GridKind::Rebuffering, spec, |p, t| reference_rebuffering(p, t, pm));
    let a = QoEGrid::from_physical(GridKind::Adaptation, spec, |p, dp| reference_adaptation(p, dp, pm));
    KsqiModel::new(
        s,
        a,
        T::zero(),
        Provenance {
            dataset: Some("synthetic-reference".into()),
            first_chunk_adaptation,
            ..Provenance::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    /// Sessions per grid cell in the coverage set.
    pub hits_per_cell: usize,
    pub chunks_per_session: usize,
    pub chunk_duration: f64,
    /// Standard deviation of the additive rating noise on the `[0, P]` scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            hits_per_cell: 1,
            chunks_per_session: 4,
            chunk_duration: 2.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

struct Rater<'a, T> {
    predictor: Predictor<'a, T>,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Rater<'_, T> {
    fn rate(&mut self, s: Session<T>) -> Result<Session<T>, PredictError> {
        let clean = self.predictor.session_score(&s)?;
        let e = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        Ok(s.with_mos(clean + T::lit(e)))
    }
}

fn rater<'a, T: Scalar>(truth: &'a KsqiModel<T>, cfg: &SyntheticConfig, stream: u64) -> Rater<'a, T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    Rater {
        predictor: Predictor::with_options(truth, PredictOptions::for_model(truth)),
        noise: (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma")),
        rng,
    }
}

/// Sessions that hit every non-anchored cell of both grids
/// `hits_per_cell` times, with all qualities and stalls on grid nodes.
///
/// Rebuffering sessions hold one quality and stall once before chunk 2;
/// adaptation sessions switch once halfway through.
pub fn coverage_training_set<T: Scalar>(
    truth: &KsqiModel<T>,
    cfg: &SyntheticConfig,
) -> Result<TrainingSet<T>, PredictError> {
    let spec = *truth.spec();
    let c = cfg.chunks_per_session.max(2);
    let d = T::lit(cfg.chunk_duration);
    let mut r = rater(truth, cfg, 1);
    let mut rebuffer = Vec::new();
    let mut adaptation = Vec::new();
    for _ in 0..cfg.hits_per_cell {
        for i in 0..spec.side() {
            let p = spec.quality_at(i);
            for j in 1..spec.side() {
                let mut stalls = vec![T::zero(); c];
                stalls[1] = spec.rebuffer_at(j);
                rebuffer.push(r.rate(Session::from_series(&vec![p; c], &stalls, d))?);
            }
            for j in (0..spec.side()).filter(|&j| j != i) {
                let q: Vec<T> = (0..c).map(|k| if k < c / 2 { p } else { spec.quality_at(j) }).collect();
                adaptation.push(r.rate(Session::from_series(&q, &vec![T::zero(); c], d))?);
            }
        }
    }
    Ok(TrainingSet {
        rebuffer_sessions: rebuffer,
        adaptation_sessions: adaptation,
        mos_rescaling: Vec::new(),
        source: Some("synthetic-coverage".into()),
    })
}

/// Random sessions with continuous qualities, occasional switches and
/// stalls, rated by the truth model. Used as held-out data.
pub fn random_sessions<T: Scalar>(
    truth: &KsqiModel<T>,
    n: usize,
    cfg: &SyntheticConfig,
    stream: u64,
) -> Result<Vec<Session<T>>, PredictError> {
    let spec = *truth.spec();
    let pm = spec.quality_max.as_f64();
    let tmax = spec.rebuffer_max.as_f64();
    let mut r = rater(truth, cfg, 2 + stream);
    let mut gen = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    gen.set_stream(stream);
    let c = cfg.chunks_per_session.max(2);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut q = gen.gen_range(0.0..=pm);
        let mut chunks = Vec::with_capacity(c);
        for k in 0..c {
            if k > 0 && gen.gen_bool(0.3) {
                q = gen.gen_range(0.0..=pm);
            }
            let stall = if k > 0 && gen.gen_bool(0.2) { gen.gen_range(0.0..tmax) } else { 0.0 };
            chunks.push(Chunk::new(T::lit(q), T::lit(stall), T::lit(cfg.chunk_duration)));
        }
        out.push(r.rate(Session::new(chunks))?);
    }
    Ok(out)
}

/// Random sessions of one impairment kind, for partitioned training sets
/// whose events fall between grid nodes.
pub fn random_training_set<T: Scalar>(
    truth: &KsqiModel<T>,
    n_per_partition: usize,
    cfg: &SyntheticConfig,
) -> Result<TrainingSet<T>, PredictError> {
    let spec = *truth.spec();
    let pm = spec.quality_max.as_f64();
    let tmax = spec.rebuffer_max.as_f64();
    let mut r = rater(truth, cfg, 7);
    let mut gen = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11);
    let c = cfg.chunks_per_session.max(2);
    let d = T::lit(cfg.chunk_duration);
    let mut rebuffer = Vec::with_capacity(n_per_partition);
    let mut adaptation = Vec::with_capacity(n_per_partition);
    for _ in 0..n_per_partition {
        let p = T::lit(gen.gen_range(0.0..=pm));
        let mut stalls = vec![T::zero(); c];
        stalls[gen.gen_range(1..c)] = T::lit(gen.gen_range(0.05..tmax));
        rebuffer.push(r.rate(Session::from_series(&vec![p; c], &stalls, d))?);

        let from = gen.gen_range(0.0..=pm);
        let to = gen.gen_range(0.0..=pm);
        let at = gen.gen_range(1..c);
        let q: Vec<T> = (0..c).map(|k| T::lit(if k < at { from } else { to })).collect();
        adaptation.push(r.rate(Session::from_series(&q, &vec![T::zero(); c], d))?);
    }
    Ok(TrainingSet {
        rebuffer_sessions: rebuffer,
        adaptation_sessions: adaptation,
        mos_rescaling: Vec::new(),
        source: Some("synthetic-random".into()),
    })
}
