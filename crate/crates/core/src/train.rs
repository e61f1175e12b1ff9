//! Fitting the rebuffering and adaptation grids.
//!
//! Each grid minimizes `eps_F + lambda * eps_S` over its constraint set, where
//!
//! * `eps_F = ||W x - y||^2 / M` is the mean squared error of the per-session
//!   QoE deficit `y_m = Q_m - mean(P)` explained by the binned events, each
//!   event weighted by `1 / C_m` (chunk count of its session);
//! * `eps_S = ||D x||^2 / (N + 1)^2` sums squared second differences along
//!   both grid axes.
//!
//! Written as a QP: `P = 2 (W^T W / M + lambda D^T D / (N+1)^2)`,
//! `q = -2 W^T y / M`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::{
    all_adaptation, all_rebuffering, build_constraints, ConstraintError, ConstraintSet,
};
use crate::grid::{bin_index, GridError, GridKind, GridSpec, QoEGrid};
use crate::linalg::SparseMatrix;
use crate::metrics::{rescale_mos, MetricError};
use crate::model::{KsqiModel, ModelError, MosRescaling, Provenance, SolveSummary};
use crate::predict::{interpolate_adaptation, ChunkwiseQoe, PredictError, Predictor, REFERENCE_QUALITY_FRACTION};
use crate::qp::{solve_qp_with, QpError, QpProblem, QpSettings, SolveStatus};
use crate::scalar::{norm_inf, Scalar};
use crate::session::{session_features, validate_session_with_max, Dataset, Session};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{partition} session {index}: {reason}")]
    Partition {
        partition: &'static str,
        index: usize,
        reason: String,
    },
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("{partition} partition has {n} sessions in a split, need at least 2")]
    TooFewSessions { partition: &'static str, n: usize },
    #[error("split fraction must lie in (0, 1)")]
    BadSplit,
    #[error("no lambda candidates given")]
    NoCandidates,
    #[error("lambda must be finite and non-negative")]
    BadLambda,
    #[error("{kind:?} solve ended with {:?} (primal {primal:e}, dual {dual:e}, {iterations} iterations)", .status)]
    NotOptimal {
        kind: GridKind,
        status: SolveStatus,
        primal: f64,
        dual: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Sessions split by the kind of impairment they carry. MOS values must
/// already be on the `[0, P]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    /// Stalls only: no quality changes between chunks.
    pub rebuffer_sessions: Vec<Session<T>>,
    /// Quality changes only: no stalls and no initial buffering.
    pub adaptation_sessions: Vec<Session<T>>,
    pub mos_rescaling: Vec<MosRescaling>,
    pub source: Option<String>,
}

/// Which partition an input session went to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartitionSummary {
    pub rebuffer: usize,
    pub adaptation: usize,
    /// `(dataset, index)` of sessions that carry both stalls and switches.
    pub skipped: Vec<(String, usize)>,
}

fn has_switches<T: Scalar>(s: &Session<T>) -> bool {
    session_features(s).total_switch_magnitude > T::zero()
}

fn has_stalls<T: Scalar>(s: &Session<T>) -> bool {
    session_features(s).total_rebuffer_seconds > T::zero() || s.initial_buffering > T::zero()
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(rebuffer_sessions: Vec<Session<T>>, adaptation_sessions: Vec<Session<T>>) -> Result<Self, TrainError> {
        let ts = Self {
            rebuffer_sessions,
            adaptation_sessions,
            mos_rescaling: Vec::new(),
            source: None,
        };
        ts.validate(T::lit(crate::session::DEFAULT_QUALITY_MAX))?;
        Ok(ts)
    }

    pub fn validate(&self, quality_max: T) -> Result<(), TrainError> {
        let check = |partition: &'static str, sessions: &[Session<T>], bad: &dyn Fn(&Session<T>) -> Option<String>| {
            for (index, s) in sessions.iter().enumerate() {
                let v = validate_session_with_max(s, quality_max);
                let reason = if !v.is_empty() {
                    Some(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
                } else if s.mos.is_none() {
                    Some("missing mos".into())
                } else {
                    bad(s)
                };
                if let Some(reason) = reason {
                    return Err(TrainError::Partition {
                        partition,
                        index,
                        reason,
                    });
                }
            }
            Ok(())
        };
        check("rebuffering", &self.rebuffer_sessions, &|s| {
            has_switches(s).then(|| "has quality adaptation".to_string())
        })?;
        check("adaptation", &self.adaptation_sessions, &|s| {
            has_stalls(s).then(|| "has rebuffering or initial buffering".to_string())
        })?;
        Ok(())
    }

    /// Rescales every dataset's MOS onto `[0, P]` and sorts sessions into the
    /// two partitions. Sessions with both stalls and switches are skipped.
    pub fn from_datasets(datasets: &[Dataset<T>], quality_max: T) -> Result<(Self, PartitionSummary), TrainError> {
        let mut ts = Self {
            rebuffer_sessions: Vec::new(),
            adaptation_sessions: Vec::new(),
            mos_rescaling: Vec::new(),
            source: Some(datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("+")),
        };
        let mut summary = PartitionSummary::default();
        for ds in datasets {
            let scaled = rescale_mos(ds, (T::zero(), quality_max))?;
            ts.mos_rescaling.push(MosRescaling {
                dataset: ds.name.clone(),
                from: (ds.mos_scale.0.as_f64(), ds.mos_scale.1.as_f64()),
                to: (0.0, quality_max.as_f64()),
            });
            for (i, s) in scaled.sessions.into_iter().enumerate() {
                match (has_switches(&s), has_stalls(&s)) {
                    (false, _) => {
                        ts.rebuffer_sessions.push(s);
                        summary.rebuffer += 1;
                    }
                    (true, false) => {
                        ts.adaptation_sessions.push(s);
                        summary.adaptation += 1;
                    }
                    (true, true) => summary.skipped.push((ds.name.clone(), i)),
                }
            }
        }
        ts.validate(quality_max)?;
        Ok((ts, summary))
    }
}

/// The linear map inside `eps_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityDesign<T> {
    pub weight_matrix: SparseMatrix<T>,
    pub target_vector: Vec<T>,
}

impl<T: Scalar> FidelityDesign<T> {
    pub fn n_sessions(&self) -> usize {
        self.target_vector.len()
    }

    /// `||W x - y||^2 / M`.
    pub fn fidelity(&self, x: &[T]) -> T {
        let wx = self.weight_matrix.mul_vec(x);
        let m = T::from_usize_lossy(self.n_sessions().max(1));
        wx.iter()
            .zip(&self.target_vector)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            / m
    }
}

fn reference<T: Scalar>(spec: &GridSpec<T>) -> T {
    spec.quality_max * T::lit(REFERENCE_QUALITY_FRACTION)
}

fn mean_quality<T: Scalar>(s: &Session<T>) -> T {
    session_features(s).mean_quality
}

/// One row per session; a stall before chunk `c` lands on
/// `bin_index(P_{c-1}, tau_c)`, with the reference quality before chunk 1.
///
/// `offsets[m]` is subtracted from the target and holds QoE contributions
/// that are already known (for instance a fitted first-chunk adaptation term).
pub fn rebuffering_design<T: Scalar>(
    sessions: &[Session<T>],
    spec: &GridSpec<T>,
    offsets: Option<&[T]>,
) -> Result<FidelityDesign<T>, TrainError> {
    let mut trips = Vec::new();
    let mut y = Vec::with_capacity(sessions.len());
    for (m, s) in sessions.iter().enumerate() {
        let c = T::from_usize_lossy(s.chunks.len());
        for (k, ch) in s.chunks.iter().enumerate() {
            if ch.rebuffering_before > T::zero() {
                let prev = if k == 0 { reference(spec) } else { s.chunks[k - 1].presentation_quality };
                let (i, j) = bin_index(spec, prev, ch.rebuffering_before, GridKind::Rebuffering)?;
                trips.push((m, spec.index(i, j), T::one() / c));
            }
        }
        let off = offsets.map_or(T::zero(), |o| o[m]);
        y.push(s.mos.expect("validated") - mean_quality(s) - off);
    }
    Ok(FidelityDesign {
        weight_matrix: SparseMatrix::from_triplets(sessions.len(), spec.len(), &trips),
        target_vector: y,
    })
}

/// One row per session; a switch into chunk `c` lands on
/// `bin_index(P_{c-1}, P_c - P_{c-1})`. With `first_chunk`, chunk 1 is
/// treated as a switch from the reference quality.
pub fn adaptation_design<T: Scalar>(
    sessions: &[Session<T>],
    spec: &GridSpec<T>,
    first_chunk: bool,
) -> Result<FidelityDesign<T>, TrainError> {
    let mut trips = Vec::new();
    let mut y = Vec::with_capacity(sessions.len());
    for (m, s) in sessions.iter().enumerate() {
        let c = T::from_usize_lossy(s.chunks.len());
        for (k, ch) in s.chunks.iter().enumerate() {
            let prev = match k {
                0 if first_chunk => reference(spec),
                0 => continue,
                _ => s.chunks[k - 1].presentation_quality,
            };
            let cur = ch.presentation_quality;
            if cur != prev {
                let (i, j) = bin_index(spec, prev, cur - prev, GridKind::Adaptation)?;
                trips.push((m, spec.index(i, j), T::one() / c));
            }
        }
        y.push(s.mos.expect("validated") - mean_quality(s));
    }
    Ok(FidelityDesign {
        weight_matrix: SparseMatrix::from_triplets(sessions.len(), spec.len(), &trips),
        target_vector: y,
    })
}

/// Second differences along both axes at interior points:
/// `2 (N - 1)(N + 1)` rows.
pub fn second_difference_operator<T: Scalar>(spec: &GridSpec<T>) -> Result<SparseMatrix<T>, GridError> {
    spec.validate()?;
    let n = spec.n_steps;
    let side = spec.side();
    let (one, two) = (T::one(), T::lit(2.0));
    let mut trips = Vec::new();
    let mut r = 0;
    for i in 1..n {
        for j in 0..side {
            trips.push((r, spec.index(i - 1, j), one));
            trips.push((r, spec.index(i, j), -two));
            trips.push((r, spec.index(i + 1, j), one));
            r += 1;
        }
    }
    for i in 0..side {
        for j in 1..n {
            trips.push((r, spec.index(i, j - 1), one));
            trips.push((r, spec.index(i, j), -two));
            trips.push((r, spec.index(i, j + 1), one));
            r += 1;
        }
    }
    Ok(SparseMatrix::from_triplets(r, spec.len(), &trips))
}

/// `||D x||^2 / (N + 1)^2`.
pub fn smoothness<T: Scalar>(d: &SparseMatrix<T>, spec: &GridSpec<T>, x: &[T]) -> T {
    let dx = d.mul_vec(x);
    let side = T::from_usize_lossy(spec.side());
    dx.iter().map(|v| *v * *v).sum::<T>() / (side * side)
}

/// Builds the QP for one grid from its design.
pub fn assemble_objective<T: Scalar>(
    design: &FidelityDesign<T>,
    spec: &GridSpec<T>,
    kind: GridKind,
    lambda: T,
    enabled: &ConstraintSet,
) -> Result<QpProblem<T>, TrainError> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(TrainError::BadLambda);
    }
    let m = T::from_usize_lossy(design.n_sessions().max(1));
    let d = second_difference_operator(spec)?;
    let side = T::from_usize_lossy(spec.side());
    let two = T::lit(2.0);
    let wtw = design.weight_matrix.gram();
    let dtd = d.gram();
    let quad = wtw
        .scaled(two / m)
        .add_scaled(&dtd, two * lambda / (side * side));
    let wty = design.weight_matrix.mul_t_vec(&design.target_vector);
    let lin = wty.iter().map(|v| -two * *v / m).collect();
    Ok(QpProblem::new(quad, lin, build_constraints(spec, kind, enabled)?)?)
}

pub fn assemble_rebuffering_objective<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    lambda: T,
) -> Result<QpProblem<T>, TrainError> {
    if ts.rebuffer_sessions.is_empty() {
        return Err(TrainError::EmptyPartition("rebuffering"));
    }
    let design = rebuffering_design(&ts.rebuffer_sessions, spec, None)?;
    assemble_objective(&design, spec, GridKind::Rebuffering, lambda, &all_rebuffering())
}

pub fn assemble_adaptation_objective<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    lambda: T,
) -> Result<QpProblem<T>, TrainError> {
    if ts.adaptation_sessions.is_empty() {
        return Err(TrainError::EmptyPartition("adaptation"));
    }
    let design = adaptation_design(&ts.adaptation_sessions, spec, true)?;
    assemble_objective(&design, spec, GridKind::Adaptation, lambda, &all_adaptation())
}

#[derive(Debug, Clone)]
pub struct TrainOptions<T> {
    /// Enabled constraint families; both grids read their own labels from it.
    pub constraints: ConstraintSet,
    pub first_chunk_adaptation: bool,
    pub solver: QpSettings<T>,
    pub seed: Option<u64>,
}

impl<T: Scalar> Default for TrainOptions<T> {
    fn default() -> Self {
        Self {
            constraints: all_rebuffering().into_iter().chain(all_adaptation()).collect(),
            first_chunk_adaptation: true,
            solver: QpSettings::default(),
            seed: None,
        }
    }
}

/// Value of each objective term at the fitted grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms<T> {
    pub fidelity: T,
    pub smoothness: T,
    pub lambda: T,
}

impl<T: Scalar> ObjectiveTerms<T> {
    pub fn total(&self) -> T {
        self.fidelity + self.lambda * self.smoothness
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: KsqiModel<T>,
    pub rebuffering: ObjectiveTerms<T>,
    pub adaptation: ObjectiveTerms<T>,
    pub rebuffering_design: FidelityDesign<T>,
    pub adaptation_design: FidelityDesign<T>,
}

fn solve_grid<T: Scalar>(
    problem: &QpProblem<T>,
    kind: GridKind,
    spec: &GridSpec<T>,
    settings: &QpSettings<T>,
) -> Result<(QoEGrid<T>, SolveSummary), TrainError> {
    let rep = solve_qp_with(problem, settings, None)?;
    let summary = SolveSummary {
        status: rep.status,
        primal_residual: rep.primal_residual.as_f64(),
        dual_residual: rep.dual_residual.as_f64(),
        iterations: rep.iterations,
    };
    if rep.status != SolveStatus::Optimal {
        return Err(TrainError::NotOptimal {
            kind,
            status: rep.status,
            primal: summary.primal_residual,
            dual: summary.dual_residual,
            iterations: rep.iterations,
        });
    }
    let mut values = rep.solution;
    // the anchors are equalities; write them exactly
    let side = spec.side();
    for i in 0..side {
        let k = match kind {
            GridKind::Rebuffering => spec.index(i, 0),
            GridKind::Adaptation => spec.index(i, i),
        };
        values[k] = T::zero();
    }
    Ok((QoEGrid::from_vec(kind, *spec, values)?, summary))
}

/// Fits both grids. The adaptation grid is fitted first so that, under the
/// first-chunk convention, its contribution to rebuffering sessions can be
/// removed from their targets.
pub fn train_ksqi_detailed<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    lambda: T,
    options: &TrainOptions<T>,
) -> Result<TrainOutcome<T>, TrainError> {
    spec.validate()?;
    if ts.rebuffer_sessions.is_empty() {
        return Err(TrainError::EmptyPartition("rebuffering"));
    }
    if ts.adaptation_sessions.is_empty() {
        return Err(TrainError::EmptyPartition("adaptation"));
    }
    ts.validate(spec.quality_max)?;
    let d = second_difference_operator(spec)?;

    let a_design = adaptation_design(&ts.adaptation_sessions, spec, options.first_chunk_adaptation)?;
    let a_problem = assemble_objective(&a_design, spec, GridKind::Adaptation, lambda, &options.constraints)?;
    let (a_grid, a_summary) = solve_grid(&a_problem, GridKind::Adaptation, spec, &options.solver)?;

    let offsets = if options.first_chunk_adaptation {
        let r = reference(spec);
        Some(
            ts.rebuffer_sessions
                .iter()
                .map(|s| {
                    let c = T::from_usize_lossy(s.chunks.len());
                    Ok(interpolate_adaptation(&a_grid, r, s.chunks[0].presentation_quality)? / c)
                })
                .collect::<Result<Vec<T>, PredictError>>()?,
        )
    } else {
        None
    };
    let s_design = rebuffering_design(&ts.rebuffer_sessions, spec, offsets.as_deref())?;
    let s_problem = assemble_objective(&s_design, spec, GridKind::Rebuffering, lambda, &options.constraints)?;
    let (s_grid, s_summary) = solve_grid(&s_problem, GridKind::Rebuffering, spec, &options.solver)?;

    let terms = |design: &FidelityDesign<T>, g: &QoEGrid<T>| ObjectiveTerms {
        fidelity: design.fidelity(g.as_slice()),
        smoothness: smoothness(&d, spec, g.as_slice()),
        lambda,
    };
    let rebuffering = terms(&s_design, &s_grid);
    let adaptation = terms(&a_design, &a_grid);
    let provenance = Provenance {
        dataset: ts.source.clone(),
        seed: options.seed,
        constraints: options.constraints.iter().copied().collect(),
        mos_rescaling: ts.mos_rescaling.clone(),
        first_chunk_adaptation: options.first_chunk_adaptation,
        rebuffer_sessions: ts.rebuffer_sessions.len(),
        adaptation_sessions: ts.adaptation_sessions.len(),
        rebuffering_solve: Some(s_summary),
        adaptation_solve: Some(a_summary),
    };
    let model = KsqiModel::new(s_grid, a_grid, lambda, provenance)?;
    Ok(TrainOutcome {
        model,
        rebuffering,
        adaptation,
        rebuffering_design: s_design,
        adaptation_design: a_design,
    })
}

pub fn train_ksqi<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    lambda: T,
    options: &TrainOptions<T>,
) -> Result<KsqiModel<T>, TrainError> {
    Ok(train_ksqi_detailed(ts, spec, lambda, options)?.model)
}

/// Mean squared error between predicted session scores and MOS.
pub fn prediction_mse<T: Scalar>(m: &KsqiModel<T>, sessions: &[Session<T>]) -> Result<T, TrainError> {
    let pr = Predictor::new(m);
    let mut sum = T::zero();
    for s in sessions {
        let e = pr.session_score(s)? - s.mos.expect("validated");
        sum = sum + e * e;
    }
    Ok(sum / T::from_usize_lossy(sessions.len().max(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation<T> {
    pub best_lambda: T,
    /// `(lambda, validation MSE)` in candidate order.
    pub losses: Vec<(T, T)>,
}

fn split<T: Clone>(items: &[T], fraction: f64, rng: &mut ChaCha8Rng, partition: &'static str) -> Result<(Vec<T>, Vec<T>), TrainError> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    let n_train = ((items.len() as f64) * fraction).round() as usize;
    let n_val = items.len() - n_train.min(items.len());
    if n_train < 2 || n_val < 2 {
        return Err(TrainError::TooFewSessions {
            partition,
            n: n_train.min(n_val),
        });
    }
    let train = idx[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = idx[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

/// Picks lambda by validation MSE on a seeded split of each partition.
/// Ties go to the larger lambda.
pub fn cross_validate_lambda<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    candidates: &[T],
    split_fraction: f64,
    seed: u64,
    options: &TrainOptions<T>,
) -> Result<CrossValidation<T>, TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::NoCandidates);
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(TrainError::BadSplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rb_train, rb_val) = split(&ts.rebuffer_sessions, split_fraction, &mut rng, "rebuffering")?;
    let (ad_train, ad_val) = split(&ts.adaptation_sessions, split_fraction, &mut rng, "adaptation")?;
    let train = TrainingSet {
        rebuffer_sessions: rb_train,
        adaptation_sessions: ad_train,
        mos_rescaling: ts.mos_rescaling.clone(),
        source: ts.source.clone(),
    };
    let validation: Vec<Session<T>> = rb_val.into_iter().chain(ad_val).collect();
    let mut losses = Vec::with_capacity(candidates.len());
    let mut best: Option<(T, T)> = None;
    for &lambda in candidates {
        let m = train_ksqi(&train, spec, lambda, options)?;
        let loss = prediction_mse(&m, &validation)?;
        losses.push((lambda, loss));
        let better = match best {
            None => true,
            Some((bl, bv)) => loss < bv || (loss == bv && lambda > bl),
        };
        if better {
            best = Some((lambda, loss));
        }
    }
    Ok(CrossValidation {
        best_lambda: best.expect("non-empty").0,
        losses,
    })
}

/// Largest absolute difference between two grids' values.
pub fn grid_distance<T: Scalar>(a: &QoEGrid<T>, b: &QoEGrid<T>) -> T {
    let diff: Vec<T> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| *x - *y).collect();
    norm_inf(&diff)
}
