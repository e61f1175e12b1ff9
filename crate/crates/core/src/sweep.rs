//! Robustness sweeps over the regularization weight, the grid resolution and
//! the enabled constraint families, run on seeded synthetic data.

use std::fmt::Write as _;

use crate::constraints::{Constraint, ConstraintSet};
use crate::grid::GridSpec;
use crate::metrics::{evaluate_predictions, Correlations};
use crate::model::KsqiModel;
use crate::predict::{ChunkwiseQoe, Predictor};
use crate::scalar::Scalar;
use crate::session::Session;
use crate::synthetic::{random_sessions, random_training_set, reference_model, SyntheticConfig};
use crate::train::{prediction_mse, train_ksqi, train_ksqi_detailed, ObjectiveTerms, TrainError, TrainOptions, TrainingSet};

/// `lo, 10 lo, 100 lo, ...` up to and including `hi` (both positive).
pub fn decade_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(lo > 0.0 && hi >= lo) {
        return out;
    }
    let n = (hi / lo).log10().round() as i32;
    for k in 0..=n {
        out.push(lo * 10f64.powi(k));
    }
    out
}

/// Parses `lo..hi` into a decade grid.
pub fn parse_decade_range(s: &str) -> Option<Vec<f64>> {
    let (a, b) = s.split_once("..")?;
    let (lo, hi): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    let g = decade_grid(lo, hi);
    (!g.is_empty()).then_some(g)
}

pub fn is_non_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

pub fn is_non_decreasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPoint<T> {
    pub lambda: T,
    pub rebuffering: ObjectiveTerms<T>,
    pub adaptation: ObjectiveTerms<T>,
    /// Prediction MSE on held-out sessions, when some were given.
    pub validation_mse: Option<T>,
}

/// Trains on the same data once per `lambda` and records both objective terms.
pub fn lambda_sweep<T: Scalar>(
    ts: &TrainingSet<T>,
    spec: &GridSpec<T>,
    lambdas: &[T],
    options: &TrainOptions<T>,
    validation: &[Session<T>],
) -> Result<Vec<LambdaPoint<T>>, TrainError> {
    lambdas
        .iter()
        .map(|&lambda| {
            let out = train_ksqi_detailed(ts, spec, lambda, options)?;
            let validation_mse = if validation.is_empty() {
                None
            } else {
                Some(prediction_mse(&out.model, validation)?)
            };
            Ok(LambdaPoint {
                lambda,
                rebuffering: out.rebuffering,
                adaptation: out.adaptation,
                validation_mse,
            })
        })
        .collect()
}

pub fn lambda_sweep_csv<T: Scalar>(points: &[LambdaPoint<T>]) -> String {
    let mut s = String::from(
        "lambda,rebuffering_fidelity,rebuffering_smoothness,adaptation_fidelity,adaptation_smoothness,validation_mse\n",
    );
    for p in points {
        let v = p.validation_mse.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.lambda, p.rebuffering.fidelity, p.rebuffering.smoothness, p.adaptation.fidelity, p.adaptation.smoothness, v
        );
    }
    s
}

/// Smoothness falls and fidelity rises with lambda, on both grids.
pub fn lambda_tradeoff_holds<T: Scalar>(points: &[LambdaPoint<T>]) -> bool {
    let col = |f: &dyn Fn(&LambdaPoint<T>) -> T| points.iter().map(f).collect::<Vec<T>>();
    is_non_increasing(&col(&|p| p.rebuffering.smoothness))
        && is_non_increasing(&col(&|p| p.adaptation.smoothness))
        && is_non_decreasing(&col(&|p| p.rebuffering.fidelity))
        && is_non_decreasing(&col(&|p| p.adaptation.fidelity))
}

/// Synthetic training data and held-out sessions from the reference surfaces.
#[derive(Debug, Clone)]
pub struct SweepData<T> {
    pub truth: KsqiModel<T>,
    pub train: TrainingSet<T>,
    pub held_out: Vec<Session<T>>,
}

/// Events fall between grid nodes; the truth model has no first-chunk
/// adaptation term so that the two fits are independent.
pub fn synthetic_sweep_data<T: Scalar>(
    n_per_partition: usize,
    n_held_out: usize,
    cfg: &SyntheticConfig,
) -> Result<SweepData<T>, TrainError> {
    let spec = GridSpec::new(10, T::lit(100.0), T::lit(10.0))?;
    let truth = reference_model(spec, false)?;
    let train = random_training_set(&truth, n_per_partition, cfg)?;
    let held_out = random_sessions(&truth, n_held_out, cfg, 1)?;
    Ok(SweepData { truth, train, held_out })
}

fn correlations<T: Scalar>(m: &KsqiModel<T>, sessions: &[Session<T>], seed: u64) -> Result<Correlations, TrainError> {
    let pr = Predictor::new(m);
    let pred = sessions
        .iter()
        .map(|s| pr.session_score(s).map(|v| v.as_f64()))
        .collect::<Result<Vec<f64>, _>>()?;
    let mos: Vec<f64> = sessions.iter().map(|s| s.mos.expect("rated").as_f64()).collect();
    Ok(evaluate_predictions(&pred, &mos, seed)?.scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub correlations: Correlations,
    pub held_out_mse: f64,
}

pub fn sweep_rows_csv(first_column: &str, rows: &[SweepRow]) -> String {
    let mut s = format!("{first_column},plcc,srcc,krcc,held_out_mse\n");
    for r in rows {
        let c = &r.correlations;
        let _ = writeln!(s, "{},{},{},{},{}", r.label, c.plcc, c.srcc, c.krcc, r.held_out_mse);
    }
    s
}

/// Retrains at each grid resolution `N` with the other parameters fixed.
pub fn bin_size_sweep<T: Scalar>(
    data: &SweepData<T>,
    n_steps: &[usize],
    lambda: T,
    options: &TrainOptions<T>,
    seed: u64,
) -> Result<Vec<SweepRow>, TrainError> {
    let base = *data.truth.spec();
    n_steps
        .iter()
        .map(|&n| {
            let spec = GridSpec::new(n, base.quality_max, base.rebuffer_max)?;
            let m = train_ksqi(&data.train, &spec, lambda, options)?;
            Ok(SweepRow {
                label: n.to_string(),
                correlations: correlations(&m, &data.held_out, seed)?,
                held_out_mse: prediction_mse(&m, &data.held_out)?.as_f64(),
            })
        })
        .collect()
}

/// Constraint sets of increasing size: none, then `S1..Sk` with `A1..Ak`
/// for `k = 1..4`.
pub fn ablation_ladder() -> Vec<(String, ConstraintSet)> {
    (0..=4)
        .map(|k| {
            let set: ConstraintSet = Constraint::REBUFFERING[..k]
                .iter()
                .chain(&Constraint::ADAPTATION[..k])
                .copied()
                .collect();
            let label = if k == 0 {
                "none".to_string()
            } else {
                set.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
            };
            (label, set)
        })
        .collect()
}

pub fn ablation_sweep<T: Scalar>(
    data: &SweepData<T>,
    lambda: T,
    options: &TrainOptions<T>,
    seed: u64,
) -> Result<Vec<SweepRow>, TrainError> {
    let spec = *data.truth.spec();
    ablation_ladder()
        .into_iter()
        .map(|(label, set)| {
            let opts = TrainOptions {
                constraints: set,
                ..options.clone()
            };
            let m = train_ksqi(&data.train, &spec, lambda, &opts)?;
            Ok(SweepRow {
                label,
                correlations: correlations(&m, &data.held_out, seed)?,
                held_out_mse: prediction_mse(&m, &data.held_out)?.as_f64(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decades() {
        assert_eq!(decade_grid(0.01, 10000.0).len(), 7);
        assert_eq!(parse_decade_range("1e-4..100").unwrap().len(), 7);
        assert!(parse_decade_range("5").is_none());
        assert!(parse_decade_range("10..1").is_none());
    }

    #[test]
    fn ladder_grows() {
        let l = ablation_ladder();
        assert_eq!(l.len(), 5);
        assert!(l[0].1.is_empty());
        assert_eq!(l[4].1.len(), 8);
        assert_eq!(l[2].0, "S1+S2+A1+A2");
    }
}
