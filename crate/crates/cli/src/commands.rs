use std::path::{Path, PathBuf};

use ksqi_core::baseline::{fit_baseline, predict_baseline, registry, spec_by_name, BaselineRegistry, FittedBaseline};
use ksqi_core::constraints::{
    all_adaptation, all_rebuffering, build_adaptation_constraints, build_rebuffering_constraints, check_feasible,
    parse_constraint_list,
};
use ksqi_core::grid::{GridSpec, QoEGrid};
use ksqi_core::metrics::{
    evaluate_predictions, rescale_mos, significance_csv, significance_matrix, Criterion, EvaluationReport,
};
use ksqi_core::model::KsqiModel;
use ksqi_core::predict::{session_qoe, ChunkwiseQoe, PredictOptions, PredictionDocument, Predictor};
use ksqi_core::qp::QpSettings;
use ksqi_core::ranking::{mle_ranking, PairwiseMatrix};
use ksqi_core::session::{parse_dataset, parse_session_log, serialize_session, session_features, Dataset, Session};
use ksqi_core::sweep::{
    ablation_sweep, bin_size_sweep, lambda_sweep, lambda_sweep_csv, parse_decade_range, sweep_rows_csv,
    synthetic_sweep_data,
};
use ksqi_core::synth::{
    brute_force_optimal, dp_optimal_session, evaluate_choices, fixed_quality_choices, greedy_rate_choices,
    BitrateLadder, NetworkTrace, PlayerConfig,
};
use ksqi_core::synthetic::SyntheticConfig;
use ksqi_core::train::{cross_validate_lambda, train_ksqi_detailed, ObjectiveTerms, TrainOptions, TrainingSet};
use serde_json::{json, Value};

use crate::error::{invalid, CliError};
use crate::io::{check_dir, check_paths, emit, read, stem};
use crate::{
    EvaluateArgs, FitBaselinesArgs, GridArgs, OutputFormat, PredictArgs, RankArgs, SolverArgs, SweepArgs, SweepKind,
    SynthMethod, SynthesizeArgs, TrainArgs,
};

fn grid_spec(g: &GridArgs) -> Result<GridSpec<f64>, CliError> {
    Ok(GridSpec::new(g.n_steps, g.quality_max, g.rebuffer_max)?)
}

fn solver_settings(s: &SolverArgs) -> Result<QpSettings<f64>, CliError> {
    if !(s.tol_primal > 0.0 && s.tol_dual > 0.0 && s.feasibility_tol >= 0.0) {
        return Err(invalid("tolerances must be positive"));
    }
    Ok(QpSettings::with_tolerances(s.tol_primal, s.tol_dual, s.max_iter))
}

fn load_dataset(path: &Path) -> Result<Dataset<f64>, CliError> {
    parse_dataset(&read(path)?).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn load_model(path: &Path) -> Result<KsqiModel<f64>, CliError> {
    KsqiModel::from_json(&read(path)?).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn load_registry(path: &Path) -> Result<BaselineRegistry<f64>, CliError> {
    BaselineRegistry::from_json(&read(path)?).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn terms_json(t: &ObjectiveTerms<f64>) -> Value {
    json!({ "fidelity": t.fidelity, "smoothness": t.smoothness, "lambda": t.lambda })
}

fn feasibility_json(
    g: &QoEGrid<f64>,
    sys: &ksqi_core::constraints::ConstraintSystem<f64>,
    tol: f64,
) -> Result<Value, CliError> {
    let all = check_feasible(g, sys, 0.0)?;
    let violated = all.iter().filter(|v| v.residual > tol).count();
    let worst = all.iter().map(|v| v.residual).fold(0.0, f64::max);
    Ok(json!({
        "rows": sys.n_ineq() + sys.n_eq(),
        "violated": violated,
        "worst_residual": worst,
        "feasible": violated == 0,
    }))
}

pub fn train(a: TrainArgs, seed: u64) -> Result<(), CliError> {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.report.as_deref());
    outputs.extend(a.sweep_out.as_deref());
    check_paths(&a.data.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &outputs)?;
    let spec = grid_spec(&a.grid)?;
    let mut options = TrainOptions {
        first_chunk_adaptation: !a.no_first_chunk_adaptation,
        solver: solver_settings(&a.solver)?,
        seed: Some(seed),
        ..TrainOptions::default()
    };
    if let Some(c) = &a.constraints {
        options.constraints = parse_constraint_list(c)?;
    }
    let candidates = match &a.lambda_sweep {
        Some(r) => Some(parse_decade_range(r).ok_or_else(|| invalid(format!("bad lambda range '{r}'")))?),
        None => None,
    };

    let datasets = a.data.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let (ts, partition) = TrainingSet::from_datasets(&datasets, spec.quality_max)?;

    let (lambda, selection, losses) = match &candidates {
        Some(c) => {
            let cv = cross_validate_lambda(&ts, &spec, c, a.split_fraction, seed, &options)?;
            let mut csv = String::from("lambda,validation_mse\n");
            for (l, mse) in &cv.losses {
                csv.push_str(&format!("{l},{mse}\n"));
            }
            if let Some(p) = &a.sweep_out {
                emit(Some(p), &csv)?;
            }
            let losses: Vec<Value> = cv.losses.iter().map(|(l, m)| json!({ "lambda": l, "validation_mse": m })).collect();
            (cv.best_lambda, "cross-validated", Some(losses))
        }
        None => (a.lambda, "fixed", None),
    };

    let outcome = train_ksqi_detailed(&ts, &spec, lambda, &options)?;
    let model = &outcome.model;
    let s_sys = build_rebuffering_constraints(&spec, &all_rebuffering())?;
    let a_sys = build_adaptation_constraints(&spec, &all_adaptation())?;
    let tol = a.solver.feasibility_tol;
    let report = json!({
        "model_sha256": model.content_hash(),
        "lambda": lambda,
        "lambda_selection": selection,
        "validation_losses": losses,
        "grid": { "n_steps": spec.n_steps, "quality_max": spec.quality_max, "rebuffer_max": spec.rebuffer_max },
        "constraints": model.provenance().constraints.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>(),
        "first_chunk_adaptation": options.first_chunk_adaptation,
        "partition": {
            "rebuffer": partition.rebuffer,
            "adaptation": partition.adaptation,
            "skipped": partition.skipped.iter().map(|(d, i)| json!({ "dataset": d, "index": i })).collect::<Vec<_>>(),
        },
        "solves": {
            "rebuffering": model.provenance().rebuffering_solve,
            "adaptation": model.provenance().adaptation_solve,
        },
        "objective": {
            "rebuffering": terms_json(&outcome.rebuffering),
            "adaptation": terms_json(&outcome.adaptation),
        },
        "full_constraint_check": {
            "tolerance": tol,
            "rebuffering": feasibility_json(model.s_grid(), &s_sys, tol)?,
            "adaptation": feasibility_json(model.a_grid(), &a_sys, tol)?,
        },
    });
    emit(Some(&a.out), &model.to_json())?;
    emit(a.report.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&report)?))
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    if a.sessions.is_empty() && a.datasets.is_empty() {
        return Err(invalid("give at least one --session or --dataset"));
    }
    let mut inputs = vec![a.model.as_path()];
    inputs.extend(a.sessions.iter().map(PathBuf::as_path));
    inputs.extend(a.datasets.iter().map(PathBuf::as_path));
    check_paths(&inputs, &a.out.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;

    let model = load_model(&a.model)?;
    let mut labeled: Vec<(String, Session<f64>)> = Vec::new();
    for p in &a.sessions {
        let s = parse_session_log(&read(p)?).map_err(|e| CliError::from(e).context(&p.display().to_string()))?;
        labeled.push((p.display().to_string(), s));
    }
    for p in &a.datasets {
        let ds = load_dataset(p)?;
        for (k, s) in ds.sessions.into_iter().enumerate() {
            labeled.push((format!("{}#{k}", p.display()), s));
        }
    }
    let options = PredictOptions::for_model(&model);
    let mut docs = Vec::with_capacity(labeled.len());
    for (name, s) in &labeled {
        let trace = session_qoe(&model, s, options).map_err(|e| CliError::from(e).context(name))?;
        docs.push((name, PredictionDocument::new(&model, options, trace)));
    }
    let text = match a.format {
        OutputFormat::Json => {
            let arr: Vec<Value> = docs
                .iter()
                .map(|(name, d)| {
                    let mut v = serde_json::to_value(d).expect("document serializes");
                    v["input"] = json!(name);
                    v
                })
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&arr)?)
        }
        OutputFormat::Csv => {
            let mut s = String::from("input,final_score\n");
            for (name, d) in &docs {
                s.push_str(&format!("{name},{}\n", d.trace.final_score));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)
}

enum Scorer {
    Ksqi(Box<KsqiModel<f64>>),
    Baseline(FittedBaseline<f64>),
}

impl Scorer {
    fn score(&self, s: &Session<f64>) -> Result<f64, CliError> {
        match self {
            Scorer::Ksqi(m) => Ok(Predictor::new(m).session_score(s)?),
            Scorer::Baseline(b) => Ok(predict_baseline(b, s, &session_features(s))?),
        }
    }
}

pub fn evaluate(a: EvaluateArgs, seed: u64) -> Result<(), CliError> {
    let mut inputs: Vec<&Path> = a.models.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.baselines.as_deref());
    inputs.extend(a.datasets.iter().map(PathBuf::as_path));
    check_paths(&inputs, &[])?;
    check_dir(&a.out_dir)?;
    if !(a.confidence > 0.0 && a.confidence < 1.0) {
        return Err(invalid("confidence must lie in (0, 1)"));
    }

    let mut scorers: Vec<(String, Scorer)> = Vec::new();
    for p in &a.models {
        scorers.push((stem(p), Scorer::Ksqi(Box::new(load_model(p)?))));
    }
    if let Some(p) = &a.baselines {
        for b in load_registry(p)?.models {
            scorers.push((b.spec.name.clone(), Scorer::Baseline(b)));
        }
    }
    if scorers.is_empty() {
        return Err(invalid("give at least one --model or --baselines"));
    }
    let mut names: Vec<&str> = scorers.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("model names must be unique"));
    }

    let mut report = EvaluationReport::default();
    for p in &a.datasets {
        // one scale for all residuals so the pooled F-test compares like with like
        let ds = rescale_mos(&load_dataset(p)?, (0.0, 100.0))?;
        let mos = ds.mos_values().ok_or_else(|| invalid(format!("{}: sessions without MOS", p.display())))?;
        report.add_dataset(&ds.name, ds.sessions.len());
        for (name, scorer) in &scorers {
            let pred = ds
                .sessions
                .iter()
                .map(|s| scorer.score(s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.context(&format!("{name} on {}", ds.name)))?;
            let cell = evaluate_predictions(&pred, &mos, seed).map_err(|e| CliError::from(e).context(name))?;
            report.insert(name, &ds.name, cell);
        }
    }
    for (c, file) in [(Criterion::Plcc, "plcc.csv"), (Criterion::Srcc, "srcc.csv"), (Criterion::Krcc, "krcc.csv")] {
        emit(Some(&a.out_dir.join(file)), &report.to_csv(c))?;
    }
    let labels: Vec<String> = scorers.iter().map(|(n, _)| n.clone()).collect();
    let residuals: Vec<Vec<f64>> = labels.iter().map(|n| report.pooled_residuals(n)).collect();
    let sig = significance_matrix(&residuals, a.confidence)?;
    emit(Some(&a.out_dir.join("significance.csv")), &significance_csv(&labels, &sig))
}

pub fn fit_baselines(a: FitBaselinesArgs, seed: u64) -> Result<(), CliError> {
    check_paths(&a.datasets.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &[a.out.as_path()])?;
    let specs = match &a.models {
        Some(list) => list.split(',').map(|n| spec_by_name(n.trim())).collect::<Result<Vec<_>, _>>()?,
        None => registry(),
    };
    let mut sessions = Vec::new();
    for p in &a.datasets {
        sessions.extend(rescale_mos(&load_dataset(p)?, (0.0, 100.0))?.sessions);
    }
    let fitted = specs
        .iter()
        .map(|s| fit_baseline(s, &sessions, seed).map_err(|e| CliError::from(e).context(&s.name)))
        .collect::<Result<Vec<_>, _>>()?;
    emit(Some(&a.out), &BaselineRegistry::new(fitted).to_json())
}

pub fn synthesize(a: SynthesizeArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.ladder.as_path(), a.trace.as_path()];
    inputs.extend(a.model.as_deref());
    inputs.extend(a.baselines.as_deref());
    let mut outputs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    outputs.extend(a.session_out.as_deref());
    check_paths(&inputs, &outputs)?;

    let ladder: BitrateLadder = serde_json::from_str(&read(&a.ladder)?)
        .map_err(|e| invalid(format!("{}: {e}", a.ladder.display())))?;
    ladder.validate()?;
    let trace = NetworkTrace::parse(&read(&a.trace)?)?;
    let cfg = PlayerConfig {
        buffer_capacity: a.buffer_capacity,
        startup_threshold: a.startup_threshold,
        buffer_quantum: a.buffer_quantum,
    };
    cfg.validate(&ladder)?;

    let model = a.model.as_deref().map(load_model).transpose()?;
    let baseline = match (&a.baselines, &a.baseline) {
        (Some(p), Some(name)) => Some(
            load_registry(p)?
                .models
                .into_iter()
                .find(|b| &b.spec.name == name)
                .ok_or_else(|| invalid(format!("{name} is not in {}", p.display())))?,
        ),
        _ => None,
    };
    let predictor = model.as_ref().map(Predictor::new);
    let (objective, qoe): (String, &dyn ChunkwiseQoe<f64>) = match (&predictor, &baseline) {
        (Some(p), _) => (format!("ksqi:{}", model.as_ref().expect("loaded").content_hash()), p),
        (None, Some(b)) => (b.spec.name.clone(), b),
        (None, None) => return Err(invalid("give --model, or --baselines with --baseline")),
    };

    let result = match a.method {
        SynthMethod::Dp => dp_optimal_session(&ladder, &trace, &cfg, qoe)?,
        SynthMethod::BruteForce => brute_force_optimal(&ladder, &trace, &cfg, qoe)?,
        SynthMethod::Greedy => {
            let c = greedy_rate_choices(&ladder, &trace, &cfg)?;
            evaluate_choices(&ladder, &trace, &cfg, qoe, &c)?
        }
        SynthMethod::Fixed => {
            if a.representation >= ladder.n_representations() {
                return Err(invalid(format!("representation {} does not exist", a.representation)));
            }
            let c = fixed_quality_choices(&ladder, a.representation);
            evaluate_choices(&ladder, &trace, &cfg, qoe, &c)?
        }
    };
    let method = format!("{:?}", a.method).to_lowercase();
    let doc = json!({
        "method": method,
        "objective": objective,
        "player": cfg,
        "choices": result.choices,
        "score": result.score,
        "session": result.session,
    });
    if let Some(p) = &a.session_out {
        emit(Some(p), &serialize_session(&result.session))?;
    }
    emit(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

pub fn rank(a: RankArgs) -> Result<(), CliError> {
    check_paths(&[a.input.as_path()], &a.out.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    if !(a.tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let pm = PairwiseMatrix::<f64>::parse_csv(&read(&a.input)?)?;
    let rr = mle_ranking(&pm, a.tol)?;
    let text = match a.format {
        OutputFormat::Csv => rr.to_csv(),
        OutputFormat::Json => format!("{}\n", serde_json::to_string_pretty(&rr)?),
    };
    if a.format == OutputFormat::Csv && !rr.clipped.is_empty() {
        eprintln!("note: {} cells at 0 or 1 were clipped before fitting", rr.clipped.len());
    }
    emit(a.out.as_deref(), &text)
}

pub fn sweep(a: SweepArgs, seed: u64) -> Result<(), CliError> {
    check_paths(&[], &a.out.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let cfg = SyntheticConfig {
        noise_sigma: a.noise_sigma,
        seed,
        ..SyntheticConfig::default()
    };
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(invalid("noise sigma must be finite and non-negative"));
    }
    let options = TrainOptions {
        first_chunk_adaptation: false,
        solver: solver_settings(&a.solver)?,
        seed: Some(seed),
        ..TrainOptions::default()
    };
    let lambdas = match a.kind {
        SweepKind::Lambda => {
            Some(parse_decade_range(&a.lambdas).ok_or_else(|| invalid(format!("bad lambda range '{}'", a.lambdas)))?)
        }
        _ => None,
    };
    let data = synthetic_sweep_data::<f64>(a.per_partition, a.held_out, &cfg)?;
    let csv = match a.kind {
        SweepKind::Lambda => {
            let l = lambdas.expect("parsed above");
            lambda_sweep_csv(&lambda_sweep(&data.train, data.truth.spec(), &l, &options, &data.held_out)?)
        }
        SweepKind::Bins => sweep_rows_csv("n_steps", &bin_size_sweep(&data, &a.bins, a.lambda, &options, seed)?),
        SweepKind::Ablation => sweep_rows_csv("constraints", &ablation_sweep(&data, a.lambda, &options, seed)?),
    };
    emit(a.out.as_deref(), &csv)
}
