mod common;

use ksqi_core::baseline::{spec_by_name, FittedBaseline};
use ksqi_core::grid::GridSpec;
use ksqi_core::predict::{ChunkwiseQoe, Predictor};
use ksqi_core::synth::{
    brute_force_optimal, dp_optimal_session, evaluate_choices, fixed_quality_choices, greedy_rate_choices,
    simulate_download, simulate_quantized, NetworkTrace, PlayerConfig,
};
use ksqi_core::synthetic::reference_model;
use proptest::prelude::*;

fn cfg() -> PlayerConfig {
    PlayerConfig {
        buffer_capacity: 6.0,
        startup_threshold: 2.0,
        buffer_quantum: 0.1,
    }
}

#[test]
fn dp_equals_brute_force_exactly() {
    let ladder = common::dp_ladder();
    let truth = reference_model(GridSpec::default(), true).unwrap();
    let ksqi = Predictor::new(&truth);
    let bentaleb =
        FittedBaseline::with_coefficients(spec_by_name("Bentaleb2016").unwrap(), &[5.0, 0.9, -6.0, -0.05]).unwrap();
    let models: [&dyn ChunkwiseQoe<f64>; 2] = [&ksqi, &bentaleb];
    let mut optima = std::collections::BTreeSet::new();
    for (k, trace) in common::dp_traces().iter().enumerate() {
        for q in models {
            let dp = dp_optimal_session(&ladder, trace, &cfg(), q).unwrap();
            let bf = brute_force_optimal(&ladder, trace, &cfg(), q).unwrap();
            assert_eq!(dp.choices, bf.choices, "trace {k}");
            assert_eq!(dp.score.to_bits(), bf.score.to_bits(), "trace {k}");
            assert_eq!(dp.session, bf.session, "trace {k}");
            optima.insert(dp.choices);
        }
    }
    // the fixtures should not all share one answer
    assert!(optima.len() >= 3, "{optima:?}");
}

#[test]
fn dp_is_at_least_as_good_as_heuristics() {
    let ladder = common::dp_ladder();
    let truth = reference_model(GridSpec::default(), true).unwrap();
    let q = Predictor::new(&truth);
    for trace in common::dp_traces() {
        let dp = dp_optimal_session(&ladder, &trace, &cfg(), &q).unwrap();
        let mut rivals: Vec<Vec<usize>> = (0..3).map(|r| fixed_quality_choices(&ladder, r)).collect();
        rivals.push(greedy_rate_choices(&ladder, &trace, &cfg()).unwrap());
        for c in rivals {
            let s = evaluate_choices(&ladder, &trace, &cfg(), &q, &c).unwrap();
            assert!(dp.score >= s.score, "{c:?}");
        }
        let again = evaluate_choices(&ladder, &trace, &cfg(), &q, &dp.choices).unwrap();
        assert_eq!(again.score, dp.score);
    }
}

#[test]
fn quantized_player_converges_to_fluid_on_a_flat_link() {
    let ladder = common::dp_ladder();
    let trace = NetworkTrace::constant(1.7e6);
    let choices = [2, 0, 1, 2];
    let (_, fluid) = simulate_download::<f64>(&ladder, &choices, &trace, &cfg()).unwrap();
    let mut prev = f64::INFINITY;
    for quantum in [0.5, 0.1, 0.01, 0.001] {
        let c = PlayerConfig { buffer_quantum: quantum, ..cfg() };
        let (_, log) = simulate_quantized::<f64>(&ladder, &choices, &trace, &c).unwrap();
        let gap = log.wall_clock as f64 * quantum - fluid.wall_clock_s;
        assert!(gap >= -1e-9 && gap <= choices.len() as f64 * quantum + 1e-9, "q={quantum} gap={gap}");
        assert!(gap <= prev + 1e-9);
        prev = gap;
    }
}

#[test]
fn single_sample_trace_file() {
    let t = NetworkTrace::parse("# t bps\n0 8000000\n").unwrap();
    assert_eq!(t.end(), 1.0);
    assert!((t.transfer_time(0.0, 4.0e6).unwrap() - 0.5).abs() < 1e-12);
    assert!(t.transfer_time(0.0, 9.0e6).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accounting_identities_hold(
        choices in proptest::collection::vec(0usize..3, 4),
        trace in 0usize..5,
        cap in 2usize..8,
    ) {
        let ladder = common::dp_ladder();
        let tr = &common::dp_traces()[trace];
        let c = PlayerConfig { buffer_capacity: 2.0 * cap as f64, ..cfg() };
        let (session, log) = simulate_quantized::<f64>(&ladder, &choices, tr, &c).unwrap();
        let d: u64 = log.download.iter().sum();
        let idle: u64 = log.idle.iter().sum();
        let stall: u64 = log.stall.iter().sum();
        prop_assert_eq!(log.wall_clock, d + idle);
        let content = log.segment * choices.len() as u64;
        prop_assert_eq!(log.wall_clock, log.initial_buffering + stall + content - log.final_buffer);
        prop_assert_eq!(log.stall[0], 0);
        prop_assert!(log.final_buffer <= (c.buffer_capacity / c.buffer_quantum).round() as u64);
        prop_assert_eq!(session.chunks.len(), choices.len());

        let (_, f) = simulate_download::<f64>(&ladder, &choices, tr, &c).unwrap();
        let fd: f64 = f.download_s.iter().sum::<f64>() + f.idle_s.iter().sum::<f64>();
        prop_assert!((f.wall_clock_s - fd).abs() <= 1e-9);
        let played = f.wall_clock_s - f.initial_buffering_s - f.stall_s.iter().sum::<f64>();
        prop_assert!((played - (2.0 * choices.len() as f64 - f.final_buffer_s)).abs() <= 1e-9);
    }
}
