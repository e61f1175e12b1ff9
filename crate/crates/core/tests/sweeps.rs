use std::time::Instant;

use ksqi_core::sweep::{
    ablation_sweep, bin_size_sweep, decade_grid, lambda_sweep, lambda_sweep_csv, lambda_tradeoff_holds,
    sweep_rows_csv, synthetic_sweep_data,
};
use ksqi_core::synthetic::SyntheticConfig;
use ksqi_core::train::TrainOptions;

fn options() -> TrainOptions<f64> {
    TrainOptions {
        first_chunk_adaptation: false,
        ..TrainOptions::default()
    }
}

fn cfg() -> SyntheticConfig {
    SyntheticConfig {
        noise_sigma: 2.0,
        seed: 5,
        ..SyntheticConfig::default()
    }
}

#[test]
fn lambda_sweep_end_to_end() {
    let data = synthetic_sweep_data::<f64>(300, 200, &cfg()).unwrap();
    let lambdas = decade_grid(0.01, 10000.0);
    let pts = lambda_sweep(&data.train, data.truth.spec(), &lambdas, &options(), &data.held_out).unwrap();
    assert!(lambda_tradeoff_holds(&pts));
    let csv = lambda_sweep_csv(&pts);
    assert_eq!(csv.lines().count(), lambdas.len() + 1);
    assert!(pts.iter().all(|p| p.validation_mse.is_some()));
}

#[test]
fn bin_size_and_ablation_sweeps_end_to_end() {
    let t = Instant::now();
    let data = synthetic_sweep_data::<f64>(300, 200, &cfg()).unwrap();
    let bins = bin_size_sweep(&data, &[5, 10, 20], 1.0, &options(), 0).unwrap();
    println!("bin-size sweep {:?}", t.elapsed());
    assert_eq!(bins.len(), 3);
    let abl = ablation_sweep(&data, 1.0, &options(), 0).unwrap();
    assert_eq!(abl.len(), 5);
    for rows in [&bins, &abl] {
        for r in rows.iter() {
            assert!(r.correlations.plcc > 0.5, "{r:?}");
        }
    }
    assert_eq!(sweep_rows_csv("n_steps", &bins).lines().next().unwrap(), "n_steps,plcc,srcc,krcc,held_out_mse");
    // same seed, same rows
    assert_eq!(abl, ablation_sweep(&data, 1.0, &options(), 0).unwrap());
}
