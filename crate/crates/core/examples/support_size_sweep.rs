//! Sweep support sizes and selection strategies on the synthetic benchmark
//! and print the CSV summary.

use icl_seg::evaluation::{sweep, sweep_csv, EvalOptions};
use icl_seg::predictor::{Predictor, PredictorConfig};
use icl_seg::selection::Strategy;
use icl_seg::synthbench::{pooled_benchmark, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let bench = pooled_benchmark(&SynthSpec::default(), 100, 50)?;
    let base = Predictor::toy(PredictorConfig::default())?;
    let reports = sweep(
        &base,
        &bench.class_splits(),
        "synthbench",
        &[1, 2, 5, 10, 20, 50],
        &[Strategy::Knn, Strategy::Random],
        EvalOptions::default(),
    )?;
    print!("{}", sweep_csv(&reports));
    Ok(())
}
