//! One shared memory bank versus averaging the logits of single-pair
//! predictions, at several support sizes.

use icl_seg::evaluation::{evaluate, EvalOptions};
use icl_seg::predictor::{Aggregation, Predictor, PredictorConfig};
use icl_seg::synthbench::{pooled_benchmark, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let bench = pooled_benchmark(&SynthSpec::default(), 50, 20)?;
    let classes = bench.class_splits();
    println!("size  memory  logit_avg");
    for size in [1, 3, 10] {
        let mut row = format!("{size:>4}");
        for aggregation in [Aggregation::Memory, Aggregation::LogitAvg] {
            let predictor = Predictor::toy(PredictorConfig {
                support_size: size,
                aggregation,
                ..Default::default()
            })?;
            let report = evaluate(&predictor, &classes, "synthbench", EvalOptions::default())?;
            row.push_str(&format!("  {:>6.3}", report.mean_miou));
        }
        println!("{row}");
    }
    Ok(())
}
