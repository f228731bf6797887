//! Compare nearest-neighbour and random support selection from a pooled
//! meta-support set: how many chosen pairs share the query's class, and
//! what that does to IoU.

use icl_seg::evaluation::iou;
use icl_seg::predictor::{Predictor, PredictorConfig, Query};
use icl_seg::selection::Strategy;
use icl_seg::synthbench::{pooled_benchmark, SynthSpec};

fn class_of(id: &str) -> &str {
    id.split('_').next().unwrap_or(id)
}

fn main() -> icl_seg::Result<()> {
    let bench = pooled_benchmark(&SynthSpec::default(), 40, 8)?;
    for strategy in [Strategy::Knn, Strategy::Random] {
        let predictor = Predictor::toy(PredictorConfig {
            strategy,
            support_size: 10,
            ..Default::default()
        })?;
        let meta = predictor.prepare(&bench.meta_support)?;
        let (mut same, mut total, mut score, mut n) = (0, 0, 0.0, 0);
        for (_, _, queries) in &bench.eval {
            for q in queries {
                let p = predictor.predict(&Query::from(q), &meta)?;
                same += p.selection.chosen.iter().filter(|id| class_of(id) == class_of(&q.id)).count();
                total += p.selection.chosen.len();
                score += iou(&p.mask, &q.mask)?;
                n += 1;
            }
        }
        println!(
            "{strategy:>6}: {same}/{total} support pairs from the query's class, mean IoU {:.3}",
            score / n as f64
        );
    }
    Ok(())
}
