//! Segment one synthetic query from a handful of same-class support pairs
//! and write the predicted mask next to the ground truth.
//!
//!     cargo run --example segment_synthetic -- [out_dir]

use icl_seg::evaluation::iou;
use icl_seg::io::{write_image, write_mask};
use icl_seg::predictor::{Predictor, PredictorConfig, Query};
use icl_seg::selection::Strategy;
use icl_seg::synthbench::{generate, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "segment_synthetic_out".into());
    let out = std::path::Path::new(&out);

    let set = generate(&SynthSpec {
        n_classes: 1,
        pairs_per_class: 9,
        image_size: 64,
        ..Default::default()
    })?;
    let pairs = &set.classes[0].pairs;
    let (query, support) = pairs.split_first().unwrap();

    let predictor = Predictor::toy(PredictorConfig {
        strategy: Strategy::Full,
        support_size: support.len(),
        ..Default::default()
    })?;
    let meta = predictor.prepare(support)?;
    let prediction = predictor.predict(&Query::from(query), &meta)?;

    write_image(&out.join("query.png"), &query.image)?;
    write_mask(&out.join("truth.png"), &query.mask)?;
    write_mask(&out.join("predicted.png"), &prediction.mask)?;
    println!("support: {}", prediction.selection.chosen.join(", "));
    println!("foreground IoU {:.3}; wrote {}", iou(&prediction.mask, &query.mask)?, out.display());
    Ok(())
}
