//! Plug a different patch encoder into the predictor. This one keys patches
//! on mean color alone, without texture or position.

use std::sync::Arc;

use icl_seg::encoder::{FeatureGrid, PatchEncoder, PatchGrid, ToyEncoder, ValueGrid};
use icl_seg::evaluation::{evaluate, EvalOptions};
use icl_seg::image::{BinaryMask, Image};
use icl_seg::predictor::{Embeddings, Predictor, PredictorConfig};
use icl_seg::synthbench::{pooled_benchmark, SynthSpec};

struct MeanColor {
    toy: ToyEncoder,
}

impl PatchEncoder for MeanColor {
    fn encode_keys(&self, image: &Image) -> icl_seg::Result<FeatureGrid> {
        let full = self.toy.encode_keys(image)?;
        let c = image.channels();
        let data = full.patches().flat_map(|p| p[..c].to_vec()).collect();
        PatchGrid::new(full.grid_h(), full.grid_w(), c, full.stride(), data)
    }

    fn encode_values(&self, image: &Image, mask: &BinaryMask) -> icl_seg::Result<ValueGrid> {
        self.toy.encode_values(image, mask)
    }

    fn fingerprint(&self) -> String {
        format!("mean-color/{}", self.toy.fingerprint())
    }
}

fn main() -> icl_seg::Result<()> {
    let bench = pooled_benchmark(&SynthSpec::default(), 50, 20)?;
    let classes = bench.class_splits();
    let config = PredictorConfig::default();

    let toy = Predictor::toy(config.clone())?;
    let custom = Predictor::new(Arc::new(MeanColor { toy: ToyEncoder::default() }), config)?
        .with_embeddings(Arc::new(Embeddings::toy()));
    for (name, predictor) in [("toy", &toy), ("mean color", &custom)] {
        let report = evaluate(predictor, &classes, "synthbench", EvalOptions::default())?;
        println!("{name:>10}: mIoU {:.3}", report.mean_miou);
    }
    Ok(())
}
