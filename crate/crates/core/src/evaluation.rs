//! Foreground IoU, per-class evaluation and support-size / strategy sweeps.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassSplit;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, LabeledPair};
use crate::predictor::{Aggregation, BankCache, Predictor, PredictorConfig, Query};
use crate::selection::Strategy;

pub const REPORT_SCHEMA: &str = "icl-seg-report/1";

/// `|pred ∧ gt| / |pred ∨ gt|`, with the empty-∪-empty case defined as 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean of the foreground and background IoU.
pub fn iou_with_background(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok((iou(pred, gt)? + iou(&pred.complement(), &gt.complement())?) / 2.0)
}

/// Anything that can segment a batch of queries given a class's meta-support
/// set. Implemented by [`Predictor`]; tests plug in oracle and constant models.
pub trait SegmentationModel: Sync {
    fn segment(&self, queries: &[Query], meta_support: &[LabeledPair]) -> Result<Vec<Result<BinaryMask>>>;
}

impl SegmentationModel for Predictor {
    fn segment(&self, queries: &[Query], meta_support: &[LabeledPair]) -> Result<Vec<Result<BinaryMask>>> {
        let meta = self.prepare(meta_support)?;
        Ok(self
            .predict_batch(queries, &meta)
            .into_iter()
            .map(|r| r.map(|p| p.mask))
            .collect())
    }
}

/// Labels recorded in a report for the run being evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLabel {
    pub dataset: String,
    pub support_size: usize,
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl RunLabel {
    pub fn for_config(dataset: impl Into<String>, config: &PredictorConfig) -> Self {
        Self {
            dataset: dataset.into(),
            support_size: config.support_size,
            strategy: config.strategy,
            aggregation: config.aggregation,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub include_background: bool,
    /// Record `wall_time`; off makes reports byte-reproducible.
    pub record_timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            include_background: false,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: u32,
    pub class_name: String,
    pub n_queries: usize,
    pub n_failed: usize,
    /// Mean over successful queries; `None` if every query failed.
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub class_id: u32,
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub dataset: String,
    pub support_size: usize,
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    pub include_background: bool,
    pub per_class: Vec<ClassResult>,
    /// Unweighted mean of the per-class means that exist.
    pub mean_miou: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<QueryFailure>,
    /// Fully resolved run configuration, when known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<serde_json::Value>,
}

/// Sums after sorting so the result does not depend on input order.
fn order_free_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Runs `model` on every class's eval pairs against that class's meta-support
/// set. Query failures are listed and counted, not averaged.
pub fn evaluate_model<M: SegmentationModel + ?Sized>(
    model: &M,
    classes: &[ClassSplit],
    label: &RunLabel,
    options: EvalOptions,
) -> Result<EvalReport> {
    let start = Instant::now();
    if classes.is_empty() {
        return Err(Error::InvalidInput("no classes to evaluate".into()));
    }
    let score = if options.include_background {
        iou_with_background
    } else {
        iou
    };
    let mut per_class = Vec::with_capacity(classes.len());
    let mut failures = Vec::new();
    for class in classes {
        let split = &class.split;
        if split.meta_support.is_empty() || split.eval.is_empty() {
            return Err(Error::InvalidInput(format!(
                "class {} needs non-empty meta-support and eval sets",
                class.class_id
            )));
        }
        let queries: Vec<Query> = split.eval.iter().map(Query::from).collect();
        let masks = model.segment(&queries, &split.meta_support)?;
        let mut ious = Vec::with_capacity(masks.len());
        for (pair, mask) in split.eval.iter().zip(masks) {
            match mask.and_then(|m| score(&m, &pair.mask)) {
                Ok(v) => ious.push(v),
                Err(e) => failures.push(QueryFailure {
                    class_id: class.class_id,
                    query_id: pair.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        per_class.push(ClassResult {
            class_id: class.class_id,
            class_name: class.class_name.clone(),
            n_queries: split.eval.len(),
            n_failed: split.eval.len() - ious.len(),
            mean_iou: order_free_mean(&mut ious),
        });
    }
    let mut means: Vec<f64> = per_class.iter().filter_map(|c| c.mean_iou).collect();
    let mean_miou = order_free_mean(&mut means)
        .ok_or_else(|| Error::Evaluation(format!("all {} queries failed", failures.len())))?;
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_owned(),
        dataset: label.dataset.clone(),
        support_size: label.support_size,
        strategy: label.strategy,
        aggregation: label.aggregation,
        include_background: options.include_background,
        per_class,
        mean_miou,
        seed: label.seed,
        wall_time: options.record_timing.then(|| start.elapsed().as_secs_f64()),
        failures,
        config: None,
    })
}

pub fn evaluate(
    predictor: &Predictor,
    classes: &[ClassSplit],
    dataset: &str,
    options: EvalOptions,
) -> Result<EvalReport> {
    evaluate_model(predictor, classes, &RunLabel::for_config(dataset, predictor.config()), options)
}

/// One report per `(size, strategy)` cell, sizes outermost. Cells share the
/// encoder, embeddings and bank cache of `base`.
pub fn sweep(
    base: &Predictor,
    classes: &[ClassSplit],
    dataset: &str,
    support_sizes: &[usize],
    strategies: &[Strategy],
    options: EvalOptions,
) -> Result<Vec<EvalReport>> {
    if support_sizes.is_empty() || strategies.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one size and one strategy".into()));
    }
    if support_sizes.contains(&0) {
        return Err(Error::InvalidInput("support sizes must be ≥ 1".into()));
    }
    let cache: Arc<BankCache> = base.shared_cache();
    let mut reports = Vec::with_capacity(support_sizes.len() * strategies.len());
    for &support_size in support_sizes {
        for &strategy in strategies {
            let config = PredictorConfig {
                support_size,
                strategy,
                ..base.config().clone()
            };
            let cell = base.with_config(config)?.with_cache(Arc::clone(&cache));
            reports.push(evaluate(&cell, classes, dataset, options)?);
        }
    }
    Ok(reports)
}

pub const CSV_HEADER: &str = "dataset,support_size,strategy,aggregation,seed,n_classes,n_queries,n_failed,mean_miou";

/// One row per report.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let queries: usize = r.per_class.iter().map(|c| c.n_queries).sum();
        let failed: usize = r.per_class.iter().map(|c| c.n_failed).sum();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.6}\n",
            csv_field(&r.dataset),
            r.support_size,
            r.strategy,
            r.aggregation,
            r.seed,
            r.per_class.len(),
            queries,
            failed,
            r.mean_miou
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn write_sweep_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    crate::io::write_atomic(path, sweep_csv(reports).as_bytes())
}
