use crate::error::{Error, Result};
use crate::model_io::LabeledDataset;
use crate::nn::{predict, Model};

/// A network performance measure; higher is better.
pub trait Metric: Sync {
    fn name(&self) -> &str;
    fn score(&self, model: &dyn Model, dataset: &LabeledDataset) -> Result<f64>;
}

/// Fraction of samples whose arg-max logit equals the label. NaN logits
/// count as wrong.
#[derive(Debug, Clone, Copy, Default)]
pub struct Top1Accuracy;

impl Metric for Top1Accuracy {
    fn name(&self) -> &str {
        "top1_accuracy"
    }

    fn score(&self, model: &dyn Model, dataset: &LabeledDataset) -> Result<f64> {
        let mut correct = 0usize;
        for (sample, label) in dataset.iter() {
            if predict(&model.forward(sample)?)?.is(label) {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

/// Looks up a built-in metric by name.
pub fn metric_by_name(name: &str) -> Option<Box<dyn Metric>> {
    match name {
        "top1_accuracy" | "top1" | "accuracy" => Some(Box::new(Top1Accuracy)),
        _ => None,
    }
}

/// Scores `model` on `dataset`.
pub fn evaluate(model: &dyn Model, dataset: &LabeledDataset, metric: &dyn Metric) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    metric.score(model, dataset)
}
