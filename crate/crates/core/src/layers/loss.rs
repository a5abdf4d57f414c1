use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How the squared error is normalized. Recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossConvention {
    /// Squared error summed over the pixels of each sample, averaged over
    /// the mini-batch.
    SampleSumBatchMean,
}

impl LossConvention {
    pub fn tag(self) -> u8 {
        match self {
            LossConvention::SampleSumBatchMean => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(LossConvention::SampleSumBatchMean),
            _ => None,
        }
    }
}

/// `loss = (1/N) Σ_i ‖label_i − pred_i‖²` with `N` the batch size, and its
/// gradient `−(2/N)(label − pred)`.
pub fn mse_loss(pred: &Tensor, label: &Tensor) -> Result<(Real, Tensor)> {
    if pred.shape() != label.shape() {
        return Err(Error::shape(format!(
            "loss shape mismatch: prediction {} vs label {}",
            pred.shape(),
            label.shape()
        )));
    }
    let n = pred.shape().n;
    let scale = 2.0 / n as Real;
    let mut total = 0.0;
    for i in 0..n {
        let sample: Real = pred
            .sample(i)
            .iter()
            .zip(label.sample(i))
            .map(|(p, l)| (l - p) * (l - p))
            .sum();
        total += sample;
    }
    let mut grad = pred.clone();
    for (g, l) in grad.data_mut().iter_mut().zip(label.data()) {
        *g = -scale * (l - *g);
    }
    Ok((total / n as Real, grad))
}
