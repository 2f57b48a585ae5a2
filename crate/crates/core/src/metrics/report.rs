use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{
    accuracy, auroc, auroc_in_out, calibration_curve, confidences, entropy_histogram, fpr_at_95_tpr, nll, roc_curve,
    write_roc_csv, CalibrationBins, Histogram, DEFAULT_CALIBRATION_BINS, DEFAULT_ENTROPY_BINS,
};
use crate::error::Result;
use crate::network::argmax;
use crate::tensor::Tensor;

/// In-distribution evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub examples: usize,
    pub accuracy: f64,
    pub nll: f64,
    /// Rows whose true-class probability hit the NLL clamp.
    pub nll_clamped: usize,
    pub ece: f64,
    /// Confidence as a detector of correct predictions; `None` when every
    /// prediction is right or every one is wrong.
    pub auroc: Option<f64>,
    pub entropy_histogram: Histogram,
    pub calibration: CalibrationBins,
}

impl MetricsReport {
    pub fn compute(probs: &Tensor, labels: &[usize]) -> Result<Self> {
        let n = nll(probs, labels)?;
        let calibration = calibration_curve(probs, labels, DEFAULT_CALIBRATION_BINS)?;
        let correct: Vec<bool> = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| argmax(probs.row(r)) == y)
            .collect();
        let auroc = auroc(&confidences(probs), &correct).ok();
        Ok(Self {
            examples: labels.len(),
            accuracy: accuracy(probs, labels)?,
            nll: n.value,
            nll_clamped: n.clamped,
            ece: calibration.ece(),
            auroc,
            entropy_histogram: entropy_histogram(probs, DEFAULT_ENTROPY_BINS)?,
            calibration,
        })
    }

    /// `metrics.json`, `calibration.csv` and `entropy_histogram.csv` in `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(self)?)?;
        self.calibration
            .write_csv(fs::File::create(dir.join("calibration.csv"))?)?;
        self.entropy_histogram
            .write_csv(fs::File::create(dir.join("entropy_histogram.csv"))?)?;
        Ok(())
    }
}

/// Known-versus-unknown detection by thresholding max-class probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OodReport {
    pub in_examples: usize,
    pub out_examples: usize,
    pub auroc: f64,
    pub fpr_at_95_tpr: f64,
    pub in_entropy: Histogram,
    pub out_entropy: Histogram,
}

impl OodReport {
    pub fn compute(probs_in: &Tensor, probs_out: &Tensor) -> Result<Self> {
        let (si, so) = (confidences(probs_in), confidences(probs_out));
        Ok(Self {
            in_examples: si.len(),
            out_examples: so.len(),
            auroc: auroc_in_out(&si, &so)?,
            fpr_at_95_tpr: fpr_at_95_tpr(&si, &so)?,
            in_entropy: entropy_histogram(probs_in, DEFAULT_ENTROPY_BINS)?,
            out_entropy: entropy_histogram(probs_out, DEFAULT_ENTROPY_BINS)?,
        })
    }

    /// `ood.json`, `roc.csv` and the two entropy histograms in `dir`.
    pub fn write_dir(&self, dir: &Path, probs_in: &Tensor, probs_out: &Tensor) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ood.json"), serde_json::to_string_pretty(self)?)?;
        let roc = roc_curve(&confidences(probs_in), &confidences(probs_out));
        write_roc_csv(fs::File::create(dir.join("roc.csv"))?, &roc)?;
        self.in_entropy
            .write_csv(fs::File::create(dir.join("entropy_in.csv"))?)?;
        self.out_entropy
            .write_csv(fs::File::create(dir.join("entropy_out.csv"))?)?;
        Ok(())
    }
}
