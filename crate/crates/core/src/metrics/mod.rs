//! Calibration and uncertainty metrics over predictive probabilities.

mod report;

pub use report::{MetricsReport, OodReport};

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, shape_err, Result};
use crate::network::argmax;
use crate::tensor::Tensor;

/// Probabilities below this are clamped inside the log.
pub const NLL_CLAMP: f64 = 1e-12;
pub const DEFAULT_CALIBRATION_BINS: usize = 20;
pub const DEFAULT_ENTROPY_BINS: usize = 50;

fn check(probs: &Tensor, labels: &[usize], op: &'static str) -> Result<()> {
    if probs.rank() != 2 || probs.rows() != labels.len() || labels.is_empty() {
        return shape_err(op, format!("{:?} with {} labels", probs.shape(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.row_len()) {
        return invalid(format!("label {bad} out of range for {} classes", probs.row_len()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Nll {
    pub value: f64,
    /// Examples whose true-class probability fell below the clamp.
    pub clamped: usize,
}

/// Mean negative log-likelihood of the true labels.
pub fn nll(probs: &Tensor, labels: &[usize]) -> Result<Nll> {
    check(probs, labels, "nll")?;
    let mut total = 0.0;
    let mut clamped = 0;
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.at(r, y);
        if p < NLL_CLAMP {
            clamped += 1;
        }
        total -= p.max(NLL_CLAMP).ln();
    }
    Ok(Nll {
        value: total / labels.len() as f64,
        clamped,
    })
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check(probs, labels, "accuracy")?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(probs.row(r)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Max-class probability per row.
pub fn confidences(probs: &Tensor) -> Vec<f64> {
    (0..probs.rows())
        .map(|r| probs.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `sum_b (n_b / N) |acc_b - conf_b|`
    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        self.bins
            .iter()
            .filter_map(|b| Some(b.count as f64 / n * (b.accuracy? - b.mean_confidence?).abs()))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin", "lower", "upper", "count", "mean_confidence", "accuracy"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (i, b) in self.bins.iter().enumerate() {
            out.write_record([
                i.to_string(),
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                opt(b.mean_confidence),
                opt(b.accuracy),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bin of a confidence in `[0, 1]`: `ceil(c * M)` one-based with `c = 0`
/// in the first bin, i.e. right-closed intervals `((b-1)/M, b/M]`.
pub fn calibration_bin(c: f64, bins: usize) -> usize {
    ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1
}

pub fn calibration_curve(probs: &Tensor, labels: &[usize], bins: usize) -> Result<CalibrationBins> {
    check(probs, labels, "calibration_curve")?;
    if bins == 0 {
        return invalid("need at least one calibration bin");
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit = vec![0usize; bins];
    for (r, &y) in labels.iter().enumerate() {
        let row = probs.row(r);
        let pred = argmax(row);
        let c = row[pred];
        let b = calibration_bin(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit[b] += (pred == y) as usize;
    }
    Ok(CalibrationBins {
        bins: (0..bins)
            .map(|b| {
                let n = count[b];
                CalibrationBin {
                    lower: b as f64 / bins as f64,
                    upper: (b + 1) as f64 / bins as f64,
                    count: n,
                    mean_confidence: (n > 0).then(|| conf_sum[b] / n as f64),
                    accuracy: (n > 0).then(|| hit[b] as f64 / n as f64),
                }
            })
            .collect(),
    })
}

pub fn ece(probs: &Tensor, labels: &[usize], bins: usize) -> Result<f64> {
    Ok(calibration_curve(probs, labels, bins)?.ece())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U over midranks).
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return shape_err("auroc", "scores and labels differ in length");
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("auroc needs both positive and negative examples");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("auroc scores contain NaN");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are one-based; the tie group shares the midrank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUROC of in-distribution (positive) against out-of-distribution scores.
pub fn auroc_in_out(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = scores_in.iter().chain(scores_out).copied().collect();
    let pos: Vec<bool> = (0..scores.len()).map(|i| i < scores_in.len()).collect();
    auroc(&scores, &pos)
}

/// False-positive rate at the highest threshold `t` (accept when
/// `score >= t`) whose true-positive rate on `scores_in` reaches 0.95.
pub fn fpr_at_95_tpr(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    fpr_at_tpr(scores_in, scores_out, 0.95)
}

pub fn fpr_at_tpr(scores_in: &[f64], scores_out: &[f64], tpr: f64) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return invalid("fpr_at_tpr needs in- and out-of-distribution scores");
    }
    if !(tpr > 0.0 && tpr <= 1.0) {
        return invalid(format!("target tpr {tpr} outside (0, 1]"));
    }
    let mut sorted = scores_in.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // smallest k with k / n >= tpr, guarding against rounding in tpr * n
    let n = sorted.len();
    let mut k = (tpr * n as f64).ceil() as usize;
    while k > 1 && (k - 1) as f64 / n as f64 >= tpr {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < tpr {
        k += 1;
    }
    let t = sorted[k.clamp(1, n) - 1];
    Ok(scores_out.iter().filter(|&&s| s >= t).count() as f64 / scores_out.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points at every distinct score, thresholds descending.
pub fn roc_curve(scores_in: &[f64], scores_out: &[f64]) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = scores_in.iter().chain(scores_out).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |s: &[f64], t: f64| s.iter().filter(|&&v| v >= t).count() as f64 / s.len().max(1) as f64;
    thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            tpr: rate(scores_in, t),
            fpr: rate(scores_out, t),
        })
        .collect()
}

pub fn write_roc_csv<W: Write>(w: W, points: &[RocPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "tpr", "fpr"])?;
    for p in points {
        out.write_record([p.threshold.to_string(), p.tpr.to_string(), p.fpr.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `-sum_k p log p` per row, with `0 log 0 = 0`.
pub fn predictive_entropy(probs: &Tensor) -> Vec<f64> {
    (0..probs.rows())
        .map(|r| probs.row(r).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins over `[lo, hi]`; values outside are clamped into the end
    /// bins, the last bin is closed.
    pub fn uniform(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return invalid(format!("bad histogram range [{lo}, {hi}] with {bins} bins"));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self {
            edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            counts,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lower", "upper", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Entropy histogram over `[0, ln K]`.
pub fn entropy_histogram(probs: &Tensor, bins: usize) -> Result<Histogram> {
    let k = probs.row_len();
    if k < 2 {
        return invalid("entropy histogram needs at least two classes");
    }
    Histogram::uniform(&predictive_entropy(probs), 0.0, (k as f64).ln(), bins)
}
