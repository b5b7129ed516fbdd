//! Evaluation metrics and the resource probes used in result tables.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::memory;

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Lower clamp applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub loss: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub train_time_h: f64,
    pub peak_memory_mb: f64,
    pub params: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["loss", "mae", "accuracy", "f1", "train_time_h", "peak_memory_mb", "params"];

    pub fn csv_fields(&self) -> [String; 7] {
        [
            self.loss.to_string(),
            self.mae.to_string(),
            self.accuracy.to_string(),
            self.f1.to_string(),
            self.train_time_h.to_string(),
            self.peak_memory_mb.to_string(),
            self.params.to_string(),
        ]
    }

    /// One CSV line (no trailing newline) in header order.
    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }

    /// Unweighted mean of quality metrics, summed train time, max memory.
    /// `params` is taken from the first report.
    pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or_else(|| Error::Metric("no reports to aggregate".into()))?;
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            loss: mean(|r| r.loss),
            mae: mean(|r| r.mae),
            accuracy: mean(|r| r.accuracy),
            f1: mean(|r| r.f1),
            train_time_h: reports.iter().map(|r| r.train_time_h).sum(),
            peak_memory_mb: reports.iter().map(|r| r.peak_memory_mb).fold(0.0, f64::max),
            params: first.params,
        })
    }
}

fn check_labels(pred: &[usize], truth: &[usize], n: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Metric("metric undefined on empty input".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&y| y >= n) {
        return Err(Error::Metric(format!("label {bad} outside {n} classes")));
    }
    Ok(())
}

/// `confusion[t][p]` counts samples with truth `t` predicted as `p`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(pred, truth, n)?;
    let mut m = vec![vec![0; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean over classes of one-vs-rest accuracy `(TP_i + TN_i) / N`.
pub fn multiclass_accuracy(pred: &[usize], truth: &[usize], n: usize) -> Result<f64> {
    let cm = confusion_matrix(pred, truth, n)?;
    let total = pred.len();
    let mut sum = 0.0;
    for i in 0..n {
        let tp = cm[i][i];
        let fn_ = cm[i].iter().sum::<usize>() - tp;
        let fp = (0..n).map(|t| cm[t][i]).sum::<usize>() - tp;
        let tn = total - tp - fn_ - fp;
        sum += (tp + tn) as f64 / total as f64;
    }
    Ok(sum / n as f64)
}

/// Macro-averaged F1. A class whose precision or recall is undefined, or
/// whose precision and recall are both zero, contributes 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], n: usize) -> Result<f64> {
    let cm = confusion_matrix(pred, truth, n)?;
    let mut sum = 0.0;
    for i in 0..n {
        let tp = cm[i][i] as f64;
        let actual = cm[i].iter().sum::<usize>() as f64;
        let predicted = (0..n).map(|t| cm[t][i]).sum::<usize>() as f64;
        if actual == 0.0 || predicted == 0.0 {
            continue;
        }
        let (p, r) = (tp / predicted, tp / actual);
        if p + r > 0.0 {
            sum += 2.0 * p * r / (p + r);
        }
    }
    Ok(sum / n as f64)
}

fn check_probs(probs: &[f64], truth: &[usize], n: usize) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::Metric("metric undefined on empty input".into()));
    }
    if n == 0 || probs.len() != truth.len() * n {
        return Err(Error::Metric(format!("{} probabilities for {} samples of {n} classes", probs.len(), truth.len())));
    }
    for (j, row) in probs.chunks_exact(n).enumerate() {
        let s: f64 = row.iter().sum();
        if !s.is_finite() || (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Metric(format!("row {j} is not a probability distribution (sum {s})")));
        }
        if truth[j] >= n {
            return Err(Error::Metric(format!("label {} outside {n} classes", truth[j])));
        }
    }
    Ok(())
}

/// Mean negative log-probability of the true class; `probs` is `[N, n]`.
pub fn cross_entropy(probs: &[f64], truth: &[usize], n: usize) -> Result<f64> {
    check_probs(probs, truth, n)?;
    let total: f64 = truth.iter().enumerate().map(|(j, &y)| -probs[j * n + y].max(PROB_FLOOR).ln()).sum();
    Ok(total / truth.len() as f64)
}

/// Mean over all `N * n` entries of `|onehot(y) - p|`.
pub fn mae(probs: &[f64], truth: &[usize], n: usize) -> Result<f64> {
    check_probs(probs, truth, n)?;
    let mut total = 0.0;
    for (j, row) in probs.chunks_exact(n).enumerate() {
        for (c, &p) in row.iter().enumerate() {
            let target = if c == truth[j] { 1.0 } else { 0.0 };
            total += (target - p).abs();
        }
    }
    Ok(total / probs.len() as f64)
}

/// Arg-max per row; ties go to the lowest index.
pub fn argmax_rows(probs: &[f64], n: usize) -> Vec<usize> {
    probs
        .chunks_exact(n)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Accumulates epoch wall times.
#[derive(Debug, Default, Clone)]
pub struct EpochTimer {
    started: Option<Instant>,
    epochs: Vec<Duration>,
}

impl EpochTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self) {
        self.started = Some(Instant::now());
    }

    /// Ends the current epoch and returns its duration in seconds.
    pub fn stop(&mut self) -> f64 {
        let d = self.started.take().map(|s| s.elapsed()).unwrap_or_default();
        self.epochs.push(d);
        d.as_secs_f64()
    }

    pub fn epoch_seconds(&self) -> Vec<f64> {
        self.epochs.iter().map(Duration::as_secs_f64).collect()
    }

    pub fn total_hours(&self) -> f64 {
        self.epochs.iter().map(Duration::as_secs_f64).sum::<f64>() / 3600.0
    }
}

/// High-water mark of tensor-buffer bytes allocated on this thread since
/// [`MemoryProbe::start`], excluding buffers that were already live.
#[derive(Debug, Clone, Copy)]
pub struct MemoryProbe {
    baseline: usize,
}

impl MemoryProbe {
    pub fn start() -> Self {
        memory::reset_peak();
        MemoryProbe { baseline: memory::current_bytes() }
    }

    pub fn peak_bytes(&self) -> usize {
        memory::peak_bytes().saturating_sub(self.baseline)
    }

    /// Peak in decimal megabytes.
    pub fn allocation_high_water_mark(&self) -> f64 {
        self.peak_bytes() as f64 / 1e6
    }
}
