//! Mini-batch training with validation-loss model selection, and k-fold
//! cross-validation on top of it.

mod adam;

pub use adam::Adam;

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_indices, FoldSpec, MultimodalDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, EpochTimer, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ops, Gradients, Graph};

/// Samples per forward pass during evaluation. Evaluation results do not
/// depend on this value.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 40,
            batch_size: 24,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 0.8,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("epochs, batch_size and patience must all be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.adam_eps < 0.0 || !(self.clip_norm > 0.0) {
            return Err(Error::config("adam_eps must be non-negative and clip_norm positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub seconds: Vec<f64>,
    pub best_epoch: usize,
}

impl RunHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing history: {e}"));
        w.write_record(["epoch", "train_loss", "val_loss", "seconds"]).map_err(err)?;
        for i in 0..self.epochs() {
            w.write_record([
                i.to_string(),
                self.train_loss[i].to_string(),
                self.val_loss[i].to_string(),
                self.seconds[i].to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing history: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    /// Same curves with wall times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RunHistory {
        RunHistory { seconds: vec![0.0; self.seconds.len()], ..self.clone() }
    }
}

/// Train, validation and test splits of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: MultimodalDataset,
    pub val: MultimodalDataset,
    pub test: MultimodalDataset,
}

impl FoldData {
    pub fn from_spec(dataset: &MultimodalDataset, fold: &FoldSpec) -> Result<Self> {
        Ok(FoldData {
            train: dataset.subset(&fold.train)?,
            val: dataset.subset(&fold.val)?,
            test: dataset.subset(&fold.test)?,
        })
    }
}

impl From<(MultimodalDataset, MultimodalDataset, MultimodalDataset)> for FoldData {
    fn from((train, val, test): (MultimodalDataset, MultimodalDataset, MultimodalDataset)) -> Self {
        FoldData { train, val, test }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Eval-mode class probabilities `[N, n]`, row-major.
pub fn predict_proba(model: &Model, data: &MultimodalDataset) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(data.len() * data.num_classes());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = model.logits(&data.batch(chunk)?)?;
        probs.extend_from_slice(ops::softmax_rows(&logits)?.data());
    }
    Ok(probs)
}

pub fn evaluate(model: &Model, data: &MultimodalDataset) -> Result<Evaluation> {
    let n = data.num_classes();
    let probs = predict_proba(model, data)?;
    let truth = data.batch_labels(&(0..data.len()).collect::<Vec<_>>());
    let pred = metrics::argmax_rows(&probs, n);
    Ok(Evaluation {
        loss: metrics::cross_entropy(&probs, &truth, n)?,
        mae: metrics::mae(&probs, &truth, n)?,
        accuracy: metrics::multiclass_accuracy(&pred, &truth, n)?,
        f1: metrics::macro_f1(&pred, &truth, n)?,
    })
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

fn check_fold(config: &ModelConfig, fold: &FoldData) -> Result<()> {
    for (name, split) in [("train", &fold.train), ("val", &fold.val), ("test", &fold.test)] {
        if split.is_empty() {
            return Err(Error::dim(format!("{name} split is empty")));
        }
        if split.shapes() != config.modalities {
            return Err(Error::dim(format!(
                "{name} split modality shapes {:?} do not match model config {:?}",
                split.shapes(),
                config.modalities
            )));
        }
        if split.num_classes() != config.num_classes {
            return Err(Error::dim(format!(
                "{name} split has {} classes, model predicts {}",
                split.num_classes(),
                config.num_classes
            )));
        }
    }
    Ok(())
}

/// Per-epoch batch order; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    shuffled_indices(n, seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: RunHistory,
    pub report: MetricsReport,
}

pub fn train_fold(config: &ModelConfig, spec: &TrainSpec, fold: &FoldData) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    check_fold(config, fold)?;
    let probe = metrics::MemoryProbe::start();

    let mut model = Model::build(config, spec.seed)?;
    let mut opt = Adam::new(spec.learning_rate, spec.beta1, spec.beta2, spec.adam_eps);
    let mut timer = EpochTimer::new();
    let mut history = RunHistory { train_loss: vec![], val_loss: vec![], seconds: vec![], best_epoch: 0 };
    let mut best = (f64::INFINITY, model.params().snapshot());
    let mut step = 0u64;

    for epoch in 0..spec.epochs {
        timer.start();
        let order = epoch_order(fold.train.len(), spec.seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch = fold.train.batch(chunk)?;
            let labels = fold.train.batch_labels(chunk);
            let (loss, mut grads) = {
                let mut g = Graph::with_mode(model.params(), true, spec.seed, step);
                let logits = model.forward(&mut g, &batch)?;
                let loss = g.cross_entropy(logits, &labels)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, loss: value });
                }
                (value, g.backward(loss)?)
            };
            clip_global_norm(&mut grads, spec.clip_norm);
            opt.update(model.params_mut(), &grads)?;
            total += loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = total / fold.train.len() as f64;
        let val = evaluate(&model, &fold.val).map_err(|e| match e {
            Error::Metric(_) => Error::Diverged { epoch, loss: f64::NAN },
            e => e,
        })?;
        history.seconds.push(timer.stop());
        history.train_loss.push(train_loss);
        history.val_loss.push(val.loss);
        if !val.loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val.loss });
        }
        if val.loss < best.0 {
            best = (val.loss, model.params().snapshot());
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= spec.patience {
            break;
        }
    }

    model.params_mut().copy_values_from(&best.1)?;
    drop(best);
    let test = evaluate(&model, &fold.test)?;
    let report = MetricsReport {
        loss: test.loss,
        mae: test.mae,
        accuracy: test.accuracy,
        f1: test.f1,
        train_time_h: timer.total_hours(),
        peak_memory_mb: probe.allocation_high_water_mark(),
        params: model.count_params(),
    };
    Ok(TrainOutcome { model, history, report })
}

type FoldResult = Result<(MetricsReport, RunHistory)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mean: MetricsReport,
    pub per_fold: Vec<MetricsReport>,
    pub histories: Vec<RunHistory>,
}

/// Trains every fold in `folds` sequentially.
pub fn run_cv(config: &ModelConfig, spec: &TrainSpec, dataset: &MultimodalDataset, folds: &[FoldSpec]) -> Result<CvResult> {
    run_cv_parallel(config, spec, dataset, folds, 1)
}

/// Like [`run_cv`] with up to `threads` folds in flight. Each fold runs on
/// its own thread with its own probes, so every number except the wall
/// times is independent of `threads`.
pub fn run_cv_parallel(
    config: &ModelConfig,
    spec: &TrainSpec,
    dataset: &MultimodalDataset,
    folds: &[FoldSpec],
    threads: usize,
) -> Result<CvResult> {
    if folds.is_empty() {
        return Err(Error::config("cross-validation needs at least one fold"));
    }
    let run_one = |f: &FoldSpec| -> FoldResult {
        let wrap = |e: Error| Error::Fold { fold: f.fold_index, source: Box::new(e) };
        let data = FoldData::from_spec(dataset, f).map_err(wrap)?;
        let out = train_fold(config, spec, &data).map_err(wrap)?;
        Ok((out.report, out.history))
    };

    let results: Vec<FoldResult> = if threads <= 1 {
        folds.iter().map(run_one).collect()
    } else {
        let slots: Vec<Mutex<Option<FoldResult>>> =
            folds.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..threads.min(folds.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= folds.len() {
                        break;
                    }
                    let r = run_one(&folds[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().expect("every fold ran")).collect()
    };

    let mut per_fold = Vec::with_capacity(folds.len());
    let mut histories = Vec::with_capacity(folds.len());
    for r in results {
        let (rep, hist) = r?;
        per_fold.push(rep);
        histories.push(hist);
    }
    Ok(CvResult { mean: MetricsReport::aggregate(&per_fold)?, per_fold, histories })
}
