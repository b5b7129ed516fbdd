//! Search spaces, one-at-a-time sweeps, ablation plans and result tables.

mod report;

pub use report::{emit_report, read_results_csv, render_csv, render_markdown, ReportRow};

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{FoldSpec, MultimodalDataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{analytic_param_count, ModelConfig};
use crate::training::{run_cv, TrainSpec};

pub const MANIFEST_VERSION: u32 = 1;

/// The four architectural knobs, in sweep priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hyper {
    Layers,
    Heads,
    DModel,
    Ffn,
}

impl Hyper {
    pub const ALL: [Hyper; 4] = [Hyper::Layers, Hyper::Heads, Hyper::DModel, Hyper::Ffn];

    pub fn label(self) -> &'static str {
        match self {
            Hyper::Layers => "L",
            Hyper::Heads => "H",
            Hyper::DModel => "d_m",
            Hyper::Ffn => "FFN",
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One point in the search space. Layers and heads apply to both the
/// cross-modal and the fusion stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyperparams {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn: usize,
}

impl Hyperparams {
    pub const DEFAULT: Hyperparams = Hyperparams { layers: 5, heads: 3, d_model: 30, ffn: 120 };

    pub fn get(&self, h: Hyper) -> usize {
        match h {
            Hyper::Layers => self.layers,
            Hyper::Heads => self.heads,
            Hyper::DModel => self.d_model,
            Hyper::Ffn => self.ffn,
        }
    }

    pub fn with(mut self, h: Hyper, v: usize) -> Self {
        match h {
            Hyper::Layers => self.layers = v,
            Hyper::Heads => self.heads = v,
            Hyper::DModel => self.d_model = v,
            Hyper::Ffn => self.ffn = v,
        }
        self
    }

    /// `base` with the hyperparameters replaced.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            cross_layers: self.layers,
            self_layers: self.layers,
            cross_heads: self.heads,
            self_heads: self.heads,
            d_model: self.d_model,
            ffn_nominal: self.ffn,
            ..base.clone()
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Locally optimal value per hyperparameter; dataset dependent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalOpts {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub ffn: Option<usize>,
}

impl LocalOpts {
    pub fn new(layers: usize, heads: usize, d_model: usize, ffn: usize) -> Self {
        LocalOpts { layers: Some(layers), heads: Some(heads), d_model: Some(d_model), ffn: Some(ffn) }
    }

    pub fn get(&self, h: Hyper) -> Option<usize> {
        match h {
            Hyper::Layers => self.layers,
            Hyper::Heads => self.heads,
            Hyper::DModel => self.d_model,
            Hyper::Ffn => self.ffn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub hp: Hyperparams,
    /// Deviating hyperparameters joined with `" + "`, or `"Default"`.
    pub tag: String,
    /// Hyperparameters that differ from the defaults, in priority order.
    pub varied: Vec<Hyper>,
}

impl TrialConfig {
    pub fn new(hp: Hyperparams, defaults: &Hyperparams) -> Self {
        let varied: Vec<Hyper> = Hyper::ALL.into_iter().filter(|&h| hp.get(h) != defaults.get(h)).collect();
        TrialConfig { hp, tag: tag_for(&varied), varied }
    }
}

pub fn tag_for(varied: &[Hyper]) -> String {
    if varied.is_empty() {
        "Default".to_string()
    } else {
        varied.iter().map(|h| h.label()).collect::<Vec<_>>().join(" + ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers_set: Vec<usize>,
    pub heads_set: Vec<usize>,
    pub dm_set: Vec<usize>,
    pub ffn_set: Vec<usize>,
    pub defaults: Hyperparams,
    #[serde(default)]
    pub local_opts: LocalOpts,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            layers_set: vec![1, 2, 3, 4, 5],
            heads_set: vec![1, 2, 3],
            dm_set: vec![9, 18, 30],
            ffn_set: vec![30, 60, 90, 120],
            defaults: Hyperparams::DEFAULT,
            local_opts: LocalOpts::default(),
        }
    }
}

impl SearchSpace {
    pub fn set(&self, h: Hyper) -> &[usize] {
        match h {
            Hyper::Layers => &self.layers_set,
            Hyper::Heads => &self.heads_set,
            Hyper::DModel => &self.dm_set,
            Hyper::Ffn => &self.ffn_set,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedPair {
    pub d_model: usize,
    pub heads: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedSpace {
    pub valid_pairs: Vec<(usize, usize)>,
    pub rejected: Vec<RejectedPair>,
}

/// Checks every `(d_m, H)` cross pair for divisibility and every value for
/// positivity. Fails only if nothing valid remains or a value is unusable.
pub fn validate(space: &SearchSpace) -> Result<ValidatedSpace> {
    for h in Hyper::ALL {
        let set = space.set(h);
        if set.is_empty() {
            return Err(Error::config(format!("{h} value set is empty")));
        }
        if set.contains(&0) {
            return Err(Error::config(format!("{h} values must be positive")));
        }
    }
    if let Some(f) = space.ffn_set.iter().find(|&&f| f % crate::model::FFN_REFERENCE_DIM != 0) {
        return Err(Error::config(format!(
            "FFN value {f} is not a multiple of {}",
            crate::model::FFN_REFERENCE_DIM
        )));
    }
    let mut valid_pairs = Vec::new();
    let mut rejected = Vec::new();
    for &d in &space.dm_set {
        for &h in &space.heads_set {
            if d % h == 0 {
                valid_pairs.push((d, h));
            } else {
                rejected.push(RejectedPair { d_model: d, heads: h, reason: format!("{d} mod {h} = {}", d % h) });
            }
        }
    }
    if valid_pairs.is_empty() {
        return Err(Error::config("no (d_model, heads) pair in the search space is divisible"));
    }
    Ok(ValidatedSpace { valid_pairs, rejected })
}

/// One trial per value per hyperparameter, others pinned to `defaults`,
/// ordered L, H, d_m, FFN. Values that would make `d_model` indivisible by
/// the head count are skipped.
pub fn isolation_sweep(space: &SearchSpace, defaults: &Hyperparams) -> Vec<TrialConfig> {
    let mut out = Vec::new();
    for h in Hyper::ALL {
        for &v in space.set(h) {
            let hp = defaults.with(h, v);
            if hp.heads == 0 || !hp.d_model.is_multiple_of(hp.heads) {
                continue;
            }
            out.push(TrialConfig::new(hp, defaults));
        }
    }
    out
}

/// Default row followed by every subset of at least two hyperparameters set
/// to its local optimum: pairs, triples, then all four, each group in
/// lexicographic order of L, H, d_m, FFN.
pub fn ablation_plan(defaults: &Hyperparams, opts: &LocalOpts) -> Result<Vec<TrialConfig>> {
    for h in Hyper::ALL {
        if opts.get(h).is_none() {
            return Err(Error::config(format!("local optimum for {h} is missing")));
        }
    }
    let mut subsets: Vec<Vec<Hyper>> = (1u32..16)
        .map(|mask| Hyper::ALL.into_iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, h)| h).collect())
        .filter(|s: &Vec<Hyper>| s.len() >= 2)
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    let mut plan = vec![TrialConfig { hp: *defaults, tag: "Default".into(), varied: vec![] }];
    for s in subsets {
        let mut hp = *defaults;
        for &h in &s {
            hp = hp.with(h, opts.get(h).expect("checked above"));
        }
        if !hp.d_model.is_multiple_of(hp.heads) {
            return Err(Error::config(format!(
                "{} gives (d_model = {}, heads = {}), which is not divisible",
                tag_for(&s),
                hp.d_model,
                hp.heads
            )));
        }
        plan.push(TrialConfig { hp, tag: tag_for(&s), varied: s });
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    /// Analytic trainable-parameter count.
    pub params: usize,
    pub mean: Option<MetricsReport>,
    pub per_fold: Vec<MetricsReport>,
    /// `"<class>: <message>"` when the trial failed.
    pub error: Option<String>,
}

/// Runs every trial over `folds`. A failing trial becomes an errored row and
/// the plan continues. With `parallelism > 1`, trials run on separate
/// threads; results stay in plan order.
pub fn run_plan(
    plan: &[TrialConfig],
    base: &ModelConfig,
    dataset: &MultimodalDataset,
    folds: &[FoldSpec],
    spec: &TrainSpec,
    parallelism: usize,
) -> Vec<TrialResult> {
    let run_one = |t: &TrialConfig| -> TrialResult {
        let cfg = t.hp.apply(base);
        let params = analytic_param_count(&cfg).total;
        match cfg.validate().and_then(|_| run_cv(&cfg, spec, dataset, folds)) {
            Ok(cv) => TrialResult { config: t.clone(), params, mean: Some(cv.mean), per_fold: cv.per_fold, error: None },
            Err(e) => TrialResult {
                config: t.clone(),
                params,
                mean: None,
                per_fold: vec![],
                error: Some(format!("{}: {e}", e.class())),
            },
        }
    };
    if parallelism <= 1 {
        return plan.iter().map(run_one).collect();
    }
    let slots: Vec<Mutex<Option<TrialResult>>> = plan.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallelism.min(plan.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= plan.len() {
                    break;
                }
                let r = run_one(&plan[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every trial ran")).collect()
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Shape, class count, dropout and kernel; hyperparameters are
    /// overridden per trial.
    pub base_model: ModelConfig,
    pub train: TrainSpec,
    pub space: SearchSpace,
    pub seed: u64,
}

impl ExperimentManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ExperimentManifest =
            serde_json::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "manifest format_version {} is not {MANIFEST_VERSION}",
                m.format_version
            )));
        }
        Ok(m)
    }
}
