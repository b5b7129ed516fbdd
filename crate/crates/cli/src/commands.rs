use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use husformer::data::{generate_synthetic, load_dataset, make_folds, save_dataset, FoldSpec, SyntheticSpec};
use husformer::hpo::{
    ablation_plan, emit_report, isolation_sweep, read_results_csv, render_markdown, run_plan, validate,
    ExperimentManifest, Hyperparams, ReportRow, SearchSpace, TrialConfig, MANIFEST_VERSION,
};
use husformer::metrics::MetricsReport;
use husformer::model::{analytic_param_count, minimal_config, model_grad_check, ModalityShape, ModelConfig};
use husformer::numerics::Sampling;
use husformer::training::{run_cv_parallel, TrainSpec};
use husformer::Error;

use crate::{
    AblateArgs, Command, GenDataArgs, GradcheckArgs, ParamsArgs, PlanArgs, ReportArgs, SplitArgs, TrainArgs,
    TrainFlags,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::Params(a) => params(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        modalities: a.modalities,
        samples: a.samples,
        classes: a.classes,
        channels: a.channels,
        timesteps: a.timesteps,
        separability: a.separability,
        seed: a.seed,
    })?;
    save_dataset(&a.out, &ds, &[], a.seed)?;
    println!("wrote {} samples, {} modalities, {} classes to {}", ds.len(), a.modalities, a.classes, a.out.display());
    Ok(())
}

fn write_fold_files(dir: &Path, folds: &[FoldSpec]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in folds {
        let path = dir.join(format!("fold_{}.json", f.fold_index));
        let json = serde_json::to_string_pretty(f)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let (folds, out) = match (&a.data, a.n) {
        (Some(dir), _) => {
            let (ds, _) = load_dataset(dir)?;
            let folds = make_folds(ds.len(), a.seed)?;
            save_dataset(dir, &ds, &folds, a.seed)?;
            (folds, a.out.clone().unwrap_or_else(|| dir.clone()))
        }
        (None, Some(n)) => (make_folds(n, a.seed)?, a.out.clone().expect("clap requires --out without --data")),
        (None, None) => bail!(Error::Config("either --data or --n is required".into())),
    };
    write_fold_files(&out, &folds)?;
    let f = &folds[0];
    println!(
        "wrote {} folds to {} (train {}, val {}, test {}; seed {})",
        folds.len(),
        out.display(),
        f.train.len(),
        f.val.len(),
        f.test.len(),
        a.seed
    );
    Ok(())
}

fn train_spec(t: &TrainFlags) -> TrainSpec {
    TrainSpec {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        clip_norm: t.clip,
        patience: t.patience,
        seed: t.seed,
        ..TrainSpec::default()
    }
}

/// Dataset plus its stored folds, truncated to `max_folds`.
fn dataset_and_folds(dir: &Path, max_folds: Option<usize>) -> Result<(husformer::data::MultimodalDataset, Vec<FoldSpec>)> {
    let (ds, meta) = load_dataset(dir)?;
    let mut folds = meta.folds;
    if folds.is_empty() {
        bail!(Error::Config(format!("{} has no fold table; run `husformer split --data {}` first", dir.display(), dir.display())));
    }
    if let Some(k) = max_folds {
        if k == 0 {
            bail!(Error::Config("--max-folds must be at least 1".into()));
        }
        folds.truncate(k);
    }
    Ok((ds, folds))
}

fn base_model(shapes: Vec<ModalityShape>, classes: usize, hp: &Hyperparams, dropout: f64) -> ModelConfig {
    ModelConfig::uniform(shapes, hp.layers, hp.heads, hp.d_model, hp.ffn, classes).with_dropout(dropout)
}

fn train(a: TrainArgs) -> Result<()> {
    let (ds, folds) = dataset_and_folds(&a.data, a.train.max_folds)?;
    let hp = Hyperparams { layers: a.layers, heads: a.heads, d_model: a.dm, ffn: a.ffn };
    let cfg = base_model(ds.shapes(), ds.num_classes(), &hp, a.train.dropout);
    cfg.validate()?;
    let cv = run_cv_parallel(&cfg, &train_spec(&a.train), &ds, &folds, a.parallelism)?;
    if let Some(dir) = &a.history_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (f, h) in folds.iter().zip(&cv.histories) {
            h.save_csv(&dir.join(format!("history_fold{}.csv", f.fold_index)))?;
        }
    }
    println!("fold,{}", MetricsReport::CSV_HEADER.join(","));
    for (f, r) in folds.iter().zip(&cv.per_fold) {
        println!("{},{}", f.fold_index, r.csv_row());
    }
    println!("mean,{}", cv.mean.csv_row());
    Ok(())
}

/// Builds the manifest from `--manifest` or from flags and the dataset.
fn manifest_for(p: &PlanArgs) -> Result<ExperimentManifest> {
    if let Some(path) = &p.manifest {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok(ExperimentManifest::from_json(&text)?);
    }
    let data = p.data.clone().expect("clap requires --data without --manifest");
    let (ds, _) = load_dataset(&data)?;
    let space = SearchSpace::default();
    Ok(ExperimentManifest {
        format_version: MANIFEST_VERSION,
        data_dir: Some(data),
        output_dir: p.out.clone().expect("clap requires --out without --manifest"),
        base_model: base_model(ds.shapes(), ds.num_classes(), &space.defaults, p.train.dropout),
        train: train_spec(&p.train),
        space,
        seed: p.train.seed,
    })
}

fn execute_plan(m: &ExperimentManifest, plan: &[TrialConfig], p: &PlanArgs) -> Result<()> {
    let data = m.data_dir.as_ref().ok_or_else(|| Error::Config("manifest has no data_dir".into()))?;
    let (ds, folds) = dataset_and_folds(data, p.train.max_folds)?;
    let spec = TrainSpec { seed: m.seed, ..m.train.clone() };
    let results = run_plan(plan, &m.base_model, &ds, &folds, &spec, p.parallelism);
    let rows: Vec<ReportRow> = results.iter().map(ReportRow::from_result).collect();
    let out: &PathBuf = &m.output_dir;
    emit_report(&rows, &out.join("results.csv"))?;
    let manifest_path = out.join("manifest.json");
    fs::write(&manifest_path, m.to_json() + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    print!("{}", render_markdown(&rows));
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!(Error::Config(format!("{failed} of {} trials failed; see {}", results.len(), out.join("results.csv").display())));
    }
    Ok(())
}

fn sweep(p: PlanArgs) -> Result<()> {
    let m = manifest_for(&p)?;
    let v = validate(&m.space)?;
    for r in &v.rejected {
        eprintln!("skipping (d_m = {}, H = {}): {}", r.d_model, r.heads, r.reason);
    }
    let plan = isolation_sweep(&m.space, &m.space.defaults);
    execute_plan(&m, &plan, &p)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut m = manifest_for(&a.plan)?;
    let o = &mut m.space.local_opts;
    o.layers = a.opt_layers.or(o.layers);
    o.heads = a.opt_heads.or(o.heads);
    o.d_model = a.opt_dm.or(o.d_model);
    o.ffn = a.opt_ffn.or(o.ffn);
    let plan = ablation_plan(&m.space.defaults, &m.space.local_opts)?;
    execute_plan(&m, &plan, &a.plan)
}

fn params(a: ParamsArgs) -> Result<()> {
    let shapes = vec![ModalityShape { channels: a.channels, timesteps: a.timesteps }; a.modalities];
    let cfg = ModelConfig::uniform(shapes, a.layers, a.heads, a.dm, a.ffn, a.classes);
    cfg.validate()?;
    let b = analytic_param_count(&cfg);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&b)?);
    } else {
        println!("ffn_hidden {}", cfg.ffn_hidden());
        println!("per_block {}", b.per_block);
        println!("blocks {}", b.blocks);
        println!("blocks_subtotal {}", b.blocks_subtotal);
        println!("overhead {}", b.overhead);
        println!("total {}", b.total);
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = model_grad_check(&minimal_config(), 3, a.seed, a.eps, Sampling::default())?;
    println!("max_relative_error {:e}", report.max_relative_error);
    println!("coordinates_checked {}", report.coordinates_checked);
    if !(report.max_relative_error < a.tolerance) {
        let (name, i) = report.worst.unwrap_or_default();
        bail!(Error::Numeric(format!(
            "max relative error {:e} at {name}[{i}] is not below {:e}",
            report.max_relative_error, a.tolerance
        )));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(read_results_csv(p).with_context(|| format!("reading {}", p.display()))?);
    }
    emit_report(&rows, &a.out)?;
    print!("{}", render_markdown(&rows));
    Ok(())
}
