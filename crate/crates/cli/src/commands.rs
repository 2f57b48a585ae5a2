//! Subcommand implementations. Each writes its artifacts under `out`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vogn::continual::{make_tasks, run_continual, ContinualOptions, ContinualResult};
use vogn::data::Dataset;
use vogn::metrics::{predictive_entropy, MetricsReport, OodReport};
use vogn::optimizers::Hyperparams;
use vogn::parallel::write_timing_csv;
use vogn::posterior::write_predictions_csv;
use vogn::training::{read_checkpoint, write_checkpoint, write_epochs_csv, Trainer};
use vogn::{NetworkModel, RngStream, Tensor};

use crate::config::{OptimizerConfig, RunConfig, Splits, SweepAxis};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.vogn";
/// Stream for initial weights, keyed by the run seed.
const INIT_STREAM: u64 = 0x1_417;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Setup failures from the library are configuration problems.
fn setup<T>(r: vogn::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        vogn::Error::NonFinite(m) => CliError::Numeric(m),
        other => CliError::Config(other.to_string()),
    })
}

fn fresh_model(cfg: &RunConfig, data: &Dataset) -> Result<NetworkModel, CliError> {
    let mut model = cfg.model.build(data)?;
    model.init_xavier(&mut RngStream::keyed(cfg.seed, &[INIT_STREAM]));
    Ok(model)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub iterations: u64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_nll: f64,
    pub val_ece: f64,
}

/// Train from scratch; writes `config.json`, `epochs.csv`, `timing.csv`,
/// the checkpoint and held-out metrics.
pub fn train(cfg: &RunConfig, base: &Path, out: &Path) -> Result<TrainSummary, CliError> {
    create_dir(out)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n").map_err(|e| CliError::Runtime(e.to_string()))?;
    let splits = cfg.dataset.load(cfg.seed, base)?;
    let model = fresh_model(cfg, &splits.train)?;
    let hp = cfg.optimizer.resolve()?;
    let mut trainer = setup(Trainer::new(model, hp, cfg.train.clone(), splits.train.len(), cfg.seed))?;
    let mut log = Vec::new();
    let fitted = trainer.fit(&splits.train, Some(&splits.test), |r| {
        log.push(r.clone());
        Ok(())
    });
    write_epochs_csv(file(&out.join("epochs.csv"))?, &log)?;
    write_timing_csv(file(&out.join("timing.csv"))?, &trainer.timing)?;
    fitted?;
    write_checkpoint(
        std::io::BufWriter::new(file(&out.join(CHECKPOINT_FILE))?),
        &trainer.checkpoint(),
    )?;

    let samples = cfg.eval.samples;
    let train_probs = trainer.predict(&splits.train.inputs, samples)?;
    let test_probs = trainer.predict(&splits.test.inputs, samples)?;
    let report = MetricsReport::compute(&test_probs, &splits.test.labels)?;
    report.write_dir(out)?;
    let summary = TrainSummary {
        epochs: trainer.epoch,
        iterations: trainer.iteration,
        train_accuracy: vogn::metrics::accuracy(&train_probs, &splits.train.labels)?,
        val_accuracy: report.accuracy,
        val_nll: report.nll,
        val_ece: report.ece,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Load the configured checkpoint and check it against the config's model.
fn load_trainer(cfg: &RunConfig, base: &Path, out: &Path, splits: &Splits) -> Result<Trainer, CliError> {
    let path: PathBuf = match &cfg.eval.checkpoint {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => base.join(p),
        None => out.join(CHECKPOINT_FILE),
    };
    let f = fs::File::open(&path).map_err(|e| CliError::Config(format!("eval.checkpoint {}: {e}", path.display())))?;
    let ck = read_checkpoint(std::io::BufReader::new(f))
        .map_err(|e| CliError::Config(format!("eval.checkpoint {}: {e}", path.display())))?;
    let expected = cfg.model.build(&splits.train)?;
    if ck.model.layers() != expected.layers() || ck.model.input_shape() != expected.input_shape() {
        return Err(CliError::Config(format!(
            "eval.checkpoint {}: architecture does not match the configured model",
            path.display()
        )));
    }
    setup(Trainer::from_checkpoint(ck, cfg.train.clone()))
}

/// Evaluate a checkpoint on the held-out split; writes into `out/eval`.
pub fn eval(cfg: &RunConfig, base: &Path, out: &Path) -> Result<MetricsReport, CliError> {
    let splits = cfg.dataset.load(cfg.seed, base)?;
    let trainer = load_trainer(cfg, base, out, &splits)?;
    let dir = out.join("eval");
    create_dir(&dir)?;
    let probs = trainer.predict(&splits.test.inputs, cfg.eval.samples)?;
    write_predictions_csv(file(&dir.join("predictions.csv"))?, &probs, &splits.test.labels)?;
    let report = MetricsReport::compute(&probs, &splits.test.labels)?;
    report.write_dir(&dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OodPair {
    pub out_dataset: String,
    pub auroc: f64,
    pub fpr_at_95_tpr: f64,
    pub in_mean_entropy: f64,
    pub out_mean_entropy: f64,
}

/// Compare the held-out split against each configured OOD set; writes into
/// `out/ood/<name>` and `out/ood/summary.json`.
pub fn ood(cfg: &RunConfig, base: &Path, out: &Path) -> Result<Vec<OodPair>, CliError> {
    let Some(oc) = &cfg.ood else {
        return Err(CliError::Config("ood: section missing".into()));
    };
    let splits = cfg.dataset.load(cfg.seed, base)?;
    let trainer = load_trainer(cfg, base, out, &splits)?;
    let dir = out.join("ood");
    create_dir(&dir)?;
    let p_in = trainer.predict(&splits.test.inputs, cfg.eval.samples)?;
    let e_in = mean(&predictive_entropy(&p_in));
    let mut pairs = Vec::new();
    for d in &oc.datasets {
        let other = d.dataset.load(cfg.seed, base)?.test;
        if other.feature_shape() != splits.test.feature_shape() {
            return Err(CliError::Config(format!(
                "ood.datasets[{}]: feature shape {:?} differs from {:?}",
                d.name,
                other.feature_shape(),
                splits.test.feature_shape()
            )));
        }
        let p_out: Tensor = trainer.predict(&other.inputs, cfg.eval.samples)?;
        let report = OodReport::compute(&p_in, &p_out)?;
        report.write_dir(&dir.join(&d.name), &p_in, &p_out)?;
        pairs.push(OodPair {
            out_dataset: d.name.clone(),
            auroc: report.auroc,
            fpr_at_95_tpr: report.fpr_at_95_tpr,
            in_mean_entropy: e_in,
            out_mean_entropy: mean(&predictive_entropy(&p_out)),
        });
    }
    write_json(&dir.join("summary.json"), &pairs)?;
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub gap: f64,
    pub val_nll: f64,
}

fn sweep_hyperparams(hp: &Hyperparams, axis: SweepAxis, value: f64) -> Hyperparams {
    let mut hp = hp.clone();
    match axis {
        SweepAxis::PriorVariance => hp.prior_precision = 1.0 / value,
        SweepAxis::McSamples => hp.mc_samples = value as usize,
    }
    hp
}

/// One train-then-eval run per (value, seed); collated into `out/sweep.csv`.
pub fn sweep(cfg: &RunConfig, base: &Path, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    let Some(sc) = &cfg.sweep else {
        return Err(CliError::Config("sweep: section missing".into()));
    };
    let hp = cfg.optimizer.resolve()?;
    let seeds = if sc.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        sc.seeds.clone()
    };
    let mut rows = Vec::new();
    for (i, &value) in sc.values.iter().enumerate() {
        for &seed in &seeds {
            let mut run = cfg.clone();
            run.seed = seed;
            run.sweep = None;
            run.optimizer = OptimizerConfig {
                recipe: None,
                hyperparams: Some(sweep_hyperparams(&hp, sc.axis, value)),
            };
            run.validate()?;
            let dir = out.join(format!("value-{i}")).join(format!("seed-{seed}"));
            let summary = train(&run, base, &dir)?;
            let report = eval(&run, base, &dir)?;
            rows.push(SweepRow {
                value,
                seed,
                train_accuracy: summary.train_accuracy,
                val_accuracy: report.accuracy,
                gap: summary.train_accuracy - report.accuracy,
                val_nll: report.nll,
            });
        }
    }
    let mut w = csv::Writer::from_writer(file(&out.join("sweep.csv"))?);
    w.write_record(["value", "seed", "train_accuracy", "val_accuracy", "gap", "val_nll"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in &rows {
        w.write_record([
            format!("{:e}", r.value),
            r.seed.to_string(),
            format!("{:e}", r.train_accuracy),
            format!("{:e}", r.val_accuracy),
            format!("{:e}", r.gap),
            format!("{:e}", r.val_nll),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinualSummary {
    pub chained: ContinualResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_chain: Option<ContinualResult>,
}

/// Permuted-feature task sequence; writes the accuracy matrix per variant
/// and a checkpoint after each task.
pub fn continual(cfg: &RunConfig, base: &Path, out: &Path) -> Result<ContinualSummary, CliError> {
    let Some(cc) = &cfg.continual else {
        return Err(CliError::Config("continual: section missing".into()));
    };
    create_dir(out)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n").map_err(|e| CliError::Runtime(e.to_string()))?;
    let splits = cfg.dataset.load(cfg.seed, base)?;
    let template = cfg.model.build(&splits.train)?;
    let hp = cfg.optimizer.resolve()?;
    let seq = setup(make_tasks(splits.train.num_features(), cc.tasks, cfg.seed))?;
    let run = |chain: bool, name: &str| -> Result<ContinualResult, CliError> {
        let opts = ContinualOptions {
            tasks: cc.tasks,
            chain,
            reset_mean: cc.reset_mean,
        };
        let dir = out.join(name);
        create_dir(&dir)?;
        let res = run_continual(
            &seq,
            &splits.train,
            &splits.test,
            &template,
            &hp,
            &cfg.train,
            &opts,
            |t, tr| {
                let f = fs::File::create(dir.join(format!("task-{}.vogn", t + 1)))?;
                write_checkpoint(std::io::BufWriter::new(f), &tr.checkpoint())
            },
        )
        .map_err(|e| match e {
            vogn::Error::InvalidArgument(m) => CliError::Config(format!("continual: {m}")),
            other => other.into(),
        })?;
        res.write_csv(file(&dir.join("accuracy_matrix.csv"))?)?;
        Ok(res)
    };
    let chained = run(cc.chain, if cc.chain { "chained" } else { "no-chain" })?;
    let no_chain = if cc.compare_no_chain && cc.chain {
        Some(run(false, "no-chain")?)
    } else {
        None
    };
    let summary = ContinualSummary { chained, no_chain };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
