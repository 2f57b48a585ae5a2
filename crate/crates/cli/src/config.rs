//! Run configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vogn::data::{load_csv, load_digits, load_idx, make_synthetic, Dataset, SyntheticKind};
use vogn::optimizers::recipes;
use vogn::optimizers::Hyperparams;
use vogn::training::TrainConfig;
use vogn::{NetworkBuilder, NetworkModel};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Seed offset separating a synthetic test set from its training set.
const TEST_SEED_OFFSET: u64 = 0x7E57_0000_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continual: Option<ContinualConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated train and test sets; `data_seed` defaults to the run seed.
    Synthetic {
        generator: SyntheticKind,
        train: usize,
        test: usize,
        noise: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
    },
    /// Bundled 8x8 digits, split into train and validation.
    Digits {
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
    /// IDX image and label files; without a test pair the training files are split.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
    /// CSV with one label column and numeric feature columns.
    Csv {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
}

fn default_validation_fraction() -> f64 {
    0.2
}

/// Training and held-out data.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetConfig {
    fn validate(&self) -> Result<(), String> {
        let frac = match self {
            DatasetConfig::Synthetic { train, test, noise, .. } => {
                if *train < 2 || *test < 1 {
                    return Err("dataset.train must be >= 2 and dataset.test >= 1".into());
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(format!("dataset.noise must be finite and >= 0, got {noise}"));
                }
                return Ok(());
            }
            DatasetConfig::Digits { validation_fraction } => *validation_fraction,
            DatasetConfig::Idx {
                test_images,
                test_labels,
                validation_fraction,
                ..
            } => {
                if test_images.is_some() != test_labels.is_some() {
                    return Err("dataset.test_images and dataset.test_labels must be given together".into());
                }
                *validation_fraction
            }
            DatasetConfig::Csv {
                validation_fraction, ..
            } => *validation_fraction,
        };
        if !(frac > 0.0 && frac < 1.0) {
            return Err(format!("dataset.validation_fraction must be in (0, 1), got {frac}"));
        }
        Ok(())
    }

    /// Relative paths resolve against `base` (the config file's directory).
    pub fn load(&self, seed: u64, base: &Path) -> Result<Splits, CliError> {
        let at = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let split = |d: Dataset, frac: f64| -> Result<Splits, CliError> {
            let s = d.split(frac, seed)?;
            Ok(Splits {
                train: s.train,
                test: s.validation,
            })
        };
        match self {
            DatasetConfig::Synthetic {
                generator,
                train,
                test,
                noise,
                data_seed,
            } => {
                let s = data_seed.unwrap_or(seed);
                Ok(Splits {
                    train: make_synthetic(generator, *train, *noise, s)?,
                    test: make_synthetic(generator, *test, *noise, s ^ TEST_SEED_OFFSET)?,
                })
            }
            DatasetConfig::Digits { validation_fraction } => split(load_digits()?, *validation_fraction),
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                classes,
                validation_fraction,
            } => {
                let train = load_idx(&at(images), &at(labels), *classes)?;
                match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => {
                        let test = load_idx(&at(ti), &at(tl), Some(train.num_classes))?;
                        Ok(Splits { train, test })
                    }
                    _ => split(train, *validation_fraction),
                }
            }
            DatasetConfig::Csv {
                train,
                test,
                label_column,
                classes,
                validation_fraction,
            } => {
                let tr = load_csv(&at(train), label_column, *classes)?;
                match test {
                    Some(t) => {
                        let test = load_csv(&at(t), label_column, Some(tr.num_classes))?;
                        Ok(Splits { train: tr, test })
                    }
                    None => split(tr, *validation_fraction),
                }
            }
        }
    }
}

/// Architecture; input shape and class count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Dense ReLU layers of the given widths, then a dense classifier.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        batchnorm: bool,
    },
    /// Explicit layer list; the classifier is appended.
    Layers { layers: Vec<LayerConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Dense {
        outputs: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Batchnorm,
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    /// Untrained network for `data`; flattens image inputs before dense layers.
    pub fn build(&self, data: &Dataset) -> Result<NetworkModel, CliError> {
        let shape = data.feature_shape();
        let mut b = NetworkBuilder::new(shape);
        match self {
            ModelConfig::Mlp { hidden, batchnorm } => {
                if shape.len() > 1 {
                    b = b.flatten();
                }
                for &h in hidden {
                    b = b.dense(h);
                    if *batchnorm {
                        b = b.batchnorm();
                    }
                    b = b.relu();
                }
            }
            ModelConfig::Layers { layers } => {
                for l in layers {
                    b = match *l {
                        LayerConfig::Dense { outputs } => b.dense(outputs),
                        LayerConfig::Conv2d {
                            out_channels,
                            kernel,
                            stride,
                            padding,
                        } => b.conv2d(out_channels, kernel, stride, padding),
                        LayerConfig::Batchnorm => b.batchnorm(),
                        LayerConfig::Relu => b.relu(),
                        LayerConfig::Flatten => b.flatten(),
                    };
                }
            }
        }
        b.dense(data.num_classes)
            .build()
            .map_err(|e| CliError::Config(format!("model: {e}")))
    }
}

/// Either a named recipe or explicit hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
}

impl OptimizerConfig {
    pub fn resolve(&self) -> Result<Hyperparams, CliError> {
        let hp = match (&self.recipe, &self.hyperparams) {
            (Some(name), None) => {
                recipes::lookup(name)
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "optimizer.recipe: unknown recipe {name:?}; known: {}",
                            recipes::names().join(", ")
                        ))
                    })?
                    .hyperparams
            }
            (None, Some(hp)) => hp.clone(),
            _ => {
                return Err(CliError::Config(
                    "optimizer: give exactly one of `recipe` or `hyperparams`".into(),
                ))
            }
        };
        hp.validate()
            .map_err(|e| CliError::Config(format!("optimizer.hyperparams: {e}")))?;
        Ok(hp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// MC samples per prediction.
    #[serde(default = "ten")]
    pub samples: usize,
    /// Checkpoint to evaluate; defaults to the run directory's checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

fn ten() -> usize {
    10
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: ten(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodDataset {
    pub name: String,
    /// Held-out split of this dataset is used as the out-of-distribution set.
    pub dataset: DatasetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub datasets: Vec<OodDataset>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Values are prior variances; each run uses prior precision `1 / value`.
    PriorVariance,
    /// Values are training MC samples per worker.
    McSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Run seeds; defaults to the config seed alone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualConfig {
    pub tasks: usize,
    #[serde(default = "yes")]
    pub chain: bool,
    #[serde(default = "yes")]
    pub reset_mean: bool,
    /// Also run the same sequence without prior chaining.
    #[serde(default)]
    pub compare_no_chain: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every check that does not need data on disk.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if let Err(m) = self.dataset.validate() {
            return Err(CliError::Config(m));
        }
        if let ModelConfig::Mlp { hidden, .. } = &self.model {
            if hidden.contains(&0) {
                return bad("model.hidden", "widths must be positive".into());
            }
        }
        self.optimizer.resolve()?;
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if self.eval.samples == 0 {
            return bad("eval.samples", "must be at least 1".into());
        }
        if let Some(o) = &self.ood {
            if o.datasets.is_empty() {
                return bad("ood.datasets", "list at least one dataset".into());
            }
            for d in &o.datasets {
                if let Err(m) = d.dataset.validate() {
                    return bad(&format!("ood.datasets[{}]", d.name), m);
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values", "list at least one value".into());
            }
            for &v in &s.values {
                let ok = match s.axis {
                    SweepAxis::PriorVariance => v > 0.0 && v.is_finite(),
                    SweepAxis::McSamples => v >= 1.0 && v.fract() == 0.0,
                };
                if !ok {
                    return bad("sweep.values", format!("{v} is not valid for {:?}", s.axis));
                }
            }
        }
        if let Some(c) = &self.continual {
            if c.tasks == 0 {
                return bad("continual.tasks", "must be at least 1".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "schema_version": 1,
        "dataset": { "source": "synthetic", "generator": { "kind": "two_moons" }, "train": 10, "test": 10, "noise": 0.1 },
        "model": { "kind": "mlp", "hidden": [4] },
        "optimizer": { "recipe": "desk-moons-mc-vogn" },
        "train": { "epochs": 1, "batch_size": 4 }
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<RunConfig, CliError> {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        edit(&mut v);
        RunConfig::parse(&v.to_string())
    }

    fn config_error(r: Result<RunConfig, CliError>, needle: &str) {
        match r {
            Err(CliError::Config(m)) => assert!(m.contains(needle), "{m}"),
            other => panic!("expected a config error mentioning {needle}, got {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let c = with(|_| {}).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.eval.samples, 10);
        assert_eq!(c.train.workers, 1);
        assert!(c.ood.is_none() && c.sweep.is_none() && c.continual.is_none());
    }

    #[test]
    fn optimizer_needs_exactly_one_source() {
        config_error(
            with(|v| v["optimizer"]["hyperparams"] = serde_json::json!({ "optimizer": "adam" })),
            "exactly one",
        );
        config_error(with(|v| v["optimizer"] = serde_json::json!({})), "exactly one");
        config_error(
            with(|v| v["optimizer"] = serde_json::json!({ "hyperparams": { "optimizer": "vogn", "lr": -1.0 } })),
            "optimizer.hyperparams",
        );
    }

    #[test]
    fn section_values_are_checked() {
        config_error(
            with(|v| v["sweep"] = serde_json::json!({ "axis": "mc-samples", "values": [1.5] })),
            "sweep.values",
        );
        config_error(
            with(|v| v["sweep"] = serde_json::json!({ "axis": "prior-variance", "values": [0.0] })),
            "sweep.values",
        );
        config_error(
            with(|v| v["ood"] = serde_json::json!({ "datasets": [] })),
            "ood.datasets",
        );
        config_error(
            with(|v| v["continual"] = serde_json::json!({ "tasks": 0 })),
            "continual.tasks",
        );
        config_error(with(|v| v["dataset"]["noise"] = serde_json::json!(-1.0)), "noise");
        config_error(
            with(|v| v["dataset"] = serde_json::json!({ "source": "digits", "validation_fraction": 1.0 })),
            "validation_fraction",
        );
        config_error(with(|v| v["model"]["hidden"] = serde_json::json!([0])), "model.hidden");
        config_error(with(|v| v["model"]["depth"] = serde_json::json!(3)), "depth");
    }

    #[test]
    fn idx_test_files_come_in_pairs() {
        config_error(
            with(|v| {
                v["dataset"] = serde_json::json!({ "source": "idx", "images": "a", "labels": "b", "test_images": "c" })
            }),
            "together",
        );
    }

    #[test]
    fn image_inputs_are_flattened_for_mlps() {
        let d = vogn::data::load_digits().unwrap();
        let m = ModelConfig::Mlp {
            hidden: vec![8],
            batchnorm: true,
        }
        .build(&d)
        .unwrap();
        assert_eq!(m.input_shape(), &[1, 8, 8]);
        assert_eq!(m.num_classes(), 10);
        assert!(m.has_batchnorm());
    }
}
