//! Training loop tying the network, the optimizers and the data-parallel
//! step together.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{augment, epoch_batches, AugmentationSpec, Dataset};
use crate::error::{invalid, Error, Result};
use crate::metrics::{accuracy, nll};
use crate::network::{loss_and_grad, LayerSpec, Mode, NetworkModel, ParamRole};
use crate::optimizers::{
    adam_step, init_scale, noisy_kfac_layer_step, ogn_step, schedule_step, sgd_step, vogn_step, Hyperparams, KfacStats,
    OptimizerKind, OptimizerState,
};
use crate::parallel::{parallel_step, RngKeying, StepKeys, TimingRow, WorkerPlan};
use crate::params::ParamSet;
use crate::posterior::{predict_mc, GaussianPosterior, KroneckerPosterior, PointEstimate, WeightSampler};
use crate::tensor::{RngStream, Tensor};

/// Key namespaces for the trainer's random streams.
const SHUFFLE_STREAM: u64 = 0x5_4FF1E;
const AUGMENT_STREAM: u64 = 0xA_0611;
const KFAC_STREAM: u64 = 0xCFAC;
const EVAL_STREAM: u64 = 0xE_7A1;

/// How the scale vector `s` starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleInit {
    /// Gauss-Newton diagonal of the first minibatch at the initial mean.
    #[default]
    FirstBatch,
    /// Posterior precision `N (s + delta~ + gamma)` equal to `value`.
    Precision { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub workers: usize,
    /// Weight-sample stream keying; by default per example unless the
    /// network has batchnorm.
    #[serde(default)]
    pub keying: Option<RngKeying>,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    #[serde(default)]
    pub scale_init: ScaleInit,
    /// MC samples for validation-time predictions.
    #[serde(default = "ten")]
    pub eval_samples: usize,
    /// Evaluate every this many epochs (and always after the last).
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 32,
            workers: 1,
            keying: None,
            augmentation: None,
            scale_init: ScaleInit::FirstBatch,
            eval_samples: 10,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return invalid("batch_size must be at least 2");
        }
        if self.workers == 0 || self.workers > self.batch_size {
            return invalid(format!("workers must be in [1, batch_size], got {}", self.workers));
        }
        if self.eval_samples == 0 || self.eval_every == 0 {
            return invalid("eval_samples and eval_every must be at least 1");
        }
        if let ScaleInit::Precision { value } = self.scale_init {
            if !(value > 0.0 && value.is_finite()) {
                return invalid(format!("initial precision must be positive, got {value}"));
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub tau: f64,
    /// Mean minibatch loss at the sampled weights during the epoch.
    pub train_loss: f64,
    /// Predictive accuracy on the training set (evaluation epochs only).
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_nll: Option<f64>,
}

/// Loss and accuracy of one iteration, averaged over examples and samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub accuracy: f64,
}

pub struct Trainer {
    pub model: NetworkModel,
    pub state: OptimizerState,
    pub hp: Hyperparams,
    pub config: TrainConfig,
    pub seed: u64,
    pub iteration: u64,
    pub epoch: usize,
    pub timing: Vec<TimingRow>,
    noise_scale: f64,
    scale_ready: bool,
}

impl Trainer {
    /// `n_orig` is the training-set size before augmentation.
    pub fn new(model: NetworkModel, hp: Hyperparams, config: TrainConfig, n_orig: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        config.validate()?;
        if hp.optimizer == OptimizerKind::NoisyKfac {
            if let Some(i) = model
                .layers()
                .iter()
                .position(|l| l.param_count() > 0 && !matches!(l, LayerSpec::Dense { .. }))
            {
                return invalid(format!(
                    "noisy K-FAC supports dense layers only; layer {i} is not dense"
                ));
            }
        }
        if config.keying == Some(RngKeying::Example) && model.has_batchnorm() {
            return invalid("example-keyed sampling cannot be combined with batchnorm");
        }
        let n_eff = n_orig as f64 * hp.augmentation_factor;
        let state = OptimizerState::new(&model.param_sizes(), n_eff, &hp)?;
        Ok(Self {
            model,
            state,
            hp,
            config,
            seed,
            iteration: 0,
            epoch: 0,
            timing: Vec::new(),
            noise_scale: 1.0,
            scale_ready: false,
        })
    }

    /// Resume from saved model and optimizer state.
    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        let Some(state) = ck.state else {
            return invalid("checkpoint carries no optimizer state");
        };
        let mut t = Self::new(ck.model, ck.hyperparams, config, 1, ck.seed)?;
        t.state = state;
        t.iteration = ck.iteration;
        t.epoch = ck.epoch;
        t.scale_ready = true;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            hyperparams: self.hp.clone(),
            state: Some(self.state.clone()),
            epoch: self.epoch,
            iteration: self.iteration,
            seed: self.seed,
        }
    }

    /// Scale the VOGN sampling noise; 0 evaluates every gradient at the mean.
    pub fn set_sampling_noise(&mut self, k: f64) {
        self.noise_scale = k;
    }

    /// Re-run scale initialization before the next step.
    pub fn reset_scale_init(&mut self) {
        self.scale_ready = false;
    }

    fn keying(&self) -> RngKeying {
        self.config.keying.unwrap_or(if self.model.has_batchnorm() {
            RngKeying::Worker
        } else {
            RngKeying::Example
        })
    }

    fn plan(&self) -> Result<WorkerPlan> {
        let k = match self.hp.optimizer {
            OptimizerKind::Vogn => self.hp.mc_samples,
            _ => 1,
        };
        WorkerPlan::new(self.config.workers, k, self.keying())
    }

    pub(crate) fn init_scale_state(&mut self, x: &Tensor, y: &[usize]) -> Result<()> {
        self.state.s = match self.config.scale_init {
            ScaleInit::FirstBatch => init_scale(&self.model, x, y)?,
            ScaleInit::Precision { value } => {
                let roles = self.model.roles();
                let n = self.state.n_eff;
                ParamSet(
                    (0..roles.len())
                        .map(|i| {
                            let prior = match roles[i] {
                                ParamRole::Weight => self.state.prior_scaled(i),
                                _ => vec![0.0; self.state.s.layer(i).len()],
                            };
                            Tensor::from_vec(prior.iter().map(|p| (value / n - p - self.hp.gamma).max(0.0)).collect())
                        })
                        .collect(),
                )
            }
        };
        self.scale_ready = true;
        Ok(())
    }

    /// Weight distribution used for evaluation.
    pub fn posterior(&self) -> Result<Box<dyn WeightSampler + Sync>> {
        Ok(match self.hp.optimizer {
            OptimizerKind::Vogn => Box::new(GaussianPosterior::from_state(&self.model, &self.state, &self.hp)?),
            OptimizerKind::NoisyKfac if self.state.kfac.iter().any(Option::is_some) => {
                Box::new(KroneckerPosterior::from_state(&self.model, &self.state, &self.hp)?)
            }
            _ => Box::new(PointEstimate(self.model.params().clone())),
        })
    }

    /// One optimizer iteration on a minibatch; `ids` are the examples'
    /// dataset indices. Non-finite failures name the epoch and step.
    pub fn step(&mut self, x: &Tensor, y: &[usize], ids: &[u64], lr: f64) -> Result<StepReport> {
        let (epoch, it) = (self.epoch, self.iteration);
        self.step_inner(x, y, ids, lr).map_err(|e| match e {
            Error::NonFinite(msg) if !msg.contains(" step ") => {
                Error::NonFinite(format!("{msg} at epoch {epoch} step {it}"))
            }
            other => other,
        })
    }

    fn step_inner(&mut self, x: &Tensor, y: &[usize], ids: &[u64], lr: f64) -> Result<StepReport> {
        let start = Instant::now();
        let x = match &self.config.augmentation {
            Some(spec) => {
                let mut rng = RngStream::keyed(self.seed, &[AUGMENT_STREAM, self.iteration]);
                augment(x, spec, &mut rng)?
            }
            None => x.clone(),
        };
        let kind = self.hp.optimizer;
        if !self.scale_ready && matches!(kind, OptimizerKind::Vogn | OptimizerKind::Ogn) {
            self.init_scale_state(&x, y)?;
        }
        if kind == OptimizerKind::NoisyKfac {
            let report = self.kfac_step(&x, y, lr)?;
            self.iteration += 1;
            return Ok(report);
        }
        let sampler: Box<dyn WeightSampler + Sync> = match kind {
            OptimizerKind::Vogn => Box::new(
                GaussianPosterior::from_state(&self.model, &self.state, &self.hp)?
                    .with_noise_scale(self.noise_scale)?,
            ),
            _ => Box::new(PointEstimate(self.model.params().clone())),
        };
        let plan = self.plan()?;
        let keys = StepKeys {
            seed: self.seed,
            iteration: self.iteration,
        };
        let out = parallel_step(&self.model, sampler.as_ref(), &x, y, ids, &plan, keys)?;
        drop(sampler);
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {} step {}",
                self.epoch, self.iteration
            )));
        }
        let roles = self.model.roles();
        let (params, state, hp) = (self.model.params_mut(), &mut self.state, &self.hp);
        match kind {
            OptimizerKind::Sgd => sgd_step(params, &out.g_hat, &roles, state, hp, lr)?,
            OptimizerKind::Adam => adam_step(params, &out.g_hat, &roles, state, hp, lr)?,
            OptimizerKind::Ogn => ogn_step(params, &out.g_hat, &out.h_hat, &roles, state, hp, lr)?,
            OptimizerKind::Vogn => vogn_step(params, &out.g_hat, &out.h_hat, &roles, state, hp, lr)?,
            OptimizerKind::NoisyKfac => unreachable!(),
        }
        if !out.batch_stats.is_empty() {
            self.model.apply_batch_stats(&out.batch_stats)?;
        }
        self.timing.push(TimingRow {
            epoch: self.epoch,
            iteration: self.iteration,
            workers: plan.workers,
            compute_seconds: out.worker_seconds.iter().copied().fold(0.0, f64::max),
            reduce_seconds: out.reduce_seconds,
            step_seconds: start.elapsed().as_secs_f64(),
        });
        self.iteration += 1;
        Ok(StepReport {
            loss: out.loss,
            accuracy: out.accuracy,
        })
    }

    /// Single-sample Noisy K-FAC iteration on the coordinator.
    fn kfac_step(&mut self, x: &Tensor, y: &[usize], lr: f64) -> Result<StepReport> {
        let start = Instant::now();
        let sampler = self.posterior()?;
        let mut rng = RngStream::keyed(self.seed, &[KFAC_STREAM, self.iteration]);
        let w = sampler.sample(&mut rng)?;
        drop(sampler);
        let (logits, cache) = self.model.forward_with(&w, x, Mode::Train)?;
        let (loss, dl) = loss_and_grad(&logits, y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {} step {}",
                self.epoch, self.iteration
            )));
        }
        let signals = self.model.backward_signals(&w, &cache, &dl)?;
        let grads = self.model.backward_with(&w, &cache, &dl)?;
        let beta_tilde = self.hp.beta2 * self.state.tau / self.state.n_eff;
        let delta_tilde = self.state.delta_tilde;
        let gamma = self.hp.gamma + delta_tilde;
        for i in 0..self.model.layers().len() {
            let Some(acts) = cache.dense_input(i) else {
                continue;
            };
            let stats = KfacStats::from_batch(acts, signals.output_grad(i))?;
            let mean = &mut self.model.params_mut().layers_mut()[i];
            noisy_kfac_layer_step(
                mean,
                w.layer(i),
                grads.layer(i),
                &stats,
                &mut self.state.kfac[i],
                lr,
                beta_tilde,
                delta_tilde,
                gamma,
            )?;
        }
        self.state.step += 1;
        let correct = y
            .iter()
            .enumerate()
            .filter(|&(r, &t)| crate::network::argmax(logits.row(r)) == t)
            .count();
        self.timing.push(TimingRow {
            epoch: self.epoch,
            iteration: self.iteration,
            workers: 1,
            compute_seconds: start.elapsed().as_secs_f64(),
            reduce_seconds: 0.0,
            step_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(StepReport {
            loss,
            accuracy: correct as f64 / y.len() as f64,
        })
    }

    /// One pass over `data` in shuffled minibatches; returns the mean
    /// iteration loss. Learning rate and tempering follow the schedule at
    /// fractional epochs.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<f64> {
        let mut rng = RngStream::keyed(self.seed, &[SHUFFLE_STREAM, self.epoch as u64]);
        let batches = epoch_batches(data.len(), self.config.batch_size, &mut rng)?;
        let nb = batches.len() as f64;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let sched = schedule_step(self.epoch as f64 + b as f64 / nb, &self.hp);
            self.state.set_tau(sched.tau, &self.hp);
            let (x, y) = data.batch(idx);
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            total += self.step(&x, &y, &ids, sched.lr)?.loss;
        }
        self.epoch += 1;
        Ok(total / nb)
    }

    /// MC-averaged predictive probabilities with a fixed evaluation stream.
    pub fn predict(&self, inputs: &Tensor, samples: usize) -> Result<Tensor> {
        let post = self.posterior()?;
        let mut rng = RngStream::keyed(self.seed, &[EVAL_STREAM]);
        predict_mc(&self.model, post.as_ref(), inputs, samples, &mut rng)
    }

    /// Train for the configured epochs, calling `on_epoch` after each one.
    pub fn fit(
        &mut self,
        train: &Dataset,
        validation: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let sched = schedule_step(self.epoch as f64, &self.hp);
            let train_loss = self.train_epoch(train)?;
            let evaluate = self.epoch.is_multiple_of(self.config.eval_every) || self.epoch == self.config.epochs;
            let mut rec = EpochRecord {
                epoch: self.epoch,
                lr: sched.lr,
                tau: sched.tau,
                train_loss,
                train_accuracy: None,
                val_accuracy: None,
                val_nll: None,
            };
            if evaluate {
                let p = self.predict(&train.inputs, self.config.eval_samples)?;
                rec.train_accuracy = Some(accuracy(&p, &train.labels)?);
                if let Some(v) = validation {
                    let p = self.predict(&v.inputs, self.config.eval_samples)?;
                    rec.val_accuracy = Some(accuracy(&p, &v.labels)?);
                    rec.val_nll = Some(nll(&p, &v.labels)?.value);
                }
            }
            on_epoch(&rec)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Epoch log as CSV; empty cells for epochs without evaluation.
pub fn write_epochs_csv<W: std::io::Write>(w: W, log: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "epoch",
        "lr",
        "tau",
        "train_loss",
        "train_accuracy",
        "val_accuracy",
        "val_nll",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:e}"));
    for r in log {
        out.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            format!("{:e}", r.tau),
            format!("{:e}", r.train_loss),
            opt(r.train_accuracy),
            opt(r.val_accuracy),
            opt(r.val_nll),
        ])?;
    }
    out.flush()?;
    Ok(())
}
