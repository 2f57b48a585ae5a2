//! Permuted-input task sequences and posterior-to-prior chaining.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metrics::accuracy;
use crate::network::{NetworkModel, ParamRole};
use crate::optimizers::{ChainedPrior, Hyperparams, OptimizerKind};
use crate::params::ParamSet;
use crate::posterior::{predict_mc, GaussianPosterior, WeightSampler};
use crate::tensor::{RngStream, Tensor};
use crate::training::{TrainConfig, Trainer};

const PERMUTATION_STREAM: u64 = 0x9E4A;
const INIT_STREAM: u64 = 0x1417;
const TASK_STREAM: u64 = 0x7A5C;
const EVAL_STREAM: u64 = 0xE7A2;

/// `T` fixed pixel permutations; task 0 is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSequence {
    pub permutations: Vec<Vec<usize>>,
    /// Per-task training seeds.
    pub seeds: Vec<u64>,
}

pub fn make_tasks(features: usize, tasks: usize, seed: u64) -> Result<TaskSequence> {
    if tasks == 0 || features == 0 {
        return invalid("need at least one task and one feature");
    }
    let permutations = (0..tasks)
        .map(|t| {
            if t == 0 {
                (0..features).collect()
            } else {
                RngStream::keyed(seed, &[PERMUTATION_STREAM, t as u64]).permutation(features)
            }
        })
        .collect();
    let seeds = (0..tasks as u64)
        .map(|t| RngStream::keyed(seed, &[TASK_STREAM, t]).below(usize::MAX) as u64)
        .collect();
    Ok(TaskSequence { permutations, seeds })
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.permutations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutations.is_empty()
    }

    /// `data` with task `t`'s permutation applied to every example.
    pub fn task(&self, t: usize, data: &Dataset) -> Result<Dataset> {
        let mut d = data.permute_features(&self.permutations[t])?;
        d.name = format!("{}-task{}", data.name, t + 1);
        Ok(d)
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

/// Prior for the next task from a posterior: mean `mu`, precision
/// `1 / sigma^2 = N (s + prior + gamma)` on weight layers. Point-estimated
/// layers keep a unit placeholder that the updates never read.
pub fn chain_prior(post: &GaussianPosterior) -> Result<ChainedPrior> {
    let var = post.variance();
    let mut precision = Vec::with_capacity(var.num_layers());
    for (i, role) in post.roles().iter().enumerate() {
        let v = var.layer(i);
        precision.push(match role {
            ParamRole::Weight => {
                if v.values().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::NonFinite(format!("posterior variance in layer {i}")));
                }
                v.map(|v| 1.0 / v)
            }
            _ => Tensor::full(&[v.len()], 1.0),
        });
    }
    Ok(ChainedPrior {
        mean: post.mean().clone(),
        precision: ParamSet(precision),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualOptions {
    pub tasks: usize,
    /// Use each task's posterior as the next task's prior.
    #[serde(default = "yes")]
    pub chain: bool,
    /// Re-initialize the mean at the start of every task.
    #[serde(default = "yes")]
    pub reset_mean: bool,
}

fn yes() -> bool {
    true
}

/// `matrix[t][j]`: accuracy on task `j` after training task `t`, for
/// `j <= t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinualResult {
    pub matrix: Vec<Vec<f64>>,
    /// Mean of each row.
    pub average: Vec<f64>,
}

impl ContinualResult {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let t = self.matrix.len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["after_task".to_string()];
        header.extend((1..=t).map(|j| format!("task_{j}")));
        header.push("average".into());
        out.write_record(&header)?;
        for (i, row) in self.matrix.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend((0..t).map(|j| row.get(j).map_or_else(String::new, |a| format!("{a:e}"))));
            rec.push(format!("{:e}", self.average[i]));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Train tasks in order with VOGN, never revisiting earlier data, and
/// evaluate every task seen so far after each one. `template` fixes the
/// architecture; its weights are re-drawn whenever the mean is reset.
#[allow(clippy::too_many_arguments)]
pub fn run_continual(
    seq: &TaskSequence,
    train: &Dataset,
    test: &Dataset,
    template: &NetworkModel,
    hp: &Hyperparams,
    config: &TrainConfig,
    options: &ContinualOptions,
    mut on_task: impl FnMut(usize, &Trainer) -> Result<()>,
) -> Result<ContinualResult> {
    if hp.optimizer != OptimizerKind::Vogn {
        return invalid("continual runs use VOGN");
    }
    if options.tasks != seq.len() {
        return invalid(format!("{} tasks requested, sequence has {}", options.tasks, seq.len()));
    }
    let tests: Vec<Dataset> = (0..seq.len()).map(|t| seq.task(t, test)).collect::<Result<_>>()?;
    let mut prior: Option<ChainedPrior> = None;
    let mut mean: Option<NetworkModel> = None;
    let mut matrix = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let data = seq.task(t, train)?;
        let model = match (&mean, options.reset_mean) {
            (Some(m), false) => m.clone(),
            _ => {
                let mut m = template.clone();
                m.init_xavier(&mut RngStream::keyed(seq.seeds[t], &[INIT_STREAM]));
                m
            }
        };
        let mut trainer = Trainer::new(model, hp.clone(), config.clone(), data.len(), seq.seeds[t])?;
        if options.chain {
            trainer.state.prior = prior.clone();
        }
        trainer.fit(&data, None, |_| Ok(()))?;
        let post = GaussianPosterior::from_state(&trainer.model, &trainer.state, &trainer.hp)?;
        let mut rng = RngStream::keyed(seq.seeds[t], &[EVAL_STREAM]);
        let row = tests[..=t]
            .iter()
            .map(|d| {
                accuracy(
                    &predict_mc(&trainer.model, &post, &d.inputs, config.eval_samples, &mut rng)?,
                    &d.labels,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        matrix.push(row);
        if options.chain {
            prior = Some(chain_prior(&post)?);
        }
        on_task(t, &trainer)?;
        mean = Some(trainer.model);
    }
    let average = matrix.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(ContinualResult { matrix, average })
}
