//! Simulated data-parallel workers: minibatch splitting, per-worker Monte
//! Carlo sampling and a deterministic all-reduce of `(g_hat, h_hat)`.
//!
//! Each worker returns `(P / (M K)) * sum` over its examples and samples, so
//! the arithmetic mean over workers is the global per-example, per-sample
//! mean even when local minibatches differ in size by one.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::network::{argmax, loss_and_grad, BatchStats, Mode, NetworkModel};
use crate::params::ParamSet;
use crate::posterior::WeightSampler;
use crate::tensor::{RngStream, Tensor};

/// Key namespace for weight-sample streams.
const SAMPLE_STREAM: u64 = 0x5A3B_1E00;

/// How weight-sample streams are keyed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RngKeying {
    /// One stream per `(example, sample)`: every example gets its own
    /// weight draws, so results do not depend on the worker count.
    #[default]
    Example,
    /// One stream per `(worker, sample)` shared by the worker's local
    /// minibatch. Worker-count invariant only in distribution.
    Worker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerPlan {
    pub workers: usize,
    /// MC samples drawn by each worker.
    pub samples_per_worker: usize,
    #[serde(default)]
    pub keying: RngKeying,
}

impl WorkerPlan {
    pub fn new(workers: usize, samples_per_worker: usize, keying: RngKeying) -> Result<Self> {
        let plan = Self {
            workers,
            samples_per_worker,
            keying,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn serial() -> Self {
        Self {
            workers: 1,
            samples_per_worker: 1,
            keying: RngKeying::Example,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.samples_per_worker == 0 {
            return invalid("worker count and samples per worker must be at least 1");
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.workers * self.samples_per_worker
    }

    /// Index ranges of each worker's share of an `m`-example batch.
    pub fn assignments(&self, m: usize) -> Result<Vec<std::ops::Range<usize>>> {
        let mut start = 0;
        Ok(split_sizes(m, self.workers)?
            .into_iter()
            .map(|n| {
                start += n;
                start - n..start
            })
            .collect())
    }
}

/// Local minibatch sizes: as equal as possible, larger shares first.
pub fn split_sizes(m: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || p > m {
        return invalid(format!("cannot split {m} examples over {p} workers"));
    }
    Ok((0..p).map(|k| m / p + usize::from(k < m % p)).collect())
}

/// Contiguous split whose concatenation in worker order is `batch`.
pub fn split_minibatch<T: Clone>(batch: &[T], p: usize) -> Result<Vec<Vec<T>>> {
    let mut rest = batch;
    Ok(split_sizes(batch.len(), p)?
        .into_iter()
        .map(|n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        })
        .collect())
}

/// Elementwise mean of `parts`, summed pairwise in a fixed binary tree
/// (neighbours first) so the result is bitwise reproducible for a given
/// count.
pub fn tree_mean(parts: &[ParamSet]) -> Result<ParamSet> {
    let Some(first) = parts.first() else {
        return invalid("nothing to reduce");
    };
    if parts.iter().any(|p| p.sizes() != first.sizes()) {
        return shape_err("all_reduce_mean", "contributions have different shapes");
    }
    let mut level: Vec<ParamSet> = parts.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| match c {
                [a, b] => a.add(b),
                [a] => Ok(a.clone()),
                _ => unreachable!(),
            })
            .collect::<Result<_>>()?;
    }
    Ok(level.pop().unwrap().scale(1.0 / parts.len() as f64))
}

/// Reduce per-worker `(g_hat_k, h_hat_k)` pairs to their means.
pub fn all_reduce_mean(contributions: &[(ParamSet, ParamSet)]) -> Result<(ParamSet, ParamSet)> {
    let g: Vec<ParamSet> = contributions.iter().map(|c| c.0.clone()).collect();
    let h: Vec<ParamSet> = contributions.iter().map(|c| c.1.clone()).collect();
    Ok((tree_mean(&g)?, tree_mean(&h)?))
}

/// One worker's output before reduction.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub g: ParamSet,
    pub h: ParamSet,
    /// Summed per-example loss over local examples and samples.
    pub loss_sum: f64,
    /// Summed correct predictions over local examples and samples.
    pub correct_sum: f64,
    /// Train-mode batch statistics of the first sample.
    pub batch_stats: Vec<Option<BatchStats>>,
    pub seconds: f64,
}

/// Reduced statistics of one data-parallel iteration.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub g_hat: ParamSet,
    pub h_hat: ParamSet,
    /// Mean loss over examples and samples.
    pub loss: f64,
    /// Fraction of correct predictions over examples and samples.
    pub accuracy: f64,
    /// Batch statistics averaged over workers (worker keying only).
    pub batch_stats: Vec<Option<BatchStats>>,
    pub worker_seconds: Vec<f64>,
    pub reduce_seconds: f64,
}

/// Identifies the sample streams of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepKeys {
    pub seed: u64,
    pub iteration: u64,
}

struct Accum {
    g: ParamSet,
    h: ParamSet,
    loss: f64,
    correct: f64,
    stats: Option<Vec<Option<BatchStats>>>,
}

impl Accum {
    fn new(model: &NetworkModel) -> Self {
        let sizes = model.param_sizes();
        Self {
            g: ParamSet::zeros(&sizes),
            h: ParamSet::zeros(&sizes),
            loss: 0.0,
            correct: 0.0,
            stats: None,
        }
    }

    /// Forward and per-example backward of `x` at `weights`, adding sums.
    fn add(&mut self, model: &NetworkModel, weights: &ParamSet, x: &Tensor, y: &[usize]) -> Result<()> {
        let (logits, cache) = model.forward_with(weights, x, Mode::Train)?;
        let (loss, dl) = loss_and_grad(&logits, y)?;
        let per = model.backward_per_example_with(weights, &cache, &dl)?;
        self.g = self.g.add(&per.sum())?;
        self.h = self.h.add(&per.sum_sq())?;
        self.loss += loss * y.len() as f64;
        self.correct += y
            .iter()
            .enumerate()
            .filter(|&(r, &t)| argmax(logits.row(r)) == t)
            .count() as f64;
        if self.stats.is_none() {
            self.stats = Some(cache.batch_stats());
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_run(
    model: &NetworkModel,
    sampler: &(dyn WeightSampler + Sync),
    x: &Tensor,
    y: &[usize],
    ids: &[u64],
    worker: usize,
    plan: &WorkerPlan,
    keys: StepKeys,
    weight: f64,
) -> Result<Contribution> {
    let start = Instant::now();
    let mut acc = Accum::new(model);
    match plan.keying {
        RngKeying::Worker => {
            for j in 0..plan.samples_per_worker {
                let mut rng = RngStream::keyed(keys.seed, &[SAMPLE_STREAM, keys.iteration, worker as u64, j as u64]);
                let w = sampler.sample(&mut rng)?;
                acc.add(model, &w, x, y)?;
            }
        }
        RngKeying::Example => {
            for (r, &id) in ids.iter().enumerate() {
                let xr = x.select_rows(&[r]);
                for j in 0..plan.samples_per_worker {
                    let mut rng = RngStream::keyed(keys.seed, &[SAMPLE_STREAM, keys.iteration, id, j as u64]);
                    let w = sampler.sample(&mut rng)?;
                    acc.add(model, &w, &xr, &y[r..r + 1])?;
                }
            }
        }
    }
    Ok(Contribution {
        g: acc.g.scale(weight),
        h: acc.h.scale(weight),
        loss_sum: acc.loss,
        correct_sum: acc.correct,
        batch_stats: acc.stats.unwrap_or_default(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean_batch_stats(parts: &[Vec<Option<BatchStats>>]) -> Vec<Option<BatchStats>> {
    let Some(first) = parts.first() else {
        return Vec::new();
    };
    let p = parts.len() as f64;
    (0..first.len())
        .map(|i| {
            let layer: Vec<&BatchStats> = parts.iter().filter_map(|s| s.get(i).and_then(Option::as_ref)).collect();
            if layer.len() != parts.len() {
                return None;
            }
            let c = layer[0].mean.len();
            let avg = |f: fn(&BatchStats) -> &Vec<f64>| -> Vec<f64> {
                (0..c).map(|k| layer.iter().map(|s| f(s)[k]).sum::<f64>() / p).collect()
            };
            Some(BatchStats {
                mean: avg(|s| &s.mean),
                var: avg(|s| &s.var),
            })
        })
        .collect()
}

/// Fork-join iteration over a global batch: workers draw their own weight
/// samples from `sampler`, compute local sums of per-example gradients and
/// their squares, and the coordinator reduces them.
///
/// `ids` are stable example identifiers used for example-keyed streams.
/// Example keying evaluates one example at a time, which batchnorm's train
/// mode cannot do, so it is rejected for such models.
pub fn parallel_step(
    model: &NetworkModel,
    sampler: &(dyn WeightSampler + Sync),
    x: &Tensor,
    y: &[usize],
    ids: &[u64],
    plan: &WorkerPlan,
    keys: StepKeys,
) -> Result<StepOutput> {
    plan.validate()?;
    let m = y.len();
    if x.rows() != m || ids.len() != m {
        return shape_err(
            "parallel_step",
            format!("{} inputs, {m} labels, {} ids", x.rows(), ids.len()),
        );
    }
    if plan.keying == RngKeying::Example && model.has_batchnorm() {
        return invalid("example-keyed sampling evaluates single examples; batchnorm needs worker keying");
    }
    let ranges = plan.assignments(m)?;
    let k = plan.samples_per_worker;
    let weight = plan.workers as f64 / (m * k) as f64;
    let run = |w: usize| {
        let r = ranges[w].clone();
        let idx: Vec<usize> = r.clone().collect();
        worker_run(
            model,
            sampler,
            &x.select_rows(&idx),
            &y[r.clone()],
            &ids[r],
            w,
            plan,
            keys,
            weight,
        )
    };
    let results: Vec<Result<Contribution>> = if plan.workers == 1 {
        vec![run(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..plan.workers).map(|w| scope.spawn(move || run(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        })
    };
    let contributions = results.into_iter().collect::<Result<Vec<_>>>()?;
    let start = Instant::now();
    let pairs: Vec<(ParamSet, ParamSet)> = contributions.iter().map(|c| (c.g.clone(), c.h.clone())).collect();
    let (g_hat, h_hat) = all_reduce_mean(&pairs)?;
    let reduce_seconds = start.elapsed().as_secs_f64();
    let total = (m * k) as f64;
    let stats: Vec<_> = contributions.iter().map(|c| c.batch_stats.clone()).collect();
    Ok(StepOutput {
        g_hat,
        h_hat,
        loss: contributions.iter().map(|c| c.loss_sum).sum::<f64>() / total,
        accuracy: contributions.iter().map(|c| c.correct_sum).sum::<f64>() / total,
        batch_stats: if plan.keying == RngKeying::Worker {
            mean_batch_stats(&stats)
        } else {
            Vec::new()
        },
        worker_seconds: contributions.iter().map(|c| c.seconds).collect(),
        reduce_seconds,
    })
}

/// Per-iteration timing row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub epoch: usize,
    pub iteration: u64,
    pub workers: usize,
    /// Slowest worker's compute time.
    pub compute_seconds: f64,
    pub reduce_seconds: f64,
    /// Whole iteration including the optimizer step.
    pub step_seconds: f64,
}

pub fn write_timing_csv<W: std::io::Write>(w: W, rows: &[TimingRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
