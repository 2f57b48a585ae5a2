//! A minimal feed-forward network with exact per-example gradients.
//!
//! Layers are the blocks of a layer-wise block-diagonal curvature model:
//! every parametric layer owns one flat parameter vector and optimizers
//! treat layers independently.
//!
//! Parameter layouts (row-major, flattened):
//!
//! - dense: `[outputs, inputs (+1)]`; the bias, when present, is the last
//!   column and is fed by a constant-one input.
//! - conv2d: `[out_channels, in_channels * k * k (+1)]`, columns ordered
//!   `(c, kh, kw)` to match [`unfold`](crate::tensor::unfold); bias last.
//! - batchnorm: `[gamma (features), beta (features)]`.
//!
//! Activations travel between layers as `[M, F]` matrices where `F` is the
//! product of the per-example shape (e.g. `C * H * W` after a convolution).

mod backward;
mod loss;

pub use backward::{gauss_newton_diag, BackwardSignals, PerExampleGrads};
pub use loss::{log_softmax_row, loss_and_grad, softmax_row, softmax_rows};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::params::ParamSet;
use crate::tensor::{conv_output_size, unfold, RngStream, Tensor};

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running batchnorm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    /// Normalizes each channel (leading per-example axis) over the batch and
    /// any trailing spatial axes.
    BatchNorm {
        features: usize,
    },
    Relu,
    Flatten,
}

/// How a layer's parameters are treated by the optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    None,
    /// Dense/conv weights: carry a posterior, are sampled and regularized.
    Weight,
    /// Batchnorm scale/shift: point-estimated, never sampled, no L2.
    Norm,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs, bias } => outputs * (inputs + bias as usize),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => out_channels * (in_channels * kernel * kernel + bias as usize),
            LayerSpec::BatchNorm { features } => 2 * features,
            LayerSpec::Relu | LayerSpec::Flatten => 0,
        }
    }

    pub fn role(&self) -> ParamRole {
        match self {
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => ParamRole::Weight,
            LayerSpec::BatchNorm { .. } => ParamRole::Norm,
            LayerSpec::Relu | LayerSpec::Flatten => ParamRole::None,
        }
    }

    /// Per-example output shape for a given per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return shape_err("dense", format!("expects input [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => match input[..] {
                [c, h, w] if c == in_channels => Ok(vec![
                    out_channels,
                    conv_output_size(h, kernel, stride, padding)?,
                    conv_output_size(w, kernel, stride, padding)?,
                ]),
                _ => shape_err("conv2d", format!("expects input [{in_channels}, H, W], got {input:?}")),
            },
            LayerSpec::BatchNorm { features } => {
                if input.first() != Some(&features) {
                    return shape_err("batchnorm", format!("expects {features} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-channel statistics of one batch at one batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) enum LayerCache {
    /// Input rows with the constant-one column appended when the layer has a bias.
    Dense {
        input: Tensor,
    },
    /// Raw `[M, C*H*W]` input; patches are re-extracted on demand.
    Conv {
        input: Tensor,
    },
    BatchNorm {
        normalized: Tensor,
        inv_std: Vec<f64>,
        stats: BatchStats,
    },
    Relu {
        mask: Vec<bool>,
    },
    Flatten,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) batch: usize,
    pub(crate) mode: Mode,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch statistics per batchnorm layer (`None` for other layers or in
    /// eval mode).
    pub fn batch_stats(&self) -> Vec<Option<BatchStats>> {
        self.layers
            .iter()
            .map(|c| match (c, self.mode) {
                (LayerCache::BatchNorm { stats, .. }, Mode::Train) => Some(stats.clone()),
                _ => None,
            })
            .collect()
    }

    /// Normalized batchnorm input `a_hat` for layer `i`, `[M, F]`.
    pub fn normalized_input(&self, i: usize) -> Option<&Tensor> {
        match &self.layers[i] {
            LayerCache::BatchNorm { normalized, .. } => Some(normalized),
            _ => None,
        }
    }

    /// Dense layer input rows (bias column included), `[M, inputs (+1)]`.
    pub fn dense_input(&self, i: usize) -> Option<&Tensor> {
        match &self.layers[i] {
            LayerCache::Dense { input } => Some(input),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: ParamSet,
    running: Vec<Option<RunningStats>>,
}

impl NetworkModel {
    /// Validate the layer chain and allocate zeroed parameters (batchnorm
    /// scale starts at one).
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return invalid(format!("bad input shape {input_shape:?}"));
        }
        let mut shape = input_shape.clone();
        for (i, l) in layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|e| match e {
                Error::Shape { op, detail } => Error::Shape {
                    op,
                    detail: format!("layer {i}: {detail}"),
                },
                other => other,
            })?;
        }
        if shape.len() != 1 {
            return shape_err("NetworkModel::new", format!("final output {shape:?} is not a vector"));
        }
        let sizes: Vec<usize> = layers.iter().map(LayerSpec::param_count).collect();
        let mut params = ParamSet::zeros(&sizes);
        let mut running = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if let LayerSpec::BatchNorm { features } = *l {
                params.layers_mut()[i].values_mut()[..features].fill(1.0);
                running.push(Some(RunningStats {
                    mean: vec![0.0; features],
                    var: vec![1.0; features],
                }));
            } else {
                running.push(None);
            }
        }
        Ok(Self {
            input_shape,
            layers,
            params,
            running,
        })
    }

    /// Xavier-normal weights, zero biases, batchnorm at `gamma = 1, beta = 0`.
    pub fn init_xavier(&mut self, rng: &mut RngStream) {
        for (i, l) in self.layers.iter().enumerate() {
            let (fan_in, fan_out, bias) = match *l {
                LayerSpec::Dense { inputs, outputs, bias } => (inputs, outputs, bias),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => (in_channels * kernel * kernel, out_channels * kernel * kernel, bias),
                _ => continue,
            };
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let cols = fan_in + bias as usize;
            let p = self.params.layers_mut()[i].values_mut();
            for (k, v) in p.iter_mut().enumerate() {
                *v = if bias && k % cols == fan_in {
                    0.0
                } else {
                    std * rng.normal()
                };
            }
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.sizes() != self.param_sizes() {
            return shape_err(
                "set_params",
                format!("{:?} vs {:?}", params.sizes(), self.param_sizes()),
            );
        }
        self.params = params;
        Ok(())
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::param_count).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn roles(&self) -> Vec<ParamRole> {
        self.layers.iter().map(LayerSpec::role).collect()
    }

    pub fn num_classes(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l.output_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    /// Per-example input shape of every layer.
    pub fn layer_input_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            out.push(shape.clone());
            shape = l.output_shape(&shape).expect("validated at construction");
        }
        out
    }

    pub fn running_stats(&self) -> &[Option<RunningStats>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [Option<RunningStats>] {
        &mut self.running
    }

    pub fn has_batchnorm(&self) -> bool {
        self.running.iter().any(Option::is_some)
    }

    /// Blend averaged batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[Option<BatchStats>]) -> Result<()> {
        if stats.len() != self.running.len() {
            return shape_err("apply_batch_stats", "layer count mismatch");
        }
        for (run, st) in self.running.iter_mut().zip(stats) {
            if let (Some(run), Some(st)) = (run.as_mut(), st) {
                for c in 0..run.mean.len() {
                    run.mean[c] = (1.0 - BN_MOMENTUM) * run.mean[c] + BN_MOMENTUM * st.mean[c];
                    run.var[c] = (1.0 - BN_MOMENTUM) * run.var[c] + BN_MOMENTUM * st.var[c];
                }
            }
        }
        Ok(())
    }

    /// Forward pass that also folds train-mode batch statistics into the
    /// running estimates. Eval mode never mutates the model.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let (logits, cache) = self.forward_snapshot(batch, mode)?;
        if mode == Mode::Train {
            self.apply_batch_stats(&cache.batch_stats())?;
        }
        Ok((logits, cache))
    }

    /// Forward pass over a `[M, input_shape...]` batch without touching the
    /// running statistics; workers call this on read-only snapshots.
    pub fn forward_snapshot(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.forward_with(&self.params, batch, mode)
    }

    /// Forward pass using `params` in place of the model's own parameters.
    pub fn forward_with(&self, params: &ParamSet, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        if params.sizes() != self.param_sizes() {
            return shape_err("forward", "parameter set does not match the model");
        }
        let m = batch.shape().first().copied().unwrap_or(0);
        if m == 0 || batch.shape()[1..] != self.input_shape[..] {
            return shape_err(
                "forward",
                format!("expected [M >= 1, {:?}], got {:?}", self.input_shape, batch.shape()),
            );
        }
        if mode == Mode::Train && m < 2 && self.has_batchnorm() {
            return invalid("batchnorm in train mode needs at least 2 examples");
        }
        let mut x = batch.clone().reshape(&[m, batch.row_len()])?;
        let mut shape = self.input_shape.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let w = params.layer(i).values();
            let (y, cache) = match *layer {
                LayerSpec::Dense { inputs, outputs, bias } => {
                    let input = if bias { append_ones(&x) } else { x };
                    let wt = Tensor::new(vec![outputs, inputs + bias as usize], w.to_vec())?;
                    let mut y = vec![0.0; m * outputs];
                    for r in 0..m {
                        let a = input.row(r);
                        for o in 0..outputs {
                            y[r * outputs + o] = dot(wt.row(o), a);
                        }
                    }
                    (Tensor::new(vec![m, outputs], y)?, LayerCache::Dense { input })
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let (h, wd) = (shape[1], shape[2]);
                    let cols = in_channels * kernel * kernel;
                    let wt = Tensor::new(vec![out_channels, cols + bias as usize], w.to_vec())?;
                    let out_shape = layer.output_shape(&shape)?;
                    let out_len: usize = out_shape.iter().product();
                    let mut y = Vec::with_capacity(m * out_len);
                    for r in 0..m {
                        let img = Tensor::new(vec![in_channels, h, wd], x.row(r).to_vec())?;
                        let mut u = unfold(&img, kernel, stride, padding)?;
                        if bias {
                            u = append_ones_row(&u);
                        }
                        y.extend_from_slice(wt.matmul(&u)?.values());
                    }
                    (Tensor::new(vec![m, out_len], y)?, LayerCache::Conv { input: x })
                }
                LayerSpec::BatchNorm { features } => {
                    let spatial = x.row_len() / features;
                    let stats = match mode {
                        Mode::Train => channel_stats(&x, features, spatial),
                        Mode::Eval => {
                            let run = self.running[i].as_ref().expect("batchnorm running stats");
                            BatchStats {
                                mean: run.mean.clone(),
                                var: run.var.clone(),
                            }
                        }
                    };
                    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let (gamma, beta) = w.split_at(features);
                    let mut normalized = x.clone();
                    let mut y = x;
                    for r in 0..m {
                        let nrow = normalized.row_mut(r);
                        for c in 0..features {
                            for s in 0..spatial {
                                let k = c * spatial + s;
                                nrow[k] = (nrow[k] - stats.mean[c]) * inv_std[c];
                            }
                        }
                        let yrow = y.row_mut(r);
                        for c in 0..features {
                            for s in 0..spatial {
                                let k = c * spatial + s;
                                yrow[k] = gamma[c] * nrow[k] + beta[c];
                            }
                        }
                    }
                    (
                        y,
                        LayerCache::BatchNorm {
                            normalized,
                            inv_std,
                            stats,
                        },
                    )
                }
                LayerSpec::Relu => {
                    let mask: Vec<bool> = x.values().iter().map(|&v| v > 0.0).collect();
                    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
                    (y, LayerCache::Relu { mask })
                }
                LayerSpec::Flatten => (x, LayerCache::Flatten),
            };
            caches.push(cache);
            shape = layer.output_shape(&shape)?;
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("forward logits".into()));
        }
        Ok((
            x,
            ForwardCache {
                layers: caches,
                batch: m,
                mode,
            },
        ))
    }

    /// Argmax predictions in eval mode.
    pub fn predict_classes(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward_snapshot(batch, Mode::Eval)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn append_ones(x: &Tensor) -> Tensor {
    let (m, f) = (x.rows(), x.row_len());
    let mut v = Vec::with_capacity(m * (f + 1));
    for r in 0..m {
        v.extend_from_slice(x.row(r));
        v.push(1.0);
    }
    Tensor::new(vec![m, f + 1], v).expect("sizes agree")
}

fn append_ones_row(u: &Tensor) -> Tensor {
    let (r, c) = (u.shape()[0], u.shape()[1]);
    let mut v = u.values().to_vec();
    v.extend(std::iter::repeat_n(1.0, c));
    Tensor::new(vec![r + 1, c], v).expect("sizes agree")
}

fn channel_stats(x: &Tensor, channels: usize, spatial: usize) -> BatchStats {
    let m = x.rows();
    let count = (m * spatial) as f64;
    let mut mean = vec![0.0; channels];
    for r in 0..m {
        let row = x.row(r);
        for c in 0..channels {
            mean[c] += row[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    let mut var = vec![0.0; channels];
    for r in 0..m {
        let row = x.row(r);
        for c in 0..channels {
            var[c] += row[c * spatial..(c + 1) * spatial]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    BatchStats { mean, var }
}

/// Fluent construction that derives layer input sizes from the chain.
#[derive(Debug)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            shape: input_shape.to_vec(),
            layers: Vec::new(),
            error: None,
        }
    }

    fn push(mut self, layer: LayerSpec) -> Self {
        if self.error.is_none() {
            match layer.output_shape(&self.shape) {
                Ok(s) => {
                    self.shape = s;
                    self.layers.push(layer);
                }
                Err(e) => self.error = Some(e),
            }
        }
        self
    }

    pub fn dense(self, outputs: usize) -> Self {
        let inputs = self.shape.iter().product();
        let needs_flatten = self.shape.len() > 1;
        let b = if needs_flatten { self.flatten() } else { self };
        b.push(LayerSpec::Dense {
            inputs,
            outputs,
            bias: true,
        })
    }

    pub fn conv2d(self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let in_channels = self.shape.first().copied().unwrap_or(0);
        self.push(LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        })
    }

    pub fn batchnorm(self) -> Self {
        let features = self.shape.first().copied().unwrap_or(0);
        self.push(LayerSpec::BatchNorm { features })
    }

    pub fn relu(self) -> Self {
        self.push(LayerSpec::Relu)
    }

    pub fn flatten(self) -> Self {
        self.push(LayerSpec::Flatten)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn build(self) -> Result<NetworkModel> {
        if let Some(e) = self.error {
            return Err(e);
        }
        NetworkModel::new(self.input_shape, self.layers)
    }
}
