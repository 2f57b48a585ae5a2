//! Backpropagation with batch statistics held fixed.
//!
//! Two independent routes produce parameter gradients from the same output
//! signals: [`NetworkModel::backward_per_example`] builds each example's
//! gradient from outer products (conv via unfolded patches), while
//! [`NetworkModel::backward`] accumulates the minibatch gradient directly
//! with batched products and a nested-loop convolution. Their agreement is a
//! check on both.

use super::{dot, ForwardCache, LayerCache, LayerSpec, NetworkModel};
use crate::error::{shape_err, Result};
use crate::params::ParamSet;
use crate::tensor::{fold, unfold, Tensor};

/// Gradient of each example's own loss with respect to every layer output,
/// `[M, F_out]` per layer.
#[derive(Clone, Debug)]
pub struct BackwardSignals {
    outputs: Vec<Tensor>,
}

impl BackwardSignals {
    pub fn output_grad(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.outputs.len()
    }
}

/// Per-layer `[M, param_count]` matrices; row `i` is the gradient of example
/// `i`'s loss alone.
#[derive(Clone, Debug, PartialEq)]
pub struct PerExampleGrads {
    layers: Vec<Tensor>,
    batch: usize,
}

impl PerExampleGrads {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        let batch = layers.first().map_or(0, Tensor::rows);
        if layers.iter().any(|t| t.rank() != 2 || t.rows() != batch) {
            return shape_err("PerExampleGrads::new", "layers disagree on batch size");
        }
        Ok(Self { layers, batch })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Tensor {
        &self.layers[i]
    }

    /// Gradient of example `i` as a parameter set.
    pub fn example(&self, i: usize) -> ParamSet {
        ParamSet(
            self.layers
                .iter()
                .map(|t| Tensor::from_vec(t.row(i).to_vec()))
                .collect(),
        )
    }

    /// `sum_i g_i`
    pub fn sum(&self) -> ParamSet {
        ParamSet(
            self.layers
                .iter()
                .map(|t| t.sum_rows().reshape(&[t.row_len()]).expect("rank-1 sum"))
                .collect(),
        )
    }

    /// `sum_i g_i^2`, squared elementwise before summing.
    pub fn sum_sq(&self) -> ParamSet {
        ParamSet(
            self.layers
                .iter()
                .map(|t| {
                    let mut acc = vec![0.0; t.row_len()];
                    for r in 0..t.rows() {
                        for (a, g) in acc.iter_mut().zip(t.row(r)) {
                            *a += g * g;
                        }
                    }
                    Tensor::from_vec(acc)
                })
                .collect(),
        )
    }

    pub fn mean(&self) -> ParamSet {
        self.sum().scale(1.0 / self.batch as f64)
    }
}

/// Diagonal Gauss-Newton estimate `(1/M) sum_i g_i^2`.
pub fn gauss_newton_diag(grads: &PerExampleGrads) -> Result<ParamSet> {
    if grads.batch_size() == 0 {
        return shape_err("gauss_newton_diag", "no examples");
    }
    Ok(grads.sum_sq().scale(1.0 / grads.batch_size() as f64))
}

impl NetworkModel {
    /// Propagate `dlogits` (minibatch-mean scaling, as returned by
    /// [`loss_and_grad`](super::loss_and_grad)) back through the network.
    /// Returned signals are rescaled by `M` so each row belongs to that
    /// example's own loss.
    pub fn backward_signals(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        dlogits: &Tensor,
    ) -> Result<BackwardSignals> {
        let m = cache.batch;
        if dlogits.rank() != 2 || dlogits.rows() != m || dlogits.row_len() != self.num_classes() {
            return shape_err("backward", format!("dlogits {:?} for a batch of {m}", dlogits.shape()));
        }
        if cache.layers.len() != self.layers.len() || params.sizes() != self.param_sizes() {
            return shape_err("backward", "cache or parameters do not match the model");
        }
        let shapes = self.layer_input_shapes();
        let n = self.layers.len();
        let mut outputs = vec![Tensor::zeros(&[0]); n];
        let mut dy = dlogits.scale(m as f64);
        for i in (0..n).rev() {
            let w = params.layer(i).values();
            let dx = if i > 0 {
                Some(match (&self.layers[i], &cache.layers[i]) {
                    (
                        &LayerSpec::Dense {
                            inputs,
                            outputs: o,
                            bias,
                        },
                        LayerCache::Dense { .. },
                    ) => {
                        let cols = inputs + bias as usize;
                        let mut dx = vec![0.0; m * inputs];
                        for r in 0..m {
                            let g = dy.row(r);
                            let out = &mut dx[r * inputs..(r + 1) * inputs];
                            for (k, gk) in g.iter().enumerate().take(o) {
                                let wrow = &w[k * cols..k * cols + inputs];
                                for (x, wv) in out.iter_mut().zip(wrow) {
                                    *x += gk * wv;
                                }
                            }
                        }
                        Tensor::new(vec![m, inputs], dx)?
                    }
                    (
                        &LayerSpec::Conv2d {
                            in_channels,
                            out_channels,
                            kernel,
                            stride,
                            padding,
                            bias,
                        },
                        LayerCache::Conv { .. },
                    ) => {
                        let (h, wd) = (shapes[i][1], shapes[i][2]);
                        let cols = in_channels * kernel * kernel;
                        let full = cols + bias as usize;
                        let mut wt = Vec::with_capacity(out_channels * cols);
                        for o in 0..out_channels {
                            wt.extend_from_slice(&w[o * full..o * full + cols]);
                        }
                        let wt = Tensor::new(vec![out_channels, cols], wt)?;
                        let positions = dy.row_len() / out_channels;
                        let mut dx = Vec::with_capacity(m * in_channels * h * wd);
                        for r in 0..m {
                            let g = Tensor::new(vec![out_channels, positions], dy.row(r).to_vec())?;
                            let dcols = wt.t_matmul(&g)?;
                            let img = fold(&dcols, (in_channels, h, wd), kernel, stride, padding)?;
                            dx.extend_from_slice(img.values());
                        }
                        Tensor::new(vec![m, in_channels * h * wd], dx)?
                    }
                    (&LayerSpec::BatchNorm { features }, LayerCache::BatchNorm { inv_std, .. }) => {
                        let spatial = dy.row_len() / features;
                        let mut dx = dy.clone();
                        for r in 0..m {
                            let row = dx.row_mut(r);
                            for c in 0..features {
                                let k = w[c] * inv_std[c];
                                for v in &mut row[c * spatial..(c + 1) * spatial] {
                                    *v *= k;
                                }
                            }
                        }
                        dx
                    }
                    (LayerSpec::Relu, LayerCache::Relu { mask }) => {
                        let mut dx = dy.clone();
                        for (v, &keep) in dx.values_mut().iter_mut().zip(mask) {
                            if !keep {
                                *v = 0.0;
                            }
                        }
                        dx
                    }
                    (LayerSpec::Flatten, LayerCache::Flatten) => dy.clone(),
                    _ => return shape_err("backward", format!("cache kind mismatch at layer {i}")),
                })
            } else {
                None
            };
            outputs[i] = dy;
            if let Some(dx) = dx {
                dy = dx;
            } else {
                break;
            }
        }
        Ok(BackwardSignals { outputs })
    }

    pub fn backward_per_example(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<PerExampleGrads> {
        self.backward_per_example_with(&self.params, cache, dlogits)
    }

    /// Exact per-example gradients for a forward pass run with `params`.
    pub fn backward_per_example_with(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        dlogits: &Tensor,
    ) -> Result<PerExampleGrads> {
        let signals = self.backward_signals(params, cache, dlogits)?;
        self.per_example_from_signals(cache, &signals)
    }

    pub fn per_example_from_signals(&self, cache: &ForwardCache, signals: &BackwardSignals) -> Result<PerExampleGrads> {
        let m = cache.batch;
        let shapes = self.layer_input_shapes();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let dy = signals.output_grad(i);
            let p = spec.param_count();
            let mut g = vec![0.0; m * p];
            match (spec, &cache.layers[i]) {
                (&LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    let cols = input.row_len();
                    for r in 0..m {
                        let a = input.row(r);
                        let out = &mut g[r * p..(r + 1) * p];
                        for (k, &gk) in dy.row(r).iter().enumerate() {
                            for (dst, av) in out[k * cols..(k + 1) * cols].iter_mut().zip(a) {
                                *dst = gk * av;
                            }
                        }
                    }
                }
                (
                    &LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        bias,
                    },
                    LayerCache::Conv { input },
                ) => {
                    let (h, wd) = (shapes[i][1], shapes[i][2]);
                    let positions = dy.row_len() / out_channels;
                    for r in 0..m {
                        let img = Tensor::new(vec![in_channels, h, wd], input.row(r).to_vec())?;
                        let u = unfold(&img, kernel, stride, padding)?;
                        let rows = u.shape()[0];
                        let full = rows + bias as usize;
                        let gs = dy.row(r);
                        let out = &mut g[r * p..(r + 1) * p];
                        for o in 0..out_channels {
                            let go = &gs[o * positions..(o + 1) * positions];
                            for q in 0..rows {
                                out[o * full + q] = dot(go, &u.values()[q * positions..(q + 1) * positions]);
                            }
                            if bias {
                                out[o * full + rows] = go.iter().sum();
                            }
                        }
                    }
                }
                (&LayerSpec::BatchNorm { features }, LayerCache::BatchNorm { normalized, .. }) => {
                    let spatial = dy.row_len() / features;
                    for r in 0..m {
                        let (gs, a) = (dy.row(r), normalized.row(r));
                        let out = &mut g[r * p..(r + 1) * p];
                        for c in 0..features {
                            let span = c * spatial..(c + 1) * spatial;
                            out[c] = dot(&gs[span.clone()], &a[span.clone()]);
                            out[features + c] = gs[span].iter().sum();
                        }
                    }
                }
                _ => {}
            }
            layers.push(Tensor::new(vec![m, p], g)?);
        }
        Ok(PerExampleGrads { layers, batch: m })
    }

    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<ParamSet> {
        self.backward_with(&self.params, cache, dlogits)
    }

    /// Minibatch gradient of the mean loss, accumulated without forming any
    /// per-example gradient.
    pub fn backward_with(&self, params: &ParamSet, cache: &ForwardCache, dlogits: &Tensor) -> Result<ParamSet> {
        let signals = self.backward_signals(params, cache, dlogits)?;
        let m = cache.batch;
        let inv_m = 1.0 / m as f64;
        let shapes = self.layer_input_shapes();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let dy = signals.output_grad(i);
            let grad = match (spec, &cache.layers[i]) {
                (&LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    dy.t_matmul(input)?.scale(inv_m).reshape(&[spec.param_count()])?
                }
                (
                    &LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        bias,
                    },
                    LayerCache::Conv { input },
                ) => {
                    let (h, wd) = (shapes[i][1] as isize, shapes[i][2] as isize);
                    let out_shape = spec.output_shape(&shapes[i])?;
                    let (ho, wo) = (out_shape[1], out_shape[2]);
                    let full = in_channels * kernel * kernel + bias as usize;
                    let mut g = vec![0.0; spec.param_count()];
                    for r in 0..m {
                        let x = input.row(r);
                        let gs = dy.row(r);
                        for o in 0..out_channels {
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let go = gs[(o * ho + oy) * wo + ox];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for c in 0..in_channels {
                                        for ky in 0..kernel {
                                            let iy = (oy * stride + ky) as isize - padding as isize;
                                            if iy < 0 || iy >= h {
                                                continue;
                                            }
                                            for kx in 0..kernel {
                                                let ix = (ox * stride + kx) as isize - padding as isize;
                                                if ix < 0 || ix >= wd {
                                                    continue;
                                                }
                                                let xv = x[(c * h as usize + iy as usize) * wd as usize + ix as usize];
                                                g[o * full + (c * kernel + ky) * kernel + kx] += go * xv;
                                            }
                                        }
                                    }
                                    if bias {
                                        g[o * full + full - 1] += go;
                                    }
                                }
                            }
                        }
                    }
                    Tensor::from_vec(g).scale(inv_m)
                }
                (&LayerSpec::BatchNorm { features }, LayerCache::BatchNorm { normalized, .. }) => {
                    let prod = dy.mul(normalized)?.sum_rows();
                    let sums = dy.sum_rows();
                    let spatial = dy.row_len() / features;
                    let mut g = vec![0.0; 2 * features];
                    for c in 0..features {
                        for s in 0..spatial {
                            g[c] += prod.values()[c * spatial + s];
                            g[features + c] += sums.values()[c * spatial + s];
                        }
                    }
                    Tensor::from_vec(g).scale(inv_m)
                }
                _ => Tensor::zeros(&[0]),
            };
            out.push(grad);
        }
        Ok(ParamSet(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{loss_and_grad, Mode, NetworkBuilder, RunningStats};
    use crate::tensor::RngStream;

    fn rel_err(a: &ParamSet, b: &ParamSet) -> f64 {
        let scale = b.flatten().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.max_abs_diff(b).unwrap() / scale
    }

    fn labels(m: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
        (0..m).map(|_| rng.below(k)).collect()
    }

    fn conv_bn_net(rng: &mut RngStream) -> NetworkModel {
        let mut model = NetworkBuilder::new(&[2, 5, 5])
            .conv2d(3, 3, 2, 1)
            .batchnorm()
            .relu()
            .dense(4)
            .batchnorm()
            .relu()
            .dense(3)
            .build()
            .unwrap();
        model.init_xavier(rng);
        // move batchnorm affine params off the identity so they matter
        for (i, l) in model.layers().to_vec().iter().enumerate() {
            if let LayerSpec::BatchNorm { .. } = l {
                for v in model.params_mut().layers_mut()[i].values_mut() {
                    *v += 0.3 * rng.normal();
                }
            }
        }
        model
    }

    #[test]
    fn per_example_mean_matches_minibatch_gradient() {
        let mut rng = RngStream::new(11, 0);
        let mut model = NetworkBuilder::new(&[5]).dense(7).relu().dense(3).build().unwrap();
        model.init_xavier(&mut rng);
        let x = rng.normal_tensor(&[8, 5]);
        let y = labels(8, 3, &mut rng);
        let (logits, cache) = model.forward(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &y).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        let std = model.backward(&cache, &dl).unwrap();
        assert!(rel_err(&per.mean(), &std) < 1e-10);
    }

    #[test]
    fn per_example_mean_matches_for_conv_and_batchnorm() {
        let mut rng = RngStream::new(12, 0);
        let model = conv_bn_net(&mut rng);
        let x = rng.normal_tensor(&[6, 2, 5, 5]);
        let y = labels(6, 3, &mut rng);
        let (logits, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &y).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        let std = model.backward(&cache, &dl).unwrap();
        assert!(rel_err(&per.mean(), &std) < 1e-10);
    }

    #[test]
    fn single_example_equals_standard_gradient() {
        let mut rng = RngStream::new(13, 0);
        let mut model = NetworkBuilder::new(&[4]).dense(5).relu().dense(2).build().unwrap();
        model.init_xavier(&mut rng);
        let x = rng.normal_tensor(&[1, 4]);
        let (logits, cache) = model.forward(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &[1]).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        let std = model.backward(&cache, &dl).unwrap();
        assert_eq!(per.example(0).max_abs_diff(&std).unwrap(), 0.0);
    }

    /// Each example's loss evaluated alone with the batch statistics frozen
    /// into the running estimates.
    fn single_loss(model: &NetworkModel, stats: &[Option<RunningStats>], x: &Tensor, y: usize) -> f64 {
        let mut m = model.clone();
        m.running_stats_mut().clone_from_slice(stats);
        let (logits, _) = m.forward_snapshot(x, Mode::Eval).unwrap();
        loss_and_grad(&logits, &[y]).unwrap().0
    }

    #[test]
    fn per_example_matches_finite_differences() {
        let mut rng = RngStream::new(14, 0);
        let model = conv_bn_net(&mut rng);
        let x = rng.normal_tensor(&[4, 2, 5, 5]);
        let y = labels(4, 3, &mut rng);
        let (logits, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &y).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        let frozen: Vec<Option<RunningStats>> = cache
            .batch_stats()
            .into_iter()
            .map(|s| {
                s.map(|s| RunningStats {
                    mean: s.mean,
                    var: s.var,
                })
            })
            .collect();
        let h = 1e-5;
        for i in 0..4 {
            let xi = x.select_rows(&[i]);
            for l in 0..model.layers().len() {
                for j in 0..model.params().layer(l).len() {
                    let mut plus = model.clone();
                    plus.params_mut().layers_mut()[l].values_mut()[j] += h;
                    let mut minus = model.clone();
                    minus.params_mut().layers_mut()[l].values_mut()[j] -= h;
                    let fd =
                        (single_loss(&plus, &frozen, &xi, y[i]) - single_loss(&minus, &frozen, &xi, y[i])) / (2.0 * h);
                    let g = per.layer(l).at(i, j);
                    assert!((fd - g).abs() < 1e-6, "example {i} layer {l} param {j}: fd {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn conv_unfold_route_matches_naive_per_example_backprop() {
        let mut rng = RngStream::new(15, 0);
        let mut model = NetworkBuilder::new(&[2, 4, 4])
            .conv2d(2, 3, 1, 1)
            .dense(2)
            .build()
            .unwrap();
        model.init_xavier(&mut rng);
        let x = rng.normal_tensor(&[3, 2, 4, 4]);
        let y = labels(3, 2, &mut rng);
        let (logits, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &y).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        for i in 0..3 {
            let xi = x.select_rows(&[i]);
            let (li, ci) = model.forward_snapshot(&xi, Mode::Train).unwrap();
            let (_, dli) = loss_and_grad(&li, &[y[i]]).unwrap();
            let naive = model.backward(&ci, &dli).unwrap();
            assert!(per.example(i).max_abs_diff(&naive).unwrap() < 1e-10);
        }
    }

    #[test]
    fn gauss_newton_squares_before_averaging() {
        let g = PerExampleGrads::new(vec![Tensor::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap()]).unwrap();
        let h = gauss_newton_diag(&g).unwrap();
        assert_eq!(h.layer(0).values(), &[1.0, 1.0]);
        let mean = g.mean();
        let sq: Vec<f64> = mean.layer(0).values().iter().map(|v| v * v).collect();
        assert_eq!(sq, vec![1.0, 0.0]);

        let one = PerExampleGrads::new(vec![Tensor::from_rows(&[vec![3.0, -0.5]]).unwrap()]).unwrap();
        assert_eq!(gauss_newton_diag(&one).unwrap().layer(0).values(), &[9.0, 0.25]);
    }

    #[test]
    fn gauss_newton_matches_loop() {
        let mut rng = RngStream::new(16, 0);
        let t = rng.normal_tensor(&[16, 7]);
        let g = PerExampleGrads::new(vec![t.clone()]).unwrap();
        let h = gauss_newton_diag(&g).unwrap();
        for j in 0..7 {
            let mut acc = 0.0;
            for i in 0..16 {
                acc += t.at(i, j) * t.at(i, j);
            }
            assert!((h.layer(0).values()[j] - acc / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_grads_are_rejected() {
        let g = PerExampleGrads::new(vec![Tensor::zeros(&[0, 3])]).unwrap();
        assert!(gauss_newton_diag(&g).is_err());
    }

    #[test]
    fn mismatched_dlogits_are_rejected() {
        let mut rng = RngStream::new(17, 0);
        let model = NetworkBuilder::new(&[3]).dense(2).build().unwrap();
        let x = rng.normal_tensor(&[4, 3]);
        let (_, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
        assert!(model.backward_per_example(&cache, &Tensor::zeros(&[3, 2])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn gauss_newton_dominates_squared_mean(seed in any::<u64>(), m in 1usize..12) {
                let mut rng = RngStream::new(seed, 0);
                let mut model = NetworkBuilder::new(&[3]).dense(4).batchnorm().relu().dense(3).build().unwrap();
                model.init_xavier(&mut rng);
                let m = m.max(2);
                let x = rng.normal_tensor(&[m, 3]);
                let y = labels(m, 3, &mut rng);
                let (logits, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
                let (_, dl) = loss_and_grad(&logits, &y).unwrap();
                let per = model.backward_per_example(&cache, &dl).unwrap();
                let h = gauss_newton_diag(&per).unwrap().flatten();
                let g = per.mean().flatten();
                for (hv, gv) in h.iter().zip(&g) {
                    prop_assert!(*hv >= 0.0);
                    prop_assert!(*hv + 1e-12 >= gv * gv);
                }
                let std = model.backward(&cache, &dl).unwrap();
                prop_assert!(rel_err(&per.mean(), &std) < 1e-10);
            }
        }
    }
}
