//! Gaussian weight posteriors, Monte-Carlo prediction and the ELBO.

mod kronecker;
mod predictions;

pub use kronecker::{KroneckerFactor, KroneckerPosterior};
pub use predictions::{read_predictions_csv, write_predictions_csv, PredictionDump};

use serde::Serialize;

use crate::error::{invalid, shape_err, Error, Result};
use crate::network::{loss_and_grad, softmax_rows, Mode, NetworkModel, ParamRole};
use crate::optimizers::{Hyperparams, OptimizerState};
use crate::params::ParamSet;
use crate::tensor::{gaussian_sample, RngStream, Tensor};

/// Anything that yields weight draws for a [`NetworkModel`].
pub trait WeightSampler {
    fn mean(&self) -> &ParamSet;
    fn sample(&self, rng: &mut RngStream) -> Result<ParamSet>;
}

/// A point estimate; every draw is the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate(pub ParamSet);

impl WeightSampler for PointEstimate {
    fn mean(&self) -> &ParamSet {
        &self.0
    }

    fn sample(&self, _rng: &mut RngStream) -> Result<ParamSet> {
        Ok(self.0.clone())
    }
}

/// Mean-field Gaussian over weight layers with variance
/// `1 / (N (s + delta~ + gamma))`. Batchnorm layers are point-estimated.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    mean: ParamSet,
    s: ParamSet,
    /// Per-parameter prior term (`delta~`, or `p0 / N` under a chained prior).
    prior: ParamSet,
    roles: Vec<ParamRole>,
    gamma: f64,
    n: f64,
    /// Multiplies the draw noise; 0 makes every draw the mean.
    noise_scale: f64,
}

impl GaussianPosterior {
    pub fn new(
        mean: ParamSet,
        s: ParamSet,
        prior: ParamSet,
        roles: Vec<ParamRole>,
        gamma: f64,
        n: f64,
    ) -> Result<Self> {
        if mean.sizes() != s.sizes() || mean.sizes() != prior.sizes() || roles.len() != mean.num_layers() {
            return shape_err("GaussianPosterior::new", "mean, scale, prior and roles disagree");
        }
        if !(n > 0.0) || !(gamma >= 0.0) {
            return invalid(format!("need N > 0 and gamma >= 0, got {n}, {gamma}"));
        }
        let post = Self {
            mean,
            s,
            prior,
            roles,
            gamma,
            n,
            noise_scale: 1.0,
        };
        for (i, v) in post.variance().layers().iter().enumerate() {
            if post.roles[i] == ParamRole::Weight
                && v.values().iter().any(|v| !(v.is_finite() || *v == 0.0) || *v < 0.0)
            {
                return Err(Error::NonFinite(format!("posterior variance in layer {i}")));
            }
        }
        Ok(post)
    }

    /// Posterior held by an OGN/VOGN optimizer for the model's current mean.
    pub fn from_state(model: &NetworkModel, state: &OptimizerState, hp: &Hyperparams) -> Result<Self> {
        let roles = model.roles();
        let prior = ParamSet(
            (0..roles.len())
                .map(|i| Tensor::from_vec(state.prior_scaled(i)))
                .collect(),
        );
        Self::new(
            model.params().clone(),
            state.s.clone(),
            prior,
            roles,
            hp.gamma,
            state.n_eff,
        )
    }

    /// Scale sampling noise by `k`; the variance reported is unchanged.
    pub fn with_noise_scale(mut self, k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return invalid(format!("noise scale must be finite and nonnegative, got {k}"));
        }
        self.noise_scale = k;
        Ok(self)
    }

    pub fn roles(&self) -> &[ParamRole] {
        &self.roles
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// `sigma^2`, derived on every call; zero for point-estimated layers.
    pub fn variance(&self) -> ParamSet {
        ParamSet(
            self.roles
                .iter()
                .enumerate()
                .map(|(i, role)| match role {
                    ParamRole::Weight => {
                        let s = self.s.layer(i).values();
                        let d = self.prior.layer(i).values();
                        Tensor::from_vec(
                            s.iter()
                                .zip(d)
                                .map(|(s, d)| 1.0 / (self.n * (s + d + self.gamma)))
                                .collect(),
                        )
                    }
                    _ => Tensor::zeros(&[self.mean.layer(i).len()]),
                })
                .collect(),
        )
    }

    pub fn stddev(&self) -> ParamSet {
        self.variance().map(f64::sqrt)
    }
}

impl WeightSampler for GaussianPosterior {
    fn mean(&self) -> &ParamSet {
        &self.mean
    }

    /// `w = mu + eps * sigma`; draws are consumed for weight layers only.
    fn sample(&self, rng: &mut RngStream) -> Result<ParamSet> {
        let sd = self.stddev().map(|v| v * self.noise_scale);
        let mut out = Vec::with_capacity(self.roles.len());
        for (i, role) in self.roles.iter().enumerate() {
            out.push(match role {
                ParamRole::Weight => gaussian_sample(self.mean.layer(i), sd.layer(i), rng)?,
                _ => self.mean.layer(i).clone(),
            });
        }
        Ok(ParamSet(out))
    }
}

/// Rows processed per forward pass during prediction.
const PREDICT_CHUNK: usize = 512;

/// MC predictive `p = (1/C) sum_c softmax(f(x; w_c))`: probabilities are
/// averaged, not logits. Forward passes run in eval mode.
pub fn predict_mc(
    model: &NetworkModel,
    post: &dyn WeightSampler,
    inputs: &Tensor,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if samples == 0 {
        return invalid("predict_mc needs at least one sample");
    }
    let m = inputs.rows();
    let k = model.num_classes();
    let mut acc = Tensor::zeros(&[m, k]);
    for _ in 0..samples {
        let w = post.sample(rng)?;
        let mut start = 0;
        while start < m {
            let end = (start + PREDICT_CHUNK).min(m);
            let idx: Vec<usize> = (start..end).collect();
            let (logits, _) = model.forward_with(&w, &inputs.select_rows(&idx), Mode::Eval)?;
            let p = softmax_rows(&logits);
            for (r, row) in (start..end).enumerate() {
                for (a, v) in acc.row_mut(row).iter_mut().zip(p.row(r)) {
                    *a += v;
                }
            }
            start = end;
        }
    }
    Ok(acc.scale(1.0 / samples as f64))
}

/// `KL(N(mu_q, var_q) || N(mu_p, var_p))` for scalars.
pub fn gaussian_kl(mu_q: f64, var_q: f64, mu_p: f64, var_p: f64) -> f64 {
    0.5 * (var_q / var_p + (mu_q - mu_p).powi(2) / var_p - 1.0 + (var_p / var_q).ln())
}

/// Closed-form `KL(q || N(0, I / delta))` summed over weight layers.
pub fn diagonal_kl(post: &GaussianPosterior, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return invalid("KL against a prior with precision 0 is undefined");
    }
    let var = post.variance();
    let mut kl = 0.0;
    for (i, role) in post.roles.iter().enumerate() {
        if *role != ParamRole::Weight {
            continue;
        }
        for (mu, v) in post.mean.layer(i).values().iter().zip(var.layer(i).values()) {
            kl += 0.5 * (v * delta + mu * mu * delta - 1.0 - (v * delta).ln());
        }
    }
    Ok(kl)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ElboReport {
    /// MC estimate of the expected mean loss `E_q[l_bar]`.
    pub expected_loss: f64,
    pub kl: f64,
    /// `-N E_q[l_bar] - tau KL`.
    pub elbo: f64,
}

/// ELBO diagnostic on a data subset with prior `N(0, I / delta)`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_diagnostic(
    model: &NetworkModel,
    post: &GaussianPosterior,
    x: &Tensor,
    y: &[usize],
    delta: f64,
    tau: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<ElboReport> {
    let kl = diagonal_kl(post, delta)?;
    if samples == 0 {
        return invalid("elbo_diagnostic needs at least one sample");
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let w = post.sample(rng)?;
        let (logits, _) = model.forward_with(&w, x, Mode::Eval)?;
        total += loss_and_grad(&logits, y)?.0;
    }
    let expected_loss = total / samples as f64;
    Ok(ElboReport {
        expected_loss,
        kl,
        elbo: -post.n * expected_loss - tau * kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkBuilder};

    fn one_layer() -> NetworkModel {
        NetworkModel::new(
            vec![2],
            vec![LayerSpec::Dense {
                inputs: 2,
                outputs: 3,
                bias: true,
            }],
        )
        .unwrap()
    }

    fn isotropic(mean: ParamSet, var: f64, n: f64) -> GaussianPosterior {
        // s chosen so that 1 / (n s) = var
        let sizes = mean.sizes();
        let roles = vec![ParamRole::Weight; sizes.len()];
        GaussianPosterior::new(
            mean,
            ParamSet::full(&sizes, 1.0 / (n * var)),
            ParamSet::zeros(&sizes),
            roles,
            0.0,
            n,
        )
        .unwrap()
    }

    #[test]
    fn infinite_scale_gives_the_mean() {
        let mean = ParamSet(vec![Tensor::from_vec(vec![0.3, -2.0])]);
        let post = GaussianPosterior::new(
            mean.clone(),
            ParamSet::full(&[2], f64::INFINITY),
            ParamSet::zeros(&[2]),
            vec![ParamRole::Weight],
            0.0,
            10.0,
        )
        .unwrap();
        let mut rng = RngStream::new(0, 0);
        assert_eq!(post.sample(&mut rng).unwrap(), mean);
    }

    #[test]
    fn scalar_draws_match_variance() {
        let post = isotropic(ParamSet(vec![Tensor::from_vec(vec![1.5])]), 0.04, 100.0);
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| post.sample(&mut rng).unwrap().layer(0).values()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.5).abs() < 0.005);
        assert!((var / 0.04 - 1.0).abs() < 0.02);
    }

    #[test]
    fn batchnorm_layers_are_never_sampled() {
        let post = GaussianPosterior::new(
            ParamSet(vec![Tensor::from_vec(vec![0.0]), Tensor::from_vec(vec![1.0, 0.0])]),
            ParamSet::zeros(&[1, 2]),
            ParamSet::full(&[1, 2], 1.0),
            vec![ParamRole::Weight, ParamRole::Norm],
            0.0,
            1.0,
        )
        .unwrap();
        let mut rng = RngStream::new(2, 0);
        for _ in 0..10 {
            let w = post.sample(&mut rng).unwrap();
            assert_eq!(w.layer(1).values(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn single_sample_of_delta_posterior_is_point_prediction() {
        let mut rng = RngStream::new(3, 0);
        let mut model = one_layer();
        model.init_xavier(&mut rng);
        let x = rng.normal_tensor(&[4, 2]);
        let post = isotropic(model.params().clone(), 0.0, 1.0);
        let p = predict_mc(&model, &post, &x, 1, &mut rng).unwrap();
        let (logits, _) = model.forward_snapshot(&x, Mode::Eval).unwrap();
        assert_eq!(p, softmax_rows(&logits));
    }

    struct Fixed(Vec<ParamSet>, std::cell::Cell<usize>);

    impl WeightSampler for Fixed {
        fn mean(&self) -> &ParamSet {
            &self.0[0]
        }

        fn sample(&self, _rng: &mut RngStream) -> Result<ParamSet> {
            let i = self.1.get();
            self.1.set(i + 1);
            Ok(self.0[i % self.0.len()].clone())
        }
    }

    #[test]
    fn two_hand_set_samples_average_probabilities() {
        let model = one_layer();
        let w1 = ParamSet(vec![Tensor::from_vec(vec![
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        ])]);
        let w2 = ParamSet(vec![Tensor::from_vec(vec![
            0.0, 0.0, 2.0, 0.0, 0.0, -1.0, 3.0, 3.0, 0.0,
        ])]);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let sampler = Fixed(vec![w1, w2], std::cell::Cell::new(0));
        let mut rng = RngStream::new(0, 0);
        let p = predict_mc(&model, &sampler, &x, 2, &mut rng).unwrap();
        // logits by hand: sample 1 -> [1, 2, 0], sample 2 -> [2, -1, 9]
        let soft = |l: [f64; 3]| {
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            l.map(|v| v.exp() / z)
        };
        let (a, b) = (soft([1.0, 2.0, 0.0]), soft([2.0, -1.0, 9.0]));
        for k in 0..3 {
            assert!((p.at(0, k) - 0.5 * (a[k] + b[k])).abs() < 1e-15);
        }
        // averaging logits instead would differ
        let avg_logits = soft([1.5, 0.5, 4.5]);
        assert!((p.at(0, 2) - avg_logits[2]).abs() > 1e-3);
    }

    #[test]
    fn predictive_rows_are_simplices() {
        let mut rng = RngStream::new(4, 0);
        let mut model = NetworkBuilder::new(&[3]).dense(5).relu().dense(4).build().unwrap();
        model.init_xavier(&mut rng);
        let post = isotropic(model.params().clone(), 0.5, 10.0);
        let x = rng.normal_tensor(&[20, 3]);
        for c in [1, 3, 10] {
            let p = predict_mc(&model, &post, &x, c, &mut rng).unwrap();
            for r in 0..20 {
                assert!(p.row(r).iter().all(|v| *v >= 0.0));
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predictive_variance_shrinks_like_one_over_c() {
        let mut rng = RngStream::new(5, 0);
        let mut model = NetworkBuilder::new(&[2]).dense(6).relu().dense(3).build().unwrap();
        model.init_xavier(&mut rng);
        let post = isotropic(model.params().clone(), 0.3, 1.0);
        let x = Tensor::from_rows(&[vec![0.7, -0.4]]).unwrap();
        let runs = 2000;
        let mut points = Vec::new();
        for c in [1usize, 4, 16] {
            let vals: Vec<f64> = (0..runs)
                .map(|_| predict_mc(&model, &post, &x, c, &mut rng).unwrap().at(0, 0))
                .collect();
            let mean = vals.iter().sum::<f64>() / runs as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            points.push(((c as f64).ln(), var.ln()));
        }
        let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
        let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
        let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn kl_scalar_value() {
        let v = gaussian_kl(0.0, 1.0, 0.0, 2.0);
        let oracle = 0.5 * (0.5 + 2f64.ln() - 1.0);
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.096574).abs() < 1e-6);
    }

    #[test]
    fn kl_vanishes_only_at_the_prior() {
        let delta = 4.0;
        let at_prior = isotropic(ParamSet::zeros(&[3]), 1.0 / delta, 7.0);
        assert!(diagonal_kl(&at_prior, delta).unwrap().abs() < 1e-14);
        let shifted = isotropic(ParamSet::full(&[3], 0.01), 1.0 / delta, 7.0);
        assert!(diagonal_kl(&shifted, delta).unwrap() > 0.0);
        let wider = isotropic(ParamSet::zeros(&[3]), 1.1 / delta, 7.0);
        assert!(diagonal_kl(&wider, delta).unwrap() > 0.0);
        let narrower = isotropic(ParamSet::zeros(&[3]), 0.9 / delta, 7.0);
        assert!(diagonal_kl(&narrower, delta).unwrap() > 0.0);
        assert!(diagonal_kl(&at_prior, 0.0).is_err());
    }

    #[test]
    fn diagonal_kl_matches_scalar_formula() {
        let mut rng = RngStream::new(6, 0);
        let mean = ParamSet(vec![rng.normal_tensor(&[5])]);
        let post = isotropic(mean.clone(), 0.2, 3.0);
        let expect: f64 = mean
            .layer(0)
            .values()
            .iter()
            .map(|m| gaussian_kl(*m, 0.2, 0.0, 0.5))
            .sum();
        assert!((diagonal_kl(&post, 2.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn elbo_is_bounded_by_best_achievable_loss() {
        // one input with both labels: no predictor beats ln 2 per example
        let mut rng = RngStream::new(7, 0);
        let mut model = NetworkBuilder::new(&[1]).dense(2).build().unwrap();
        model.init_xavier(&mut rng);
        let x = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let y = [0, 1];
        for var in [1e-4, 0.1, 1.0] {
            let post = isotropic(model.params().clone(), var, 2.0);
            let r = elbo_diagnostic(&model, &post, &x, &y, 1.0, 1.0, 20, &mut rng).unwrap();
            assert!(r.elbo <= -2.0 * 2f64.ln() + 1e-12);
            assert!(r.kl >= 0.0);
        }
        // the mean at zero logits attains the loss bound
        let zero = isotropic(ParamSet::zeros(&[4]), 1e-300, 2.0);
        let r = elbo_diagnostic(&model, &zero, &x, &y, 1.0, 0.0, 1, &mut rng).unwrap();
        assert!((r.expected_loss - 2f64.ln()).abs() < 1e-12);
    }
}
