//! SGD, Adam, OGN, VOGN and Noisy K-FAC.
//!
//! All steps are layer-wise: every layer's block is updated from its own
//! gradient statistics only, so the order layers are visited in is
//! irrelevant. Batchnorm parameters are point-estimated everywhere: no
//! L2, no decay, never sampled, and under OGN/VOGN they take the
//! Gauss-Newton step without a prior term.

mod hyperparams;
mod kfac;
pub mod recipes;
mod schedule;

pub use hyperparams::{AdamVariant, Hyperparams, OptimizerKind};
pub use kfac::{damping_split, noisy_kfac_layer_step, KfacFactors, KfacStats};
pub use schedule::{schedule_step, Schedule};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::network::{gauss_newton_diag, loss_and_grad, Mode, NetworkModel, ParamRole};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Per-parameter Gaussian prior carried over from a previous task.
///
/// `precision` holds `p0`, the full precision `N (s + delta~ + gamma)` of
/// the earlier posterior; the step uses `p0 / N` wherever the isotropic
/// rule uses `delta~`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainedPrior {
    pub mean: ParamSet,
    pub precision: ParamSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Momentum (Adam's first moment in the bias-corrected variant).
    pub m: ParamSet,
    /// Scale: the Gauss-Newton / squared-gradient moving average.
    pub s: ParamSet,
    pub step: u64,
    /// Effective dataset size `rho * N_orig`.
    pub n_eff: f64,
    /// Current tempering value.
    pub tau: f64,
    pub delta_tilde: f64,
    pub kfac: Vec<Option<KfacFactors>>,
    pub prior: Option<ChainedPrior>,
}

impl OptimizerState {
    pub fn new(sizes: &[usize], n_eff: f64, hp: &Hyperparams) -> Result<Self> {
        if !(n_eff >= 1.0) || !n_eff.is_finite() {
            return invalid(format!("effective dataset size must be >= 1, got {n_eff}"));
        }
        let tau = hp.tau_init.unwrap_or(hp.tau);
        Ok(Self {
            m: ParamSet::zeros(sizes),
            s: ParamSet::zeros(sizes),
            step: 0,
            n_eff,
            tau,
            delta_tilde: tau * hp.prior_precision / n_eff,
            kfac: vec![None; sizes.len()],
            prior: None,
        })
    }

    /// Set the tempering value and recompute `delta~ = tau delta / N`.
    pub fn set_tau(&mut self, tau: f64, hp: &Hyperparams) {
        self.tau = tau;
        self.delta_tilde = tau * hp.prior_precision / self.n_eff;
    }

    pub fn set_n_eff(&mut self, n_eff: f64, hp: &Hyperparams) -> Result<()> {
        if !(n_eff >= 1.0) {
            return invalid(format!("effective dataset size must be >= 1, got {n_eff}"));
        }
        self.n_eff = n_eff;
        self.delta_tilde = self.tau * hp.prior_precision / n_eff;
        Ok(())
    }

    /// Per-parameter prior precision over `N` for weight layer `i`
    /// (`delta~` everywhere unless a chained prior is set).
    pub fn prior_scaled(&self, i: usize) -> Vec<f64> {
        match &self.prior {
            Some(p) => p.precision.layer(i).values().iter().map(|v| v / self.n_eff).collect(),
            None => vec![self.delta_tilde; self.s.layer(i).len()],
        }
    }

    fn prior_mean(&self, i: usize) -> Option<&[f64]> {
        self.prior.as_ref().map(|p| p.mean.layer(i).values())
    }

    /// Posterior variance `1 / (N (s + delta~ + gamma))` for weight layers;
    /// zero for point-estimated layers.
    pub fn posterior_variance(&self, roles: &[ParamRole], gamma: f64) -> ParamSet {
        ParamSet(
            roles
                .iter()
                .enumerate()
                .map(|(i, role)| {
                    let s = self.s.layer(i).values();
                    let values = match role {
                        ParamRole::Weight => {
                            let d = self.prior_scaled(i);
                            s.iter()
                                .zip(&d)
                                .map(|(s, d)| 1.0 / (self.n_eff * (s + d + gamma)))
                                .collect()
                        }
                        _ => vec![0.0; s.len()],
                    };
                    Tensor::from_vec(values)
                })
                .collect(),
        )
    }
}

fn check_sizes(a: &ParamSet, b: &ParamSet, roles: &[ParamRole], op: &'static str) -> Result<()> {
    if a.sizes() != b.sizes() || roles.len() != a.num_layers() {
        return shape_err(op, format!("{:?} vs {:?}", a.sizes(), b.sizes()));
    }
    Ok(())
}

fn check_finite(g: &ParamSet, what: &str) -> Result<()> {
    match g.first_non_finite() {
        Some(i) => Err(Error::NonFinite(format!("{what} in layer {i}"))),
        None => Ok(()),
    }
}

/// `m <- beta1 m + (g + l2 w)`, `w <- w - alpha (m + wd w)`; L2 and weight
/// decay apply to weight layers only.
pub fn sgd_step(
    params: &mut ParamSet,
    grad: &ParamSet,
    roles: &[ParamRole],
    state: &mut OptimizerState,
    hp: &Hyperparams,
    lr: f64,
) -> Result<()> {
    check_sizes(params, grad, roles, "sgd_step")?;
    check_finite(grad, "gradient")?;
    for (i, role) in roles.iter().enumerate() {
        let (l2, wd) = match role {
            ParamRole::Weight => (hp.l2, hp.weight_decay),
            _ => (0.0, 0.0),
        };
        let g = grad.layer(i).values();
        let m = state.m.layers_mut()[i].values_mut();
        let w = params.layers_mut()[i].values_mut();
        for j in 0..w.len() {
            m[j] = hp.beta1 * m[j] + (g[j] + l2 * w[j]);
            w[j] -= lr * (m[j] + wd * w[j]);
        }
    }
    state.step += 1;
    Ok(())
}

/// Adam in its momentum-free form,
/// `s <- (1 - beta) s + beta (g + l2 w)^2`, `w <- w - alpha (g + l2 w) / (sqrt(s) + eps)`,
/// with `beta = beta2`; or the bias-corrected variant when configured.
pub fn adam_step(
    params: &mut ParamSet,
    grad: &ParamSet,
    roles: &[ParamRole],
    state: &mut OptimizerState,
    hp: &Hyperparams,
    lr: f64,
) -> Result<()> {
    check_sizes(params, grad, roles, "adam_step")?;
    check_finite(grad, "gradient")?;
    state.step += 1;
    let t = state.step as f64;
    for (i, role) in roles.iter().enumerate() {
        let (l2, wd) = match role {
            ParamRole::Weight => (hp.l2, hp.weight_decay),
            _ => (0.0, 0.0),
        };
        let g = grad.layer(i).values();
        let m = state.m.layers_mut()[i].values_mut();
        let s = state.s.layers_mut()[i].values_mut();
        let w = params.layers_mut()[i].values_mut();
        for j in 0..w.len() {
            let gj = g[j] + l2 * w[j];
            s[j] = (1.0 - hp.beta2) * s[j] + hp.beta2 * gj * gj;
            let step = match hp.adam_variant {
                AdamVariant::Literal => gj / (s[j].sqrt() + hp.eps),
                AdamVariant::BiasCorrected => {
                    m[j] = (1.0 - hp.beta1) * m[j] + hp.beta1 * gj;
                    let m_hat = m[j] / (1.0 - (1.0 - hp.beta1).powf(t));
                    let s_hat = s[j] / (1.0 - (1.0 - hp.beta2).powf(t));
                    m_hat / (s_hat.sqrt() + hp.eps)
                }
            };
            w[j] -= lr * (step + wd * w[j]);
        }
    }
    Ok(())
}

/// One VOGN update of the mean from `g_hat`, `h_hat` computed at sampled
/// weights:
///
/// `m <- beta1 m + (g + delta~ mu)`, `s <- (1 - tau beta2) s + beta2 h`,
/// `mu <- mu - alpha m / (s + delta~ + gamma)`.
pub fn vogn_step(
    mu: &mut ParamSet,
    g_hat: &ParamSet,
    h_hat: &ParamSet,
    roles: &[ParamRole],
    state: &mut OptimizerState,
    hp: &Hyperparams,
    lr: f64,
) -> Result<()> {
    check_sizes(mu, g_hat, roles, "vogn_step")?;
    check_sizes(mu, h_hat, roles, "vogn_step")?;
    check_finite(g_hat, "gradient")?;
    check_finite(h_hat, "Gauss-Newton estimate")?;
    if h_hat.min_value() < 0.0 {
        return invalid("Gauss-Newton estimate has a negative element");
    }
    for (i, role) in roles.iter().enumerate() {
        let (prior, prior_mean) = match role {
            ParamRole::Weight => (state.prior_scaled(i), state.prior_mean(i).map(<[f64]>::to_vec)),
            _ => (vec![0.0; mu.layer(i).len()], None),
        };
        let floor = if *role == ParamRole::Weight { 0.0 } else { hp.eps };
        let g = g_hat.layer(i).values();
        let h = h_hat.layer(i).values();
        let tau = state.tau;
        let m = state.m.layers_mut()[i].values_mut();
        let s = state.s.layers_mut()[i].values_mut();
        let w = mu.layers_mut()[i].values_mut();
        for j in 0..w.len() {
            let centred = w[j] - prior_mean.as_ref().map_or(0.0, |p| p[j]);
            m[j] = hp.beta1 * m[j] + (g[j] + prior[j] * centred);
            s[j] = (1.0 - tau * hp.beta2) * s[j] + hp.beta2 * h[j];
            let denom = (s[j] + prior[j] + hp.gamma).max(floor);
            if !(denom > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "non-positive denominator {denom:e} in layer {i}"
                )));
            }
            w[j] -= lr * m[j] / denom;
        }
    }
    state.step += 1;
    Ok(())
}

/// OGN: the VOGN update with statistics taken at the mean rather than at
/// sampled weights. The arithmetic is shared; only the caller's sampling
/// differs.
pub fn ogn_step(
    w: &mut ParamSet,
    g_hat: &ParamSet,
    h_hat: &ParamSet,
    roles: &[ParamRole],
    state: &mut OptimizerState,
    hp: &Hyperparams,
    lr: f64,
) -> Result<()> {
    vogn_step(w, g_hat, h_hat, roles, state, hp, lr)
}

/// Initial scale: the Gauss-Newton diagonal of `(x, y)` at the model's mean
/// with batch statistics from the same batch.
pub fn init_scale(model: &NetworkModel, x: &Tensor, y: &[usize]) -> Result<ParamSet> {
    let mode = if model.has_batchnorm() && x.rows() < 2 {
        Mode::Eval
    } else {
        Mode::Train
    };
    let (logits, cache) = model.forward_snapshot(x, mode)?;
    let (_, dl) = loss_and_grad(&logits, y)?;
    gauss_newton_diag(&model.backward_per_example(&cache, &dl)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkBuilder;
    use crate::tensor::RngStream;

    fn scalar(v: f64) -> ParamSet {
        ParamSet(vec![Tensor::from_vec(vec![v])])
    }

    fn hp(kind: OptimizerKind) -> Hyperparams {
        Hyperparams {
            optimizer: kind,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut h = hp(OptimizerKind::Adam);
        h.l2 = 0.0;
        let mut w = scalar(0.7);
        let mut st = OptimizerState::new(&[1], 10.0, &h).unwrap();
        adam_step(&mut w, &scalar(0.0), &[ParamRole::Weight], &mut st, &h, 0.1).unwrap();
        assert_eq!(w, scalar(0.7));
    }

    #[test]
    fn adam_scalar_step() {
        let mut h = hp(OptimizerKind::Adam);
        h.beta2 = 0.5;
        h.eps = 1e-8;
        let mut w = scalar(1.0);
        let mut st = OptimizerState::new(&[1], 10.0, &h).unwrap();
        adam_step(&mut w, &scalar(0.1), &[ParamRole::Weight], &mut st, &h, 0.1).unwrap();
        assert!((st.s.layer(0).values()[0] - 0.005).abs() < 1e-15);
        assert!((w.layer(0).values()[0] - 0.8585786637626877).abs() < 1e-12);
        assert!((w.layer(0).values()[0] - 0.858579).abs() < 1e-6);
    }

    #[test]
    fn adam_is_nearly_scale_invariant() {
        let h = hp(OptimizerKind::Adam);
        let run = |c: f64| {
            let mut w = scalar(1.0);
            let mut st = OptimizerState::new(&[1], 10.0, &h).unwrap();
            for k in 0..5 {
                let g = scalar(c * (0.3 + 0.1 * k as f64));
                adam_step(&mut w, &g, &[ParamRole::Weight], &mut st, &h, 0.01).unwrap();
            }
            1.0 - w.layer(0).values()[0]
        };
        let (a, b) = (run(1.0), run(50.0));
        assert!(((a - b) / a).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let h = hp(OptimizerKind::Adam);
        let mut w = ParamSet(vec![Tensor::zeros(&[1]), Tensor::zeros(&[2])]);
        let mut st = OptimizerState::new(&[1, 2], 10.0, &h).unwrap();
        let g = ParamSet(vec![Tensor::zeros(&[1]), Tensor::from_vec(vec![0.0, f64::NAN])]);
        let err = adam_step(&mut w, &g, &[ParamRole::Weight; 2], &mut st, &h, 0.1).unwrap_err();
        assert!(err.to_string().contains("layer 1"));
    }

    #[test]
    fn bias_corrected_adam_first_step_is_sign_step() {
        let mut h = hp(OptimizerKind::Adam);
        h.adam_variant = AdamVariant::BiasCorrected;
        let mut w = scalar(0.0);
        let mut st = OptimizerState::new(&[1], 10.0, &h).unwrap();
        adam_step(&mut w, &scalar(-4.0), &[ParamRole::Weight], &mut st, &h, 0.01).unwrap();
        assert!((w.layer(0).values()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn sgd_momentum_accumulates_without_damping() {
        let h = Hyperparams {
            beta1: 0.5,
            ..hp(OptimizerKind::Sgd)
        };
        let mut w = scalar(0.0);
        let mut st = OptimizerState::new(&[1], 10.0, &h).unwrap();
        sgd_step(&mut w, &scalar(1.0), &[ParamRole::Weight], &mut st, &h, 0.1).unwrap();
        sgd_step(&mut w, &scalar(1.0), &[ParamRole::Weight], &mut st, &h, 0.1).unwrap();
        assert!((w.layer(0).values()[0] + 0.1 * (1.0 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_parameters_skip_l2_and_decay() {
        let h = Hyperparams {
            l2: 1.0,
            weight_decay: 1.0,
            beta1: 0.0,
            ..hp(OptimizerKind::Sgd)
        };
        let mut w = ParamSet(vec![Tensor::from_vec(vec![2.0]), Tensor::from_vec(vec![2.0])]);
        let mut st = OptimizerState::new(&[1, 1], 10.0, &h).unwrap();
        let g = ParamSet(vec![Tensor::zeros(&[1]), Tensor::zeros(&[1])]);
        sgd_step(&mut w, &g, &[ParamRole::Weight, ParamRole::Norm], &mut st, &h, 0.1).unwrap();
        assert!((w.layer(0).values()[0] - (2.0 - 0.1 * 4.0)).abs() < 1e-15);
        assert_eq!(w.layer(1).values()[0], 2.0);
    }

    fn vogn_hp() -> Hyperparams {
        Hyperparams {
            beta1: 0.0,
            beta2: 0.1,
            gamma: 0.0,
            tau: 1.0,
            prior_precision: 0.01 * 100.0,
            ..hp(OptimizerKind::Vogn)
        }
    }

    #[test]
    fn vogn_scalar_step() {
        let h = vogn_hp();
        let mut st = OptimizerState::new(&[1], 100.0, &h).unwrap();
        assert!((st.delta_tilde - 0.01).abs() < 1e-18);
        st.s = scalar(0.1);
        let mut mu = scalar(0.5);
        vogn_step(
            &mut mu,
            &scalar(0.2),
            &scalar(0.04),
            &[ParamRole::Weight],
            &mut st,
            &h,
            0.1,
        )
        .unwrap();
        assert!((st.s.layer(0).values()[0] - 0.094).abs() < 1e-15);
        assert!((mu.layer(0).values()[0] - 0.30288461538461536).abs() < 1e-12);
    }

    #[test]
    fn vogn_prior_equilibrium_is_fixed_point() {
        let h = vogn_hp();
        let mut st = OptimizerState::new(&[1], 100.0, &h).unwrap();
        st.s = scalar(0.3);
        let mut mu = scalar(1.7);
        let g = scalar(-st.delta_tilde * 1.7);
        vogn_step(&mut mu, &g, &scalar(0.2), &[ParamRole::Weight], &mut st, &h, 0.5).unwrap();
        assert_eq!(mu, scalar(1.7));
    }

    #[test]
    fn vogn_rejects_negative_curvature() {
        let h = vogn_hp();
        let mut st = OptimizerState::new(&[1], 100.0, &h).unwrap();
        let mut mu = scalar(0.0);
        assert!(vogn_step(
            &mut mu,
            &scalar(0.0),
            &scalar(-1e-9),
            &[ParamRole::Weight],
            &mut st,
            &h,
            0.1
        )
        .is_err());
    }

    #[test]
    fn ogn_converges_on_quadratic() {
        // loss 0.5 (w - 3)^2: g = w - 3, per-example squared gradient as h
        let h = Hyperparams {
            beta1: 0.0,
            beta2: 0.1,
            gamma: 1.0,
            prior_precision: 10.0,
            ..hp(OptimizerKind::Ogn)
        };
        let mut st = OptimizerState::new(&[1], 100.0, &h).unwrap();
        let d = st.delta_tilde;
        let target = 3.0 / (1.0 + d);
        let mut w = scalar(0.0);
        for _ in 0..200 {
            let g = w.layer(0).values()[0] - 3.0;
            ogn_step(
                &mut w,
                &scalar(g),
                &scalar(g * g),
                &[ParamRole::Weight],
                &mut st,
                &h,
                0.5,
            )
            .unwrap();
        }
        assert!((w.layer(0).values()[0] - target).abs() < 1e-3);
    }

    #[test]
    fn scale_stays_nonnegative_and_denominator_bounded() {
        let h = Hyperparams {
            beta2: 0.3,
            gamma: 1e-3,
            ..vogn_hp()
        };
        let mut rng = RngStream::new(5, 0);
        let mut st = OptimizerState::new(&[4], 100.0, &h).unwrap();
        let mut mu = ParamSet::zeros(&[4]);
        for _ in 0..10_000 {
            let g = ParamSet(vec![rng.normal_tensor(&[4])]);
            let u = rng.uniform();
            let hh = g.map(|v| v * v * u);
            vogn_step(&mut mu, &g, &hh, &[ParamRole::Weight], &mut st, &h, 1e-3).unwrap();
            assert!(st.s.min_value() >= 0.0);
            assert!(st.s.min_value() + st.delta_tilde + h.gamma >= st.delta_tilde + h.gamma);
        }
        assert!(mu.is_finite());
    }

    #[test]
    fn tau_updates_delta_tilde() {
        let h = Hyperparams {
            prior_precision: 100.0,
            tau: 1.0,
            tau_init: Some(0.1),
            ..vogn_hp()
        };
        let mut st = OptimizerState::new(&[1], 50_000.0, &h).unwrap();
        assert!((st.delta_tilde - 2e-4).abs() < 1e-18);
        st.set_tau(1.0, &h);
        assert!((st.delta_tilde - 2e-3).abs() < 1e-18);
        st.set_n_eff(500_000.0, &h).unwrap();
        assert!((st.delta_tilde - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn chained_isotropic_prior_matches_plain_vogn() {
        let h = Hyperparams {
            beta1: 0.9,
            gamma: 1e-3,
            ..vogn_hp()
        };
        let mut rng = RngStream::new(6, 0);
        let mut a = OptimizerState::new(&[3], 100.0, &h).unwrap();
        let mut b = a.clone();
        b.prior = Some(ChainedPrior {
            mean: ParamSet::zeros(&[3]),
            precision: ParamSet::full(&[3], a.delta_tilde * a.n_eff),
        });
        let mut wa = ParamSet(vec![rng.normal_tensor(&[3])]);
        let mut wb = wa.clone();
        for _ in 0..50 {
            let g = ParamSet(vec![rng.normal_tensor(&[3])]);
            let hh = g.map(|v| v * v);
            vogn_step(&mut wa, &g, &hh, &[ParamRole::Weight], &mut a, &h, 0.01).unwrap();
            vogn_step(&mut wb, &g, &hh, &[ParamRole::Weight], &mut b, &h, 0.01).unwrap();
        }
        assert!(wa.max_abs_diff(&wb).unwrap() < 1e-12);
    }

    #[test]
    fn layer_order_does_not_matter() {
        let h = Hyperparams {
            beta1: 0.9,
            gamma: 1e-3,
            ..vogn_hp()
        };
        let mut rng = RngStream::new(7, 0);
        let mu = ParamSet(vec![rng.normal_tensor(&[2]), rng.normal_tensor(&[3])]);
        let g = ParamSet(vec![rng.normal_tensor(&[2]), rng.normal_tensor(&[3])]);
        let hh = g.map(|v| v * v);
        let mut st = OptimizerState::new(&[2, 3], 100.0, &h).unwrap();
        let mut full = mu.clone();
        vogn_step(&mut full, &g, &hh, &[ParamRole::Weight; 2], &mut st, &h, 0.1).unwrap();
        // update each block alone, in reverse order
        let mut parts = Vec::new();
        for i in [1usize, 0] {
            let one = |p: &ParamSet| ParamSet(vec![p.layer(i).clone()]);
            let mut st1 = OptimizerState::new(&[mu.layer(i).len()], 100.0, &h).unwrap();
            let mut w = one(&mu);
            vogn_step(&mut w, &one(&g), &one(&hh), &[ParamRole::Weight], &mut st1, &h, 0.1).unwrap();
            parts.push((i, w.0.remove(0)));
        }
        parts.sort_by_key(|p| p.0);
        let split = ParamSet(parts.into_iter().map(|p| p.1).collect());
        assert_eq!(split, full);
    }

    #[test]
    fn init_scale_is_gauss_newton_of_first_batch() {
        let mut rng = RngStream::new(8, 0);
        let mut model = NetworkBuilder::new(&[3]).dense(4).relu().dense(2).build().unwrap();
        model.init_xavier(&mut rng);
        let x = rng.normal_tensor(&[5, 3]);
        let y = [0, 1, 1, 0, 1];
        let s0 = init_scale(&model, &x, &y).unwrap();
        assert!(s0.min_value() >= 0.0);
        let (logits, cache) = model.forward_snapshot(&x, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &y).unwrap();
        let per = model.backward_per_example(&cache, &dl).unwrap();
        assert_eq!(s0, gauss_newton_diag(&per).unwrap());

        let x1 = x.select_rows(&[2]);
        let s1 = init_scale(&model, &x1, &[1]).unwrap();
        let (logits, cache) = model.forward_snapshot(&x1, Mode::Train).unwrap();
        let (_, dl) = loss_and_grad(&logits, &[1]).unwrap();
        let g = model.backward(&cache, &dl).unwrap();
        assert_eq!(s1, g.map(|v| v * v));
    }

    #[test]
    fn posterior_variance_formula() {
        let h = Hyperparams {
            gamma: 0.5,
            ..vogn_hp()
        };
        let mut st = OptimizerState::new(&[1, 2], 100.0, &h).unwrap();
        st.s = ParamSet(vec![Tensor::from_vec(vec![1.49]), Tensor::from_vec(vec![1.0, 1.0])]);
        let var = st.posterior_variance(&[ParamRole::Weight, ParamRole::Norm], h.gamma);
        assert!((var.layer(0).values()[0] - 1.0 / (100.0 * 2.0)).abs() < 1e-15);
        assert_eq!(var.layer(1).values(), &[0.0, 0.0]);
    }
}
