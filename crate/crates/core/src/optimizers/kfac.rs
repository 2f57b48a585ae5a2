//! Noisy K-FAC for dense layers.
//!
//! Weights are stored `[outputs, inputs + 1]`, so the input-side factor `A`
//! multiplies from the right and the output-gradient factor `S` from the
//! left: the preconditioned step is `S^-1 (G + delta~ W) A^-1`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{linalg, Tensor};

/// Running Kronecker factors of one dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfacFactors {
    /// `E[a a^T]` over layer inputs (bias column included).
    pub a: Tensor,
    /// `E[g g^T]` over per-example gradients of the layer outputs.
    pub s: Tensor,
}

/// Minibatch averages feeding one factor update.
#[derive(Clone, Debug, PartialEq)]
pub struct KfacStats {
    pub aa: Tensor,
    pub gg: Tensor,
}

impl KfacStats {
    /// `acts` is `[M, in]`, `out_grads` is `[M, out]` with row `i` the
    /// gradient of example `i`'s own loss.
    pub fn from_batch(acts: &Tensor, out_grads: &Tensor) -> Result<Self> {
        if acts.rank() != 2 || out_grads.rank() != 2 || acts.rows() != out_grads.rows() || acts.rows() == 0 {
            return shape_err(
                "KfacStats::from_batch",
                format!("{:?} vs {:?}", acts.shape(), out_grads.shape()),
            );
        }
        let inv_m = 1.0 / acts.rows() as f64;
        Ok(Self {
            aa: acts.t_matmul(acts)?.scale(inv_m),
            gg: out_grads.t_matmul(out_grads)?.scale(inv_m),
        })
    }
}

/// Damped factors `A + pi sqrt(gamma) I`, `S + sqrt(gamma) / pi I` with
/// `pi^2` the ratio of average eigenvalues (trace over dimension).
pub fn damping_split(a: &Tensor, s: &Tensor, gamma: f64) -> Result<(Tensor, Tensor, f64)> {
    let avg_a = linalg::trace(a)? / a.shape()[0] as f64;
    let avg_s = linalg::trace(s)? / s.shape()[0] as f64;
    let pi = (avg_a / avg_s).sqrt();
    if !pi.is_finite() || !(pi > 0.0) {
        return Err(Error::NonFinite(format!(
            "damping split pi from average eigenvalues {avg_a:e} / {avg_s:e}"
        )));
    }
    let root = gamma.sqrt();
    Ok((
        linalg::add_diagonal(a, pi * root)?,
        linalg::add_diagonal(s, root / pi)?,
        pi,
    ))
}

/// One Noisy K-FAC update of a dense layer's mean.
///
/// `factors` is filled from `stats` on first use, then blended with rate
/// `beta_tilde`; the blended factors precondition this same step.
/// `grad` is the minibatch-mean gradient at the sampled weights
/// `w_sample`. Returns `pi`.
#[allow(clippy::too_many_arguments)]
pub fn noisy_kfac_layer_step(
    mean: &mut Tensor,
    w_sample: &Tensor,
    grad: &Tensor,
    stats: &KfacStats,
    factors: &mut Option<KfacFactors>,
    lr: f64,
    beta_tilde: f64,
    delta_tilde: f64,
    gamma: f64,
) -> Result<f64> {
    let (outs, ins) = (stats.gg.shape()[0], stats.aa.shape()[0]);
    if mean.len() != outs * ins || w_sample.len() != mean.len() || grad.len() != mean.len() {
        return shape_err(
            "noisy_kfac_layer_step",
            format!("layer of {} values vs factors {outs}x{ins}", mean.len()),
        );
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient in noisy K-FAC layer".into()));
    }
    let f = match factors {
        Some(f) => {
            let b = beta_tilde.clamp(0.0, 1.0);
            f.a = f.a.scale(1.0 - b).add(&stats.aa.scale(b))?;
            f.s = f.s.scale(1.0 - b).add(&stats.gg.scale(b))?;
            f
        }
        None => factors.insert(KfacFactors {
            a: stats.aa.clone(),
            s: stats.gg.clone(),
        }),
    };
    let (a_damped, s_damped, pi) = damping_split(&f.a, &f.s, gamma)?;
    let mut g = Tensor::new(vec![outs, ins], grad.values().to_vec())?;
    g.axpy(delta_tilde, &Tensor::new(vec![outs, ins], w_sample.values().to_vec())?)?;
    let left = linalg::spd_solve(&s_damped, &g)?;
    let step = linalg::spd_solve(&a_damped, &left.transpose()?)?.transpose()?;
    for (m, d) in mean.values_mut().iter_mut().zip(step.values()) {
        *m -= lr * d;
    }
    Ok(pi)
}
