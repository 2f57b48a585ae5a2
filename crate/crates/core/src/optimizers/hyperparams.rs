use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Ogn,
    Vogn,
    NoisyKfac,
}

impl OptimizerKind {
    /// Whether the optimizer maintains a posterior to sample from.
    pub fn is_variational(self) -> bool {
        matches!(self, OptimizerKind::Vogn | OptimizerKind::NoisyKfac)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Ogn => "ogn",
            OptimizerKind::Vogn => "vogn",
            OptimizerKind::NoisyKfac => "noisy_kfac",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamVariant {
    /// No momentum, no bias correction.
    #[default]
    Literal,
    /// Rate-convention momentum `m <- (1 - beta1) m + beta1 g` with bias
    /// correction on both moments.
    BiasCorrected,
}

/// Optimizer hyperparameters. `beta1` is a momentum coefficient for
/// SGD/OGN/VOGN and a rate for bias-corrected Adam; `beta2` is always a
/// rate (weight on the newest statistic).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub optimizer: OptimizerKind,
    /// Learning rate after warm-up.
    pub lr: f64,
    /// Warm-up start; `None` disables warm-up.
    pub lr_init: Option<f64>,
    pub warmup_epochs: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Prior precision `delta`.
    pub prior_precision: f64,
    /// External damping `gamma`.
    pub gamma: f64,
    /// Final tempering value.
    pub tau: f64,
    /// Tempering start; `None` keeps `tau` fixed.
    pub tau_init: Option<f64>,
    pub tau_warmup_epochs: f64,
    /// Training MC samples per worker.
    pub mc_samples: usize,
    /// Data-augmentation factor `rho`.
    pub augmentation_factor: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// L2 coefficient added to the gradient (SGD and Adam).
    pub l2: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub adam_variant: AdamVariant,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Vogn,
            lr: 1e-3,
            lr_init: None,
            warmup_epochs: 0.0,
            beta1: 0.9,
            beta2: 1e-3,
            prior_precision: 1.0,
            gamma: 1e-3,
            tau: 1.0,
            tau_init: None,
            tau_warmup_epochs: 0.0,
            mc_samples: 1,
            augmentation_factor: 1.0,
            eps: 1e-8,
            weight_decay: 0.0,
            l2: 0.0,
            decay_epochs: Vec::new(),
            decay_factor: 10.0,
            adam_variant: AdamVariant::Literal,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 13] = [
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0"),
            (
                self.lr_init.is_none_or(|v| v > 0.0 && v.is_finite()),
                "lr_init must be > 0",
            ),
            (self.warmup_epochs >= 0.0, "warmup_epochs must be >= 0"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            (self.beta2 > 0.0 && self.beta2 < 1.0, "beta2 must lie in (0, 1)"),
            (
                self.prior_precision >= 0.0 && self.prior_precision.is_finite(),
                "prior_precision must be >= 0",
            ),
            (self.gamma >= 0.0 && self.gamma.is_finite(), "gamma must be >= 0"),
            (self.tau > 0.0 && self.tau <= 1.0, "tau must lie in (0, 1]"),
            (
                self.tau_init.is_none_or(|v| v > 0.0 && v <= 1.0),
                "tau_init must lie in (0, 1]",
            ),
            (self.mc_samples >= 1, "mc_samples must be >= 1"),
            (
                self.augmentation_factor >= 1.0 && self.augmentation_factor.is_finite(),
                "augmentation_factor must be >= 1",
            ),
            (self.eps > 0.0, "eps must be > 0"),
            (
                self.weight_decay >= 0.0 && self.l2 >= 0.0 && self.decay_factor >= 1.0,
                "weight_decay and l2 must be >= 0 and decay_factor >= 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return invalid(msg);
            }
        }
        if self.optimizer == OptimizerKind::Adam && self.adam_variant == AdamVariant::BiasCorrected && self.beta1 == 0.0
        {
            return invalid("bias-corrected adam needs beta1 > 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Hyperparams::default().validate().unwrap();
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let bad = [
            Hyperparams {
                lr: 0.0,
                ..Default::default()
            },
            Hyperparams {
                beta1: 1.0,
                ..Default::default()
            },
            Hyperparams {
                beta2: 0.0,
                ..Default::default()
            },
            Hyperparams {
                beta2: 1.0,
                ..Default::default()
            },
            Hyperparams {
                prior_precision: -1.0,
                ..Default::default()
            },
            Hyperparams {
                gamma: -1e-3,
                ..Default::default()
            },
            Hyperparams {
                tau: 1.5,
                ..Default::default()
            },
            Hyperparams {
                tau: 0.0,
                ..Default::default()
            },
            Hyperparams {
                mc_samples: 0,
                ..Default::default()
            },
            Hyperparams {
                augmentation_factor: 0.5,
                ..Default::default()
            },
            Hyperparams {
                eps: 0.0,
                ..Default::default()
            },
        ];
        for h in bad {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }

    #[test]
    fn json_rejects_unknown_fields() {
        assert!(serde_json::from_str::<Hyperparams>(r#"{"lr": 0.1, "lr_typo": 1}"#).is_err());
        let h: Hyperparams = serde_json::from_str(r#"{"optimizer": "adam", "lr": 0.1}"#).unwrap();
        assert_eq!(h.optimizer, OptimizerKind::Adam);
        assert_eq!(h.beta2, Hyperparams::default().beta2);
    }
}
