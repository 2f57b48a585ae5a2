//! Named hyperparameter presets for the published-scale configurations.
//!
//! Moving-average coefficients listed in decay form for OGN, VOGN and
//! Noisy K-FAC (0.999, 0.9) are stored here as rates (`1 - value`), the
//! form the update rules take. Adam rows are already rates.

use serde::Serialize;

use super::{AdamVariant, Hyperparams, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recipe {
    pub name: &'static str,
    pub hyperparams: Hyperparams,
    /// Global minibatch size.
    pub batch_size: usize,
    pub workers: usize,
    /// Training-set size before augmentation.
    pub n_orig: usize,
}

impl Recipe {
    pub fn n_eff(&self) -> f64 {
        self.n_orig as f64 * self.hyperparams.augmentation_factor
    }
}

const CIFAR_N: usize = 50_000;
const IMAGENET_N: usize = 1_281_167;
/// Linear learning-rate warm-up length where a warm-up start is given.
const LR_WARMUP_EPOCHS: f64 = 5.0;
/// Tempering ramp length where a range of tau is given.
const TAU_WARMUP_EPOCHS: f64 = 10.0;

fn adam(lr: f64, decay: &[usize], weight_decay: f64) -> Hyperparams {
    Hyperparams {
        optimizer: OptimizerKind::Adam,
        lr,
        beta1: 0.1,
        beta2: 0.001,
        weight_decay,
        decay_epochs: decay.to_vec(),
        adam_variant: AdamVariant::Literal,
        ..Hyperparams::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn vogn(lr: f64, decay: &[usize], k: usize, tau: (f64, f64), rho: f64, delta: f64, gamma: f64) -> Hyperparams {
    Hyperparams {
        optimizer: OptimizerKind::Vogn,
        lr,
        beta1: 0.9,
        beta2: 1.0 - 0.999,
        prior_precision: delta,
        gamma,
        tau: tau.1,
        tau_init: (tau.0 != tau.1).then_some(tau.0),
        tau_warmup_epochs: if tau.0 != tau.1 { TAU_WARMUP_EPOCHS } else { 0.0 },
        mc_samples: k,
        augmentation_factor: rho,
        decay_epochs: decay.to_vec(),
        ..Hyperparams::default()
    }
}

fn with_warmup(mut hp: Hyperparams, lr_init: f64) -> Hyperparams {
    hp.lr_init = Some(lr_init);
    hp.warmup_epochs = LR_WARMUP_EPOCHS;
    hp
}

pub fn all() -> Vec<Recipe> {
    let cifar_decay = [80, 120];
    let in_decay = [30, 60, 80];
    let in_rho = 5.0;
    vec![
        Recipe {
            name: "cifar10-lenet5-adam",
            hyperparams: adam(1e-3, &[], 1e-2),
            batch_size: 128,
            workers: 4,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-lenet5-vogn",
            hyperparams: vogn(1e-2, &[], 6, (0.1, 1.0), 1.0, 100.0, 1e-3),
            batch_size: 128,
            workers: 4,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-alexnet-noaug-adam",
            hyperparams: adam(1e-3, &cifar_decay, 1e-4),
            batch_size: 128,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-alexnet-noaug-vogn",
            hyperparams: vogn(1e-4, &cifar_decay, 3, (0.05, 1.0), 1.0, 0.5, 1e-3),
            batch_size: 128,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-alexnet-adam",
            hyperparams: Hyperparams {
                augmentation_factor: 10.0,
                ..adam(1e-3, &cifar_decay, 1e-4)
            },
            batch_size: 128,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-alexnet-vogn",
            hyperparams: vogn(1e-4, &cifar_decay, 3, (0.5, 1.0), 10.0, 0.5, 1e-3),
            batch_size: 128,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-resnet18-adam",
            hyperparams: Hyperparams {
                augmentation_factor: 10.0,
                ..adam(1e-3, &cifar_decay, 5e-4)
            },
            batch_size: 256,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "cifar10-resnet18-vogn",
            hyperparams: vogn(1e-4, &cifar_decay, 5, (1.0, 1.0), 10.0, 50.0, 1e-3),
            batch_size: 256,
            workers: 8,
            n_orig: CIFAR_N,
        },
        Recipe {
            name: "imagenet-resnet18-sgd",
            hyperparams: with_warmup(
                Hyperparams {
                    optimizer: OptimizerKind::Sgd,
                    lr: 1.6,
                    beta1: 0.9,
                    l2: 1e-4,
                    augmentation_factor: in_rho,
                    decay_epochs: in_decay.to_vec(),
                    ..Hyperparams::default()
                },
                1.25e-2,
            ),
            batch_size: 4096,
            workers: 128,
            n_orig: IMAGENET_N,
        },
        Recipe {
            name: "imagenet-resnet18-adam",
            hyperparams: with_warmup(
                Hyperparams {
                    augmentation_factor: in_rho,
                    ..adam(1.6e-3, &in_decay, 1e-4)
                },
                1.25e-5,
            ),
            batch_size: 4096,
            workers: 128,
            n_orig: IMAGENET_N,
        },
        Recipe {
            name: "imagenet-resnet18-ogn",
            hyperparams: with_warmup(
                Hyperparams {
                    optimizer: OptimizerKind::Ogn,
                    lr: 1.6e-3,
                    beta1: 0.9,
                    beta2: 1.0 - 0.9,
                    // L2 of 1e-5 expressed as the prior term at tau = 1
                    prior_precision: 1e-5 * IMAGENET_N as f64 * in_rho,
                    gamma: 1e-4,
                    augmentation_factor: in_rho,
                    decay_epochs: in_decay.to_vec(),
                    ..Hyperparams::default()
                },
                1.25e-5,
            ),
            batch_size: 4096,
            workers: 128,
            n_orig: IMAGENET_N,
        },
        Recipe {
            name: "imagenet-resnet18-vogn",
            hyperparams: with_warmup(vogn(1.6e-3, &in_decay, 1, (1.0, 1.0), in_rho, 133.3, 1e-4), 1.25e-5),
            batch_size: 4096,
            workers: 128,
            n_orig: IMAGENET_N,
        },
        Recipe {
            name: "imagenet-resnet18-noisy-kfac",
            hyperparams: with_warmup(
                Hyperparams {
                    optimizer: OptimizerKind::NoisyKfac,
                    beta1: 0.0,
                    beta2: 1.0 - 0.9,
                    decay_epochs: vec![15, 30, 45],
                    ..vogn(1.6e-3, &[], 1, (1.0, 1.0), in_rho, 133.3, 1e-4)
                },
                1.25e-5,
            ),
            batch_size: 4096,
            workers: 128,
            n_orig: IMAGENET_N,
        },
    ]
}

/// Small configurations that run on one machine in seconds. Moving-average
/// rates are faster than the published ones to suit a few hundred steps.
pub fn desk() -> Vec<Recipe> {
    let desk_vogn = |lr: f64, beta1: f64, delta: f64, k: usize| Hyperparams {
        optimizer: OptimizerKind::Vogn,
        lr,
        beta1,
        beta2: 0.01,
        prior_precision: delta,
        gamma: 0.0,
        mc_samples: k,
        ..Hyperparams::default()
    };
    let desk_adam = Hyperparams {
        optimizer: OptimizerKind::Adam,
        lr: 0.01,
        beta1: 0.1,
        beta2: 0.01,
        adam_variant: AdamVariant::Literal,
        ..Hyperparams::default()
    };
    let row = |name, hyperparams, batch_size, n_orig| Recipe {
        name,
        hyperparams,
        batch_size,
        workers: 1,
        n_orig,
    };
    vec![
        row("desk-moons-calibration-adam", desk_adam.clone(), 32, 60),
        row("desk-moons-calibration-vogn", desk_vogn(0.03, 0.9, 1.0, 1), 32, 60),
        row("desk-blobs-ood-adam", desk_adam, 32, 300),
        row("desk-blobs-ood-vogn", desk_vogn(0.03, 0.9, 1.0, 1), 32, 300),
        row("desk-moons-prior-vogn", desk_vogn(0.03, 0.9, 1.0, 1), 32, 100),
        row("desk-moons-mc-vogn", desk_vogn(0.1, 0.9, 1.0, 1), 32, 200),
        row("desk-digits-continual-vogn", desk_vogn(0.03, 0.0, 1.0, 1), 64, 1438),
    ]
}

pub fn lookup(name: &str) -> Option<Recipe> {
    all().into_iter().chain(desk()).find(|r| r.name == name)
}

pub fn names() -> Vec<&'static str> {
    all().iter().chain(&desk()).map(|r| r.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::OptimizerState;

    #[test]
    fn every_recipe_validates() {
        for r in all().into_iter().chain(desk()) {
            r.hyperparams.validate().unwrap_or_else(|e| panic!("{}: {e}", r.name));
        }
    }

    #[test]
    fn names_are_unique() {
        let mut n = names();
        n.sort();
        n.dedup();
        assert_eq!(n.len(), all().len() + desk().len());
    }

    fn delta_tilde_range(name: &str) -> (f64, f64) {
        let r = lookup(name).unwrap();
        let hp = &r.hyperparams;
        let st = OptimizerState::new(&[1], r.n_eff(), hp).unwrap();
        let start = st.delta_tilde;
        let mut end = st.clone();
        end.set_tau(hp.tau, hp);
        (start, end.delta_tilde)
    }

    #[test]
    fn prior_scaling_matches_listed_values() {
        let (a, b) = delta_tilde_range("cifar10-lenet5-vogn");
        assert!((a - 2e-4).abs() < 1e-15 && (b - 2e-3).abs() < 1e-15);
        let (a, b) = delta_tilde_range("cifar10-alexnet-noaug-vogn");
        assert!((a - 5e-7).abs() < 1e-18 && (b - 1e-5).abs() < 1e-18);
        let (_, b) = delta_tilde_range("imagenet-resnet18-vogn");
        assert!((b - 2e-5).abs() < 1e-6);
    }

    #[test]
    fn augmentation_factors() {
        assert_eq!(lookup("cifar10-resnet18-vogn").unwrap().n_eff(), 500_000.0);
        assert_eq!(
            lookup("imagenet-resnet18-vogn")
                .unwrap()
                .hyperparams
                .augmentation_factor,
            5.0
        );
    }
}
