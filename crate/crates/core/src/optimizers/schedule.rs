use super::Hyperparams;

/// Learning rate and tempering value in effect at a point in training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub tau: f64,
}

/// `epoch` may be fractional so warm-ups can advance per iteration.
///
/// The learning rate ramps linearly from `lr_init` to `lr` over
/// `warmup_epochs`, then is divided by `decay_factor` once for every entry
/// of `decay_epochs` already reached. Tempering ramps linearly from
/// `tau_init` to `tau` over `tau_warmup_epochs`.
pub fn schedule_step(epoch: f64, hp: &Hyperparams) -> Schedule {
    let epoch = epoch.max(0.0);
    let mut lr = match hp.lr_init {
        Some(start) if epoch < hp.warmup_epochs => start + (hp.lr - start) * epoch / hp.warmup_epochs,
        _ => hp.lr,
    };
    let decays = hp.decay_epochs.iter().filter(|&&e| e as f64 <= epoch).count();
    lr /= hp.decay_factor.powi(decays as i32);
    let tau = match hp.tau_init {
        Some(start) if epoch < hp.tau_warmup_epochs => start + (hp.tau - start) * epoch / hp.tau_warmup_epochs,
        _ => hp.tau,
    };
    Schedule { lr, tau }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::recipes;

    #[test]
    fn cifar_decay_epochs() {
        let hp = Hyperparams {
            lr: 1e-4,
            decay_epochs: vec![80, 120],
            decay_factor: 10.0,
            ..Hyperparams::default()
        };
        assert_eq!(schedule_step(79.0, &hp).lr, 1e-4);
        assert!((schedule_step(100.0, &hp).lr - 1e-5).abs() < 1e-20);
        assert!((schedule_step(130.0, &hp).lr - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn imagenet_warmup_endpoints() {
        let r = recipes::lookup("imagenet-resnet18-vogn").unwrap();
        let hp = &r.hyperparams;
        assert_eq!(hp.lr_init, Some(1.25e-5));
        assert_eq!(hp.lr, 1.6e-3);
        assert_eq!(schedule_step(0.0, hp).lr, 1.25e-5);
        assert_eq!(schedule_step(hp.warmup_epochs, hp).lr, 1.6e-3);
        let mid = schedule_step(hp.warmup_epochs / 2.0, hp).lr;
        assert!((mid - (1.25e-5 + 1.6e-3) / 2.0).abs() < 1e-15);
        assert!((schedule_step(35.0, hp).lr - 1.6e-4).abs() < 1e-18);
    }

    #[test]
    fn tempering_ramp() {
        let hp = Hyperparams {
            tau: 1.0,
            tau_init: Some(0.1),
            tau_warmup_epochs: 10.0,
            ..Hyperparams::default()
        };
        assert_eq!(schedule_step(0.0, &hp).tau, 0.1);
        assert!((schedule_step(5.0, &hp).tau - 0.55).abs() < 1e-15);
        assert_eq!(schedule_step(10.0, &hp).tau, 1.0);
        assert_eq!(schedule_step(50.0, &hp).tau, 1.0);
    }

    #[test]
    fn unit_tau_init_is_constant() {
        let hp = Hyperparams {
            tau_init: Some(1.0),
            tau_warmup_epochs: 7.0,
            ..Hyperparams::default()
        };
        for e in 0..20 {
            assert_eq!(schedule_step(e as f64, &hp).tau, 1.0);
        }
    }
}
