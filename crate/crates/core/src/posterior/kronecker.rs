use super::WeightSampler;
use crate::error::{invalid, shape_err, Result};
use crate::network::{LayerSpec, NetworkModel};
use crate::optimizers::{damping_split, Hyperparams, OptimizerState};
use crate::params::ParamSet;
use crate::tensor::{linalg, RngStream, Tensor};

/// Matrix-variate Gaussian factors of one dense layer stored
/// `[outputs, inputs + 1]`: row (output-side) precision `S^gamma` and
/// column (input-side) precision `N A^gamma / tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerFactor {
    pub output_precision: Tensor,
    pub input_precision: Tensor,
    chol_out: Tensor,
    chol_in: Tensor,
}

impl KroneckerFactor {
    pub fn new(output_precision: Tensor, input_precision: Tensor) -> Result<Self> {
        let chol_out = linalg::cholesky(&output_precision)?;
        let chol_in = linalg::cholesky(&input_precision)?;
        Ok(Self {
            output_precision,
            input_precision,
            chol_out,
            chol_in,
        })
    }

    /// `L_out^-T E L_in^-1`, whose row-major vectorization has covariance
    /// `S^-1 (x) (N A / tau)^-1`.
    pub fn draw_noise(&self, rng: &mut RngStream) -> Result<Tensor> {
        let (r, c) = (self.chol_out.shape()[0], self.chol_in.shape()[0]);
        let e = rng.normal_tensor(&[r, c]);
        let left = linalg::solve_lower_transpose(&self.chol_out, &e)?;
        linalg::solve_lower_transpose(&self.chol_in, &left.transpose()?)?.transpose()
    }
}

/// Noisy K-FAC posterior: Kronecker-factored dense layers, everything else
/// point-estimated.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerPosterior {
    mean: ParamSet,
    factors: Vec<Option<KroneckerFactor>>,
}

impl KroneckerPosterior {
    pub fn new(mean: ParamSet, factors: Vec<Option<KroneckerFactor>>) -> Result<Self> {
        if factors.len() != mean.num_layers() {
            return shape_err("KroneckerPosterior::new", "one factor slot per layer");
        }
        for (i, f) in factors.iter().enumerate() {
            if let Some(f) = f {
                let n = f.output_precision.shape()[0] * f.input_precision.shape()[0];
                if n != mean.layer(i).len() {
                    return shape_err("KroneckerPosterior::new", format!("layer {i} factor size {n}"));
                }
            }
        }
        Ok(Self { mean, factors })
    }

    /// Build from Noisy K-FAC optimizer state with damping `gamma + delta~`.
    pub fn from_state(model: &NetworkModel, state: &OptimizerState, hp: &Hyperparams) -> Result<Self> {
        let mut factors = Vec::with_capacity(model.layers().len());
        for (i, spec) in model.layers().iter().enumerate() {
            match (spec, &state.kfac[i]) {
                (LayerSpec::Dense { .. }, Some(f)) => {
                    let (a, s, _) = damping_split(&f.a, &f.s, hp.gamma + state.delta_tilde)?;
                    factors.push(Some(KroneckerFactor::new(s, a.scale(state.n_eff / state.tau))?));
                }
                (LayerSpec::Dense { .. }, None) => {
                    return invalid(format!("dense layer {i} has no Kronecker factors yet"))
                }
                _ => factors.push(None),
            }
        }
        Self::new(model.params().clone(), factors)
    }

    pub fn factors(&self) -> &[Option<KroneckerFactor>] {
        &self.factors
    }
}

impl WeightSampler for KroneckerPosterior {
    fn mean(&self) -> &ParamSet {
        &self.mean
    }

    fn sample(&self, rng: &mut RngStream) -> Result<ParamSet> {
        let mut out = Vec::with_capacity(self.factors.len());
        for (i, f) in self.factors.iter().enumerate() {
            let mut w = self.mean.layer(i).clone();
            if let Some(f) = f {
                let noise = f.draw_noise(rng)?;
                for (a, b) in w.values_mut().iter_mut().zip(noise.values()) {
                    *a += b;
                }
            }
            out.push(w);
        }
        Ok(ParamSet(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_draws_have_kronecker_covariance() {
        let s = Tensor::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![4.0, -1.0], vec![-1.0, 3.0]]).unwrap();
        let f = KroneckerFactor::new(s.clone(), a.clone()).unwrap();
        let si = linalg::spd_inverse(&s).unwrap();
        let ai = linalg::spd_inverse(&a).unwrap();
        // row-major vec: cov[(i,j),(k,l)] = S^-1[i,k] A^-1[j,l]
        let mut expect = [[0.0; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        expect[i * 2 + j][k * 2 + l] = si.at(i, k) * ai.at(j, l);
                    }
                }
            }
        }
        let mut rng = RngStream::new(9, 0);
        let n = 200_000;
        let mut cov = [[0.0; 4]; 4];
        for _ in 0..n {
            let w = f.draw_noise(&mut rng).unwrap();
            let v = w.values();
            for p in 0..4 {
                for q in 0..4 {
                    cov[p][q] += v[p] * v[q] / n as f64;
                }
            }
        }
        for p in 0..4 {
            for q in 0..4 {
                assert!((cov[p][q] - expect[p][q]).abs() < 0.01 * expect[p][p].max(expect[q][q]) * 3.0);
            }
        }
    }

    #[test]
    fn non_dense_layers_return_the_mean() {
        let mean = ParamSet(vec![Tensor::from_vec(vec![1.0, 2.0]), Tensor::from_vec(vec![0.0; 4])]);
        let f = KroneckerFactor::new(Tensor::identity(2), Tensor::identity(2)).unwrap();
        let post = KroneckerPosterior::new(mean.clone(), vec![None, Some(f)]).unwrap();
        let mut rng = RngStream::new(1, 0);
        let w = post.sample(&mut rng).unwrap();
        assert_eq!(w.layer(0), mean.layer(0));
        assert_ne!(w.layer(1), mean.layer(1));
    }

    #[test]
    fn indefinite_factor_is_rejected() {
        let bad = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(KroneckerFactor::new(bad, Tensor::identity(1)).is_err());
    }
}
