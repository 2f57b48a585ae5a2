//! Per-layer parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// One flat rank-1 tensor per network layer, in layer order. Layers without
/// parameters hold an empty tensor so indices line up with the model.
///
/// Used for means, scales, momenta, gradients and curvature estimates alike.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet(pub Vec<Tensor>);

impl ParamSet {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self(sizes.iter().map(|&n| Tensor::zeros(&[n])).collect())
    }

    pub fn full(sizes: &[usize], value: f64) -> Self {
        Self(sizes.iter().map(|&n| Tensor::full(&[n], value)).collect())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.0.iter().map(Tensor::len).collect()
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.0
    }

    pub fn layers_mut(&mut self) -> &mut [Tensor] {
        &mut self.0
    }

    pub fn layer(&self, i: usize) -> &Tensor {
        &self.0[i]
    }

    pub fn num_layers(&self) -> usize {
        self.0.len()
    }

    pub fn total_len(&self) -> usize {
        self.0.iter().map(Tensor::len).sum()
    }

    fn check(&self, rhs: &ParamSet, op: &'static str) -> Result<()> {
        if self.sizes() != rhs.sizes() {
            return shape_err(op, format!("{:?} vs {:?}", self.sizes(), rhs.sizes()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamSet {
        Self(self.0.iter().map(|t| t.map(&f)).collect())
    }

    pub fn zip_map(&self, rhs: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        self.check(rhs, "ParamSet::zip_map")?;
        self.0
            .iter()
            .zip(&rhs.0)
            .map(|(a, b)| a.zip_map(b, &f))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn add(&self, rhs: &ParamSet) -> Result<ParamSet> {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &ParamSet) -> Result<ParamSet> {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> ParamSet {
        self.map(|v| v * k)
    }

    /// `self += k * rhs`
    pub fn axpy(&mut self, k: f64, rhs: &ParamSet) -> Result<()> {
        self.check(rhs, "ParamSet::axpy")?;
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            a.axpy(k, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    /// Index of the first layer holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|t| !t.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, rhs: &ParamSet) -> Result<f64> {
        self.check(rhs, "ParamSet::max_abs_diff")?;
        Ok(self
            .0
            .iter()
            .zip(&rhs.0)
            .map(|(a, b)| a.max_abs_diff(b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<ParamSet> {
        if sizes.iter().sum::<usize>() != flat.len() {
            return shape_err("ParamSet::from_flat", format!("{:?} vs {}", sizes, flat.len()));
        }
        let mut at = 0;
        Ok(Self(
            sizes
                .iter()
                .map(|&n| {
                    let t = Tensor::from_vec(flat[at..at + n].to_vec());
                    at += n;
                    t
                })
                .collect(),
        ))
    }
}
