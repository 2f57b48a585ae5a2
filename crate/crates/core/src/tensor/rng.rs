use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8: the key is expanded from `seed` with
/// `SeedableRng::seed_from_u64`, and `stream_id` selects the 64-bit ChaCha
/// stream (nonce). Streams with distinct ids never overlap. Normal draws
/// use the ziggurat sampler of `rand_distr::StandardNormal`.
///
/// Streams are single-owner; clone only to fork a deliberate replay.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer (Steele, Lea & Flood constants).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    /// Stream whose id is derived from a tuple of keys, e.g.
    /// `(purpose, iteration, worker, sample)`.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let id = keys
            .iter()
            .fold(0x5851_F42D_4C95_7F2D_u64, |acc, &k| mix64(acc ^ mix64(k)));
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer on `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), values).expect("shape product matches")
    }
}

/// Draw `mean + eps * stddev` with `eps ~ N(0, I)` elementwise.
///
/// A zero standard deviation returns the mean bit-for-bit (the draw is still
/// consumed so the stream position does not depend on the values).
pub fn gaussian_sample(mean: &Tensor, stddev: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
    if mean.shape() != stddev.shape() {
        return shape_err(
            "gaussian_sample",
            format!("mean {:?} vs stddev {:?}", mean.shape(), stddev.shape()),
        );
    }
    if let Some(bad) = stddev.values().iter().find(|s| !(**s >= 0.0)) {
        return invalid(format!("gaussian_sample: negative stddev {bad}"));
    }
    let values = mean
        .values()
        .iter()
        .zip(stddev.values())
        .map(|(&m, &s)| {
            let eps = rng.normal();
            if s == 0.0 {
                m
            } else {
                m + eps * s
            }
        })
        .collect();
    Tensor::new(mean.shape().to_vec(), values)
}
