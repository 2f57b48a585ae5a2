//! Small generated classification problems.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::tensor::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// Two interleaved half circles: class 0 on the unit circle with
    /// `y >= 0`, class 1 on the unit circle centred at `(1, 0.5)` with
    /// `y <= 0.5`.
    TwoMoons,
    /// Isotropic Gaussian clusters with centres evenly spaced on a circle
    /// of radius `separation` in the first two coordinates. A nonzero
    /// `angle_offset` rotates every centre, which places the clusters
    /// between the unrotated ones.
    GaussianBlobs {
        classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        angle_offset: f64,
    },
}

impl SyntheticKind {
    pub fn num_classes(&self) -> usize {
        match self {
            SyntheticKind::TwoMoons => 2,
            SyntheticKind::GaussianBlobs { classes, .. } => *classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticKind::TwoMoons => 2,
            SyntheticKind::GaussianBlobs { dim, .. } => *dim,
        }
    }

    /// The same blobs rotated half a class spacing, so each out-of-distribution
    /// cluster sits between two training clusters.
    pub fn shifted_blobs(&self) -> Result<SyntheticKind> {
        match self {
            SyntheticKind::GaussianBlobs {
                classes,
                dim,
                separation,
                angle_offset,
            } => Ok(SyntheticKind::GaussianBlobs {
                classes: *classes,
                dim: *dim,
                separation: *separation,
                angle_offset: angle_offset + PI / *classes as f64,
            }),
            SyntheticKind::TwoMoons => invalid("two-moons has no shifted variant"),
        }
    }
}

fn blob_centre(k: usize, classes: usize, dim: usize, separation: f64, offset: f64) -> Vec<f64> {
    let a = 2.0 * PI * k as f64 / classes as f64 + offset;
    let mut c = vec![0.0; dim];
    c[0] = separation * a.cos();
    if dim > 1 {
        c[1] = separation * a.sin();
    }
    c
}

/// Class sizes differing by at most one, larger classes first.
fn balanced_counts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
}

/// Deterministic synthetic dataset of `n` examples with Gaussian noise of
/// standard deviation `noise`, shuffled into random order.
pub fn make_synthetic(kind: &SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let k = kind.num_classes();
    let dim = kind.dim();
    if n < 2 {
        return invalid(format!("synthetic datasets need at least 2 examples, got {n}"));
    }
    if k < 2 || dim == 0 {
        return invalid("synthetic datasets need at least 2 classes and 1 feature");
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid(format!("noise must be finite and nonnegative, got {noise}"));
    }
    let mut rng = RngStream::new(seed, 0x5e7);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for (label, count) in balanced_counts(n, k).into_iter().enumerate() {
        for _ in 0..count {
            let mut x = match kind {
                SyntheticKind::TwoMoons => {
                    let t = PI * rng.uniform();
                    if label == 0 {
                        vec![t.cos(), t.sin()]
                    } else {
                        vec![1.0 - t.cos(), 0.5 - t.sin()]
                    }
                }
                SyntheticKind::GaussianBlobs {
                    separation,
                    angle_offset,
                    ..
                } => blob_centre(label, k, dim, *separation, *angle_offset),
            };
            for v in &mut x {
                *v += noise * rng.normal();
            }
            rows.push((x, label));
        }
    }
    rng.shuffle(&mut rows);
    let labels = rows.iter().map(|r| r.1).collect();
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    let name = match kind {
        SyntheticKind::TwoMoons => "two-moons",
        SyntheticKind::GaussianBlobs { .. } => "gaussian-blobs",
    };
    Dataset::new(name, Tensor::new(vec![n, dim], values)?, labels, k)
}
