//! Random crop from a zero-padded canvas and horizontal flip.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Zero padding added on every side.
    pub pad: usize,
    /// Square output size.
    pub crop: usize,
    /// Probability of flipping each image left to right.
    #[serde(default = "default_hflip")]
    pub hflip: f64,
}

fn default_hflip() -> f64 {
    0.5
}

/// One image's crop offset into the padded canvas and flip decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropChoice {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl AugmentationSpec {
    pub fn new(pad: usize, crop: usize, hflip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&hflip) {
            return invalid(format!("hflip probability {hflip} outside [0, 1]"));
        }
        if crop == 0 {
            return invalid("crop size must be positive");
        }
        Ok(Self { pad, crop, hflip })
    }

    fn canvas(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (h, w) = (height + 2 * self.pad, width + 2 * self.pad);
        if self.crop > h || self.crop > w {
            return invalid(format!("crop {} exceeds padded size {h}x{w}", self.crop));
        }
        Ok((h, w))
    }

    /// Dataset multiplier from counting distinct views: five crops (four
    /// corners and the centre) when cropping actually moves, times two when
    /// flipping is enabled.
    pub fn counting_rho(&self, height: usize, width: usize) -> Result<f64> {
        let (h, w) = self.canvas(height, width)?;
        let crops = if self.crop < h || self.crop < w { 5.0 } else { 1.0 };
        let flips = if self.hflip > 0.0 { 2.0 } else { 1.0 };
        Ok(crops * flips)
    }

    pub fn sample_choice(&self, height: usize, width: usize, rng: &mut RngStream) -> Result<CropChoice> {
        let (h, w) = self.canvas(height, width)?;
        let dy = rng.below(h - self.crop + 1);
        let dx = rng.below(w - self.crop + 1);
        let flip = self.hflip > 0.0 && rng.bernoulli(self.hflip);
        Ok(CropChoice { dy, dx, flip })
    }
}

/// Crop one `[C, H, W]` image from its padded canvas at `choice`.
pub fn crop_image(
    image: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    pad: usize,
    crop: usize,
    choice: CropChoice,
) -> Vec<f64> {
    let mut out = vec![0.0; channels * crop * crop];
    for c in 0..channels {
        for i in 0..crop {
            let y = (choice.dy + i) as isize - pad as isize;
            if y < 0 || y >= height as isize {
                continue;
            }
            for j in 0..crop {
                let jj = if choice.flip { crop - 1 - j } else { j };
                let x = (choice.dx + jj) as isize - pad as isize;
                if x < 0 || x >= width as isize {
                    continue;
                }
                out[(c * crop + i) * crop + j] = image[(c * height + y as usize) * width + x as usize];
            }
        }
    }
    out
}

/// Independently crop and maybe flip every image of a `[M, C, H, W]` batch,
/// giving `[M, C, crop, crop]`.
pub fn augment(batch: &Tensor, spec: &AugmentationSpec, rng: &mut RngStream) -> Result<Tensor> {
    let &[m, c, h, w] = batch.shape() else {
        return shape_err("augment", format!("expected [M, C, H, W], got {:?}", batch.shape()));
    };
    let mut values = Vec::with_capacity(m * c * spec.crop * spec.crop);
    for i in 0..m {
        let choice = spec.sample_choice(h, w, rng)?;
        values.extend(crop_image(batch.row(i), c, h, w, spec.pad, spec.crop, choice));
    }
    Tensor::new(vec![m, c, spec.crop, spec.crop], values)
}

/// Augmentation-adjusted dataset size used in the prior scaling.
pub fn effective_n(n_orig: usize, rho: f64) -> Result<f64> {
    if !(rho >= 1.0 && rho.is_finite()) {
        return invalid(format!("augmentation factor must be at least 1, got {rho}"));
    }
    Ok(rho * n_orig as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(m: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![m, c, h, w], (0..m * c * h * w).map(|v| v as f64 + 1.0).collect()).unwrap()
    }

    fn flip_columns(t: &Tensor) -> Tensor {
        let w = *t.shape().last().unwrap();
        let mut out = t.clone();
        for row in out.values_mut().chunks_mut(w) {
            row.reverse();
        }
        out
    }

    #[test]
    fn no_pad_full_crop_no_flip_is_identity() {
        let b = batch(3, 2, 5, 5);
        let spec = AugmentationSpec::new(0, 5, 0.0).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert_eq!(augment(&b, &spec, &mut rng).unwrap(), b);
    }

    #[test]
    fn forced_flip_reverses_columns_and_is_an_involution() {
        let mut spec = AugmentationSpec::new(0, 4, 1.0).unwrap();
        let mut rng = RngStream::new(1, 0);
        let b = batch(2, 3, 4, 4);
        let once = augment(&b, &spec, &mut rng).unwrap();
        assert_eq!(once, flip_columns(&b));
        assert_eq!(augment(&once, &spec, &mut rng).unwrap(), b);
        spec.hflip = 0.0;
        assert_eq!(augment(&b, &spec, &mut rng).unwrap(), b);
    }

    #[test]
    fn crop_larger_than_canvas_errors() {
        let spec = AugmentationSpec::new(1, 7, 0.5).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert!(augment(&batch(1, 1, 4, 4), &spec, &mut rng).is_err());
        assert!(AugmentationSpec::new(0, 4, 1.5).is_err());
    }

    #[test]
    fn padding_is_zero_and_shape_and_batch_size_preserved() {
        let spec = AugmentationSpec::new(2, 3, 0.0).unwrap();
        let b = batch(5, 1, 3, 3);
        let mut rng = RngStream::new(2, 0);
        let out = augment(&b, &spec, &mut rng).unwrap();
        assert_eq!(out.shape(), &[5, 1, 3, 3]);
        let corner = crop_image(
            b.row(0),
            1,
            3,
            3,
            2,
            3,
            CropChoice {
                dy: 0,
                dx: 0,
                flip: false,
            },
        );
        assert_eq!(corner, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn augment_applies_the_sampled_choice() {
        let spec = AugmentationSpec::new(4, 28, 0.5).unwrap();
        let b = batch(4, 3, 32, 32);
        let rng = RngStream::new(3, 0);
        let out = augment(&b, &spec, &mut rng.clone()).unwrap();
        let mut replay = rng;
        for i in 0..4 {
            let choice = spec.sample_choice(32, 32, &mut replay).unwrap();
            assert_eq!(out.row(i), &crop_image(b.row(i), 3, 32, 32, 4, 28, choice)[..]);
        }
    }

    #[test]
    fn crop_offsets_are_uniform() {
        // 13 x 13 valid positions for a 28 crop of a 40 canvas.
        let spec = AugmentationSpec::new(4, 28, 0.5).unwrap();
        let mut rng = RngStream::new(4, 0);
        let draws = 10_000;
        let mut counts = vec![0usize; 169];
        let mut flips = 0;
        for _ in 0..draws {
            let c = spec.sample_choice(32, 32, &mut rng).unwrap();
            counts[c.dy * 13 + c.dx] += 1;
            flips += usize::from(c.flip);
        }
        let e = draws as f64 / 169.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 0.999 quantile of chi-square with 168 degrees of freedom.
        assert!(chi2 < 230.38336347839578, "chi2 = {chi2}");
        assert!((flips as f64 / draws as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn counting_rho() {
        let cifar = AugmentationSpec::new(4, 28, 0.5).unwrap();
        assert_eq!(cifar.counting_rho(32, 32).unwrap(), 10.0);
        assert_eq!(effective_n(50_000, 10.0).unwrap(), 500_000.0);
        let none = AugmentationSpec::new(0, 32, 0.0).unwrap();
        assert_eq!(none.counting_rho(32, 32).unwrap(), 1.0);
        assert_eq!(effective_n(50_000, 1.0).unwrap(), 50_000.0);
        let crop_only = AugmentationSpec::new(4, 28, 0.0).unwrap();
        assert_eq!(crop_only.counting_rho(32, 32).unwrap(), 5.0);
        assert!(effective_n(10, 0.5).is_err());
    }

    #[test]
    fn effective_n_is_linear_and_monotone() {
        for rho in [1.0, 2.0, 5.0, 10.0] {
            assert_eq!(effective_n(300, rho).unwrap(), 3.0 * effective_n(100, rho).unwrap());
            assert!(effective_n(100, rho + 1.0).unwrap() > effective_n(100, rho).unwrap());
        }
    }
}
