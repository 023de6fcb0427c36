//! Training-time augmentation: horizontal flip of all rasters, contrast and
//! brightness jitter of the RGB image.
//!
//! Every call consumes exactly five uniform draws, in this order: flip
//! decision, contrast decision, contrast factor, brightness decision,
//! brightness factor. Draws are taken even when a probability is 0 or 1, so
//! the random stream stays aligned regardless of configuration.

use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::synth::Sample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_contrast: f64,
    pub p_brightness: f64,
    pub contrast_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            p_contrast: 0.5,
            p_brightness: 0.5,
            contrast_range: (0.9, 1.1),
            brightness_range: (0.75, 1.25),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Identity augmentation.
    pub fn disabled() -> Self {
        Self { p_flip: 0.0, p_contrast: 0.0, p_brightness: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !(prob(self.p_flip) && prob(self.p_contrast) && prob(self.p_brightness)) {
            return Err(Error::InvalidArgument(format!("augmentation probabilities must lie in [0, 1]: {self:?}")));
        }
        if !(range(self.contrast_range) && range(self.brightness_range)) {
            return Err(Error::InvalidArgument(format!("augmentation ranges must be positive and ordered: {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of the five draws for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraws {
    pub flip: bool,
    pub contrast: Option<f64>,
    pub brightness: Option<f64>,
}

impl AugmentDraws {
    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut u = [0.0f64; 5];
        for x in &mut u {
            *x = rng.random::<f64>();
        }
        let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
        Self {
            flip: u[0] < cfg.p_flip,
            contrast: (u[1] < cfg.p_contrast).then(|| lerp(cfg.contrast_range, u[2])),
            brightness: (u[3] < cfg.p_brightness).then(|| lerp(cfg.brightness_range, u[4])),
        }
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut out = if self.flip { flip(sample) } else { sample.clone() };
        if let Some(f) = self.contrast {
            apply_contrast(&mut out.rgb, f);
        }
        if let Some(f) = self.brightness {
            apply_brightness(&mut out.rgb, f);
        }
        out
    }
}

pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    AugmentDraws::draw(cfg, rng).apply(sample)
}

/// Mirrors rgb, sparse and gt together.
pub fn flip(sample: &Sample) -> Sample {
    Sample {
        rgb: sample.rgb.flip_horizontal(),
        sparse: sample.sparse.flip_horizontal(),
        gt: sample.gt.flip_horizontal(),
        meta: sample.meta.clone(),
    }
}

/// `x ← clamp(mean + (x − mean)·f)` with `mean` over all channels and pixels.
pub fn apply_contrast(rgb: &mut RgbImage, factor: f64) {
    if rgb.data.is_empty() {
        return;
    }
    let mean = rgb.data.iter().map(|&c| c as f64).sum::<f64>() / rgb.data.len() as f64;
    for c in &mut rgb.data {
        *c = (mean + (*c as f64 - mean) * factor).clamp(0.0, 1.0) as f32;
    }
}

/// `x ← clamp(x·f)`.
pub fn apply_brightness(rgb: &mut RgbImage, factor: f64) {
    for c in &mut rgb.data {
        *c = (*c as f64 * factor).clamp(0.0, 1.0) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        generate_sample(&SceneSpec::for_size(16, 8), 3).unwrap()
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(augment(&s, &AugmentConfig::disabled(), &mut rng), s);
        }
    }

    #[test]
    fn double_flip_restores() {
        let s = sample();
        let cfg = AugmentConfig { p_flip: 1.0, p_contrast: 0.0, p_brightness: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let once = augment(&s, &cfg, &mut rng);
        assert_ne!(once, s);
        assert_eq!(once.sparse.nonzero_count(), s.sparse.nonzero_count());
        assert_eq!(augment(&once, &cfg, &mut rng), s);
    }

    #[test]
    fn contrast_on_two_pixels() {
        // Pixels 0.5 and 0.7 in every channel; mean 0.6.
        let mut img = RgbImage::from_vec(2, 1, alloc::vec![0.5, 0.5, 0.5, 0.7, 0.7, 0.7]).unwrap();
        apply_contrast(&mut img, 1.1);
        assert!((img.data[0] as f64 - 0.49).abs() < 1e-6);
        assert!((img.data[3] as f64 - 0.71).abs() < 1e-6);
    }

    #[test]
    fn brightness_clamps() {
        let mut img = RgbImage::from_vec(1, 1, alloc::vec![0.9, 0.5, 0.0]).unwrap();
        apply_brightness(&mut img, 1.25);
        assert_eq!(img.data, alloc::vec![1.0, 0.625, 0.0]);
    }

    #[test]
    fn fixed_draw_count() {
        let s = sample();
        for cfg in [AugmentConfig::disabled(), AugmentConfig::default()] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            augment(&s, &cfg, &mut rng);
            let mut reference = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..5 {
                reference.random::<f64>();
            }
            assert_eq!(rng.random::<u64>(), reference.random::<u64>());
        }
    }

    #[test]
    fn gt_unchanged_without_flip() {
        let s = sample();
        let cfg = AugmentConfig { p_flip: 0.0, p_contrast: 1.0, p_brightness: 1.0, ..Default::default() };
        let out = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(out.gt, s.gt);
        assert_eq!(out.sparse, s.sparse);
    }
}
