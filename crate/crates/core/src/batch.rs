//! Epoch ordering and collation of samples into network tensors.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{DepthMap, RgbImage};
use crate::losses::{planes_to_tensor, ReciprocalCodec};
use crate::real::Real;
use crate::synth::Sample;
use crate::tensor::{Shape, Tensor};

/// Random stream for `(seed, epoch)`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    order
}

/// Shuffled batches of sample indices; the trailing partial batch is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(epoch_order(n, seed, epoch).chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}

/// Network-ready view of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[N,3,H,W]` planar RGB.
    pub rgb: Tensor<T>,
    /// `[N,1,H,W]` encoded sparse depth, 0 where missing.
    pub sparse: Tensor<T>,
    /// `[N,1,H,W]` encoded groundtruth.
    pub target: Tensor<T>,
    pub gt: Vec<DepthMap>,
}

/// `[N,3,H,W]` planar tensor of interleaved RGB images.
pub fn images_to_tensor<T: Real>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for (i, img) in images.iter().enumerate() {
        if (img.width, img.height) != (w, h) {
            return Err(Error::InvalidArgument(format!("image {i} is {}x{}, expected {w}x{h}", img.width, img.height)));
        }
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).map(|&v| T::from_f64(v as f64)));
        }
    }
    Tensor::from_vec(Shape::nchw(images.len(), 3, h, w), data)
}

/// `[N,1,H,W]` encoded sparse depth, 0 where a map has no measurement.
pub fn sparse_to_tensor<T: Real>(maps: &[&DepthMap], codec: &ReciprocalCodec) -> Result<Tensor<T>> {
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (w, h) = (first.width, first.height);
    if let Some(i) = maps.iter().position(|m| (m.width, m.height) != (w, h)) {
        return Err(Error::InvalidArgument(format!("sparse map {i} differs in size from the first")));
    }
    let planes: Vec<Vec<f64>> = maps.iter().map(|m| m.data.iter().map(|&d| codec.encode_sparse(d)).collect()).collect();
    planes_to_tensor(&planes.iter().map(Vec::as_slice).collect::<Vec<_>>(), h, w)
}

pub fn collate<T: Real>(samples: &[&Sample], codec: &ReciprocalCodec) -> Result<Batch<T>> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (w, h) = (first.width(), first.height());
    for s in samples {
        s.validate()?;
        if (s.width(), s.height()) != (w, h) {
            return Err(Error::InvalidArgument(format!("sample `{}` has a different size", s.meta.id)));
        }
    }
    let rgb = images_to_tensor(&samples.iter().map(|s| &s.rgb).collect::<Vec<_>>())?;
    let sparse = sparse_to_tensor(&samples.iter().map(|s| &s.sparse).collect::<Vec<_>>(), codec)?;
    let target: Vec<Vec<f64>> = samples.iter().map(|s| s.gt.data.iter().map(|&d| codec.encode(d)).collect()).collect();
    let planes = |v: &[Vec<f64>]| planes_to_tensor(&v.iter().map(Vec::as_slice).collect::<Vec<_>>(), h, w);
    Ok(Batch { rgb, sparse, target: planes(&target)?, gt: samples.iter().map(|s| s.gt.clone()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SceneSpec};

    #[test]
    fn drop_last() {
        assert_eq!(epoch_batches(5, 2, 1, 1).unwrap().len(), 2);
        assert!(epoch_batches(0, 2, 1, 1).is_err());
    }

    #[test]
    fn orders_repeat_per_epoch_and_differ_across_epochs() {
        assert_eq!(epoch_order(8, 3, 4), epoch_order(8, 3, 4));
        let orders: Vec<_> = (1..=10).map(|e| epoch_order(8, 3, e)).collect();
        for i in 0..orders.len() {
            for j in i + 1..orders.len() {
                assert_ne!(orders[i], orders[j]);
            }
        }
    }

    #[test]
    fn collate_layout() {
        let spec = SceneSpec::for_size(8, 4);
        let a = generate_sample(&spec, 1).unwrap();
        let b = generate_sample(&spec, 2).unwrap();
        let batch: Batch<f64> = collate(&[&a, &b], &ReciprocalCodec::default()).unwrap();
        assert_eq!(batch.rgb.shape().dims(), &[2, 3, 4, 8]);
        assert_eq!(batch.target.shape().dims(), &[2, 1, 4, 8]);
        // Green channel of sample b, pixel (3, 1).
        assert_eq!(batch.rgb.data()[32 * 3 + 32 + 8 + 3], b.rgb.pixel(3, 1)[1] as f64);
        assert_eq!(batch.target.data()[0], 0.5 / a.gt.data[0]);
    }
}
