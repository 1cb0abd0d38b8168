//! Pair-consistent augmentation: every geometric transform is applied
//! identically to the stained and clean image of a pair.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::noise::rng_for;
use super::{dims, Image, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STREAM_AUGMENT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    Horizontal,
    Vertical,
}

/// `size × size` window with top-left corner `(y0, x0)`.
pub fn crop(img: &Image, y0: usize, x0: usize, size: usize) -> Result<Image> {
    crop_rect(img, y0, x0, size, size)
}

/// `height × width` window with top-left corner `(y0, x0)`.
pub fn crop_rect(img: &Image, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
    let (h, w) = dims(img)?;
    if y0 + height > h || x0 + width > w {
        return Err(Error::InvalidArgument(format!(
            "crop {height}x{width} at ({y0},{x0}) exceeds {h}x{w} image"
        )));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(3 * height * width);
    for c in 0..3 {
        for y in y0..y0 + height {
            let row = c * h * w + y * w;
            out.extend_from_slice(&src[row + x0..row + x0 + width]);
        }
    }
    Tensor::new(&[3, height, width], out)
}

pub fn flip(img: &Image, axis: Flip) -> Result<Image> {
    let (h, w) = dims(img)?;
    let src = img.data();
    Ok(Tensor::from_fn(img.shape(), |i| {
        let (c, y, x) = (i / (h * w), i / w % h, i % w);
        let (y, x) = match axis {
            Flip::Horizontal => (y, w - 1 - x),
            Flip::Vertical => (h - 1 - y, x),
        };
        src[c * h * w + y * w + x]
    }))
}

/// Counter-clockwise rotation by `quarter_turns × 90°`.
pub fn rot90(img: &Image, quarter_turns: u8) -> Result<Image> {
    let mut out = img.clone();
    for _ in 0..quarter_turns % 4 {
        let (h, w) = dims(&out)?;
        let src = out.data();
        // out'[y', x'] with shape [w, h] reads src[x', w - 1 - y'].
        out = Tensor::from_fn(&[3, w, h], |i| {
            let (c, yp, xp) = (i / (h * w), i / h % w, i % h);
            src[c * h * w + xp * w + (w - 1 - yp)]
        });
    }
    Ok(out)
}

/// `λ·a + (1 − λ)·b`, applied to both images of the pair.
pub fn mixup(a: &ImagePair, b: &ImagePair, lambda: f64) -> Result<ImagePair> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("mixup weight {lambda} not in [0,1]")));
    }
    if a.clean.shape() != b.clean.shape() {
        return Err(Error::shape("mixup", a.clean.shape(), b.clean.shape()));
    }
    let blend = |x: &Image, y: &Image| {
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| lambda * p + (1.0 - lambda) * q).collect();
        Tensor::new(x.shape(), data)
    };
    Ok(ImagePair {
        stained: blend(&a.stained, &b.stained)?,
        clean: blend(&a.clean, &b.clean)?,
        ..a.clone()
    })
}

/// Random crop, flips and quarter turns drawn from `seed`, shared by both images.
fn geometric(pair: &ImagePair, rng: &mut impl Rng, size: usize) -> Result<ImagePair> {
    let (h, w) = pair.dims();
    if size == 0 || size > h.min(w) {
        return Err(Error::InvalidArgument(format!("crop {size} larger than {h}x{w} image")));
    }
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    let flip_h = rng.random::<bool>();
    let flip_v = rng.random::<bool>();
    let turns = rng.random_range(0..4u8);
    let apply = |img: &Image| -> Result<Image> {
        let mut out = crop(img, y0, x0, size)?;
        if flip_h {
            out = flip(&out, Flip::Horizontal)?;
        }
        if flip_v {
            out = flip(&out, Flip::Vertical)?;
        }
        rot90(&out, turns)
    };
    Ok(ImagePair {
        stained: apply(&pair.stained)?,
        clean: apply(&pair.clean)?,
        ..pair.clone()
    })
}

/// Crops, flips and rotates `pair`; with a `partner`, the partner is
/// transformed with its own draw and blended in with `λ ~ Beta(α, α)`.
pub fn augment(
    pair: &ImagePair,
    seed: u64,
    crop_size: usize,
    mixup_alpha: f64,
    partner: Option<&ImagePair>,
) -> Result<ImagePair> {
    let rng = &mut rng_for(seed, STREAM_AUGMENT);
    let first = geometric(pair, rng, crop_size)?;
    let Some(partner) = partner else {
        return Ok(first);
    };
    let second = geometric(partner, rng, crop_size)?;
    let beta = Beta::new(mixup_alpha, mixup_alpha)
        .map_err(|e| Error::InvalidArgument(format!("mixup alpha {mixup_alpha}: {e}")))?;
    mixup(&first, &second, beta.sample(rng))
}

/// Augmentation policy of the training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmenter {
    pub crop: usize,
    pub mixup_alpha: f64,
    /// Probability that a sample is blended with a partner.
    pub mixup_prob: f64,
}

impl Augmenter {
    /// Augments `pairs[index]`; the partner, if any, is chosen from `pairs` by the same seed.
    pub fn sample(&self, pairs: &[ImagePair], index: usize, seed: u64) -> Result<ImagePair> {
        let rng = &mut rng_for(seed, STREAM_AUGMENT + 1);
        let partner = (pairs.len() > 1 && rng.random::<f64>() < self.mixup_prob)
            .then(|| &pairs[rng.random_range(0..pairs.len())]);
        augment(&pairs[index], seed, self.crop, self.mixup_alpha, partner)
    }
}
