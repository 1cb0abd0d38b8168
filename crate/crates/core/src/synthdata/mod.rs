//! Procedural stained-document pairs: clean pages, parametric stain layers,
//! dataset files and training augmentation.
//!
//! Every generator is a pure function of its seed and arguments. Pairs are
//! quantized to 8-bit levels at creation, so a pair read back from disk is
//! bit-identical to the one generated in memory.

mod augment;
mod dataset;
mod document;
mod noise;
mod ppm;
mod stains;

use std::fmt;
use std::str::FromStr;

pub use augment::{augment, crop, crop_rect, flip, mixup, rot90, Augmenter, Flip};
pub use dataset::{gen_dataset, split_of, Dataset, DatasetSpec, ManifestEntry, Split, StainMix, MANIFEST_FILE};
pub use document::gen_document;
pub use noise::{rng_for, splitmix64, ValueNoise};
pub use ppm::{decode_ppm, encode_ppm, quantize, read_ppm, to_u8, write_ppm};
pub use stains::{
    apply_ink_stain, apply_liquid_stain, apply_overlay, ink_layer, liquid_layer, mark_period, overlay_layer, MarkPeriod,
    stain_layer, Compositing, OverlayKind, ShapeKind, StainLayer, StainModel,
};

use crate::error::{Error, Result};
use crate::losses::psnr;
use crate::tensor::Tensor;

/// RGB image `[3,H,W]` with values in `[0,1]`.
pub type Image = Tensor<f64>;

/// Smallest page side accepted by the generators.
pub const MIN_SIDE: usize = 64;

/// Generated pairs must be degraded at least this much.
pub const MAX_PAIR_PSNR_DB: f64 = 40.0;

const MAX_STAIN_ATTEMPTS: u64 = 64;

/// `(height, width)` of an `[3,H,W]` image.
pub fn dims(img: &Image) -> Result<(usize, usize)> {
    match *img.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::invalid("image", img.shape(), "expected [3,H,W]")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StainKind {
    BlackTea,
    GreenTea,
    RedInk,
    BlueInk,
    Seal,
    Mark,
}

impl StainKind {
    pub const ALL: [StainKind; 6] = [
        StainKind::BlackTea,
        StainKind::GreenTea,
        StainKind::RedInk,
        StainKind::BlueInk,
        StainKind::Seal,
        StainKind::Mark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StainKind::BlackTea => "black_tea",
            StainKind::GreenTea => "green_tea",
            StainKind::RedInk => "red_ink",
            StainKind::BlueInk => "blue_ink",
            StainKind::Seal => "seal",
            StainKind::Mark => "mark",
        }
    }
}

impl fmt::Display for StainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StainKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stain kind `{s}`")))
    }
}

/// Aligned stained/clean pair with the arguments that reproduce it.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub stained: Image,
    pub clean: Image,
    pub kind: StainKind,
    pub severity: u8,
    pub seed: u64,
}

impl ImagePair {
    pub fn dims(&self) -> (usize, usize) {
        dims(&self.clean).expect("pair images are [3,H,W]")
    }
}

/// Generates the pair for `(seed, kind, severity, h, w)`.
///
/// The page uses `seed` directly; the stain seed is derived from it and
/// re-drawn until the quantized pair is degraded below
/// [`MAX_PAIR_PSNR_DB`].
pub fn gen_pair(seed: u64, kind: StainKind, severity: u8, h: usize, w: usize) -> Result<ImagePair> {
    let clean = quantize(&gen_document(seed, h, w)?);
    for attempt in 0..MAX_STAIN_ATTEMPTS {
        let stain_seed = splitmix64(seed ^ splitmix64(attempt.wrapping_add(0x5A17)));
        let stained = quantize(&stain_layer(h, w, kind, severity, stain_seed)?.apply(&clean)?);
        let p = psnr(&stained, &clean, 1.0)?;
        if p.is_finite() && p < MAX_PAIR_PSNR_DB {
            return Ok(ImagePair {
                stained,
                clean,
                kind,
                severity,
                seed,
            });
        }
    }
    Err(Error::Data(format!(
        "no {kind} stain below {MAX_PAIR_PSNR_DB} dB after {MAX_STAIN_ATTEMPTS} draws (seed {seed})"
    )))
}

/// Planar RGB drawing surface used by the page generator.
pub(crate) struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Canvas {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        Canvas {
            h,
            w,
            data: vec![1.0; 3 * h * w],
        }
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        if x < self.w && y < self.h {
            let plane = self.h * self.w;
            for (c, v) in rgb.into_iter().enumerate() {
                self.data[c * plane + y * self.w + x] = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Min-composites `ink` at `(x, y)`; out-of-bounds writes are dropped.
    pub(crate) fn darken(&mut self, x: usize, y: usize, ink: [f64; 3]) {
        if x < self.w && y < self.h {
            let plane = self.h * self.w;
            for (c, v) in ink.into_iter().enumerate() {
                let p = &mut self.data[c * plane + y * self.w + x];
                *p = p.min(v);
            }
        }
    }

    /// Inclusive horizontal segment.
    pub(crate) fn hline(&mut self, x0: usize, x1: usize, y: usize, ink: [f64; 3]) {
        for x in x0..=x1 {
            self.darken(x, y, ink);
        }
    }

    /// Inclusive vertical segment.
    pub(crate) fn vline(&mut self, x: usize, y0: usize, y1: usize, ink: [f64; 3]) {
        for y in y0..=y1 {
            self.darken(x, y, ink);
        }
    }

    pub(crate) fn into_image(self) -> Image {
        Tensor::new(&[3, self.h, self.w], self.data).expect("canvas shape")
    }
}
