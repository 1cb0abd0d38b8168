//! Parametric stain renderers. Each renderer produces a [`StainLayer`]: a
//! coverage mask in `[0,1]` with a colour and strength, composited onto a
//! clean page.

use std::f64::consts::TAU;

use rand::Rng;

use super::noise::{rng_for, smoothstep, ValueNoise};
use super::{dims, Image, StainKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STREAM_STAIN: u64 = 2;

/// Geometry family of a stain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Blob,
    Stroke,
    Ring,
    Glyph,
}

/// Appearance of one stain family.
#[derive(Clone, Debug, PartialEq)]
pub struct StainModel {
    pub base_color: [f64; 3],
    /// Strength range; severity selects a sub-interval.
    pub opacity_range: (f64, f64),
    /// Edge softness as a fraction of the shape's size.
    pub penetration: f64,
    pub shape: ShapeKind,
    /// Multiplier on the number of shape elements; `0` draws nothing.
    pub density: f64,
}

impl StainModel {
    pub fn black_tea() -> Self {
        StainModel {
            base_color: [0.62, 0.38, 0.22],
            opacity_range: (0.45, 0.85),
            penetration: 0.25,
            shape: ShapeKind::Blob,
            density: 1.0,
        }
    }

    pub fn green_tea() -> Self {
        StainModel {
            base_color: [0.80, 0.68, 0.32],
            opacity_range: (0.45, 0.85),
            penetration: 0.3,
            shape: ShapeKind::Blob,
            density: 1.0,
        }
    }

    pub fn red_ink() -> Self {
        StainModel {
            base_color: [0.86, 0.10, 0.14],
            opacity_range: (0.6, 0.95),
            penetration: 0.35,
            shape: ShapeKind::Stroke,
            density: 1.0,
        }
    }

    pub fn blue_ink() -> Self {
        StainModel {
            base_color: [0.12, 0.22, 0.80],
            opacity_range: (0.6, 0.95),
            penetration: 0.35,
            shape: ShapeKind::Stroke,
            density: 1.0,
        }
    }

    pub fn seal() -> Self {
        StainModel {
            base_color: [0.85, 0.08, 0.10],
            opacity_range: (0.5, 0.9),
            penetration: 0.2,
            shape: ShapeKind::Ring,
            density: 1.0,
        }
    }

    pub fn mark() -> Self {
        StainModel {
            base_color: [0.42, 0.42, 0.48],
            opacity_range: (0.3, 0.55),
            penetration: 0.0,
            shape: ShapeKind::Glyph,
            density: 1.0,
        }
    }

    pub fn for_kind(kind: StainKind) -> Self {
        match kind {
            StainKind::BlackTea => Self::black_tea(),
            StainKind::GreenTea => Self::green_tea(),
            StainKind::RedInk => Self::red_ink(),
            StainKind::BlueInk => Self::blue_ink(),
            StainKind::Seal => Self::seal(),
            StainKind::Mark => Self::mark(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.opacity_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("opacity range ({lo}, {hi}) not within (0, 1]")));
        }
        if self.base_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("stain colour outside [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.penetration) || !(self.density >= 0.0) {
            return Err(Error::InvalidArgument("penetration must be in [0,1), density ≥ 0".into()));
        }
        Ok(())
    }

    /// Strength at `severity` for a per-stain uniform draw `u`; increasing in both.
    fn opacity(&self, severity: u8, u: f64) -> f64 {
        let (lo, hi) = self.opacity_range;
        lo + (hi - lo) * (0.4 * u + 0.3 * (severity - 1) as f64)
    }
}

/// How a layer combines with the page underneath.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compositing {
    /// `clean ⊙ (1 − a·m·(1 − colour))`: absorbing dye, never lightens.
    Multiplicative,
    /// `(1 − a·m)·clean + a·m·colour`: opaque ink laid on top.
    Alpha,
}

/// A rendered stain ready to composite.
#[derive(Clone, Debug)]
pub struct StainLayer {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
    pub mode: Compositing,
}

impl StainLayer {
    pub fn apply(&self, clean: &Image) -> Result<Image> {
        let (h, w) = dims(clean)?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape("stain", &[h, w], &[self.height, self.width]));
        }
        let plane = h * w;
        let mut out = clean.data().to_vec();
        for c in 0..3 {
            let col = self.color[c];
            for (v, &m) in out[c * plane..(c + 1) * plane].iter_mut().zip(&self.mask) {
                let a = self.opacity * m;
                if a == 0.0 {
                    continue;
                }
                *v = match self.mode {
                    Compositing::Multiplicative => *v * (1.0 - a * (1.0 - col)),
                    Compositing::Alpha => (1.0 - a) * *v + a * col,
                };
            }
        }
        Tensor::new(clean.shape(), out)
    }

    /// Number of pixels with non-zero coverage.
    pub fn support(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

fn check_severity(severity: u8) -> Result<()> {
    if !(1..=3).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity {severity} not in 1..=3")));
    }
    Ok(())
}

/// Element count for `severity`: a prefix of the same seeded sequence, so
/// higher severities add elements without moving existing ones.
fn element_count(density: f64, per_level: f64, severity: u8) -> usize {
    (density * per_level * severity as f64).round() as usize
}

/// Tea-like spills: noise-modulated multi-lobed blobs with a darker drying rim.
pub fn liquid_layer(h: usize, w: usize, model: &StainModel, severity: u8, seed: u64) -> Result<StainLayer> {
    check_severity(severity)?;
    model.validate()?;
    let rng = &mut rng_for(seed, STREAM_STAIN);
    let opacity = model.opacity(severity, rng.random());
    let mottling = ValueNoise::new(rng, w, h, 6.0);
    let side = h.min(w) as f64;
    let scale = 0.7 + 0.25 * (severity - 1) as f64;
    let n_max = element_count(model.density, 1.0, 3);
    let n = element_count(model.density, 1.0, severity);
    let mut mask = vec![0.0f64; h * w];
    for i in 0..n_max {
        // Draw every blob so later ones do not depend on severity.
        let cx = rng.random_range(0.15..0.85) * w as f64;
        let cy = rng.random_range(0.15..0.85) * h as f64;
        let radius = side * rng.random_range(0.12..0.24) * scale;
        let lobes = rng.random_range(2..=5) as f64;
        let phase = rng.random::<f64>() * TAU;
        let wobble = rng.random_range(0.08..0.22);
        let edge = ValueNoise::new(rng, w, h, 9.0);
        if i >= n {
            continue;
        }
        let reach = radius * (1.0 + wobble + 0.2);
        let (y0, y1) = ((cy - reach).floor().max(0.0) as usize, ((cy + reach).ceil() as usize).min(h));
        let (x0, x1) = ((cx - reach).floor().max(0.0) as usize, ((cx + reach).ceil() as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let theta = dy.atan2(dx);
                let r = radius
                    * (1.0 + wobble * (lobes * theta + phase).sin() + 0.2 * (edge.sample(x as f64, y as f64) - 0.5));
                let d = (dx * dx + dy * dy).sqrt() / r;
                if d >= 1.0 {
                    continue;
                }
                let body = smoothstep(1.0, 1.0 - model.penetration.max(0.02), d);
                let rim = 0.45 * (-((d - 0.92) / 0.05).powi(2)).exp();
                let m = (body * (0.65 + 0.35 * mottling.sample(x as f64, y as f64)) + rim).min(1.0);
                let cell = &mut mask[y * w + x];
                *cell = cell.max(m);
            }
        }
    }
    Ok(StainLayer {
        height: h,
        width: w,
        mask,
        color: model.base_color,
        opacity,
        mode: Compositing::Multiplicative,
    })
}

pub fn apply_liquid_stain(clean: &Image, model: &StainModel, severity: u8, seed: u64) -> Result<Image> {
    let (h, w) = dims(clean)?;
    liquid_layer(h, w, model, severity, seed)?.apply(clean)
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * vx - px, a.1 + t * vy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Soft disc/segment coverage with compact support: `1` in the core, `0` beyond `radius`.
fn soft_coverage(d: f64, radius: f64, softness: f64) -> f64 {
    if d >= radius {
        0.0
    } else {
        smoothstep(radius, radius * (1.0 - softness), d)
    }
}

/// Ink: seeded polyline strokes plus splatter dots.
pub fn ink_layer(h: usize, w: usize, model: &StainModel, severity: u8, seed: u64) -> Result<StainLayer> {
    check_severity(severity)?;
    model.validate()?;
    let rng = &mut rng_for(seed, STREAM_STAIN);
    let opacity = model.opacity(severity, rng.random());
    let side = h.min(w) as f64;
    let soft = model.penetration.max(0.05);
    let n_max = element_count(model.density, 1.0, 3);
    let n = element_count(model.density, 1.0, severity);
    let mut mask = vec![0.0f64; h * w];
    let mut stamp = |cx: f64, cy: f64, reach: f64, f: &dyn Fn(f64, f64) -> f64| {
        let (y0, y1) = ((cy - reach).floor().max(0.0) as usize, ((cy + reach).ceil().max(0.0) as usize).min(h));
        let (x0, x1) = ((cx - reach).floor().max(0.0) as usize, ((cx + reach).ceil().max(0.0) as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let m = f(x as f64 + 0.5, y as f64 + 0.5);
                let cell = &mut mask[y * w + x];
                *cell = cell.max(m);
            }
        }
    };
    for i in 0..n_max {
        let points = rng.random_range(3..=6usize);
        let mut pts = vec![(rng.random_range(0.1..0.9) * w as f64, rng.random_range(0.1..0.9) * h as f64)];
        let mut heading = rng.random::<f64>() * TAU;
        for _ in 1..points {
            heading += rng.random_range(-0.9..0.9);
            let step = side * rng.random_range(0.08..0.2);
            let last = *pts.last().unwrap();
            pts.push((last.0 + step * heading.cos(), last.1 + step * heading.sin()));
        }
        let width = rng.random_range(1.0..2.2) * (0.8 + 0.2 * severity as f64);
        let dots: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                let anchor = pts[rng.random_range(0..pts.len())];
                let r = rng.random_range(0.8..2.5);
                let off = side * 0.06;
                (anchor.0 + rng.random_range(-off..off), anchor.1 + rng.random_range(-off..off), r)
            })
            .collect();
        if i >= n {
            continue;
        }
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let (cx, cy) = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
            let reach = ((b.0 - a.0).hypot(b.1 - a.1)) / 2.0 + width + 1.0;
            stamp(cx, cy, reach, &|x, y| soft_coverage(segment_distance(x, y, a, b), width, soft));
        }
        for &(dx, dy, r) in &dots {
            stamp(dx, dy, r + 1.0, &|x, y| soft_coverage((x - dx).hypot(y - dy), r, soft));
        }
    }
    Ok(StainLayer {
        height: h,
        width: w,
        mask,
        color: model.base_color,
        opacity,
        mode: Compositing::Multiplicative,
    })
}

pub fn apply_ink_stain(clean: &Image, model: &StainModel, severity: u8, seed: u64) -> Result<Image> {
    let (h, w) = dims(clean)?;
    ink_layer(h, w, model, severity, seed)?.apply(clean)
}

/// Overlay families composited with alpha blending.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlayKind {
    Seal,
    Mark,
}

/// Red stamp: annulus with inner bars and a star, unevenly inked.
fn seal_mask(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let side = h.min(w) as f64;
    let r_out = side * rng.random_range(0.2..0.32);
    let ring = r_out * rng.random_range(0.1..0.16);
    let cx = rng.random_range(r_out * 0.6..w as f64 - r_out * 0.6);
    let cy = rng.random_range(r_out * 0.6..h as f64 - r_out * 0.6);
    let uneven = ValueNoise::new(rng, w, h, 4.0);
    let bars = rng.random_range(1..=3usize);
    let bar_w = (ring * 0.8).max(1.0);
    let star_r = r_out * 0.35;
    let spokes = 5.0;
    let mut mask = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let d = dx.hypot(dy);
            let mut m = 0.0f64;
            if (d - (r_out - ring / 2.0)).abs() < ring / 2.0 {
                m = 1.0;
            } else if d < r_out - ring * 1.8 {
                let inner = r_out - ring * 1.8;
                for b in 0..bars {
                    let by = (b as f64 + 1.0) / (bars as f64 + 1.0) * 2.0 - 1.0;
                    if (dy / inner - by * 0.6).abs() * inner < bar_w / 2.0 && dx.abs() < inner * 0.7 {
                        m = 1.0;
                    }
                }
                let theta = dy.atan2(dx);
                let star = star_r * (0.55 + 0.45 * (spokes * theta).cos());
                if d < star && dy < -inner * 0.15 {
                    m = 1.0;
                }
            }
            mask[y * w + x] = m * (0.7 + 0.3 * uneven.sample(x as f64, y as f64));
        }
    }
    mask
}

/// Watermark: a word of block glyphs tiled along a rotated grid.
///
/// The rotation uses a Pythagorean triple `(a, b, l)`, so rotated
/// coordinates are exact multiples of `1/l` pixel. Tile sides are multiples
/// of `l`, which makes the pattern exactly invariant under the two integer
/// translations returned alongside the mask.
fn mark_mask(h: usize, w: usize, rng: &mut impl Rng) -> (Vec<f64>, MarkPeriod) {
    const GLYPHS: [[u8; 5]; 6] = [
        [0b111, 0b101, 0b111, 0b101, 0b101],
        [0b110, 0b101, 0b110, 0b101, 0b110],
        [0b111, 0b100, 0b100, 0b100, 0b111],
        [0b101, 0b101, 0b111, 0b101, 0b101],
        [0b111, 0b010, 0b010, 0b010, 0b111],
        [0b100, 0b100, 0b100, 0b100, 0b111],
    ];
    const TRIPLES: [(i64, i64, i64); 3] = [(4, 3, 5), (12, 5, 13), (15, 8, 17)];
    let (a, b, l) = TRIPLES[rng.random_range(0..TRIPLES.len())];
    let b = if rng.random::<bool>() { b } else { -b };
    let px = rng.random_range(2..=3i64);
    let word: Vec<usize> = (0..rng.random_range(2..=4)).map(|_| rng.random_range(0..GLYPHS.len())).collect();
    let round_up = |v: i64| (v + l - 1) / l * l;
    let tile_s = round_up(4 * px * word.len() as i64 + 3 * px);
    let tile_t = round_up(5 * px + 4 * px);
    let mut mask = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            // Rotated coordinates in units of 1/l pixel.
            let s = (x * a + y * b).rem_euclid(tile_s * l) / l;
            let t = (-x * b + y * a).rem_euclid(tile_t * l) / l;
            let (gx, gy) = (s / px, t / px);
            let cols = 4 * word.len() as i64;
            if gx >= cols || gy >= 5 || gx % 4 == 3 {
                continue;
            }
            let bits = GLYPHS[word[(gx / 4) as usize]][gy as usize];
            if bits >> (2 - gx % 4) & 1 == 1 {
                mask[(y * w as i64 + x) as usize] = 1.0;
            }
        }
    }
    let period = MarkPeriod {
        along: (tile_s * a / l, tile_s * b / l),
        across: (-tile_t * b / l, tile_t * a / l),
    };
    (mask, period)
}

/// Two independent integer translations `(dx, dy)` leaving a watermark unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkPeriod {
    pub along: (i64, i64),
    pub across: (i64, i64),
}

/// Tile translations of the watermark drawn for `seed`.
pub fn mark_period(h: usize, w: usize, seed: u64) -> MarkPeriod {
    let rng = &mut rng_for(seed, STREAM_STAIN);
    let _opacity_draw: f64 = rng.random();
    mark_mask(h, w, rng).1
}

pub fn overlay_layer(h: usize, w: usize, kind: OverlayKind, severity: u8, seed: u64) -> Result<StainLayer> {
    check_severity(severity)?;
    let model = match kind {
        OverlayKind::Seal => StainModel::seal(),
        OverlayKind::Mark => StainModel::mark(),
    };
    let rng = &mut rng_for(seed, STREAM_STAIN);
    let opacity = model.opacity(severity, rng.random());
    let mask = match kind {
        OverlayKind::Seal => seal_mask(h, w, rng),
        OverlayKind::Mark => mark_mask(h, w, rng).0,
    };
    Ok(StainLayer {
        height: h,
        width: w,
        mask,
        color: model.base_color,
        opacity,
        mode: Compositing::Alpha,
    })
}

pub fn apply_overlay(clean: &Image, kind: OverlayKind, severity: u8, seed: u64) -> Result<Image> {
    let (h, w) = dims(clean)?;
    overlay_layer(h, w, kind, severity, seed)?.apply(clean)
}

/// Renders the layer of any stain kind.
pub fn stain_layer(h: usize, w: usize, kind: StainKind, severity: u8, seed: u64) -> Result<StainLayer> {
    match kind {
        StainKind::BlackTea | StainKind::GreenTea => liquid_layer(h, w, &StainModel::for_kind(kind), severity, seed),
        StainKind::RedInk | StainKind::BlueInk => ink_layer(h, w, &StainModel::for_kind(kind), severity, seed),
        StainKind::Seal => overlay_layer(h, w, OverlayKind::Seal, severity, seed),
        StainKind::Mark => overlay_layer(h, w, OverlayKind::Mark, severity, seed),
    }
}
