//! Procedural "scanned page": textured paper, rows of pseudo-glyphs and
//! occasional line-art boxes.

use rand::Rng;

use super::noise::{rng_for, ValueNoise};
use super::{Canvas, Image, MIN_SIDE};
use crate::error::{Error, Result};

const STREAM_DOCUMENT: u64 = 1;

/// Draws a glyph made of 1-pixel strokes inside a `gw × gh` cell.
fn draw_glyph(canvas: &mut Canvas, rng: &mut impl Rng, x0: usize, y0: usize, gw: usize, gh: usize, ink: [f64; 3]) {
    // Seven-segment style: two verticals, three horizontals, one diagonal.
    let segments: u8 = loop {
        let s = rng.random::<u8>() & 0b11_1111;
        if s.count_ones() >= 2 {
            break s;
        }
    };
    let (x1, y1, ym) = (x0 + gw - 1, y0 + gh - 1, y0 + gh / 2);
    if segments & 1 != 0 {
        canvas.vline(x0, y0, y1, ink);
    }
    if segments & 2 != 0 {
        canvas.vline(x1, y0, y1, ink);
    }
    if segments & 4 != 0 {
        canvas.hline(x0, x1, y0, ink);
    }
    if segments & 8 != 0 {
        canvas.hline(x0, x1, ym, ink);
    }
    if segments & 16 != 0 {
        canvas.hline(x0, x1, y1, ink);
    }
    if segments & 32 != 0 {
        for t in 0..gh {
            canvas.darken(x0 + t * (gw - 1) / (gh - 1).max(1), y0 + t, ink);
        }
    }
}

/// Clean document image `[3,h,w]` in `[0,1]`, a pure function of `seed`.
pub fn gen_document(seed: u64, h: usize, w: usize) -> Result<Image> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidArgument(format!(
            "document must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    let rng = &mut rng_for(seed, STREAM_DOCUMENT);
    let coarse = ValueNoise::new(rng, w, h, 24.0);
    let fine = ValueNoise::new(rng, w, h, 3.0);
    let base = 0.92 + 0.05 * rng.random::<f64>();
    let tint = [0.0, -0.006, -0.02 - 0.02 * rng.random::<f64>()];
    let mut canvas = Canvas::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let lum = base + 0.05 * (coarse.sample(fx, fy) - 0.5) + 0.025 * (fine.sample(fx, fy) - 0.5);
            canvas.set(x, y, [lum + tint[0], lum + tint[1], lum + tint[2]]);
        }
    }

    let ink_level = 0.05 + 0.15 * rng.random::<f64>();
    let ink = [ink_level, ink_level, ink_level + 0.08 * rng.random::<f64>()];
    let margin = (w.min(h) / 16).max(3);
    let line_h = rng.random_range(8..=11usize);
    let glyph_h = (line_h * 3 / 5).max(4);
    let mut y = margin;
    while y + glyph_h < h - margin {
        if rng.random::<f64>() < 0.08 {
            y += line_h;
            continue;
        }
        let mut x = margin + if rng.random::<f64>() < 0.2 { rng.random_range(4..12usize) } else { 0 };
        let line_end = w - margin - if rng.random::<f64>() < 0.25 { rng.random_range(0..w / 3) } else { 0 };
        'words: loop {
            for _ in 0..rng.random_range(2..=6usize) {
                let gw = rng.random_range(3..=5usize);
                if x + gw >= line_end {
                    break 'words;
                }
                draw_glyph(&mut canvas, rng, x, y, gw, glyph_h, ink);
                x += gw + 1;
            }
            x += rng.random_range(3..=5usize);
        }
        y += line_h;
    }

    if rng.random::<f64>() < 0.6 {
        let bw = rng.random_range(w / 4..w / 2);
        let bh = rng.random_range(h / 6..h / 3);
        let bx = rng.random_range(margin..w - margin - bw);
        let by = rng.random_range(margin..h - margin - bh);
        canvas.hline(bx, bx + bw, by, ink);
        canvas.hline(bx, bx + bw, by + bh, ink);
        canvas.vline(bx, by, by + bh, ink);
        canvas.vline(bx + bw, by, by + bh, ink);
        if rng.random::<bool>() {
            canvas.hline(bx, bx + bw, by + bh / 2, ink);
        }
    }
    Ok(canvas.into_image())
}
