use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a cheap bijective mixer for deriving seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for one `(seed, stream)` combination.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded lattice of uniform values, bilinearly interpolated with a
/// smoothstep fade. Samples lie in `[0, 1]`.
pub struct ValueNoise {
    cols: usize,
    rows: usize,
    cell: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    /// Lattice covering a `width × height` canvas with the given cell size.
    pub fn new(rng: &mut impl Rng, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.random::<f64>()).collect();
        ValueNoise {
            cols,
            rows,
            cell,
            values,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.cell).clamp(0.0, (self.cols - 2) as f64);
        let fy = (y / self.cell).clamp(0.0, (self.rows - 2) as f64);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let fade = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (fade(fx - ix as f64), fade(fy - iy as f64));
        let v = |c: usize, r: usize| self.values[r * self.cols + c];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// `0` at `edge0`, `1` at `edge1`, smooth in between (either edge order).
pub fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
