use crate::error::{Error, Result};
use crate::tensor::{axis_split, kernels, Float, Tensor, Var};

const ZERO_FILL: usize = usize::MAX;

impl<'t, T: Float> Var<'t, T> {
    /// `out[i] = x[map[i]]`, or zero where `map[i] == ZERO_FILL`.
    fn gather(self, op: &'static str, shape: &[usize], map: Vec<usize>) -> Result<Var<'t, T>> {
        let x = self.value();
        let xd = x.data();
        let data = map
            .iter()
            .map(|&j| if j == ZERO_FILL { T::zero() } else { xd[j] })
            .collect();
        let out = Tensor::new(shape, data)?;
        let id = self.id;
        self.tape.push(op, out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (&j, &gv) in map.iter().zip(g) {
                    if j != ZERO_FILL {
                        gx[j] += gv;
                    }
                }
            }
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::shape("reshape", x.shape(), shape));
        }
        let out = Tensor::new(shape, x.data().to_vec())?;
        let id = self.id;
        self.tape.push("reshape", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                kernels::axpy(T::one(), g, gx);
            }
        })
    }

    /// Reorders dimensions: output dimension `i` is input dimension `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", &shape, format!("bad axes {axes:?}")));
        }
        let mut strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let numel: usize = shape.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; nd];
        for _ in 0..numel {
            map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.gather("permute", &out_shape, map)
    }

    /// Swaps the last two dimensions.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(Error::invalid("transpose", &self.shape(), "needs at least 2 dims"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(
                "narrow",
                &shape,
                format!("range {start}..{} on axis {axis}", start + len),
            ));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for d in start..start + len {
                map.extend((0..inner).map(|i| (o * dim + d) * inner + i));
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather("narrow", &out_shape, map)
    }

    /// Space-to-depth: `[B,C,H,W] → [B,C·r²,H/r,W/r]`.
    pub fn pixel_unshuffle(self, r: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
            return Err(Error::invalid(
                "pixel_unshuffle",
                &s,
                format!("spatial size not divisible by {r}"),
            ));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / r, w / r);
        let mut map = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for ry in 0..r {
                    for rx in 0..r {
                        for y in 0..ho {
                            for x in 0..wo {
                                map.push(((bi * c + ci) * h + y * r + ry) * w + x * r + rx);
                            }
                        }
                    }
                }
            }
        }
        self.gather("pixel_unshuffle", &[b, c * r * r, ho, wo], map)
    }

    /// Depth-to-space: `[B,C·r²,H,W] → [B,C,H·r,W·r]`, inverse of [`Var::pixel_unshuffle`].
    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
            return Err(Error::invalid(
                "pixel_shuffle",
                &s,
                format!("channels not divisible by {}", r * r),
            ));
        }
        let (b, cr, h, w) = (s[0], s[1], s[2], s[3]);
        let c = cr / (r * r);
        let (ho, wo) = (h * r, w * r);
        let mut map = Vec::with_capacity(b * cr * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..ho {
                    for x in 0..wo {
                        let src_c = ci * r * r + (y % r) * r + x % r;
                        map.push(((bi * cr + src_c) * h + y / r) * w + x / r);
                    }
                }
            }
        }
        self.gather("pixel_shuffle", &[b, c, ho, wo], map)
    }

    /// Cuts `[B,C,H,W]` into square windows of side `win` placed every
    /// `stride` pixels on a zero-padded grid, and splits channels into heads:
    /// result `[B·nWh·nWw·heads, win², C/heads]`.
    pub fn extract_windows(self, win: usize, stride: usize, pad: usize, heads: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        let bad = |reason: String| Error::invalid("extract_windows", &s, reason);
        if s.len() != 4 || heads == 0 || !s[1].is_multiple_of(heads) {
            return Err(bad(format!("channels not divisible by {heads} heads")));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if stride == 0 || h + 2 * pad < win || !(h + 2 * pad - win).is_multiple_of(stride) || !(w + 2 * pad - win).is_multiple_of(stride) {
            return Err(bad(format!("window {win}/stride {stride}/pad {pad} does not tile")));
        }
        let (nh, nw) = ((h + 2 * pad - win) / stride + 1, (w + 2 * pad - win) / stride + 1);
        let hd = c / heads;
        let mut map = Vec::with_capacity(b * nh * nw * c * win * win);
        for bi in 0..b {
            for wy in 0..nh {
                for wx in 0..nw {
                    for hi in 0..heads {
                        for py in 0..win {
                            let y = (wy * stride + py) as isize - pad as isize;
                            for px in 0..win {
                                let x = (wx * stride + px) as isize - pad as isize;
                                let inside = y >= 0 && y < h as isize && x >= 0 && x < w as isize;
                                for d in 0..hd {
                                    map.push(if inside {
                                        ((bi * c + hi * hd + d) * h + y as usize) * w + x as usize
                                    } else {
                                        ZERO_FILL
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        self.gather("extract_windows", &[b * nh * nw * heads, win * win, hd], map)
    }

    /// Inverse of non-overlapping [`Var::extract_windows`] (`stride == win`, no padding).
    pub fn merge_windows(self, out_shape: [usize; 4], win: usize, heads: usize) -> Result<Var<'t, T>> {
        let [b, c, h, w] = out_shape;
        let s = self.shape();
        if heads == 0 || win == 0 || c % heads != 0 || h % win != 0 || w % win != 0 {
            return Err(Error::invalid("merge_windows", &s, "bad window geometry"));
        }
        let (nh, nw, hd) = (h / win, w / win, c / heads);
        if s != [b * nh * nw * heads, win * win, hd] {
            return Err(Error::shape("merge_windows", &s, &[b * nh * nw * heads, win * win, hd]));
        }
        let mut map = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                let (hi, d) = (ci / hd, ci % hd);
                for y in 0..h {
                    for x in 0..w {
                        let win_idx = ((bi * nh + y / win) * nw + x / win) * heads + hi;
                        let pos = (y % win) * win + x % win;
                        map.push((win_idx * win * win + pos) * hd + d);
                    }
                }
            }
        }
        self.gather("merge_windows", &out_shape, map)
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t, T: Float>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let s0 = values[0].shape().to_vec();
    if axis >= s0.len() {
        return Err(Error::invalid("concat", &s0, format!("axis {axis} out of range")));
    }
    for v in &values[1..] {
        let s = v.shape();
        if s.len() != s0.len() || s.iter().zip(&s0).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", &s0, s));
        }
    }
    let (outer, _, inner) = axis_split(&s0, axis);
    let dims: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = dims.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &d) in values.iter().zip(&dims) {
            data.extend_from_slice(&v.data()[o * d * inner..(o + 1) * d * inner]);
        }
    }
    let mut shape = s0;
    shape[axis] = total;
    let out = Tensor::new(&shape, data)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push("concat", out, parts, move |g, sink| {
        let mut offset = 0;
        for (&id, &d) in ids.iter().zip(&dims) {
            if let Some(gx) = sink.slot(id) {
                for o in 0..outer {
                    let src = &g[(o * total + offset) * inner..][..d * inner];
                    kernels::axpy(T::one(), src, &mut gx[o * d * inner..(o + 1) * d * inner]);
                }
            }
            offset += d;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::concat;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn unshuffle_shape_and_roundtrip() {
        let tape = Tape::new();
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 6], |i| (i as f64 * 0.37).sin());
        let v = tape.constant(x.clone()).unwrap();
        let u = v.pixel_unshuffle(2).unwrap();
        assert_eq!(u.shape(), vec![2, 12, 2, 3]);
        assert_eq!(*u.pixel_shuffle(2).unwrap().value(), x);
        assert!(v.pixel_unshuffle(4).is_err());
    }

    #[test]
    fn unshuffle_of_constant_is_constant() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::<f64>::full(&[1, 1, 4, 4], 0.3)).unwrap();
        let u = v.pixel_unshuffle(2).unwrap().value();
        assert_eq!(u.shape(), &[1, 4, 2, 2]);
        assert!(u.data().iter().all(|&x| x == 0.3));
    }

    #[test]
    fn windows_roundtrip_without_overlap() {
        let tape = Tape::new();
        let x = Tensor::<f64>::from_fn(&[2, 4, 8, 8], |i| i as f64);
        let v = tape.constant(x.clone()).unwrap();
        let w = v.extract_windows(4, 4, 0, 2).unwrap();
        assert_eq!(w.shape(), vec![2 * 4 * 2, 16, 2]);
        assert_eq!(*w.merge_windows([2, 4, 8, 8], 4, 2).unwrap().value(), x);
    }

    #[test]
    fn overlapping_windows_are_concentric_and_zero_padded() {
        let tape = Tape::new();
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| 1.0 + i as f64);
        let v = tape.constant(x).unwrap();
        let w = v.extract_windows(4, 2, 1, 1).unwrap().value();
        assert_eq!(w.shape(), &[4, 16, 1]);
        // first window covers rows/cols -1..3: top-left corner is padding
        assert_eq!(w.data()[0], 0.0);
        assert_eq!(w.data()[5], 1.0);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::from_fn(&[2, 1, 3], |i| i as f64)).unwrap();
        let b = tape.constant(Tensor::<f64>::from_fn(&[2, 2, 3], |i| -(i as f64))).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 3]);
        assert_eq!(*c.narrow(1, 1, 2).unwrap().value(), *b.value());
        assert_eq!(*c.narrow(1, 0, 1).unwrap().value(), *a.value());
    }

    #[test]
    fn permute_matches_index_formula() {
        let tape = Tape::new();
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = tape.constant(x).unwrap().permute(&[2, 0, 1]).unwrap().value();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k,i,j] = x[i,j,k] = i*12 + j*4 + k
        assert_eq!(p.data()[(3 * 2 + 1) * 3 + 2], (12 + 8 + 3) as f64);
    }
}
