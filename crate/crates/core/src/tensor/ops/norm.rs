use crate::error::{Error, Result};
use crate::tensor::{axis_split, kernels, Float, Tensor, Var};

/// Calls `f(base, inner)` for each outer block; element `d` of lane `i` sits
/// at `base + d * inner + i`.
fn blocks(outer: usize, dim: usize, inner: usize, mut f: impl FnMut(usize)) {
    for o in 0..outer {
        f(o * dim * inner);
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, shape, format!("axis {axis} out of range")));
    }
    if shape[axis] == 0 {
        return Err(Error::invalid(op, shape, "normalized axis is empty"));
    }
    Ok(())
}

impl<'t, T: Float> Var<'t, T> {
    /// Normalizes over `axis` to zero mean and unit variance, then applies
    /// the per-channel affine `gamma`, `beta` (both of length `shape[axis]`).
    pub fn layer_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        axis: usize,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("layer_norm", x.shape(), axis)?;
        let (outer, dim, inner) = axis_split(x.shape(), axis);
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.numel() != dim || bv.numel() != dim {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let eps = T::of(eps);
        let inv_dim = T::of(1.0 / dim as f64);
        let xd = x.data();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut mean = vec![T::zero(); inner];
        let mut var = vec![T::zero(); inner];
        blocks(outer, dim, inner, |base| {
            let o = base / (dim * inner);
            mean.iter_mut().for_each(|v| *v = T::zero());
            var.iter_mut().for_each(|v| *v = T::zero());
            for d in 0..dim {
                for (m, &v) in mean.iter_mut().zip(&xd[base + d * inner..][..inner]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_dim);
            for d in 0..dim {
                let row = &xd[base + d * inner..][..inner];
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let r = &mut rstd[o * inner..(o + 1) * inner];
            for (r, &s) in r.iter_mut().zip(&var) {
                *r = T::one() / (s * inv_dim + eps).sqrt();
            }
            for d in 0..dim {
                let row = &xd[base + d * inner..][..inner];
                let out = &mut xhat[base + d * inner..][..inner];
                for (((o, &v), &m), &r) in out.iter_mut().zip(row).zip(&mean).zip(r.iter()) {
                    *o = (v - m) * r;
                }
            }
        });
        let mut data = xhat.clone();
        for o in 0..outer {
            for d in 0..dim {
                let (gm, bt) = (gv.data()[d], bv.data()[d]);
                data[(o * dim + d) * inner..][..inner]
                    .iter_mut()
                    .for_each(|v| *v = *v * gm + bt);
            }
        }
        let out = Tensor::new(x.shape(), data)?;
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        self.tape.push("layer_norm", out, &[self, gamma, beta], move |g, sink| {
            if let Some(gg) = sink.slot(ig) {
                for o in 0..outer {
                    for (d, gg) in gg.iter_mut().enumerate() {
                        let s = (o * dim + d) * inner;
                        *gg += crate::tensor::kernels::dot(&g[s..s + inner], &xhat[s..s + inner]);
                    }
                }
            }
            if let Some(gb) = sink.slot(ib) {
                for o in 0..outer {
                    for (d, gb) in gb.iter_mut().enumerate() {
                        *gb += crate::tensor::kernels::sum(&g[(o * dim + d) * inner..][..inner]);
                    }
                }
            }
            if let Some(gx) = sink.slot(ix) {
                let mut m1 = vec![T::zero(); inner];
                let mut m2 = vec![T::zero(); inner];
                for o in 0..outer {
                    m1.iter_mut().for_each(|v| *v = T::zero());
                    m2.iter_mut().for_each(|v| *v = T::zero());
                    for d in 0..dim {
                        let s = (o * dim + d) * inner;
                        let gm = gv.data()[d];
                        for i in 0..inner {
                            let dxh = g[s + i] * gm;
                            m1[i] += dxh;
                            m2[i] += dxh * xhat[s + i];
                        }
                    }
                    let r = &rstd[o * inner..(o + 1) * inner];
                    for d in 0..dim {
                        let s = (o * dim + d) * inner;
                        let gm = gv.data()[d];
                        for i in 0..inner {
                            let dxh = g[s + i] * gm;
                            gx[s + i] += r[i] * (dxh - m1[i] * inv_dim - xhat[s + i] * m2[i] * inv_dim);
                        }
                    }
                }
            }
        })
    }

    /// Normalized exponential along `axis`, computed with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("softmax", x.shape(), axis)?;
        let (outer, dim, inner) = axis_split(x.shape(), axis);
        let mut y = x.data().to_vec();
        if inner == 1 {
            for row in y.chunks_exact_mut(dim) {
                softmax_row(row);
            }
        } else {
            softmax_strided(&mut y, outer, dim, inner);
        }
        let out = Tensor::new(x.shape(), y)?;
        let yv = out.clone();
        let id = self.id;
        self.tape.push("softmax", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                softmax_backward(yv.data(), g, gx, outer, dim, inner);
            }
        })
    }

    /// Divides each slice along `axis` by `max(‖slice‖₂, eps)`.
    pub fn l2_normalize(self, axis: usize, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("l2_normalize", x.shape(), axis)?;
        let (outer, dim, inner) = axis_split(x.shape(), axis);
        let eps = T::of(eps);
        let xd = x.data();
        let mut den = vec![T::zero(); outer * inner];
        let mut active = vec![false; outer * inner];
        let mut y = vec![T::zero(); x.numel()];
        for o in 0..outer {
            let base = o * dim * inner;
            let dn = &mut den[o * inner..(o + 1) * inner];
            for d in 0..dim {
                for (s, &v) in dn.iter_mut().zip(&xd[base + d * inner..][..inner]) {
                    *s += v * v;
                }
            }
            for (i, s) in dn.iter_mut().enumerate() {
                let n = s.sqrt();
                active[o * inner + i] = n > eps;
                *s = n.max(eps);
            }
            for d in 0..dim {
                let s = base + d * inner;
                for i in 0..inner {
                    y[s + i] = xd[s + i] / dn[i];
                }
            }
        }
        let out = Tensor::new(x.shape(), y)?;
        let yv = out.clone();
        let id = self.id;
        self.tape.push("l2_normalize", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let yd = yv.data();
                for o in 0..outer {
                    let base = o * dim * inner;
                    for i in 0..inner {
                        let lane = o * inner + i;
                        let proj = if active[lane] {
                            (0..dim)
                                .map(|d| g[base + d * inner + i] * yd[base + d * inner + i])
                                .fold(T::zero(), |a, b| a + b)
                        } else {
                            T::zero()
                        };
                        for d in 0..dim {
                            let s = base + d * inner + i;
                            gx[s] += (g[s] - yd[s] * proj) / den[lane];
                        }
                    }
                }
            }
        })
    }

    /// Zeroes entries below `threshold` along `axis` and rescales the survivors
    /// to sum to one. Inputs are expected to be nonnegative weights.
    pub fn sparsify_renorm(self, threshold: f64, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis("sparsify_renorm", x.shape(), axis)?;
        let (outer, dim, inner) = axis_split(x.shape(), axis);
        let lambda = T::of(threshold);
        let xd = x.data();
        let mut y: Vec<T> = xd
            .iter()
            .map(|&v| if v >= lambda { v } else { T::zero() })
            .collect();
        let mut total = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let base = o * dim * inner;
            let t = &mut total[o * inner..(o + 1) * inner];
            for d in 0..dim {
                for (s, &v) in t.iter_mut().zip(&y[base + d * inner..][..inner]) {
                    *s += v;
                }
            }
            if t.iter().any(|s| *s <= T::zero()) {
                return Err(Error::Numeric(format!(
                    "sparsify_renorm: threshold {threshold} removed every entry of a row"
                )));
            }
            for d in 0..dim {
                let row = &mut y[base + d * inner..][..inner];
                for (v, &s) in row.iter_mut().zip(t.iter()) {
                    *v /= s;
                }
            }
        }
        let out = Tensor::new(x.shape(), y)?;
        let yv = out.clone();
        let kept: Vec<bool> = xd.iter().map(|&v| v >= lambda).collect();
        let id = self.id;
        self.tape.push("sparsify_renorm", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                // y = m⊙x / Σ m⊙x  ⇒  dx = m⊙(g − Σ y·g) / S, and S = x/y on survivors.
                let yd = yv.data();
                for o in 0..outer {
                    let base = o * dim * inner;
                    for i in 0..inner {
                        let lane = o * inner + i;
                        let proj = (0..dim)
                            .map(|d| g[base + d * inner + i] * yd[base + d * inner + i])
                            .fold(T::zero(), |a, b| a + b);
                        let s = total[lane];
                        for d in 0..dim {
                            let k = base + d * inner + i;
                            if kept[k] {
                                gx[k] += (g[k] - proj) / s;
                            }
                        }
                    }
                }
            }
        })
    }
}

/// `dx = y·(g − Σ y·g)` along the softmax axis.
fn softmax_row<T: Float>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut den = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        den += *v;
    }
    let inv = T::one() / den;
    row.iter_mut().for_each(|v| *v *= inv);
}

fn softmax_strided<T: Float>(y: &mut [T], outer: usize, dim: usize, inner: usize) {
    let mut mx = vec![T::zero(); inner];
    let mut den = vec![T::zero(); inner];
    blocks(outer, dim, inner, |base| {
        mx.copy_from_slice(&y[base..base + inner]);
        for d in 1..dim {
            for (m, &v) in mx.iter_mut().zip(&y[base + d * inner..][..inner]) {
                *m = m.max(v);
            }
        }
        den.iter_mut().for_each(|v| *v = T::zero());
        for d in 0..dim {
            let row = &mut y[base + d * inner..][..inner];
            for ((v, &m), s) in row.iter_mut().zip(&mx).zip(den.iter_mut()) {
                *v = (*v - m).exp();
                *s += *v;
            }
        }
        for d in 0..dim {
            let row = &mut y[base + d * inner..][..inner];
            for (v, &s) in row.iter_mut().zip(&den) {
                *v /= s;
            }
        }
    });
}

fn softmax_backward<T: Float>(y: &[T], g: &[T], gx: &mut [T], outer: usize, dim: usize, inner: usize) {
    if inner == 1 {
        for ((y, g), gx) in y.chunks_exact(dim).zip(g.chunks_exact(dim)).zip(gx.chunks_exact_mut(dim)) {
            let proj = kernels::dot(y, g);
            for ((gx, &y), &g) in gx.iter_mut().zip(y).zip(g) {
                *gx += y * (g - proj);
            }
        }
        return;
    }
    let mut proj = vec![T::zero(); inner];
    for o in 0..outer {
        let base = o * dim * inner;
        proj.iter_mut().for_each(|v| *v = T::zero());
        for d in 0..dim {
            let s = base + d * inner;
            for i in 0..inner {
                proj[i] += y[s + i] * g[s + i];
            }
        }
        for d in 0..dim {
            let s = base + d * inner;
            for i in 0..inner {
                gx[s + i] += y[s + i] * (g[s + i] - proj[i]);
            }
        }
    }
}
