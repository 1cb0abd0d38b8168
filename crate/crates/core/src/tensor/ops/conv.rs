use crate::error::{Error, Result};
use crate::tensor::{kernels, Float, Tensor, Var};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Valid output-column range `[lo, hi)` for kernel offset `kx` (stride 1 only).
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Float>(x: &[T], g: &Geometry, col: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * plane..][..plane];
                row.iter_mut().for_each(|v| *v = T::zero());
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let (lo, hi) = g.col_range(kx);
                        if hi > lo {
                            dst[lo..hi].copy_from_slice(&src[lo + kx - g.pad..hi + kx - g.pad]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(col: &[T], g: &Geometry, x: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let xc = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * plane..][..plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let (lo, hi) = g.col_range(kx);
                        if hi > lo {
                            kernels::axpy(
                                T::one(),
                                &src[lo..hi],
                                &mut dst[lo + kx - g.pad..hi + kx - g.pad],
                            );
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let cout = bias.len();
    for b in 0..batch {
        for (co, &bv) in bias.iter().enumerate() {
            out[(b * cout + co) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Float>(g: &[T], gb: &mut [T], batch: usize, plane: usize) {
    let cout = gb.len();
    for b in 0..batch {
        for (co, gbv) in gb.iter_mut().enumerate() {
            *gbv += kernels::sum(&g[(b * cout + co) * plane..][..plane]);
        }
    }
}

fn check_bias<T: Float>(op: &'static str, bias: Option<&Var<'_, T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s.iter().product::<usize>() != channels {
            return Err(Error::shape(op, &[channels], &s));
        }
    }
    Ok(())
}

impl<'t, T: Float> Var<'t, T> {
    /// 2-D cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,k,k]` weights.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", xs, ws));
        }
        if xs[1] != ws[1] {
            return Err(Error::invalid(
                "conv2d",
                xs,
                format!("input has {} channels, weight {:?} expects {}", xs[1], ws, ws[1]),
            ));
        }
        check_bias("conv2d", bias.as_ref(), ws[0])?;
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::invalid("conv2d", xs, "kernel larger than padded input"));
        }
        if !(h + 2 * pad - k).is_multiple_of(stride) || !(wd + 2 * pad - k).is_multiple_of(stride) {
            return Err(Error::invalid(
                "conv2d",
                xs,
                format!("non-integral output size for k={k}, stride={stride}, pad={pad}"),
            ));
        }
        let geo = Geometry {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let plane = geo.ho * geo.wo;
        let in_plane = h * wd;
        let ck = cin * k * k;
        let pointwise = k == 1 && stride == 1 && pad == 0;

        let mut data = vec![T::zero(); batch * cout * plane];
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); ck * plane] };
        for b in 0..batch {
            let xb = &x.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
            let ob = &mut data[b * cout * plane..(b + 1) * cout * plane];
            if pointwise {
                kernels::gemm_nn(w.data(), xb, ob, cout, cin, plane);
            } else {
                im2col(xb, &geo, &mut col);
                kernels::gemm_nn(w.data(), &col, ob, cout, ck, plane);
            }
        }
        let bias_val = bias.map(|b| b.value());
        if let Some(bv) = &bias_val {
            add_bias(&mut data, bv.data(), batch, plane);
        }
        let out = Tensor::new(&[batch, cout, geo.ho, geo.wo], data)?;
        let (ix, iw, ib) = (self.id, weight.id, bias.map(|b| b.id));
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape.push("conv2d", out, &inputs, move |g, sink| {
            if let Some(ib) = ib {
                if let Some(gb) = sink.slot(ib) {
                    bias_grad(g, gb, batch, plane);
                }
            }
            let want_w = sink.wants(iw);
            let want_x = sink.wants(ix);
            let mut col = if pointwise { Vec::new() } else { vec![T::zero(); ck * plane] };
            let mut dcol = if pointwise || !want_x { Vec::new() } else { vec![T::zero(); ck * plane] };
            for b in 0..batch {
                let gb = &g[b * cout * plane..(b + 1) * cout * plane];
                let xb = &x.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
                if want_w {
                    let gw = sink.slot(iw).expect("weight grad");
                    if pointwise {
                        kernels::gemm_nt(gb, xb, gw, cout, plane, cin);
                    } else {
                        im2col(xb, &geo, &mut col);
                        kernels::gemm_nt(gb, &col, gw, cout, plane, ck);
                    }
                }
                if want_x {
                    let gx = sink.slot(ix).expect("input grad");
                    let gxb = &mut gx[b * cin * in_plane..(b + 1) * cin * in_plane];
                    if pointwise {
                        kernels::gemm_tn(w.data(), gb, gxb, cin, cout, plane);
                    } else {
                        dcol.iter_mut().for_each(|v| *v = T::zero());
                        kernels::gemm_tn(w.data(), gb, &mut dcol, ck, cout, plane);
                        col2im(&dcol, &geo, gxb);
                    }
                }
            }
        })
    }

    /// Per-channel `k×k` convolution (stride 1, same padding) with `[C,1,k,k]` weights.
    pub fn depthwise_conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != 1 || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::shape("depthwise_conv2d", xs, ws));
        }
        if ws[0] != xs[1] {
            return Err(Error::invalid(
                "depthwise_conv2d",
                xs,
                format!("weight leading dim {} differs from channel count {}", ws[0], xs[1]),
            ));
        }
        check_bias("depthwise_conv2d", bias.as_ref(), xs[1])?;
        let (batch, ch, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let k = ws[2];
        let pl = PaddedPlane::new(h, wd, k / 2);
        let plane = h * wd;
        let mut data = vec![T::zero(); x.numel()];
        let mut xp = pl.buffer();
        let mut acc = vec![T::zero(); pl.rows_len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * plane;
                let wc = &w.data()[c * k * k..(c + 1) * k * k];
                pl.fill(&x.data()[off..off + plane], &mut xp);
                acc.iter_mut().for_each(|v| *v = T::zero());
                for (t, &wv) in wc.iter().enumerate() {
                    let s = pl.tap_offset(t / k, t % k);
                    kernels::axpy(wv, &xp[s..s + acc.len()], &mut acc);
                }
                pl.extract_add(&acc, 0, &mut data[off..off + plane]);
            }
        }
        let bias_val = bias.map(|b| b.value());
        if let Some(bv) = &bias_val {
            add_bias(&mut data, bv.data(), batch, plane);
        }
        let out = Tensor::new(xs, data)?;
        let (ix, iw, ib) = (self.id, weight.id, bias.map(|b| b.id));
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape.push("depthwise_conv2d", out, &inputs, move |g, sink| {
            if let Some(ib) = ib {
                if let Some(gb) = sink.slot(ib) {
                    bias_grad(g, gb, batch, plane);
                }
            }
            let (want_w, want_x) = (sink.wants(iw), sink.wants(ix));
            let mut gp = vec![T::zero(); pl.rows_len()];
            let mut xp = pl.buffer();
            let mut gxp = pl.buffer();
            for b in 0..batch {
                for c in 0..ch {
                    let off = (b * ch + c) * plane;
                    pl.spread(&g[off..off + plane], &mut gp);
                    if want_w {
                        pl.fill(&x.data()[off..off + plane], &mut xp);
                        let gwc = &mut sink.slot(iw).expect("weight grad")[c * k * k..(c + 1) * k * k];
                        for (t, gw) in gwc.iter_mut().enumerate() {
                            let s = pl.tap_offset(t / k, t % k);
                            *gw += kernels::dot(&gp, &xp[s..s + gp.len()]);
                        }
                    }
                    if want_x {
                        gxp.iter_mut().for_each(|v| *v = T::zero());
                        let wc = &w.data()[c * k * k..(c + 1) * k * k];
                        for (t, &wv) in wc.iter().enumerate() {
                            let s = pl.tap_offset(t / k, t % k);
                            kernels::axpy(wv, &gp, &mut gxp[s..s + gp.len()]);
                        }
                        let gx = sink.slot(ix).expect("input grad");
                        pl.extract_add(&gxp, pl.tap_offset(pl.pad, pl.pad), &mut gx[off..off + plane]);
                    }
                }
            }
        })
    }
}

/// Row-major plane zero-padded by `pad` on every side, stored with row
/// stride `w + 2·pad`. A same-padded tap `(ky, kx)` then reads the input at
/// a constant flat offset, so each tap is one contiguous `axpy` over
/// `h` padded-width rows; columns `≥ w` of those rows are scratch.
struct PaddedPlane {
    h: usize,
    w: usize,
    pad: usize,
    stride: usize,
}

impl PaddedPlane {
    fn new(h: usize, w: usize, pad: usize) -> Self {
        PaddedPlane {
            h,
            w,
            pad,
            stride: w + 2 * pad,
        }
    }

    /// Padded storage plus slack so the last tap never reads past the end.
    fn buffer<T: Float>(&self) -> Vec<T> {
        vec![T::zero(); (self.h + 2 * self.pad) * self.stride + 2 * self.pad]
    }

    fn rows_len(&self) -> usize {
        self.h * self.stride
    }

    fn tap_offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.stride + kx
    }

    fn fill<T: Float>(&self, src: &[T], dst: &mut [T]) {
        for y in 0..self.h {
            let o = (y + self.pad) * self.stride + self.pad;
            dst[o..o + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
        }
    }

    /// Lays `src` out with padded row stride, zeroing the scratch columns.
    fn spread<T: Float>(&self, src: &[T], dst: &mut [T]) {
        for y in 0..self.h {
            let row = &mut dst[y * self.stride..(y + 1) * self.stride];
            row[..self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
            row[self.w..].iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `dst[y,x] += src[start + y·stride + x]`.
    fn extract_add<T: Float>(&self, src: &[T], start: usize, dst: &mut [T]) {
        for y in 0..self.h {
            let s = start + y * self.stride;
            for (d, &v) in dst[y * self.w..(y + 1) * self.w].iter_mut().zip(&src[s..s + self.w]) {
                *d += v;
            }
        }
    }
}

