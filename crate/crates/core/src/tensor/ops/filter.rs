use crate::error::{Error, Result};
use crate::tensor::{kernels, Float, Tensor, Var};

/// Normalized 1-D Gaussian of odd length `size`.
pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl<'t, T: Float> Var<'t, T> {
    /// Separable filtering of every `[H,W]` plane of a `[B,C,H,W]` tensor with
    /// `kernel ⊗ kernel`, keeping only fully covered positions:
    /// output `[B,C,H−k+1,W−k+1]`.
    pub fn separable_filter_valid(self, kernel: &[f64]) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape();
        let k = kernel.len();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(Error::invalid(
                "separable_filter_valid",
                s,
                format!("image smaller than {k}x{k} window"),
            ));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h - k + 1, w - k + 1);
        let kern: Vec<T> = kernel.iter().map(|&v| T::of(v)).collect();
        let mut tmp = vec![T::zero(); h * wo];
        let mut data = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let xp = &x.data()[p * h * w..(p + 1) * h * w];
            tmp.iter_mut().for_each(|v| *v = T::zero());
            for y in 0..h {
                let dst = &mut tmp[y * wo..(y + 1) * wo];
                for (t, &kv) in kern.iter().enumerate() {
                    kernels::axpy(kv, &xp[y * w + t..y * w + t + wo], dst);
                }
            }
            let op = &mut data[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                let dst = &mut op[y * wo..(y + 1) * wo];
                for (t, &kv) in kern.iter().enumerate() {
                    kernels::axpy(kv, &tmp[(y + t) * wo..(y + t + 1) * wo], dst);
                }
            }
        }
        let out = Tensor::new(&[s[0], s[1], ho, wo], data)?;
        let id = self.id;
        self.tape.push("separable_filter_valid", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let mut gtmp = vec![T::zero(); h * wo];
                for p in 0..planes {
                    let gp = &g[p * ho * wo..(p + 1) * ho * wo];
                    gtmp.iter_mut().for_each(|v| *v = T::zero());
                    for y in 0..ho {
                        for (t, &kv) in kern.iter().enumerate() {
                            kernels::axpy(kv, &gp[y * wo..(y + 1) * wo], &mut gtmp[(y + t) * wo..(y + t + 1) * wo]);
                        }
                    }
                    let gxp = &mut gx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for (t, &kv) in kern.iter().enumerate() {
                            kernels::axpy(kv, &gtmp[y * wo..(y + 1) * wo], &mut gxp[y * w + t..y * w + t + wo]);
                        }
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::gaussian_kernel;

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
        assert!(k[5] > k[4]);
    }
}
