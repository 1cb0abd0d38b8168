//! Test-side oracles, written independently of the library's kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainrestorer::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Zero-padded cross-correlation, `x: [B,Ci,H,W]`, `w: [Co,Ci,K,K]`.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (bn, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let (xd, wdt) = (x.data(), w.data());
    let mut out = vec![0.0; bn * co * oh * ow];
    for n in 0..bn {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * wdt[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((n * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[bn, co, oh, ow], out).unwrap()
}

/// Per-channel 3×3 convolution with padding 1, `w: [C,1,3,3]`.
pub fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let s = x.shape();
    let (bn, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; x.numel()];
    for n in 0..bn {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.map_or(0.0, |b| b.data()[ch]);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < wd as isize {
                                acc += x.data()[((n * c + ch) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[ch * 9 + ky * 3 + kx];
                            }
                        }
                    }
                    out[((n * c + ch) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

pub fn naive_mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.numel() {
        s += (a.data()[i] - b.data()[i]).powi(2);
    }
    s / a.numel() as f64
}

/// Mean absolute error on the 0–255 scale.
pub fn naive_mae(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.numel() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    255.0 * s / a.numel() as f64
}

/// Direct evaluation of the windowed SSIM formula at every fully covered
/// position, with an 11×11 Gaussian window of σ = 1.5, averaged over all
/// positions, channels and batch entries. Images are `[B,C,H,W]` in `[0,1]`.
pub fn reference_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5f64;
    let g1: Vec<f64> = (0..WIN).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = g1.iter().sum();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let s = a.shape();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let at = |t: &Tensor<f64>, n: usize, ch: usize, y: usize, x: usize| t.data()[((n * c + ch) * h + y) * w + x];
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..bn {
        for ch in 0..c {
            for y0 in 0..=h - WIN {
                for x0 in 0..=w - WIN {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..WIN {
                        for j in 0..WIN {
                            let wt = g1[i] * g1[j] / (z * z);
                            let (p, q) = (at(a, n, ch, y0 + i, x0 + j), at(b, n, ch, y0 + i, x0 + j));
                            ma += wt * p;
                            mb += wt * q;
                            saa += wt * p * p;
                            sbb += wt * q * q;
                            sab += wt * p * q;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Worst relative error between the tape gradient of `Σ rᵢ·f(x)ᵢ` (fixed
/// random `r`) and central differences with step `h`, over at most
/// `max_coords` sampled coordinates per input. Coordinates where both
/// gradients are below `1e-7` in magnitude are skipped.
pub fn fd_max_rel_error<F>(f: F, inputs: &[Tensor<f64>], seed: u64, max_coords: usize) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let h = 1e-5;
    let value = |xs: &[Tensor<f64>]| -> Tensor<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone()).unwrap()).collect();
        (*f(&vars).value()).clone()
    };
    let base = value(inputs);
    let r = &mut rng(seed ^ 0xF00D);
    let proj: Vec<f64> = (0..base.numel()).map(|_| r.random_range(-1.0..1.0)).collect();
    let scalar = |y: &Tensor<f64>| y.data().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
    let y = f(&vars);
    let loss = y.mul(tape.constant(Tensor::new(&y.shape(), proj.clone()).unwrap()).unwrap()).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { (0..max_coords).map(|_| r.random_range(0..n)).collect() };
        for i in coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (scalar(&value(&plus)) - scalar(&value(&minus))) / (2.0 * h);
            let a = analytic[k].data()[i];
            // Both near zero: the ratio is noise, and the absolute error is tiny.
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}
