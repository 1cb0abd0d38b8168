//! Training objective and image-quality metrics.
//!
//! The differentiable losses operate on tape variables; the metrics take
//! plain `f64` tensors and are evaluated per image.

mod report;

pub use report::{ImageMetrics, MetricsReport, MetricsSummary};

use crate::error::{Error, Result};
use crate::tensor::{gaussian_kernel, Float, Tape, Tensor, Var};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Weight of the structural term in [`total_loss`].
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Gaussian-window SSIM parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Normalized 1-D window; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        gaussian_kernel(self.window, self.sigma)
    }
}

fn same_shape<T: Float>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

/// Mean squared error over every pixel and channel.
pub fn mse_loss<'t, T: Float>(restored: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mse_loss", &restored, &target)?;
    restored.sub(target)?.square()?.mean()
}

/// Mean of the local SSIM map of `[B,C,H,W]` images over all channels and
/// fully covered window positions.
pub fn ssim<'t, T: Float>(a: Var<'t, T>, b: Var<'t, T>, cfg: &SsimConfig) -> Result<Var<'t, T>> {
    same_shape("ssim", &a, &b)?;
    let k = cfg.kernel();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let filt = |v: Var<'t, T>| v.separable_filter_valid(&k);
    let mu_a = filt(a)?;
    let mu_b = filt(b)?;
    let mu_aa = mu_a.square()?;
    let mu_bb = mu_b.square()?;
    let mu_ab = mu_a.mul(mu_b)?;
    let var_a = filt(a.square()?)?.sub(mu_aa)?;
    let var_b = filt(b.square()?)?.sub(mu_bb)?;
    let cov = filt(a.mul(b)?)?.sub(mu_ab)?;
    let num = mu_ab.affine(2.0, c1)?.mul(cov.affine(2.0, c2)?)?;
    let den = mu_aa.add(mu_bb)?.add_scalar(c1)?.mul(var_a.add(var_b)?.add_scalar(c2)?)?;
    num.div(den)?.mean()
}

/// `1 − SSIM`.
pub fn ssim_loss<'t, T: Float>(restored: Var<'t, T>, target: Var<'t, T>, cfg: &SsimConfig) -> Result<Var<'t, T>> {
    ssim(restored, target, cfg)?.affine(-1.0, 1.0)
}

/// The three loss values of one evaluation of the objective.
pub struct LossTerms<'t, T: Float> {
    pub mse: Var<'t, T>,
    pub ssim: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// `L = L_MSE + α·L_SSIM`.
pub fn total_loss<'t, T: Float>(
    restored: Var<'t, T>,
    target: Var<'t, T>,
    alpha: f64,
    cfg: &SsimConfig,
) -> Result<LossTerms<'t, T>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("loss weight α={alpha} must be ≥ 0")));
    }
    let mse = mse_loss(restored, target)?;
    let ssim = ssim_loss(restored, target, cfg)?;
    let total = mse.add(ssim.scale(alpha)?)?;
    Ok(LossTerms { mse, ssim, total })
}

fn check_pair(op: &'static str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    if a.numel() == 0 {
        return Err(Error::invalid(op, a.shape(), "empty image"));
    }
    Ok(())
}

fn mse_value(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.numel() as f64
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(restored: &Tensor<f64>, target: &Tensor<f64>, max_val: f64) -> Result<f64> {
    check_pair("psnr", restored, target)?;
    let mse = mse_value(restored, target);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean absolute error on the 0–255 scale.
pub fn mae(restored: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    check_pair("mae", restored, target)?;
    let s: f64 = restored.data().iter().zip(target.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / restored.numel() as f64 * 255.0)
}

fn as_batch(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    match t.ndim() {
        4 => Ok(t.clone()),
        3 => t.clone().reshape(&[1, t.shape()[0], t.shape()[1], t.shape()[2]]),
        _ => Err(Error::invalid("ssim", t.shape(), "expected [C,H,W] or [B,C,H,W]")),
    }
}

/// Mean SSIM of two images given as `[C,H,W]` or `[B,C,H,W]` tensors.
pub fn ssim_value(a: &Tensor<f64>, b: &Tensor<f64>, cfg: &SsimConfig) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let tape = Tape::new();
    let av = tape.constant(as_batch(a)?)?;
    let bv = tape.constant(as_batch(b)?)?;
    Ok(ssim(av, bv, cfg)?.item())
}

/// PSNR, SSIM and MAE of one restored image against its reference.
pub fn image_metrics(id: impl Into<String>, restored: &Tensor<f64>, target: &Tensor<f64>) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        image_id: id.into(),
        psnr: psnr(restored, target, 1.0)?,
        ssim: ssim_value(restored, target, &SsimConfig::default())?,
        mae: mae(restored, target)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[1, 3, 16, 16], v)
    }

    #[test]
    fn mse_examples() {
        let tape = Tape::new();
        let a = tape.constant(img(|i| (i as f64 * 0.37).sin().abs())).unwrap();
        assert_eq!(mse_loss(a, a).unwrap().item(), 0.0);
        let b = tape.constant(img(|i| (i as f64 * 0.37).sin().abs() + 0.1)).unwrap();
        assert!((mse_loss(a, b).unwrap().item() - 0.01).abs() < 1e-12);
        let c = tape.constant(Tensor::<f64>::zeros(&[1, 3, 16, 8])).unwrap();
        assert!(matches!(mse_loss(a, c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let tape = Tape::new();
        let cfg = SsimConfig::default();
        let a = tape.constant(img(|i| (i as f64 * 0.37).sin().abs())).unwrap();
        let b = tape.constant(img(|i| (i as f64 * 0.11).cos().abs())).unwrap();
        assert!(ssim_loss(a, a, &cfg).unwrap().item().abs() < 1e-9);
        let ab = ssim(a, b, &cfg).unwrap().item();
        let ba = ssim(b, a, &cfg).unwrap().item();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[1, 1, 10, 10])).unwrap();
        assert!(ssim(a, a, &SsimConfig::default()).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let a = tape.constant(img(|i| (i as f64 * 0.37).sin().abs())).unwrap();
        let t = total_loss(a, a, 0.7, &SsimConfig::default()).unwrap();
        assert!(t.total.item().abs() < 1e-9);
        assert!(total_loss(a, a, -1.0, &SsimConfig::default()).is_err());
        let b = tape.constant(img(|i| (i as f64 * 0.11).cos().abs())).unwrap();
        let t = total_loss(a, b, DEFAULT_ALPHA, &SsimConfig::default()).unwrap();
        let expect = t.mse.item() + 0.2 * t.ssim.item();
        assert!((t.total.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        let a = img(|_| 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let b = img(|_| 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let (z, h) = (img(|_| 0.0), img(|_| 0.5));
        assert!((psnr(&z, &h, 1.0).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn mae_examples() {
        let a = img(|_| 0.3);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b = img(|_| 0.4);
        assert!((mae(&a, &b).unwrap() - 25.5).abs() < 1e-9);
    }
}
