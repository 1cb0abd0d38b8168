//! Channel attention (MHDCA) and overlapping window attention (OCA).

use crate::error::{Error, Result};
use crate::params::{Bound, Initializer, ParamId, ParamStore};
use crate::tensor::{Float, Tensor, Var};

use super::layers::{Conv, DepthwiseConv, Init};

/// Multi-head depthwise channel attention.
///
/// Each head attends across its `C/heads` channels, so the attention matrix
/// is `head_dim × head_dim` regardless of image size.
#[derive(Clone, Debug)]
pub struct Mhdca {
    pub qkv: Conv,
    pub qkv_depthwise: DepthwiseConv,
    pub out_proj: Conv,
    /// `log τ` per head.
    pub log_temperature: ParamId,
    pub heads: usize,
}

pub const QK_NORM_EPS: f64 = 1e-12;

impl Mhdca {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut Initializer,
        name: &str,
        channels: usize,
        heads: usize,
    ) -> Result<Self> {
        check_heads("mhdca", channels, heads)?;
        Ok(Mhdca {
            qkv: Conv::new(store, rng, &format!("{name}.qkv"), channels, 3 * channels, 1, Init::He),
            qkv_depthwise: DepthwiseConv::new(store, rng, &format!("{name}.qkv_dw"), 3 * channels),
            out_proj: Conv::new(store, rng, &format!("{name}.out"), channels, channels, 1, Init::Zero),
            log_temperature: store.add(format!("{name}.log_temperature"), Tensor::zeros(&[heads])),
            heads,
        })
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(p, x)?.0)
    }

    /// Output together with the attention matrices `[B·heads, hd, hd]`.
    pub fn forward_with_attention<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::invalid("mhdca", &s, "expected [B,C,H,W]"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        check_heads("mhdca", c, self.heads)?;
        let hd = c / self.heads;
        let qkv = self.qkv_depthwise.forward(p, self.qkv.forward(p, x)?)?;
        let split = |i: usize| qkv.narrow(1, i * c, c)?.reshape(&[b * self.heads, hd, h * w]);
        let q = split(0)?.l2_normalize(2, QK_NORM_EPS)?;
        let k = split(1)?.l2_normalize(2, QK_NORM_EPS)?;
        let v = split(2)?;
        let tau = p.get(self.log_temperature).exp()?;
        let logits = q
            .matmul_nt(k)?
            .reshape(&[b, self.heads, hd * hd])?
            .mul_axis(tau, 1)?
            .reshape(&[b * self.heads, hd, hd])?;
        let attn = logits.softmax(2)?;
        let out = attn.matmul(v)?.reshape(&[b, c, h, w])?;
        Ok((self.out_proj.forward(p, out)?, attn))
    }
}

fn check_heads(op: &'static str, channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{op}: {channels} channels not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Overlapping cross-attention.
///
/// Queries come from non-overlapping `window × window` tiles; keys and values
/// from concentric tiles of side `kv_window`, read from a zero-padded map.
#[derive(Clone, Debug)]
pub struct Oca {
    pub qkv: Conv,
    pub out_proj: Conv,
    pub heads: usize,
    pub window: usize,
    pub kv_window: usize,
}

/// K/V window side `M·(1+γ)`; must be an integer with an even margin over `M`.
pub fn kv_window(window: usize, overlap: f64) -> Result<usize> {
    let side = window as f64 * (1.0 + overlap);
    let rounded = side.round();
    if window == 0 || !(overlap >= 0.0) || (side - rounded).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "window {window} with overlap {overlap} gives non-integral K/V window {side}"
        )));
    }
    let kv = rounded as usize;
    if !(kv - window).is_multiple_of(2) {
        return Err(Error::Config(format!(
            "K/V window {kv} cannot be concentric with query window {window}"
        )));
    }
    Ok(kv)
}

impl Oca {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut Initializer,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        overlap: f64,
    ) -> Result<Self> {
        check_heads("oca", channels, heads)?;
        Ok(Oca {
            qkv: Conv::new(store, rng, &format!("{name}.qkv"), channels, 3 * channels, 1, Init::He),
            out_proj: Conv::new(store, rng, &format!("{name}.out"), channels, channels, 1, Init::Zero),
            heads,
            window,
            kv_window: kv_window(window, overlap)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(p, x)?.0)
    }

    /// Output together with attention `[windows·heads, window², kv_window²]`.
    pub fn forward_with_attention<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::invalid("oca", &s, "expected [B,C,H,W]"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        check_heads("oca", c, self.heads)?;
        if h % self.window != 0 || w % self.window != 0 {
            return Err(Error::invalid(
                "oca",
                &s,
                format!("spatial size not divisible by window {}", self.window),
            ));
        }
        let hd = c / self.heads;
        let pad = (self.kv_window - self.window) / 2;
        let qkv = self.qkv.forward(p, x)?;
        let q = qkv.narrow(1, 0, c)?.extract_windows(self.window, self.window, 0, self.heads)?;
        let kv = |i: usize| {
            qkv.narrow(1, i * c, c)?
                .extract_windows(self.kv_window, self.window, pad, self.heads)
        };
        let (k, v) = (kv(1)?, kv(2)?);
        let attn = q.matmul_nt(k)?.scale(1.0 / (hd as f64).sqrt())?.softmax(2)?;
        let out = attn.matmul(v)?.merge_windows([b, c, h, w], self.window, self.heads)?;
        Ok((self.out_proj.forward(p, out)?, attn))
    }
}
