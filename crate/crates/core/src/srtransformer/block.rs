use crate::error::Result;
use crate::params::{Bound, Initializer, ParamStore};
use crate::tensor::{Float, Tensor, Var};

use super::attention::{Mhdca, Oca};
use super::ffn::Ffn;
use super::layers::{Conv, Init, LayerNorm};
use super::{detached, ModelConfig};

/// MHDCA → FFN → OCA → FFN, each branch pre-normalized and added back:
///
/// ```text
/// F_c     = F_in    + MHDCA(LN(F_in))
/// F_c_out = F_c     + FFN(LN(F_c))
/// F_s     = F_c_out + OCA(LN(F_c_out))
/// F_s_out = F_s     + FFN(LN(F_s))
/// ```
#[derive(Clone, Debug)]
pub struct SrtBlock {
    pub norm1: LayerNorm,
    pub mhdca: Mhdca,
    pub norm2: LayerNorm,
    pub ffn1: Ffn,
    pub norm3: LayerNorm,
    pub oca: Oca,
    pub norm4: LayerNorm,
    pub ffn2: Ffn,
}

impl SrtBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut Initializer,
        name: &str,
        channels: usize,
        heads: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let e = cfg.ffn_expansion;
        Ok(SrtBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels),
            mhdca: Mhdca::new(store, rng, &format!("{name}.mhdca"), channels, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels),
            ffn1: Ffn::new(store, rng, &format!("{name}.ffn1"), channels, e),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), channels),
            oca: Oca::new(
                store,
                rng,
                &format!("{name}.oca"),
                channels,
                heads,
                cfg.q_window,
                cfg.overlap_ratio,
            )?,
            norm4: LayerNorm::new(store, &format!("{name}.norm4"), channels),
            ffn2: Ffn::new(store, rng, &format!("{name}.ffn2"), channels, e),
        })
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, f_in: Var<'t, T>) -> Result<Var<'t, T>> {
        let f_c = f_in.add(self.mhdca.forward(p, self.norm1.forward(p, f_in)?)?)?;
        let f_c_out = f_c.add(self.ffn1.forward(p, self.norm2.forward(p, f_c)?)?)?;
        let f_s = f_c_out.add(self.oca.forward(p, self.norm3.forward(p, f_c_out)?)?)?;
        f_s.add(self.ffn2.forward(p, self.norm4.forward(p, f_s)?)?)
    }

    /// [`SrtBlock::forward`] with each residual branch on its own tape.
    pub fn infer<T: Float>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f_c = detached(store, &[x], |p, v| v[0].add(self.mhdca.forward(p, self.norm1.forward(p, v[0])?)?))?;
        let f_c_out = detached(store, &[&f_c], |p, v| v[0].add(self.ffn1.forward(p, self.norm2.forward(p, v[0])?)?))?;
        let f_s = detached(store, &[&f_c_out], |p, v| v[0].add(self.oca.forward(p, self.norm3.forward(p, v[0])?)?))?;
        detached(store, &[&f_s], |p, v| v[0].add(self.ffn2.forward(p, self.norm4.forward(p, v[0])?)?))
    }
}

/// Plain residual convolution block used when the transformer is disabled:
/// `x + conv₃(gelu(conv₃(x)))`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ConvBlock {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut Initializer, name: &str, channels: usize) -> Self {
        ConvBlock {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), channels, channels, 3, Init::He),
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, Init::Zero),
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.add(self.conv2.forward(p, self.conv1.forward(p, x)?.gelu()?)?)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Srt(Box<SrtBlock>),
    Conv(ConvBlock),
}

impl Block {
    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Block::Srt(b) => b.forward(p, x),
            Block::Conv(b) => b.forward(p, x),
        }
    }

    pub fn infer<T: Float>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Block::Srt(b) => b.infer(store, x),
            Block::Conv(b) => detached(store, &[x], |p, v| b.forward(p, v[0])),
        }
    }
}
