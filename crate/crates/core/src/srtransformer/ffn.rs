use crate::error::Result;
use crate::params::{Bound, Initializer, ParamStore};
use crate::tensor::{Float, Var};

use super::layers::{Conv, DepthwiseConv, Init};

/// Number of channels in each gated branch: `⌈expansion·C⌉` rounded up to even, halved.
pub fn ffn_branch_width(channels: usize, expansion: f64) -> usize {
    let hidden = (expansion * channels as f64).ceil().max(2.0) as usize;
    hidden.div_ceil(2)
}

/// Gated depthwise feed-forward: `W_out(gelu(b₁) ⊙ b₂)` with `[b₁, b₂] = DW(W_in x)`.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub expand: Conv,
    pub depthwise: DepthwiseConv,
    pub project: Conv,
    pub branch: usize,
}

impl Ffn {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut Initializer,
        name: &str,
        channels: usize,
        expansion: f64,
    ) -> Self {
        let branch = ffn_branch_width(channels, expansion);
        Ffn {
            expand: Conv::new(store, rng, &format!("{name}.expand"), channels, 2 * branch, 1, Init::He),
            depthwise: DepthwiseConv::new(store, rng, &format!("{name}.dw"), 2 * branch),
            project: Conv::new(store, rng, &format!("{name}.project"), branch, channels, 1, Init::Zero),
            branch,
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.depthwise.forward(p, self.expand.forward(p, x)?)?;
        let gate = h.narrow(1, 0, self.branch)?.gelu()?;
        let value = h.narrow(1, self.branch, self.branch)?;
        self.project.forward(p, gate.mul(value)?)
    }
}
