//! Parameterized building blocks shared by the restorer.

use crate::error::Result;
use crate::params::{Bound, Initializer, ParamId, ParamStore};
use crate::tensor::{Float, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Weight initialization policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

/// Square convolution with bias and "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        init: Init,
    ) -> Self {
        let shape = [cout, cin, kernel, kernel];
        let w = match init {
            Init::He => rng.he(&shape),
            Init::Zero => Tensor::zeros(&shape),
        };
        Conv {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            kernel,
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.get(self.weight), Some(p.get(self.bias)), 1, self.kernel / 2)
    }
}

/// 3×3 per-channel convolution.
#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut Initializer, name: &str, channels: usize) -> Self {
        DepthwiseConv {
            weight: store.add(format!("{name}.weight"), rng.he(&[channels, 1, 3, 3])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.depthwise_conv2d(p.get(self.weight), Some(p.get(self.bias)))
    }
}

/// Per-pixel normalization across channels.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.get(self.gamma), p.get(self.beta), 1, LAYER_NORM_EPS)
    }
}
