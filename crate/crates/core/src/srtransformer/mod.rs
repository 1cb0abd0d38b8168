//! The restoration network: a U-net whose stages are stacks of
//! SRTransformer blocks, optionally preceded by DocMemory.
//!
//! ```text
//! x ─ conv3 ─ [DocMemory ─ ProtoMix ─ conv1] ─ enc₀ ─ ↓ ─ enc₁ ─ ↓ ─ … ─ bottleneck
//!                                               │skip        │skip
//!                          out = x + conv3(dec₀ ← fuse ← ↑ … dec₁ ← fuse ← ↑)
//! ```
//!
//! Downsampling is pixel-unshuffle followed by a 1×1 conv that doubles the
//! channel count; upsampling is a 1×1 conv followed by pixel-shuffle. Every
//! residual output projection starts at zero, so a fresh model is the identity.

mod attention;
mod block;
mod ffn;
mod layers;

pub use attention::{kv_window, Mhdca, Oca};
pub use block::{Block, ConvBlock, SrtBlock};
pub use ffn::{ffn_branch_width, Ffn};
pub use layers::{Conv, DepthwiseConv, Init, LayerNorm, LAYER_NORM_EPS};

use crate::docmemory::DocMemoryParams;
use crate::error::{Error, Result};
use crate::params::{Bound, Initializer, ParamStore};
use crate::tensor::{concat, Float, Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// U-net depth, counting the bottleneck.
    pub levels: usize,
    pub blocks_per_level: Vec<usize>,
    pub base_channels: usize,
    pub heads_per_level: Vec<usize>,
    /// Prototype counts for the part, instance and semantic banks.
    pub bank_sizes: [usize; 3],
    /// Sparsity threshold λ; `None` selects `1/(2N)` per bank.
    pub sparsity_threshold: Option<f64>,
    pub enable_docmemory: bool,
    pub enable_srtransformer: bool,
    /// Add the memory read-out to the stem features instead of replacing them.
    pub memory_residual: bool,
    pub ffn_expansion: f64,
    pub q_window: usize,
    pub overlap_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 3,
            blocks_per_level: vec![1, 1, 2],
            base_channels: 16,
            heads_per_level: vec![1, 2, 4],
            bank_sizes: [64, 32, 16],
            sparsity_threshold: None,
            enable_docmemory: true,
            enable_srtransformer: true,
            memory_residual: false,
            ffn_expansion: 2.0,
            q_window: 8,
            overlap_ratio: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.blocks_per_level.len() != self.levels || self.heads_per_level.len() != self.levels {
            return bad(format!(
                "blocks_per_level and heads_per_level need {} entries",
                self.levels
            ));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        let max_heads = self.heads_per_level.iter().copied().max().unwrap_or(1);
        if max_heads == 0 || !self.base_channels.is_multiple_of(max_heads) {
            return bad(format!(
                "base_channels {} not divisible by {max_heads} heads",
                self.base_channels
            ));
        }
        if self.bank_sizes.contains(&0) {
            return bad("bank sizes must be positive".into());
        }
        if let Some(l) = self.sparsity_threshold {
            let n = self.bank_sizes.iter().copied().max().unwrap_or(1);
            if !(0.0..=1.0 / n as f64).contains(&l) {
                return bad(format!("sparsity_threshold {l} outside [0, 1/{n}]"));
            }
        }
        if !(self.ffn_expansion > 0.0 && self.ffn_expansion.is_finite()) {
            return bad(format!("ffn_expansion {} must be positive", self.ffn_expansion));
        }
        if self.enable_srtransformer {
            kv_window(self.q_window, self.overlap_ratio)?;
        }
        Ok(())
    }

    /// Side lengths must be multiples of this value.
    pub fn size_multiple(&self) -> usize {
        let down = 1usize << (self.levels - 1);
        if self.enable_srtransformer {
            down * self.q_window
        } else {
            down
        }
    }

    pub fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
            return Err(Error::Divisibility {
                height,
                width,
                multiple: m,
                padded_height: height.max(1).next_multiple_of(m),
                padded_width: width.max(1).next_multiple_of(m),
            });
        }
        Ok(())
    }

    /// Stable textual form; two configs describe the same architecture iff these agree.
    pub fn canonical(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "levels={}\nblocks_per_level={}\nbase_channels={}\nheads_per_level={}\nbank_sizes={}\n\
             sparsity_threshold={}\nenable_docmemory={}\nenable_srtransformer={}\nmemory_residual={}\n\
             ffn_expansion={:?}\nq_window={}\noverlap_ratio={:?}\n",
            self.levels,
            list(&self.blocks_per_level),
            self.base_channels,
            list(&self.heads_per_level),
            list(&self.bank_sizes),
            self.sparsity_threshold.map_or("auto".to_string(), |l| format!("{l:?}")),
            self.enable_docmemory,
            self.enable_srtransformer,
            self.memory_residual,
            self.ffn_expansion,
            self.q_window,
            self.overlap_ratio,
        )
    }
}

#[derive(Clone, Debug)]
struct MemoryStage {
    memory: DocMemoryParams,
    project: Conv,
}

#[derive(Clone, Debug)]
struct Up {
    expand: Conv,
    fuse: Conv,
}

/// Evaluates `f` on a fresh tape holding frozen parameters and `inputs`;
/// only the returned value outlives the call.
pub(crate) fn detached<T: Float, F>(store: &ParamStore<T>, inputs: &[&Tensor<T>], f: F) -> Result<Tensor<T>>
where
    F: for<'t> FnOnce(&Bound<'t, T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let p = store.bind_frozen(&tape)?;
    let vars = inputs
        .iter()
        .map(|x| tape.constant((*x).clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = f(&p, &vars)?;
    let value = y.value();
    Ok((*value).clone())
}

/// Parameter layout of a restorer. Values live in a separate [`ParamStore`]
/// so the same layout serves single- and double-precision copies.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    stem: Conv,
    memory: Option<MemoryStage>,
    encoder: Vec<Vec<Block>>,
    down: Vec<Conv>,
    bottleneck: Vec<Block>,
    up: Vec<Up>,
    decoder: Vec<Vec<Block>>,
    head: Conv,
}

fn stage<T: Float>(
    store: &mut ParamStore<T>,
    rng: &mut Initializer,
    cfg: &ModelConfig,
    name: &str,
    level: usize,
) -> Result<Vec<Block>> {
    let c = cfg.channels(level);
    (0..cfg.blocks_per_level[level])
        .map(|i| {
            let name = format!("{name}.block{i}");
            Ok(if cfg.enable_srtransformer {
                Block::Srt(Box::new(SrtBlock::new(
                    store,
                    rng,
                    &name,
                    c,
                    cfg.heads_per_level[level],
                    cfg,
                )?))
            } else {
                Block::Conv(ConvBlock::new(store, rng, &name, c))
            })
        })
        .collect()
}

/// Builds a seeded model; equal `(config, seed)` give bit-identical parameters.
pub fn build_model<T: Float>(config: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
    config.validate()?;
    let cfg = config;
    let mut store = ParamStore::new();
    let rng = &mut Initializer::new(seed);
    let c0 = cfg.channels(0);
    let stem = Conv::new(&mut store, rng, "stem", 3, c0, 3, Init::He);
    let memory = if cfg.enable_docmemory {
        Some(MemoryStage {
            memory: DocMemoryParams::init(&mut store, rng, c0, cfg.bank_sizes, cfg.sparsity_threshold)?,
            project: Conv::new(&mut store, rng, "memory.project", c0, c0, 1, Init::He),
        })
    } else {
        None
    };
    let last = cfg.levels - 1;
    let mut encoder = Vec::new();
    let mut down = Vec::new();
    for l in 0..last {
        encoder.push(stage(&mut store, rng, cfg, &format!("enc{l}"), l)?);
        let c = cfg.channels(l);
        down.push(Conv::new(&mut store, rng, &format!("down{l}"), 4 * c, 2 * c, 1, Init::He));
    }
    let bottleneck = stage(&mut store, rng, cfg, "bottleneck", last)?;
    let mut up = Vec::new();
    let mut decoder = Vec::new();
    for l in (0..last).rev() {
        let c = cfg.channels(l);
        up.push(Up {
            expand: Conv::new(&mut store, rng, &format!("up{l}"), 2 * c, 4 * c, 1, Init::He),
            fuse: Conv::new(&mut store, rng, &format!("fuse{l}"), 2 * c, c, 1, Init::He),
        });
        decoder.push(stage(&mut store, rng, cfg, &format!("dec{l}"), l)?);
    }
    let head = Conv::new(&mut store, rng, "head", c0, 3, 3, Init::Zero);
    let model = Model {
        config: cfg.clone(),
        stem,
        memory,
        encoder,
        down,
        bottleneck,
        up,
        decoder,
        head,
    };
    Ok((model, store))
}

impl Model {
    /// Unclamped restoration `x + residual(x)` for `x: [B,3,H,W]`.
    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::invalid("model_forward", &s, "expected [B,3,H,W]"));
        }
        self.config.check_input_size(s[2], s[3])?;
        let mut f = self.stem.forward(p, x)?;
        if let Some(m) = &self.memory {
            let mixed = m.memory.forward(p, f)?;
            let mixed = if self.config.memory_residual { f.add(mixed)? } else { mixed };
            f = m.project.forward(p, mixed)?;
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (blocks, down) in self.encoder.iter().zip(&self.down) {
            for b in blocks {
                f = b.forward(p, f)?;
            }
            skips.push(f);
            f = down.forward(p, f.pixel_unshuffle(2)?)?;
        }
        for b in &self.bottleneck {
            f = b.forward(p, f)?;
        }
        for (up, blocks) in self.up.iter().zip(&self.decoder) {
            let skip = skips.pop().expect("one skip per level");
            f = up.expand.forward(p, f)?.pixel_shuffle(2)?;
            f = up.fuse.forward(p, concat(&[f, skip], 1)?)?;
            for b in blocks {
                f = b.forward(p, f)?;
            }
        }
        x.add(self.head.forward(p, f)?)
    }

    /// Value of [`Model::forward`] computed stage by stage, each residual
    /// branch on its own short-lived tape, so peak memory is that of the
    /// largest branch rather than of the whole graph. Bit-identical to
    /// `forward`.
    pub fn infer<T: Float>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::invalid("model_forward", s, "expected [B,3,H,W]"));
        }
        self.config.check_input_size(s[2], s[3])?;
        let mut f = detached(store, &[x], |p, v| self.stem.forward(p, v[0]))?;
        if let Some(m) = &self.memory {
            let residual = self.config.memory_residual;
            f = detached(store, &[&f], |p, v| {
                let mixed = m.memory.forward(p, v[0])?;
                let mixed = if residual { v[0].add(mixed)? } else { mixed };
                m.project.forward(p, mixed)
            })?;
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (blocks, down) in self.encoder.iter().zip(&self.down) {
            for b in blocks {
                f = b.infer(store, &f)?;
            }
            let g = detached(store, &[&f], |p, v| down.forward(p, v[0].pixel_unshuffle(2)?))?;
            skips.push(f);
            f = g;
        }
        for b in &self.bottleneck {
            f = b.infer(store, &f)?;
        }
        for (up, blocks) in self.up.iter().zip(&self.decoder) {
            let skip = skips.pop().expect("one skip per level");
            f = detached(store, &[&f, &skip], |p, v| {
                let g = up.expand.forward(p, v[0])?.pixel_shuffle(2)?;
                up.fuse.forward(p, concat(&[g, v[1]], 1)?)
            })?;
            for b in blocks {
                f = b.infer(store, &f)?;
            }
        }
        detached(store, &[x, &f], |p, v| v[0].add(self.head.forward(p, v[1])?))
    }

    /// Inference on a batch: frozen parameters, output clamped to `[0, 1]`.
    pub fn restore<T: Float>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = self.infer(store, x)?;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(T::zero()).min(T::one()));
        Ok(out)
    }

    /// Blocks in execution order (encoder, bottleneck, decoder).
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.encoder
            .iter()
            .flatten()
            .chain(&self.bottleneck)
            .chain(self.decoder.iter().flatten())
    }

    pub fn docmemory(&self) -> Option<&DocMemoryParams> {
        self.memory.as_ref().map(|m| &m.memory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(cfg: &ModelConfig, seed: u64) -> (Model, ParamStore<f64>) {
        let (model, mut store) = build_model::<f64>(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        (model, store)
    }

    fn image(seed: u64, side: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[2, 3, side, side], |_| rng.random_range(0.0..1.0))
    }

    fn forward_value(model: &Model, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape).unwrap();
        let value = model.forward(&p, tape.constant(x.clone()).unwrap()).unwrap().value();
        (*value).clone()
    }

    #[test]
    fn fresh_model_is_identity() {
        for (dm, srt) in [(true, true), (false, false), (true, false), (false, true)] {
            let cfg = ModelConfig { enable_docmemory: dm, enable_srtransformer: srt, ..ModelConfig::default() };
            let (model, store) = build_model::<f64>(&cfg, 3).unwrap();
            let x = image(1, 32);
            assert_eq!(forward_value(&model, &store, &x), x);
            assert_eq!(model.infer(&store, &x).unwrap(), x);
        }
    }

    #[test]
    fn staged_inference_matches_forward_bitwise() {
        for (dm, srt, residual) in [(true, true, false), (true, true, true), (false, false, false), (true, false, false)] {
            let cfg = ModelConfig {
                enable_docmemory: dm,
                enable_srtransformer: srt,
                memory_residual: residual,
                ..ModelConfig::default()
            };
            let (model, store) = perturbed(&cfg, 5);
            let x = image(2, 32);
            let y = forward_value(&model, &store, &x);
            assert_ne!(y, x);
            assert_eq!(model.infer(&store, &x).unwrap(), y);
        }
    }

    #[test]
    fn output_shape_follows_input() {
        let (model, store) = perturbed(&ModelConfig::default(), 1);
        let x = Tensor::from_fn(&[1, 3, 32, 64], |i| (i % 7) as f64 / 7.0);
        assert_eq!(model.infer(&store, &x).unwrap().shape(), &[1, 3, 32, 64]);
    }

    #[test]
    fn size_multiple_is_enforced() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.size_multiple(), 32);
        let conv_only = ModelConfig { enable_srtransformer: false, ..ModelConfig::default() };
        assert_eq!(conv_only.size_multiple(), 4);
        let (model, store) = build_model::<f64>(&cfg, 0).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 3, 40, 32]);
        assert!(matches!(model.infer(&store, &x), Err(Error::Divisibility { padded_height: 64, .. })));
        let x = Tensor::<f64>::zeros(&[1, 1, 32, 32]);
        assert!(model.infer(&store, &x).is_err());
    }

    #[test]
    fn build_is_deterministic_and_validated() {
        let cfg = ModelConfig::default();
        let (_, a) = build_model::<f32>(&cfg, 9).unwrap();
        let (_, b) = build_model::<f32>(&cfg, 9).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.name == q.name && p.value == q.value));
        let bad = ModelConfig { blocks_per_level: vec![1], ..ModelConfig::default() };
        assert!(matches!(build_model::<f32>(&bad, 0), Err(Error::Config(_))));
        let bad = ModelConfig { base_channels: 6, ..ModelConfig::default() };
        assert!(build_model::<f32>(&bad, 0).is_err());
    }
}
