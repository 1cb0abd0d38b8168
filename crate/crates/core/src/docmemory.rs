//! Hierarchical prototype memory.
//!
//! Each bank is an `N×C` matrix of learnable prototypes. A query feature is
//! compared with every prototype by cosine similarity, the similarities are
//! turned into weights by a softmax, weights below a threshold are dropped
//! and the survivors renormalized, and the read-out is the weighted sum of
//! prototypes. Three banks (part, instance, semantic) are read in sequence,
//! each consuming the previous read-out, and ProtoMix blends the three
//! read-outs with learnable convex weights.

use std::fmt;

use crate::error::{Error, Result};
use crate::params::{Bound, Initializer, ParamId, ParamStore};
use crate::tensor::{Float, Var};

/// Guard used when normalizing features and prototypes.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryLevel {
    Part,
    Instance,
    Semantic,
}

impl fmt::Display for MemoryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryLevel::Part => "part",
            MemoryLevel::Instance => "instance",
            MemoryLevel::Semantic => "semantic",
        })
    }
}

/// One prototype bank. `items` refers to an `N×C` parameter.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub level: MemoryLevel,
    pub items: ParamId,
    pub size: usize,
    pub dim: usize,
    /// Sparsification threshold λ, within `[0, 1/size]`.
    pub threshold: f64,
}

/// Default threshold `1/(2N)`: the largest softmax weight is at least `1/N`,
/// so it always survives.
pub fn default_threshold(size: usize) -> f64 {
    1.0 / (2.0 * size as f64)
}

impl MemoryBank {
    /// Adds a bank with unit-norm random rows to `store`.
    pub fn init<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        level: MemoryLevel,
        size: usize,
        dim: usize,
        threshold: Option<f64>,
    ) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Config(format!("{level} bank needs N ≥ 1 and C ≥ 1")));
        }
        let threshold = threshold.unwrap_or_else(|| default_threshold(size));
        check_threshold(threshold, size)?;
        let items = store.add(format!("{prefix}.{level}"), init.unit_rows(size, dim));
        Ok(MemoryBank {
            level,
            items,
            size,
            dim,
            threshold,
        })
    }
}

fn check_threshold(lambda: f64, size: usize) -> Result<()> {
    if !(0.0..=1.0 / size as f64).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "sparsity threshold {lambda} outside [0, 1/{size}]"
        )));
    }
    Ok(())
}

fn check_dims<T: Float>(f: &Var<'_, T>, bank: &Var<'_, T>) -> Result<()> {
    let (fs, bs) = (f.shape(), bank.shape());
    if fs.len() != 2 || bs.len() != 2 || fs[1] != bs[1] {
        return Err(Error::shape("memory", &fs, &bs));
    }
    Ok(())
}

/// `d(fᵢ, mⱼ) = fᵢ·mⱼ / (‖fᵢ‖‖mⱼ‖)` for features `[L,C]` and bank `[N,C]`; result `[L,N]`.
pub fn cosine_similarity<'t, T: Float>(f: Var<'t, T>, bank: Var<'t, T>) -> Result<Var<'t, T>> {
    check_dims(&f, &bank)?;
    let fn_ = f.l2_normalize(1, COSINE_EPS)?;
    let mn = bank.l2_normalize(1, COSINE_EPS)?;
    fn_.matmul_nt(mn)
}

/// Softmax over cosine similarities followed by threshold-and-renormalize.
pub fn address_memory<'t, T: Float>(f: Var<'t, T>, bank: Var<'t, T>, lambda: f64) -> Result<Var<'t, T>> {
    let n = bank.shape().first().copied().unwrap_or(0);
    check_threshold(lambda, n.max(1))?;
    let weights = cosine_similarity(f, bank)?.softmax(1)?;
    if lambda > 0.0 {
        weights.sparsify_renorm(lambda, 1)
    } else {
        Ok(weights)
    }
}

/// Weighted sum of prototypes, `yᵢ = Σⱼ sᵢⱼ mⱼ`; result `[L,C]`.
pub fn read_memory<'t, T: Float>(f: Var<'t, T>, bank: Var<'t, T>, lambda: f64) -> Result<Var<'t, T>> {
    address_memory(f, bank, lambda)?.matmul(bank)
}

/// Read-outs of the three levels, each shaped like the input feature map.
pub struct HierarchyOutput<'t, T: Float> {
    pub part: Var<'t, T>,
    pub instance: Var<'t, T>,
    pub semantic: Var<'t, T>,
}

fn to_rows<'t, T: Float>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::invalid("docmemory", &s, "expected [B,C,H,W]"));
    }
    x.permute(&[0, 2, 3, 1])?.reshape(&[s[0] * s[2] * s[3], s[1]])
}

fn from_rows<'t, T: Float>(rows: Var<'t, T>, s: &[usize]) -> Result<Var<'t, T>> {
    rows.reshape(&[s[0], s[2], s[3], s[1]])?.permute(&[0, 3, 1, 2])
}

/// Chained reads over every spatial position of `x: [B,C,H,W]`.
///
/// `banks` and `thresholds` are ordered part, instance, semantic.
pub fn docmemory_forward<'t, T: Float>(
    x: Var<'t, T>,
    banks: [Var<'t, T>; 3],
    thresholds: [f64; 3],
) -> Result<HierarchyOutput<'t, T>> {
    let s = x.shape();
    let rows = to_rows(x)?;
    let part = read_memory(rows, banks[0], thresholds[0])?;
    let instance = read_memory(part, banks[1], thresholds[1])?;
    let semantic = read_memory(instance, banks[2], thresholds[2])?;
    Ok(HierarchyOutput {
        part: from_rows(part, &s)?,
        instance: from_rows(instance, &s)?,
        semantic: from_rows(semantic, &s)?,
    })
}

/// ProtoMix weights `(σ(w), (1−σ(w))/2, (1−σ(w))/2)` for (semantic, instance, part).
pub fn protomix_coefficients(w: f64) -> [f64; 3] {
    let s = 1.0 / (1.0 + (-w).exp());
    let rest = 0.5 - 0.5 * s;
    [s, rest, rest]
}

/// `σ(w)·y_sem + (1−σ(w))/2·y_ins + (1−σ(w))/2·y_part`, with `w` a one-element variable.
pub fn protomix<'t, T: Float>(
    part: Var<'t, T>,
    instance: Var<'t, T>,
    semantic: Var<'t, T>,
    w: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (sp, si, ss) = (part.shape(), instance.shape(), semantic.shape());
    if sp != si || si != ss {
        return Err(Error::shape("protomix", &sp, &ss));
    }
    if w.numel() != 1 {
        return Err(Error::shape("protomix", &[1], &w.shape()));
    }
    let w = w.reshape(&[1])?;
    let sem_coef = w.sigmoid()?;
    let side_coef = sem_coef.affine(-0.5, 0.5)?;
    semantic
        .mul(sem_coef)?
        .add(instance.mul(side_coef)?)?
        .add(part.mul(side_coef)?)
}

/// Parameters of the full three-level memory with ProtoMix.
#[derive(Clone, Debug)]
pub struct DocMemoryParams {
    pub part: MemoryBank,
    pub instance: MemoryBank,
    pub semantic: MemoryBank,
    pub mix_weight: ParamId,
}

impl DocMemoryParams {
    pub fn init<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        dim: usize,
        sizes: [usize; 3],
        threshold: Option<f64>,
    ) -> Result<Self> {
        let part = MemoryBank::init(store, init, "memory", MemoryLevel::Part, sizes[0], dim, threshold)?;
        let instance =
            MemoryBank::init(store, init, "memory", MemoryLevel::Instance, sizes[1], dim, threshold)?;
        let semantic =
            MemoryBank::init(store, init, "memory", MemoryLevel::Semantic, sizes[2], dim, threshold)?;
        let mix_weight = store.add("memory.mix_weight", crate::tensor::Tensor::zeros(&[1]));
        Ok(DocMemoryParams {
            part,
            instance,
            semantic,
            mix_weight,
        })
    }

    pub fn hierarchy<'t, T: Float>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<HierarchyOutput<'t, T>> {
        let c = x.shape().get(1).copied().unwrap_or(0);
        if c != self.part.dim {
            return Err(Error::shape("docmemory", &x.shape(), &[self.part.size, self.part.dim]));
        }
        docmemory_forward(
            x,
            [
                bound.get(self.part.items),
                bound.get(self.instance.items),
                bound.get(self.semantic.items),
            ],
            [self.part.threshold, self.instance.threshold, self.semantic.threshold],
        )
    }

    /// Hierarchy read followed by ProtoMix: `y_mix`.
    pub fn forward<'t, T: Float>(&self, bound: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.hierarchy(bound, x)?;
        protomix(h.part, h.instance, h.semantic, bound.get(self.mix_weight))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn rows<'t>(tape: &'t Tape<f64>, r: usize, c: usize, v: &[f64]) -> Var<'t, f64> {
        tape.constant(Tensor::from_f64(&[r, c], v).unwrap()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let tape = Tape::new();
        let f = rows(&tape, 2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let m = rows(&tape, 2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let d = cosine_similarity(f, m).unwrap().value();
        assert!((d.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(d.data()[1], 0.0);
        assert!((d.data()[2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let tape = Tape::new();
        let f = rows(&tape, 1, 3, &[1.0, 0.0, 0.0]);
        let m = rows(&tape, 1, 2, &[1.0, 0.0]);
        assert!(matches!(cosine_similarity(f, m), Err(Error::ShapeMismatch { .. })));
        assert!(read_memory(f, m, 0.0).is_err());
    }

    #[test]
    fn addressing_examples() {
        let tape = Tape::new();
        // equal similarities
        let f = rows(&tape, 1, 2, &[1.0, 0.0]);
        let m = rows(&tape, 3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let s = address_memory(f, m, 0.0).unwrap().value();
        assert!(s.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        // d = [1, 0]
        let m = rows(&tape, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = address_memory(f, m, 0.0).unwrap().value();
        assert!((s.data()[0] - 0.7311).abs() < 1e-4 && (s.data()[1] - 0.2689).abs() < 1e-4);
        // threshold above 1/N is rejected
        assert!(address_memory(f, m, 0.6).is_err());
    }

    #[test]
    fn single_item_bank_returns_its_prototype() {
        let tape = Tape::new();
        let f = rows(&tape, 3, 2, &[1.0, 2.0, -3.0, 0.5, 0.0, 1.0]);
        let m = rows(&tape, 1, 2, &[0.3, -0.7]);
        let y = read_memory(f, m, 0.5).unwrap().value();
        for r in y.data().chunks(2) {
            assert_eq!(r, &[0.3, -0.7]);
        }
    }

    #[test]
    fn duplicate_prototypes_collapse() {
        let tape = Tape::new();
        let f = rows(&tape, 2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let m = rows(&tape, 2, 2, &[0.6, 0.8, 0.6, 0.8]);
        let y = read_memory(f, m, 0.25).unwrap().value();
        for r in y.data().chunks(2) {
            assert!((r[0] - 0.6).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_match_gets_largest_weight() {
        let tape = Tape::new();
        let n = 4;
        let f = rows(&tape, 1, 4, &[0.0, 0.0, 1.0, 0.0]);
        let eye = Tensor::<f64>::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let m = tape.constant(eye).unwrap();
        let s = address_memory(f, m, default_threshold(n)).unwrap().value();
        let best = s.data()[2];
        assert!(s.data().iter().enumerate().all(|(j, &v)| j == 2 || v < best));
        let y = read_memory(f, m, default_threshold(n)).unwrap().value();
        assert!(y.data()[2] > y.data()[0] && y.data()[2] > y.data()[1] && y.data()[2] > y.data()[3]);
    }

    #[test]
    fn protomix_coefficient_examples() {
        assert_eq!(protomix_coefficients(0.0), [0.5, 0.25, 0.25]);
        let c = protomix_coefficients(4f64.ln());
        assert!((c[0] - 0.8).abs() < 1e-15 && (c[1] - 0.1).abs() < 1e-15 && (c[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn protomix_of_equal_inputs_is_identity() {
        let tape = Tape::new();
        let y = tape
            .constant(Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| (i as f64).cos()))
            .unwrap();
        for w in [-3.0, 0.0, 0.7, 5.0] {
            let wv = tape.constant(Tensor::scalar(w)).unwrap();
            let out = protomix(y, y, y, wv).unwrap();
            assert!(out.value().max_abs_diff(&y.value()) < 1e-15);
        }
    }

    #[test]
    fn protomix_rejects_mismatched_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[1, 2, 2, 2])).unwrap();
        let b = tape.constant(Tensor::<f64>::zeros(&[1, 2, 2, 1])).unwrap();
        let w = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert!(protomix(a, a, b, w).is_err());
    }
}
