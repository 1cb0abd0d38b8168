use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{axis_split, kernels, Float, Tensor, Var};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

/// `rhs` may be a single element or match a trailing slice of `lhs`
/// (broadcast over leading dimensions).
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    lhs == rhs
        || rhs.iter().product::<usize>() == 1
        || (rhs.len() < lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs)
}

pub(crate) fn gelu_scalar<T: Float>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

// Fallible arithmetic (shape checks) cannot implement the std operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Float> Var<'t, T> {
    fn binary(self, rhs: Var<'t, T>, kind: Binary) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = rhs.value();
        if !broadcastable(a.shape(), b.shape()) {
            return Err(Error::shape(kind.name(), a.shape(), b.shape()));
        }
        let nb = b.numel();
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<T> = match kind {
            Binary::Add => ad.iter().enumerate().map(|(i, &x)| x + bd[i % nb]).collect(),
            Binary::Sub => ad.iter().enumerate().map(|(i, &x)| x - bd[i % nb]).collect(),
            Binary::Mul => ad.iter().enumerate().map(|(i, &x)| x * bd[i % nb]).collect(),
            Binary::Div => ad.iter().enumerate().map(|(i, &x)| x / bd[i % nb]).collect(),
        };
        let out = Tensor::new(a.shape(), data)?;
        let (ia, ib) = (self.id, rhs.id);
        self.tape.push(kind.name(), out, &[self, rhs], move |g, sink| {
            let (ad, bd) = (a.data(), b.data());
            if let Some(ga) = sink.slot(ia) {
                match kind {
                    Binary::Add | Binary::Sub => kernels::axpy(T::one(), g, ga),
                    Binary::Mul => {
                        for (i, (ga, &g)) in ga.iter_mut().zip(g).enumerate() {
                            *ga += g * bd[i % nb];
                        }
                    }
                    Binary::Div => {
                        for (i, (ga, &g)) in ga.iter_mut().zip(g).enumerate() {
                            *ga += g / bd[i % nb];
                        }
                    }
                }
            }
            if let Some(gb) = sink.slot(ib) {
                for (i, &g) in g.iter().enumerate() {
                    let j = i % nb;
                    gb[j] += match kind {
                        Binary::Add => g,
                        Binary::Sub => -g,
                        Binary::Mul => g * ad[i],
                        Binary::Div => -g * ad[i] / (bd[j] * bd[j]),
                    };
                }
            }
        })
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Add)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Sub)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Mul)
    }

    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Div)
    }

    /// Elementwise `a·x + c` with constant `a`, `c`.
    pub fn affine(self, a: f64, c: f64) -> Result<Var<'t, T>> {
        let (a, c) = (T::of(a), T::of(c));
        let x = self.value();
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| a * v + c).collect())?;
        let id = self.id;
        self.tape.push("affine", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                kernels::axpy(a, g, gx);
            }
        })
    }

    pub fn scale(self, a: f64) -> Result<Var<'t, T>> {
        self.affine(a, 0.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t, T>> {
        self.affine(1.0, c)
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.affine(-1.0, 0.0)
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.mul(self)
    }

    /// Elementwise map with a derivative expressed through input and output.
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())?;
        let y = Rc::new(out.clone());
        let id = self.id;
        self.tape.push(op, out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (((gx, &g), &xv), &yv) in gx.iter_mut().zip(g).zip(x.data()).zip(y.data()) {
                    *gx += g * df(xv, yv);
                }
            }
        })
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// Exact (erf-based) GELU: `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        self.unary("gelu", gelu_scalar, |x, _| gelu_grad(x))
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |v| v.exp(), |_, y| y)
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.numel();
        let out = Tensor::scalar(kernels::sum(x.data()));
        let id = self.id;
        self.tape.push("sum", out, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                let g0 = g[0];
                gx[..n].iter_mut().for_each(|v| *v += g0);
            }
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::invalid("mean", &self.shape(), "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Multiplies every slice along `axis` by the matching entry of `v`.
    pub fn mul_axis(self, v: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = v.value();
        if axis >= x.ndim() || w.numel() != x.shape()[axis] {
            return Err(Error::shape("mul_axis", x.shape(), w.shape()));
        }
        let (outer, dim, inner) = axis_split(x.shape(), axis);
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for d in 0..dim {
                let s = (o * dim + d) * inner;
                let wd = w.data()[d];
                data[s..s + inner].iter_mut().for_each(|v| *v *= wd);
            }
        }
        let out = Tensor::new(x.shape(), data)?;
        let (ix, iv) = (self.id, v.id);
        self.tape.push("mul_axis", out, &[self, v], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                for o in 0..outer {
                    for d in 0..dim {
                        let s = (o * dim + d) * inner;
                        kernels::axpy(w.data()[d], &g[s..s + inner], &mut gx[s..s + inner]);
                    }
                }
            }
            if let Some(gv) = sink.slot(iv) {
                for o in 0..outer {
                    for (d, acc) in gv.iter_mut().enumerate() {
                        let s = (o * dim + d) * inner;
                        *acc += kernels::dot(&g[s..s + inner], &x.data()[s..s + inner]);
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, Tensor};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn add_small_vectors() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0])).unwrap();
        let b = tape.constant(t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1], &[0.0])).unwrap();
        assert_eq!(a.sigmoid().unwrap().item(), 0.5);
    }

    #[test]
    fn broadcast_rejects_non_suffix_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::<f64>::zeros(&[2])).unwrap();
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn broadcast_over_leading_dimension_accumulates_gradient() {
        let tape = Tape::new();
        let a = tape.param(Tensor::<f64>::zeros(&[3, 2])).unwrap();
        let b = tape.param(t(&[2], &[1.0, 2.0])).unwrap();
        let loss = a.add(b).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let g = tape.backward(x.square().unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_finite_output_is_rejected_in_debug_builds() {
        if !cfg!(debug_assertions) {
            return;
        }
        let tape = Tape::new();
        let x = tape.constant(t(&[1], &[1000.0])).unwrap();
        assert!(matches!(
            x.exp(),
            Err(crate::error::Error::NonFinite { op: "exp" })
        ));
        assert!(tape.constant(t(&[1], &[f64::NAN])).is_err());
    }
}
