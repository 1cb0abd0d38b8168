use crate::error::{Error, Result};
use crate::tensor::{kernels, Float, Tensor, Var};

/// Batch layout of a matrix product: (batch, m, k, n, rhs_is_shared).
struct Dims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn product_dims(op: &'static str, a: &[usize], b: &[usize], rhs_transposed: bool) -> Result<Dims> {
    let (batch, m, k) = match a.len() {
        2 => (1, a[0], a[1]),
        3 => (a[0], a[1], a[2]),
        _ => return Err(Error::shape(op, a, b)),
    };
    let (bb, rk, n) = match (b.len(), rhs_transposed) {
        (2, false) => (None, b[0], b[1]),
        (2, true) => (None, b[1], b[0]),
        (3, false) => (Some(b[0]), b[1], b[2]),
        (3, true) => (Some(b[0]), b[2], b[1]),
        _ => return Err(Error::shape(op, a, b)),
    };
    if rk != k {
        return Err(Error::shape(op, a, b));
    }
    match bb {
        Some(bb) if a.len() != 3 || bb != batch => Err(Error::shape(op, a, b)),
        _ => Ok(Dims {
            batch,
            m,
            k,
            n,
            shared_rhs: bb.is_none(),
        }),
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// Matrix product. Accepts `[m,k]·[k,n]`, `[B,m,k]·[B,k,n]` and
    /// `[B,m,k]·[k,n]` (right operand shared across the batch).
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, false)
    }

    /// `self · rhsᵀ` over the last two dimensions, with the same batching rules.
    pub fn matmul_nt(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.product(rhs, true)
    }

    fn product(self, rhs: Var<'t, T>, transposed: bool) -> Result<Var<'t, T>> {
        let op = if transposed { "matmul_nt" } else { "matmul" };
        let a = self.value();
        let b = rhs.value();
        let Dims {
            batch,
            m,
            k,
            n,
            shared_rhs,
        } = product_dims(op, a.shape(), b.shape(), transposed)?;
        let b_stride = if shared_rhs { 0 } else { k * n };
        let mut data = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let ab = &a.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &b.data()[bi * b_stride..bi * b_stride + k * n];
            let ob = &mut data[bi * m * n..(bi + 1) * m * n];
            if transposed {
                kernels::gemm_nt(ab, bb, ob, m, k, n);
            } else {
                kernels::gemm_nn(ab, bb, ob, m, k, n);
            }
        }
        let mut shape = a.shape()[..a.ndim() - 1].to_vec();
        shape.push(n);
        let out = Tensor::new(&shape, data)?;
        let (ia, ib) = (self.id, rhs.id);
        self.tape.push(op, out, &[self, rhs], move |g, sink| {
            if let Some(ga) = sink.slot(ia) {
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let bb = &b.data()[bi * b_stride..bi * b_stride + k * n];
                    let gab = &mut ga[bi * m * k..(bi + 1) * m * k];
                    if transposed {
                        // b is [n,k]
                        kernels::gemm_nn(gb, bb, gab, m, n, k);
                    } else {
                        // b is [k,n]
                        kernels::gemm_nt(gb, bb, gab, m, n, k);
                    }
                }
            }
            if let Some(gbv) = sink.slot(ib) {
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &a.data()[bi * m * k..(bi + 1) * m * k];
                    let gbb = &mut gbv[bi * b_stride..bi * b_stride + k * n];
                    if transposed {
                        // d(rhs)[n,k] += gᵀ[n,m] · a[m,k]
                        kernels::gemm_tn(gb, ab, gbb, n, m, k);
                    } else {
                        // d(rhs)[k,n] += aᵀ[k,m] · g[m,n]
                        kernels::gemm_tn(ab, gb, gbb, k, m, n);
                    }
                }
            }
        })
    }
}
