//! Raw loops shared by the operators. All of them accumulate into `out`.

use super::Float;

#[inline]
pub fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn sum<T: Float>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let rest = chunks.remainder();
    for x in chunks {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for &x in rest {
        s += x;
    }
    s
}

const NR: usize = 16;

/// Accumulates an `R×NR` block of `out` starting at `(i0, j0)` in registers.
#[inline(always)]
fn tile<T: Float, const R: usize>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    (i0, j0): (usize, usize),
    k: usize,
    n: usize,
) {
    let mut acc = [[T::zero(); NR]; R];
    for p in 0..k {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        for (r, acc_r) in acc.iter_mut().enumerate() {
            let av = a[(i0 + r) * k + p];
            for c in 0..NR {
                acc_r[c] += av * brow[c];
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        let row = &mut out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
        for c in 0..NR {
            row[c] += acc_r[c];
        }
    }
}

fn row_panel<T: Float, const R: usize>(a: &[T], b: &[T], out: &mut [T], i0: usize, k: usize, n: usize) {
    let n_full = n - n % NR;
    for j0 in (0..n_full).step_by(NR) {
        tile::<T, R>(a, b, out, (i0, j0), k, n);
    }
    if n_full < n {
        for r in i0..i0 + R {
            let row = &mut out[r * n + n_full..(r + 1) * n];
            for p in 0..k {
                axpy(a[r * k + p], &b[p * n + n_full..(p + 1) * n], row);
            }
        }
    }
}

/// out[m,n] += a[m,k] · b[k,n]
///
/// Blocks of `out` are accumulated in registers over the whole `k` range.
pub fn gemm_nn<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let mut i0 = 0;
    while i0 + 8 <= m {
        row_panel::<T, 8>(a, b, out, i0, k, n);
        i0 += 8;
    }
    if i0 + 4 <= m {
        row_panel::<T, 4>(a, b, out, i0, k, n);
        i0 += 4;
    }
    while i0 < m {
        row_panel::<T, 1>(a, b, out, i0, k, n);
        i0 += 1;
    }
}

pub fn transpose<T: Float>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    const BS: usize = 32;
    for i0 in (0..rows).step_by(BS) {
        for j0 in (0..cols).step_by(BS) {
            for i in i0..(i0 + BS).min(rows) {
                for j in j0..(j0 + BS).min(cols) {
                    t[j * rows + i] = a[i * cols + j];
                }
            }
        }
    }
    t
}

/// out[m,n] += a[m,k] · b[n,k]ᵀ
pub fn gemm_nt<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if m < 4 {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
        return;
    }
    gemm_nn(a, &transpose(&b[..n * k], n, k), out, m, k, n);
}

/// out[m,n] += a[k,m]ᵀ · b[k,n]
pub fn gemm_tn<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    gemm_nn(&transpose(&a[..k * m], k, m), b, out, m, k, n);
}
