//! Untaped array kernels shared by [`super::Tensor`] and the tape.

use super::{NumericsError, Result, Scalar};

pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 {
        return Err(NumericsError::shape(
            "matmul",
            format!("expected rank-2 operands, got {a:?} and {b:?}"),
        ));
    }
    if a[1] != b[0] {
        return Err(NumericsError::shape(
            "matmul",
            format!("inner dimensions disagree: {a:?} x {b:?}"),
        ));
    }
    Ok((a[0], a[1], b[1]))
}

pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    gemm(a, b, m, k, n, false, false)
}

/// `op(A) · op(B)` where `op(A)` is `m×k` and `op(B)` is `k×n`.
/// A transposed operand is stored in its untransposed row-major layout.
pub fn gemm<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    gemm_acc(a, b, &mut c, m, k, n, trans_a, trans_b);
    c
}

/// Accumulating form of [`gemm`]: `C += op(A) · op(B)`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc<S: Scalar>(
    a: &[S],
    b: &[S],
    c: &mut [S],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == S::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (cj, &bj) in row.iter_mut().zip(brow) {
                        *cj = *cj + aip * bj;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for (&x, &y) in arow.iter().zip(brow) {
                        acc = acc + x * y;
                    }
                    c[i * n + j] = c[i * n + j] + acc;
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    if api == S::zero() {
                        continue;
                    }
                    let row = &mut c[i * n..(i + 1) * n];
                    for (cj, &bj) in row.iter_mut().zip(brow) {
                        *cj = *cj + api * bj;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = S::zero();
                    for p in 0..k {
                        acc = acc + a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] = c[i * n + j] + acc;
                }
            }
        }
    }
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax<S: Scalar>(x: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = S::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = S::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                sum = sum + e;
            }
            for j in 0..len {
                y[base + j * inner] = y[base + j * inner] / sum;
            }
        }
    }
    y
}

/// Vector-Jacobian product of softmax: `dx = y ⊙ (dy − Σ dy⊙y)` along `axis`.
pub fn softmax_backward<S: Scalar>(y: &[S], dy: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = S::zero();
            for j in 0..len {
                let idx = base + j * inner;
                dot = dot + dy[idx] * y[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (dy[idx] - dot);
            }
        }
    }
    dx
}

pub fn check_permutation(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(NumericsError::shape(
            "permute",
            format!("{axes:?} is not a permutation of rank {rank}"),
        ));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(NumericsError::shape(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        seen[a] = true;
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `axes[i]`.
pub fn permute<S: Scalar>(x: &[S], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<S>) {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.len() {
        out.push(x[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Normalizes each row of length `width`; returns `(y, inv_std)`.
pub fn layer_norm<S: Scalar>(x: &[S], width: usize, eps: S) -> (Vec<S>, Vec<S>) {
    let rows = x.len() / width;
    let w = S::from_usize_lossy(width);
    let mut y = vec![S::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<S>() / w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / w;
        let rs = S::one() / (var + eps).sqrt();
        for (o, &v) in y[r * width..(r + 1) * width].iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        inv_std.push(rs);
    }
    (y, inv_std)
}

pub fn layer_norm_backward<S: Scalar>(y: &[S], inv_std: &[S], dy: &[S], width: usize) -> Vec<S> {
    let w = S::from_usize_lossy(width);
    let mut dx = vec![S::zero(); y.len()];
    for (r, &rs) in inv_std.iter().enumerate() {
        let yr = &y[r * width..(r + 1) * width];
        let dyr = &dy[r * width..(r + 1) * width];
        let mean_dy = dyr.iter().copied().sum::<S>() / w;
        let mean_dy_y = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum::<S>() / w;
        for ((o, &yv), &g) in dx[r * width..(r + 1) * width].iter_mut().zip(yr).zip(dyr) {
            *o = rs * (g - mean_dy - yv * mean_dy_y);
        }
    }
    dx
}
