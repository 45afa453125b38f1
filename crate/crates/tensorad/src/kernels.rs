//! Value-level kernels shared by the graph ops and by inference code that
//! does not need a tape.
//!
//! Everything here is deterministic: parallel kernels split the output into
//! disjoint blocks and every output element is reduced in the same order no
//! matter how many threads run.

use rayon::prelude::*;

use crate::element::Element;

const COL_BLOCK: usize = 256;
const K_BLOCK: usize = 128;

/// Geometry of a 2-D convolution window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        if self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Copies `op(x)` into a fresh row-major buffer, where `x` is `rows × cols`.
fn pack<T: Element>(x: &[T], rows: usize, cols: usize, transpose: bool) -> Vec<T> {
    if !transpose {
        return x.to_vec();
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `op(a) · op(b)` where `a` is stored `a_rows × a_cols` and `b` is stored
/// `b_rows × b_cols`. Returns `(m, n, values)`.
///
/// Shapes must already be validated by the caller.
pub fn matmul<T: Element>(
    a: &[T],
    a_dims: [usize; 2],
    ta: bool,
    b: &[T],
    b_dims: [usize; 2],
    tb: bool,
) -> (usize, usize, Vec<T>) {
    let (m, k) = if ta {
        (a_dims[1], a_dims[0])
    } else {
        (a_dims[0], a_dims[1])
    };
    let n = if tb { b_dims[0] } else { b_dims[1] };
    let ap = pack(a, a_dims[0], a_dims[1], ta);
    let bp = pack(b, b_dims[0], b_dims[1], tb);

    let blocks: Vec<usize> = (0..n).step_by(COL_BLOCK).collect();
    let computed: Vec<(usize, usize, Vec<T>)> = blocks
        .par_iter()
        .map(|&j0| {
            let jw = COL_BLOCK.min(n - j0);
            let mut acc = vec![T::zero(); m * jw];
            for k0 in (0..k).step_by(K_BLOCK) {
                let k1 = (k0 + K_BLOCK).min(k);
                for i in 0..m {
                    let arow = &ap[i * k..(i + 1) * k];
                    let crow = &mut acc[i * jw..(i + 1) * jw];
                    for kk in k0..k1 {
                        let av = arow[kk];
                        let brow = &bp[kk * n + j0..kk * n + j0 + jw];
                        for (c, &bv) in crow.iter_mut().zip(brow) {
                            *c = *c + av * bv;
                        }
                    }
                }
            }
            (j0, jw, acc)
        })
        .collect();

    let mut out = vec![T::zero(); m * n];
    for (j0, jw, acc) in computed {
        for i in 0..m {
            out[i * n + j0..i * n + j0 + jw].copy_from_slice(&acc[i * jw..(i + 1) * jw]);
        }
    }
    (m, n, out)
}

/// im2col: `x` is `[n, c, h, w]`; the result is `[c·k·k, n·oh·ow]` with row
/// index `(ci·k + ky)·k + kx` and column index `(ni·oh + oy)·ow + ox`.
/// Out-of-bounds taps read zero.
pub fn unfold<T: Element>(x: &[T], dims: [usize; 4], win: Window) -> (usize, usize, Vec<T>) {
    let [n, c, h, w] = dims;
    let k = win.kernel;
    let oh = win
        .out_len(h)
        .expect("unfold: kernel larger than padded input");
    let ow = win
        .out_len(w)
        .expect("unfold: kernel larger than padded input");
    let l = oh * ow;
    let cols = n * l;
    let mut out = vec![T::zero(); c * k * k * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
        let ci = row / (k * k);
        let ky = (row / k) % k;
        let kx = row % k;
        for ni in 0..n {
            let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            for oy in 0..oh {
                let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                let base = ni * l + oy * ow;
                for ox in 0..ow {
                    let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                    if ix >= 0 && ix < w as isize {
                        dst[base + ox] = src[ix as usize];
                    }
                }
            }
        }
    });
    (c * k * k, cols, out)
}

/// col2im, the adjoint of [`unfold`]: overlapping contributions are summed.
pub fn fold<T: Element>(cols: &[T], dims: [usize; 4], win: Window) -> Vec<T> {
    let [n, c, h, w] = dims;
    let k = win.kernel;
    let oh = win
        .out_len(h)
        .expect("fold: kernel larger than padded output");
    let ow = win
        .out_len(w)
        .expect("fold: kernel larger than padded output");
    let l = oh * ow;
    let ncols = n * l;
    let mut out = vec![T::zero(); n * c * h * w];
    // One output plane per (n, c) pair; every plane gathers from its own k·k rows.
    out.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let ni = plane_idx / c;
            let ci = plane_idx % c;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * ncols + ni * l..row * ncols + (ni + 1) * l];
                    for oy in 0..oh {
                        let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                let dst = &mut plane[iy as usize * w + ix as usize];
                                *dst = *dst + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        });
    out
}

/// `[n, c·r², h, w] -> [n, c, h·r, w·r]`.
pub fn pixel_shuffle<T: Element>(x: &[T], dims: [usize; 4], r: usize) -> Vec<T> {
    let [n, cin, h, w] = dims;
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src_c = co * r * r + i * r + j;
                    let src = &x[(ni * cin + src_c) * h * w..(ni * cin + src_c + 1) * h * w];
                    let dst = &mut out[(ni * c + co) * oh * ow..(ni * c + co + 1) * oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(y * r + i) * ow + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[n, c, h·r, w·r] -> [n, c·r², h, w]`, inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(x: &[T], dims: [usize; 4], r: usize) -> Vec<T> {
    let [n, c, ih, iw] = dims;
    let (h, w) = (ih / r, iw / r);
    let cout = c * r * r;
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * ih * iw..(ni * c + ci + 1) * ih * iw];
            for i in 0..r {
                for j in 0..r {
                    let dst_c = ci * r * r + i * r + j;
                    let dst =
                        &mut out[(ni * cout + dst_c) * h * w..(ni * cout + dst_c + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y * r + i) * iw + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums along the middle axis of an `(outer, len, inner)` view.
pub fn sum_axis<T: Element>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..len {
            let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    out
}

/// Repeats a length-1 middle axis `len` times.
pub fn expand_axis<T: Element>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = &x[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend_from_slice(src);
        }
    }
    out
}

/// `[a, b, l] -> [b, a, l]`.
pub fn swap_leading<T: Element>(x: &[T], a: usize, b: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..a {
        for j in 0..b {
            out[(j * a + i) * l..(j * a + i + 1) * l]
                .copy_from_slice(&x[(i * b + j) * l..(i * b + j + 1) * l]);
        }
    }
    out
}

/// Copies `[outer, start..start+len, inner]` out of an `(outer, total, inner)` view.
pub fn narrow<T: Element>(
    x: &[T],
    outer: usize,
    total: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x[(o * total + start) * inner..(o * total + start + len) * inner]);
    }
    out
}

/// Embeds an `(outer, len, inner)` block at `start` in a zero `(outer, total, inner)` buffer.
pub fn pad_axis<T: Element>(
    x: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    start: usize,
    total: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); outer * total * inner];
    for o in 0..outer {
        out[(o * total + start) * inner..(o * total + start + len) * inner]
            .copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

/// Selects columns of a `rows × cols` matrix.
pub fn gather_cols<T: Element>(x: &[T], rows: usize, cols: usize, idx: &[usize]) -> Vec<T> {
    let q = idx.len();
    let mut out = vec![T::zero(); rows * q];
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * q..(r + 1) * q];
        for (d, &i) in dst.iter_mut().zip(idx) {
            *d = src[i];
        }
    }
    out
}

/// Adjoint of [`gather_cols`]: accumulates the columns of `x` into a
/// `rows × cols` buffer at the positions named by `idx`.
pub fn scatter_cols<T: Element>(x: &[T], rows: usize, cols: usize, idx: &[usize]) -> Vec<T> {
    let q = idx.len();
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let src = &x[r * q..(r + 1) * q];
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (&s, &i) in src.iter().zip(idx) {
            dst[i] = dst[i] + s;
        }
    }
    out
}

/// Column-wise argmax and max of a `rows × cols` matrix. Ties resolve to the
/// lowest row index. This is an index path: it has no gradient.
pub fn argmax_cols<T: Element>(x: &[T], rows: usize, cols: usize) -> (Vec<usize>, Vec<T>) {
    let mut idx = vec![0usize; cols];
    let mut best: Vec<T> = x[..cols].to_vec();
    for r in 1..rows {
        let row = &x[r * cols..(r + 1) * cols];
        for c in 0..cols {
            if row[c] > best[c] {
                best[c] = row[c];
                idx[c] = r;
            }
        }
    }
    (idx, best)
}

/// Pairwise (cascade) summation; the result does not depend on thread count.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if x.len() <= LEAF {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_blocks_match_naive() {
        let (m, k, n) = (5, 300, 700);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13) % 11) as f64 - 5.0).collect();
        let (_, _, c) = matmul(&a, [m, k], false, &b, [k, n], false);
        assert_eq!(c, naive_matmul(&a, m, k, &b, n));
    }

    #[test]
    fn matmul_transpose_flags() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let (_, _, ab) = matmul(&a, [2, 3], false, &b, [3, 2], false);
        assert_eq!(ab, vec![4.0, 5.0, 10.0, 11.0]);
        // (Aᵀ)ᵀ with A stored 3x2 as the transpose.
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let (_, _, ab2) = matmul(&at, [3, 2], true, &b, [3, 2], false);
        assert_eq!(ab2, ab);
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let (_, _, ab3) = matmul(&a, [2, 3], false, &bt, [2, 3], true);
        assert_eq!(ab3, ab);
    }

    #[test]
    fn fold_unfold_identity_with_stride_equal_to_kernel() {
        let dims = [2, 3, 6, 4];
        let x: Vec<f64> = (0..2 * 3 * 6 * 4).map(|v| v as f64).collect();
        let win = Window::new(2, 2, 0);
        let (_, _, cols) = unfold(&x, dims, win);
        assert_eq!(fold(&cols, dims, win), x);
    }

    #[test]
    fn pixel_shuffle_round_trip() {
        let dims = [1, 8, 3, 2];
        let x: Vec<f64> = (0..48).map(|v| v as f64).collect();
        let y = pixel_shuffle(&x, dims, 2);
        assert_eq!(pixel_unshuffle(&y, [1, 2, 6, 4], 2), x);
        // channel 1 of the input lands at (row 0, col 1) of output channel 0
        assert_eq!(y[1], x[6]);
    }

    #[test]
    fn argmax_ties_take_lowest_row() {
        let x = [1.0, 5.0, 1.0, 5.0, 0.0, 5.0];
        let (idx, best) = argmax_cols(&x, 3, 2);
        assert_eq!(idx, vec![0, 0]);
        assert_eq!(best, vec![1.0, 5.0]);
    }
}
