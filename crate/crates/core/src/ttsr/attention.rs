//! Relevance embedding (hard and soft attention) and texture transfer.

use std::sync::Arc;

use semsr_tensorad::kernels::{self, Window};
use semsr_tensorad::nn::normalize_cols;
use semsr_tensorad::{Element, Graph, Tensor, Var};

use crate::error::{param, shape, Result};

/// Patch size of the relevance embedding.
pub const PATCH: usize = 3;
/// Guards the column normalization against all-zero patches.
pub const NORM_EPS: f64 = 1e-12;

/// `v·w / (‖v‖‖w‖)`.
pub fn cosine_similarity(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() || v.is_empty() {
        return Err(shape(format!(
            "cosine of lengths {} and {}",
            v.len(),
            w.len()
        )));
    }
    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nw == 0.0 {
        return Err(param("cosine similarity of a zero vector"));
    }
    Ok((dot / (nv * nw)).clamp(-1.0, 1.0))
}

/// Hard attention as global column indices into the unfolded key matrix
/// (sample `n`'s patches start at `n·Lk`), and the soft map `[n, 1, h, w]`
/// on the tape.
#[derive(Debug, Clone)]
pub struct Attention {
    pub index: Arc<[usize]>,
    pub s: Var,
    /// Key grid `(h, w)` per sample.
    pub key_dims: (usize, usize),
}

/// Per-sample hard/soft attention of query features `[n, c, h, w]` against
/// key features `[n, c, hk, wk]` over 3×3 stride-1 patches. Ties go to the
/// lowest key index. Gradients flow into `q` and `k` through the soft map.
pub fn attend<T: Element>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Attention> {
    let [n, c, h, w] = g.value(q).dims4("attend")?;
    let [nk, ck, hk, wk] = g.value(k).dims4("attend")?;
    if n != nk || c != ck {
        return Err(shape(format!("query [{n}, {c}, …] vs key [{nk}, {ck}, …]")));
    }
    let win = Window::new(PATCH, 1, PATCH / 2);
    let qu = g.unfold(q, win)?;
    let qn = normalize_cols(g, qu, NORM_EPS)?;
    let ku = g.unfold(k, win)?;
    let kn = normalize_cols(g, ku, NORM_EPS)?;
    let (lq, lk) = (h * w, hk * wk);
    let rows = c * PATCH * PATCH;

    let (qv, kv) = (g.value(qn).data(), g.value(kn).data());
    let mut index = Vec::with_capacity(n * lq);
    for s in 0..n {
        let qs = column_block(qv, rows, n * lq, s * lq, lq);
        let ks = column_block(kv, rows, n * lk, s * lk, lk);
        let (_, _, sim) = kernels::matmul(&ks, [rows, lk], true, &qs, [rows, lq], false);
        let (idx, _) = kernels::argmax_cols(&sim, lk, lq);
        index.extend(idx.into_iter().map(|i| s * lk + i));
    }
    let index: Arc<[usize]> = index.into();
    let picked = g.gather_cols(kn, index.clone())?;
    let prod = g.mul(qn, picked)?;
    let s = g.sum_axis(prod, 0)?;
    let s = g.reshape(s, &[n, 1, h, w])?;
    Ok(Attention {
        index,
        s,
        key_dims: (hk, wk),
    })
}

fn column_block<T: Copy>(x: &[T], rows: usize, cols: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
    }
    out
}

/// Rearranges value features `[n, c, s·hk, s·wk]` by the hard attention,
/// moving `3s × 3s` blocks with stride `s`, into `[n, c, s·h, s·w]`.
/// Overlapping blocks are averaged.
pub fn transfer<T: Element>(
    g: &mut Graph<T>,
    v: Var,
    att: &Attention,
    scale: usize,
    out_hw: (usize, usize),
) -> Result<Var> {
    let [n, c, vh, vw] = g.value(v).dims4("transfer")?;
    let (hk, wk) = att.key_dims;
    if vh != scale * hk || vw != scale * wk {
        return Err(shape(format!(
            "value {vh}×{vw} is not {scale}× the key grid {hk}×{wk}"
        )));
    }
    let (h, w) = out_hw;
    if att.index.len() != n * h * w {
        return Err(shape(format!(
            "{} attention entries for {n}×{h}×{w}",
            att.index.len()
        )));
    }
    let win = Window::new(PATCH * scale, scale, scale);
    let dims = [n, c, scale * h, scale * w];
    let cols = g.unfold(v, win)?;
    let moved = g.gather_cols(cols, att.index.clone())?;
    let summed = g.fold(moved, win, dims)?;
    let count = overlap_count::<T>(dims, win);
    let count = g.constant(count);
    Ok(g.div(summed, count)?)
}

/// How many blocks cover each output pixel.
fn overlap_count<T: Element>(dims: [usize; 4], win: Window) -> Tensor<T> {
    let [n, c, h, w] = dims;
    let oh = win.out_len(h).expect("checked by the caller");
    let ow = win.out_len(w).expect("checked by the caller");
    let ones = vec![T::one(); win.kernel * win.kernel * oh * ow];
    let plane = kernels::fold(&ones, [1, 1, h, w], win);
    Tensor::from_fn(&[n, c, h, w], |i| plane[i % (h * w)])
}

/// Hard and soft attention as plain values, per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    /// Best key patch per query patch, local to the sample, row-major.
    pub h: Vec<Vec<usize>>,
    /// Matching cosine similarity per query patch.
    pub s: Vec<Vec<f64>>,
}

/// Value-level relevance embedding of `q` against `k` (both NCHW).
pub fn relevance_embed(q: &Tensor<f64>, k: &Tensor<f64>) -> Result<AttentionMaps> {
    let mut g = Graph::<f64>::new();
    let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
    let att = attend(&mut g, qv, kv)?;
    let [n, _, h, w] = q.dims4("relevance_embed")?;
    let lk = att.key_dims.0 * att.key_dims.1;
    let lq = h * w;
    let sv = g.value(att.s).data();
    Ok(AttentionMaps {
        h: (0..n)
            .map(|s| {
                att.index[s * lq..(s + 1) * lq]
                    .iter()
                    .map(|i| i - s * lk)
                    .collect()
            })
            .collect(),
        s: (0..n).map(|s| sv[s * lq..(s + 1) * lq].to_vec()).collect(),
    })
}
