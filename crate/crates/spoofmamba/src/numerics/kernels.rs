//! Raw numeric loops behind the graph ops: matrix products, convolutions,
//! pooling, and reductions over plain slices.
//!
//! Layout is row-major everywhere. Inner loops are written in axpy/dot form
//! over contiguous ranges so they autovectorize. Parallel kernels partition
//! the *output* space (each element is produced by exactly one thread in a
//! fixed sequential order), which keeps results bit-identical for any thread
//! count.

use rayon::prelude::*;

use super::Element;

/// Work threshold below which kernels stay single-threaded.
const PAR_GRAIN: usize = 1 << 16;

/// Dot product over 32 independent accumulator lanes so the reduction both
/// vectorizes despite FP non-associativity and keeps several FMA chains in
/// flight. Deterministic: the lane split is fixed by the data length alone.
#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 32;
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let mut acc = [T::zero(); LANES];
    let (a_chunks, a_rem) = (a.chunks_exact(LANES), a.chunks_exact(LANES).remainder());
    let b_chunks = b.chunks_exact(LANES);
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s = s + v;
    }
    let tail = n - a_rem.len();
    for (av, bv) in a_rem.iter().zip(&b[tail..]) {
        s = s + *av * *bv;
    }
    s
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// Column-tile width keeping the streamed B tile cache-resident in the GEMM.
const GEMM_TILE: usize = 512;

/// c[m,n] = a[m,k] · b[k,n]
///
/// Loop order is column-tile → k → row, so each B tile is streamed once and
/// stays hot while every output row consumes it. Parallelism splits the rows;
/// each row's accumulation order is fixed, so results are thread-count
/// independent.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let run_rows = |i0: usize, c_block: &mut [T]| {
        let rows = c_block.len() / n;
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + GEMM_TILE).min(n);
            for p in 0..k {
                let b_row = &b[p * n + j0..p * n + j1];
                for i in 0..rows {
                    let av = a[(i0 + i) * k + p];
                    if av == T::zero() {
                        continue;
                    }
                    let c_row = &mut c_block[i * n + j0..i * n + j1];
                    for (cj, bj) in c_row.iter_mut().zip(b_row) {
                        *cj = *cj + av * *bj;
                    }
                }
            }
            j0 = j1;
        }
    };
    if m * n * k >= PAR_GRAIN && m >= 8 {
        let rows_per = m.div_ceil(rayon::current_num_threads().max(1)).max(4);
        c.par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(blk, block)| run_rows(blk * rows_per, block));
    } else {
        run_rows(0, &mut c);
    }
    c
}

/// c[m,k] = a[m,n] · b[k,n]ᵀ  (dot of rows; used for grad_a = g·bᵀ)
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for i in 0..m {
        let a_row = &a[i * n..i * n + n];
        for j in 0..k {
            c[i * k + j] = dot(a_row, &b[j * n..j * n + n]);
        }
    }
    c
}

/// c[k,n] = a[m,k]ᵀ · b[m,n]  (used for grad_b = aᵀ·g)
pub fn matmul_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for p in 0..m {
        let b_row = &b[p * n..p * n + n];
        for i in 0..k {
            let av = a[p * k + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..i * n + n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj = *cj + av * *bj;
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// 1-D convolution (cross-correlation convention)
// ---------------------------------------------------------------------------

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(l: usize, kk: usize, stride: usize, pad_l: usize, pad_r: usize) -> usize {
    (l + pad_l + pad_r - kk) / stride + 1
}

/// x: (c_in, l), w: (c_out, c_in/groups, k) → (c_out, l_out).
#[allow(clippy::too_many_arguments)]
pub fn conv1d<T: Element>(
    x: &[T],
    w: &[T],
    c_in: usize,
    l: usize,
    c_out: usize,
    kk: usize,
    stride: usize,
    pad_l: usize,
    pad_r: usize,
    groups: usize,
) -> Vec<T> {
    let l_out = conv1d_out_len(l, kk, stride, pad_l, pad_r);
    let cig = c_in / groups;
    let cog = c_out / groups;
    let mut out = vec![T::zero(); c_out * l_out];

    // Tile the output so the input window and output tile stay L1-resident
    // across the kernel taps.
    const CONV_TILE: usize = 4096;

    let run_out_channel = |co: usize, o_row: &mut [T]| {
        let g = co / cog;
        for cil in 0..cig {
            let ci = g * cig + cil;
            let x_row = &x[ci * l..ci * l + l];
            let w_row = &w[(co * cig + cil) * kk..(co * cig + cil) * kk + kk];
            let mut tile0 = 0usize;
            while tile0 < l_out {
                let tile1 = (tile0 + CONV_TILE).min(l_out);
                for (kidx, &wv) in w_row.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    // valid t: 0 <= t*stride + kidx - pad_l < l
                    let k_off = kidx as isize - pad_l as isize;
                    let t_lo = if k_off >= 0 {
                        0
                    } else {
                        ((-k_off) as usize + stride - 1) / stride
                    }
                    .max(tile0);
                    let t_hi_excl = {
                        let top = l as isize - k_off; // t*stride < top
                        if top <= 0 {
                            0
                        } else {
                            (((top - 1) as usize) / stride + 1).min(l_out)
                        }
                    }
                    .min(tile1);
                    if t_lo >= t_hi_excl {
                        continue;
                    }
                    if stride == 1 {
                        let x_shift = (t_lo as isize + k_off) as usize;
                        let span = t_hi_excl - t_lo;
                        let xs = &x_row[x_shift..x_shift + span];
                        let os = &mut o_row[t_lo..t_lo + span];
                        for (ov, xv) in os.iter_mut().zip(xs) {
                            *ov = *ov + wv * *xv;
                        }
                    } else {
                        for t in t_lo..t_hi_excl {
                            let xi = (t * stride) as isize + k_off;
                            o_row[t] = o_row[t] + wv * x_row[xi as usize];
                        }
                    }
                }
                tile0 = tile1;
            }
        }
    };

    if c_out * l_out * kk * cig >= PAR_GRAIN && c_out > 1 {
        out.par_chunks_mut(l_out)
            .enumerate()
            .for_each(|(co, row)| run_out_channel(co, row));
    } else {
        for (co, row) in out.chunks_mut(l_out).enumerate() {
            run_out_channel(co, row);
        }
    }
    out
}

/// Gradient w.r.t. conv1d weights; g: (c_out, l_out).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_w<T: Element>(
    x: &[T],
    g: &[T],
    c_in: usize,
    l: usize,
    c_out: usize,
    kk: usize,
    stride: usize,
    pad_l: usize,
    pad_r: usize,
    groups: usize,
) -> Vec<T> {
    let l_out = conv1d_out_len(l, kk, stride, pad_l, pad_r);
    let cig = c_in / groups;
    let cog = c_out / groups;
    let mut dw = vec![T::zero(); c_out * cig * kk];

    // Tile over t so the gradient/input windows are reused across all kernel
    // taps from L1 instead of re-streamed per tap.
    const CONV_TILE: usize = 4096;

    let run_out_channel = |co: usize, dw_block: &mut [T]| {
        let gi = co / cog;
        let g_row = &g[co * l_out..co * l_out + l_out];
        for cil in 0..cig {
            let ci = gi * cig + cil;
            let x_row = &x[ci * l..ci * l + l];
            let acc = &mut dw_block[cil * kk..(cil + 1) * kk];
            let mut tile0 = 0usize;
            while tile0 < l_out {
                let tile1 = (tile0 + CONV_TILE).min(l_out);
                for (kidx, av) in acc.iter_mut().enumerate() {
                    let k_off = kidx as isize - pad_l as isize;
                    let t_lo = if k_off >= 0 {
                        0
                    } else {
                        ((-k_off) as usize + stride - 1) / stride
                    }
                    .max(tile0);
                    let t_hi_excl = {
                        let top = l as isize - k_off;
                        if top <= 0 {
                            0
                        } else {
                            (((top - 1) as usize) / stride + 1).min(l_out)
                        }
                    }
                    .min(tile1);
                    if t_lo >= t_hi_excl {
                        continue;
                    }
                    if stride == 1 {
                        let x_shift = (t_lo as isize + k_off) as usize;
                        let span = t_hi_excl - t_lo;
                        *av = *av + dot(&g_row[t_lo..t_lo + span], &x_row[x_shift..x_shift + span]);
                    } else {
                        let mut s = T::zero();
                        for t in t_lo..t_hi_excl {
                            let xi = (t * stride) as isize + k_off;
                            s = s + g_row[t] * x_row[xi as usize];
                        }
                        *av = *av + s;
                    }
                }
                tile0 = tile1;
            }
        }
    };

    if c_out * cig * kk * l_out >= PAR_GRAIN && c_out > 1 {
        dw.par_chunks_mut(cig * kk)
            .enumerate()
            .for_each(|(co, block)| run_out_channel(co, block));
    } else {
        for (co, block) in dw.chunks_mut(cig * kk).enumerate() {
            run_out_channel(co, block);
        }
    }
    dw
}

/// Gradient w.r.t. conv1d input.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_x<T: Element>(
    w: &[T],
    g: &[T],
    c_in: usize,
    l: usize,
    c_out: usize,
    kk: usize,
    stride: usize,
    pad_l: usize,
    pad_r: usize,
    groups: usize,
) -> Vec<T> {
    let l_out = conv1d_out_len(l, kk, stride, pad_l, pad_r);
    let cig = c_in / groups;
    let cog = c_out / groups;
    let mut dx = vec![T::zero(); c_in * l];

    let run_in_channel = |ci: usize, dx_row: &mut [T]| {
        let gi = ci / cig;
        let cil = ci % cig;
        for col in 0..cog {
            let co = gi * cog + col;
            let g_row = &g[co * l_out..co * l_out + l_out];
            let w_row = &w[(co * cig + cil) * kk..(co * cig + cil) * kk + kk];
            for (kidx, &wv) in w_row.iter().enumerate() {
                if wv == T::zero() {
                    continue;
                }
                let k_off = kidx as isize - pad_l as isize;
                let t_lo = if k_off >= 0 {
                    0
                } else {
                    ((-k_off) as usize + stride - 1) / stride
                };
                let t_hi_excl = {
                    let top = l as isize - k_off;
                    if top <= 0 {
                        0
                    } else {
                        (((top - 1) as usize) / stride + 1).min(l_out)
                    }
                };
                if stride == 1 {
                    let x_shift = (t_lo as isize + k_off) as usize;
                    let span = t_hi_excl.saturating_sub(t_lo);
                    let ds = &mut dx_row[x_shift..x_shift + span];
                    for (dv, gv) in ds.iter_mut().zip(&g_row[t_lo..t_lo + span]) {
                        *dv = *dv + wv * *gv;
                    }
                } else {
                    for t in t_lo..t_hi_excl {
                        let xi = ((t * stride) as isize + k_off) as usize;
                        dx_row[xi] = dx_row[xi] + wv * g_row[t];
                    }
                }
            }
        }
    };

    if c_in * l * kk >= PAR_GRAIN && c_in > 1 {
        dx.par_chunks_mut(l)
            .enumerate()
            .for_each(|(ci, row)| run_in_channel(ci, row));
    } else {
        for (ci, row) in dx.chunks_mut(l).enumerate() {
            run_in_channel(ci, row);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// 2-D convolution (stride 1; pooling layers handle downsampling)
//
// Implemented as im2col + GEMM: output rows are h·w wide, so the matrix
// product runs over long contiguous spans instead of clipped image rows.
// ---------------------------------------------------------------------------

/// Patch matrix (c_in·kh·kw, ho·wo) for a stride-1 convolution with zero
/// padding; out-of-range taps stay zero.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    let mut col = vec![T::zero(); c_in * kh * kw * ho * wo];
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for kh_i in 0..kh {
            for kw_i in 0..kw {
                let row_base = ((ci * kh + kh_i) * kw + kw_i) * ho * wo;
                let row = &mut col[row_base..row_base + ho * wo];
                let dy = kh_i as isize - pad as isize;
                let dxo = kw_i as isize - pad as isize;
                let x_lo = (-dxo).max(0) as usize;
                let x_hi = (w as isize - dxo).min(wo as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..ho {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let src = (yy as usize) * w + (x_lo as isize + dxo) as usize;
                    row[y * wo + x_lo..y * wo + x_hi]
                        .copy_from_slice(&plane[src..src + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Scatter-add the patch-matrix gradient back onto the input image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    dcol: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    let mut dx = vec![T::zero(); c_in * h * w];
    for ci in 0..c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for kh_i in 0..kh {
            for kw_i in 0..kw {
                let row_base = ((ci * kh + kh_i) * kw + kw_i) * ho * wo;
                let row = &dcol[row_base..row_base + ho * wo];
                let dy = kh_i as isize - pad as isize;
                let dxo = kw_i as isize - pad as isize;
                let x_lo = (-dxo).max(0) as usize;
                let x_hi = (w as isize - dxo).min(wo as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..ho {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let dst = (yy as usize) * w + (x_lo as isize + dxo) as usize;
                    for (dv, gv) in plane[dst..dst + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&row[y * wo + x_lo..y * wo + x_hi])
                    {
                        *dv = *dv + *gv;
                    }
                }
            }
        }
    }
    dx
}

/// x: (c_in, h, w), k: (c_out, c_in, kh, kw), padding p → (c_out, h', w').
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Element>(
    x: &[T],
    wt: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    if kh == 1 && kw == 1 && pad == 0 {
        return matmul(wt, x, c_out, c_in, h * w);
    }
    let col = im2col(x, c_in, h, w, kh, kw, pad);
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    matmul(wt, &col, c_out, c_in * kh * kw, ho * wo)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_w<T: Element>(
    x: &[T],
    g: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    if kh == 1 && kw == 1 && pad == 0 {
        return matmul_nt(g, x, c_out, ho * wo, c_in);
    }
    let col = im2col(x, c_in, h, w, kh, kw, pad);
    matmul_nt(g, &col, c_out, ho * wo, c_in * kh * kw)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_x<T: Element>(
    wt: &[T],
    g: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    if kh == 1 && kw == 1 && pad == 0 {
        return matmul_tn(wt, g, c_out, c_in, ho * wo);
    }
    let dcol = matmul_tn(wt, g, c_out, c_in * kh * kw, ho * wo);
    col2im(&dcol, c_in, h, w, kh, kw, pad)
}

// ---------------------------------------------------------------------------
// Max pooling (non-overlapping windows, window == stride)
// ---------------------------------------------------------------------------

/// Pool the last axis of a (rows, cols) view with window `w`; returns values
/// and flat argmax indices into the input.
pub fn maxpool_last<T: Element>(x: &[T], rows: usize, cols: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let co = cols / w;
    let mut out = vec![T::zero(); rows * co];
    let mut arg = vec![0u32; rows * co];
    for r in 0..rows {
        let x_row = &x[r * cols..r * cols + cols];
        for j in 0..co {
            let base = j * w;
            let mut best = x_row[base];
            let mut bi = base;
            for o in 1..w {
                if x_row[base + o] > best {
                    best = x_row[base + o];
                    bi = base + o;
                }
            }
            out[r * co + j] = best;
            arg[r * co + j] = (r * cols + bi) as u32;
        }
    }
    (out, arg)
}

/// Pool the (f, t) plane of a (c, f, t) tensor with windows (wf, wt).
#[allow(clippy::too_many_arguments)]
pub fn maxpool_2d<T: Element>(
    x: &[T],
    c: usize,
    f: usize,
    t: usize,
    wf: usize,
    wt: usize,
) -> (Vec<T>, Vec<u32>) {
    let fo = f / wf;
    let to = t / wt;
    let mut out = vec![T::zero(); c * fo * to];
    let mut arg = vec![0u32; c * fo * to];
    for ch in 0..c {
        let plane = &x[ch * f * t..(ch + 1) * f * t];
        for i in 0..fo {
            for j in 0..to {
                let mut best = plane[(i * wf) * t + j * wt];
                let mut bi = (i * wf) * t + j * wt;
                for di in 0..wf {
                    for dj in 0..wt {
                        let idx = (i * wf + di) * t + j * wt + dj;
                        if plane[idx] > best {
                            best = plane[idx];
                            bi = idx;
                        }
                    }
                }
                out[(ch * fo + i) * to + j] = best;
                arg[(ch * fo + i) * to + j] = (ch * f * t + bi) as u32;
            }
        }
    }
    (out, arg)
}

/// Scatter pooled gradients back through saved argmax indices.
pub fn maxpool_backward<T: Element>(g: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (gv, &ai) in g.iter().zip(arg) {
        dx[ai as usize] = dx[ai as usize] + *gv;
    }
    dx
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

/// Decompose a shape around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Sum over one axis.
pub fn sum_axis<T: Element>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let src = (o * len + a) * inner;
            let dst = o * inner;
            for i in 0..inner {
                out[dst + i] = out[dst + i] + x[src + i];
            }
        }
    }
    out
}

pub fn sum_all<T: Element>(x: &[T]) -> T {
    let mut s = T::zero();
    for &v in x {
        s = s + v;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent triple-loop oracle for matrix products.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    // Quadruple-loop oracle for 2-D convolution with zero padding.
    #[allow(clippy::too_many_arguments)]
    fn conv2d_oracle(
        x: &[f64],
        wt: &[f64],
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        pad: usize,
    ) -> Vec<f64> {
        let ho = h + 2 * pad - kh + 1;
        let wo = w + 2 * pad - kw + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        for co in 0..c_out {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        for i in 0..kh {
                            for j in 0..kw {
                                let yy = y as isize + i as isize - pad as isize;
                                let xx = xo as isize + j as isize - pad as isize;
                                if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                                    s += x[(ci * h + yy as usize) * w + xx as usize]
                                        * wt[((co * c_in + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[(co * ho + y) * wo + xo] = s;
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn rand_vec(n: usize, seed: &mut u64) -> Vec<f64> {
        (0..n).map(|_| lcg(seed)).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1.0);
            assert!(
                (x - y).abs() / denom <= tol,
                "mismatch at {i}: {x} vs {y}"
            );
        }
    }

    #[test]
    fn matmul_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let m = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(matmul(&eye, &m, 2, 2, 2), m);
    }

    #[test]
    fn matmul_orthogonal_pick() {
        // [[1,0]]·[[0],[5]] = [[0]]
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 5.0];
        assert_eq!(matmul(&a, &b, 1, 2, 1), vec![0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut seed = 7u64;
        for &(m, k, n) in &[(3usize, 4usize, 2usize), (5, 8, 8), (8, 3, 7), (1, 6, 1)] {
            let a = rand_vec(m * k, &mut seed);
            let b = rand_vec(k * n, &mut seed);
            assert_close(&matmul(&a, &b, m, k, n), &matmul_oracle(&a, &b, m, k, n), 1e-12);
        }
    }

    #[test]
    fn matmul_transposed_variants_match_oracle() {
        let mut seed = 11u64;
        let (m, k, n) = (4usize, 5usize, 6usize);
        let a = rand_vec(m * k, &mut seed);
        let b = rand_vec(k * n, &mut seed);
        let g = rand_vec(m * n, &mut seed);
        // grad_a = g·bᵀ
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        assert_close(
            &matmul_nt(&g, &b, m, n, k),
            &matmul_oracle(&g, &bt, m, n, k),
            1e-12,
        );
        // grad_b = aᵀ·g
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        assert_close(
            &matmul_tn(&a, &g, m, k, n),
            &matmul_oracle(&at, &g, k, m, n),
            1e-12,
        );
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = vec![1.0, 2.0, 3.0];
        let w = vec![1.0];
        assert_eq!(conv1d(&x, &w, 1, 3, 1, 1, 1, 0, 0, 1), x);
    }

    #[test]
    fn conv1d_centered_delta_with_padding() {
        let x = vec![1.0, 2.0, 3.0];
        let w = vec![0.0, 1.0, 0.0];
        assert_eq!(conv1d(&x, &w, 1, 3, 1, 3, 1, 1, 1, 1), x);
    }

    #[test]
    fn conv1d_hand_example_stride2() {
        let x = vec![1.0, 1.0, 1.0, 1.0];
        let w = vec![1.0, 1.0];
        assert_eq!(conv1d(&x, &w, 1, 4, 1, 2, 2, 0, 0, 1), vec![2.0, 2.0]);
    }

    #[test]
    fn conv1d_grouped_matches_per_group_convs() {
        let mut seed = 3u64;
        let (c, l, k) = (4usize, 9usize, 3usize);
        let x = rand_vec(c * l, &mut seed);
        let w = rand_vec(c * k, &mut seed); // depthwise: groups = c
        let full = conv1d(&x, &w, c, l, c, k, 1, 2, 0, c);
        let lo = conv1d_out_len(l, k, 1, 2, 0);
        for ch in 0..c {
            let single = conv1d(&x[ch * l..(ch + 1) * l], &w[ch * k..(ch + 1) * k], 1, l, 1, k, 1, 2, 0, 1);
            assert_close(&full[ch * lo..(ch + 1) * lo], &single, 1e-12);
        }
    }

    #[test]
    fn conv2d_one_by_one_identity() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let w = vec![1.0];
        assert_eq!(conv2d(&x, &w, 1, 2, 2, 1, 1, 1, 0), x);
    }

    #[test]
    fn conv2d_all_ones_sum() {
        let x = vec![1.0; 4];
        let w = vec![1.0; 4];
        assert_eq!(conv2d(&x, &w, 1, 2, 2, 1, 2, 2, 0), vec![4.0]);
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let mut seed = 19u64;
        let (ci, h, w, co, kk) = (1usize, 4usize, 4usize, 1usize, 3usize);
        let x = rand_vec(ci * h * w, &mut seed);
        let wt = rand_vec(co * ci * kk * kk, &mut seed);
        assert_close(
            &conv2d(&x, &wt, ci, h, w, co, kk, kk, 1),
            &conv2d_oracle(&x, &wt, ci, h, w, co, kk, kk, 1),
            1e-12,
        );
        // multi-channel case up to extent 8
        let (ci, h, w, co) = (3usize, 8usize, 7usize, 4usize);
        let x = rand_vec(ci * h * w, &mut seed);
        let wt = rand_vec(co * ci * kk * kk, &mut seed);
        assert_close(
            &conv2d(&x, &wt, ci, h, w, co, kk, kk, 1),
            &conv2d_oracle(&x, &wt, ci, h, w, co, kk, kk, 1),
            1e-12,
        );
    }

    #[test]
    fn maxpool_argmax_roundtrip() {
        let x = vec![1.0, 5.0, 2.0, 0.0, -1.0, 3.0];
        let (v, a) = maxpool_last(&x, 1, 6, 3);
        assert_eq!(v, vec![5.0, 3.0]);
        assert_eq!(a, vec![1, 5]);
        let dx = maxpool_backward(&[10.0, 20.0], &a, 6);
        assert_eq!(dx, vec![0.0, 10.0, 0.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn sum_axis_matches_manual() {
        // shape (2,3): sum axis 0 -> len 3, axis 1 -> len 2
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(sum_axis(&x, &[2, 3], 0), vec![5.0, 7.0, 9.0]);
        assert_eq!(sum_axis(&x, &[2, 3], 1), vec![6.0, 15.0]);
    }
}
