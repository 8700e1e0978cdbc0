//! Slice-level kernels behind the tape ops. Reductions accumulate in `f64`.

use crate::error::{Error, Result};

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `input` viewed at the rank of `out`; zero on broadcast axes.
fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..input.len()).rev() {
        strides[i + offset] = if input[i] == 1 { 0 } else { acc };
        acc *= input[i];
    }
    strides
}

/// Calls `f(big_index, small_offset)` for every element of `big`, where
/// `small` broadcasts to `big`.
pub fn visit_broadcast(small: &[usize], big: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = big.len();
    let n: usize = big.iter().product();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let strides = broadcast_strides(small, big);
    let last = big[rank - 1];
    let ls = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut off = 0usize;
    let mut flat = 0usize;
    for _ in 0..n / last {
        for j in 0..last {
            f(flat, off + j * ls);
            flat += 1;
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < big[d] {
                break;
            }
            off -= strides[d] * big[d];
            idx[d] = 0;
        }
    }
}

pub fn binary_broadcast(
    a: &[f32],
    a_shape: &[usize],
    b: &[f32],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f32, f32) -> f32,
) -> Vec<f32> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 && a_shape == out_shape {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    if a_shape == out_shape {
        visit_broadcast(b_shape, out_shape, |i, o| out[i] = f(a[i], b[o]));
        return out;
    }
    if b_shape == out_shape {
        visit_broadcast(a_shape, out_shape, |i, o| out[i] = f(a[o], b[i]));
        return out;
    }
    let mut a_off = Vec::with_capacity(n);
    visit_broadcast(a_shape, out_shape, |_, o| a_off.push(o));
    visit_broadcast(b_shape, out_shape, |i, o| out[i] = f(a[a_off[i]], b[o]));
    out
}

/// Sums a gradient of `big` shape down to the broadcast source shape `small`.
pub fn reduce_to_shape(g: &[f32], big: &[usize], small: &[usize]) -> Vec<f32> {
    if big == small {
        return g.to_vec();
    }
    let n: usize = small.iter().product();
    let mut acc = vec![0.0f64; n];
    visit_broadcast(small, big, |i, o| acc[o] += g[i] as f64);
    acc.into_iter().map(|v| v as f32).collect()
}

/// Repeats `g` (shape `small`) over the broadcast axes of `big`.
pub fn expand(g: &[f32], small: &[usize], big: &[usize]) -> Vec<f32> {
    let n: usize = big.iter().product();
    let mut out = vec![0.0; n];
    visit_broadcast(small, big, |i, o| out[i] = g[o]);
    out
}

/// Column block width for the axpy-form products; keeps an output strip in L1.
const COL_BLOCK: usize = 512;

/// `C[m×n] = A[m×k] · B[k×n]`, row-major.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            let c_blk = &mut c_row[j0..j1];
            for (p, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (s, &bv) in c_blk.iter_mut().zip(&b[p * n + j0..p * n + j1]) {
                    *s += av * bv;
                }
            }
        }
    }
    c
}

/// `C[m×n] = A[m×k] · B[n×k]ᵀ`, both operands row-major.
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0f32; m * n];
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (dst, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
            *dst = dot(a_row, b_row);
        }
    }
    c
}

/// `C[m×n] = A[k×m]ᵀ · B[k×n]`, both operands row-major.
pub fn matmul_at(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for (i, c_row) in c.chunks_exact_mut(n).enumerate() {
            let c_blk = &mut c_row[j0..j1];
            for p in 0..k {
                let av = a[p * m + i];
                if av == 0.0 {
                    continue;
                }
                for (s, &bv) in c_blk.iter_mut().zip(&b[p * n + j0..p * n + j1]) {
                    *s += av * bv;
                }
            }
        }
    }
    c
}

/// Dot product with eight independent partial sums so the loop vectorizes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Output positions `o` whose input index `o·stride + k − pad` lies in `0..len`.
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    lo..hi.max(lo)
}

/// Geometry of a strided, zero-padded 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

fn out_extent(op: &'static str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(Error::shape(
            op,
            format!("extent {len} with kernel {k}, stride {stride}, pad {pad} is not integral"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

impl ConvGeom {
    /// Geometry for `conv2d(x[B,Cin,H,W], k[Cout,Cin,kh,kw])`.
    pub fn forward(
        x: &[usize],
        k: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::shape("conv2d", format!("need rank-4 input and kernel, got {x:?}, {k:?}")));
        }
        if x[1] != k[1] {
            return Err(Error::shape("conv2d", format!("input channels {} vs kernel {}", x[1], k[1])));
        }
        let oh = out_extent("conv2d", x[2], k[2], stride, pad)?;
        let ow = out_extent("conv2d", x[3], k[3], stride, pad)?;
        Ok(Self {
            batch: x[0],
            in_ch: x[1],
            h: x[2],
            w: x[3],
            out_ch: k[0],
            kh: k[2],
            kw: k[3],
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Geometry of the conv2d whose adjoint is `conv_transpose2d(y, k)`:
    /// the transpose maps `[B, k0, oh, ow]` to `[B, k1, h, w]`.
    pub fn transpose(y: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if y.len() != 4 || k.len() != 4 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("need rank-4 input and kernel, got {y:?}, {k:?}"),
            ));
        }
        if y[1] != k[0] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input channels {} vs kernel {}", y[1], k[0]),
            ));
        }
        let full_h = (y[2] - 1) * stride + k[2];
        let full_w = (y[3] - 1) * stride + k[3];
        if stride == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::shape("conv_transpose2d", "padding exceeds output extent"));
        }
        Ok(Self {
            batch: y[0],
            in_ch: k[1],
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            out_ch: k[0],
            kh: k[2],
            kw: k[3],
            stride,
            pad,
            oh: y[2],
            ow: y[3],
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `x[B,Cin,H,W]` into columns `[Cin·kh·kw, B·oh·ow]`.
pub fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let p = g.out_pixels();
    let cols_n = g.batch * p;
    let mut cols = vec![0.0f32; g.patch_len() * cols_n];
    for ki in 0..g.kh {
        let rows = valid_range(g.oh, g.h, ki, g.stride, g.pad);
        for kj in 0..g.kw {
            let xs = valid_range(g.ow, g.w, kj, g.stride, g.pad);
            if xs.is_empty() {
                continue;
            }
            for c in 0..g.in_ch {
                let r = (c * g.kh + ki) * g.kw + kj;
                for b in 0..g.batch {
                    let plane = &x[(b * g.in_ch + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut cols[r * cols_n + b * p..][..p];
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ki - g.pad;
                        let src = &plane[iy * g.w..][..g.w];
                        let row = &mut dst[oy * g.ow..][..g.ow];
                        let x0 = xs.start * g.stride + kj - g.pad;
                        let dst = &mut row[xs.clone()];
                        if g.stride == 1 {
                            dst.copy_from_slice(&src[x0..x0 + xs.len()]);
                        } else {
                            let src = &src[x0..x0 + (xs.len() - 1) * g.stride + 1];
                            for (t, d) in dst.iter_mut().enumerate() {
                                *d = src[t * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back to `[B,Cin,H,W]`.
pub fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let p = g.out_pixels();
    let cols_n = g.batch * p;
    let mut x = vec![0.0f32; g.batch * g.in_ch * g.h * g.w];
    for ki in 0..g.kh {
        let rows = valid_range(g.oh, g.h, ki, g.stride, g.pad);
        for kj in 0..g.kw {
            let xs = valid_range(g.ow, g.w, kj, g.stride, g.pad);
            if xs.is_empty() {
                continue;
            }
            for c in 0..g.in_ch {
                let r = (c * g.kh + ki) * g.kw + kj;
                for b in 0..g.batch {
                    let plane = &mut x[(b * g.in_ch + c) * g.h * g.w..][..g.h * g.w];
                    let src = &cols[r * cols_n + b * p..][..p];
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ki - g.pad;
                        let dst = &mut plane[iy * g.w..][..g.w];
                        let row = &src[oy * g.ow..][..g.ow];
                        let x0 = xs.start * g.stride + kj - g.pad;
                        let src = &row[xs.clone()];
                        if g.stride == 1 {
                            for (d, &v) in dst[x0..x0 + src.len()].iter_mut().zip(src) {
                                *d += v;
                            }
                        } else {
                            let dst = &mut dst[x0..x0 + (src.len() - 1) * g.stride + 1];
                            for (t, &v) in src.iter().enumerate() {
                                dst[t * g.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, P]` → `[C, B·P]`.
pub fn batch_to_channel_major(t: &[f32], batch: usize, ch: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for c in 0..ch {
            out[c * batch * p + b * p..][..p].copy_from_slice(&t[(b * ch + c) * p..][..p]);
        }
    }
    out
}

/// `[C, B·P]` → `[B, C, P]`.
pub fn channel_to_batch_major(t: &[f32], batch: usize, ch: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for c in 0..ch {
            out[(b * ch + c) * p..][..p].copy_from_slice(&t[c * batch * p + b * p..][..p]);
        }
    }
    out
}

pub fn conv2d_forward(x: &[f32], k: &[f32], g: &ConvGeom) -> Vec<f32> {
    let cols = im2col(x, g);
    let out = matmul(k, &cols, g.out_ch, g.patch_len(), g.batch * g.out_pixels());
    channel_to_batch_major(&out, g.batch, g.out_ch, g.out_pixels())
}

/// Gradients of `conv2d` with respect to input and kernel; each is only
/// computed when requested.
pub fn conv2d_backward(
    x: &[f32],
    k: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let bp = g.batch * g.out_pixels();
    let gm = batch_to_channel_major(dy, g.batch, g.out_ch, g.out_pixels());
    let dk = want_k.then(|| matmul_bt(&gm, &im2col(x, g), g.out_ch, bp, g.patch_len()));
    let dx = want_x.then(|| col2im(&matmul_at(k, &gm, g.patch_len(), g.out_ch, bp), g));
    (dx, dk)
}

/// `conv_transpose2d(y, k)` with `g` from [`ConvGeom::transpose`].
pub fn conv_transpose2d_forward(y: &[f32], k: &[f32], g: &ConvGeom) -> Vec<f32> {
    let ym = batch_to_channel_major(y, g.batch, g.out_ch, g.out_pixels());
    let cols = matmul_at(k, &ym, g.patch_len(), g.out_ch, g.batch * g.out_pixels());
    col2im(&cols, g)
}

pub fn conv_transpose2d_backward(
    y: &[f32],
    k: &[f32],
    dout: &[f32],
    g: &ConvGeom,
    want_y: bool,
    want_k: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let bp = g.batch * g.out_pixels();
    let dcols = im2col(dout, g);
    let dy = want_y.then(|| {
        let dym = matmul(k, &dcols, g.out_ch, g.patch_len(), bp);
        channel_to_batch_major(&dym, g.batch, g.out_ch, g.out_pixels())
    });
    let dk = want_k.then(|| {
        let ym = batch_to_channel_major(y, g.batch, g.out_ch, g.out_pixels());
        matmul_bt(&ym, &dcols, g.out_ch, bp, g.patch_len())
    });
    (dy, dk)
}
