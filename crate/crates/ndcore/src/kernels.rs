//! Raw compute kernels over `[batch, channels, length]` buffers.
//!
//! Each convolution routine exists in two flavours: a direct accumulation loop
//! (used for `f64`) and an im2col + GEMM path (used for `f32`). The direct loop
//! accumulates every output as `sum_c sum_k w[o,c,k] * x[c, t*s + k*d]` in that
//! order and adds the bias last.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvGeom {
    fn ck(&self) -> usize {
        self.in_channels * self.kernel
    }
}

pub fn conv_out_len(in_len: usize, kernel: usize, dilation: usize, stride: usize) -> Option<usize> {
    let extent = (kernel - 1) * dilation + 1;
    if extent > in_len || stride == 0 {
        None
    } else {
        Some((in_len - extent) / stride + 1)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let lo = g.out_len;
    for c in 0..g.in_channels {
        let xr = &x[c * g.in_len..(c + 1) * g.in_len];
        for k in 0..g.kernel {
            let row = &mut cols[(c * g.kernel + k) * lo..(c * g.kernel + k + 1) * lo];
            let off = k * g.dilation;
            if g.stride == 1 {
                row.copy_from_slice(&xr[off..off + lo]);
            } else {
                for (t, r) in row.iter_mut().enumerate() {
                    *r = xr[t * g.stride + off];
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let lo = g.out_len;
    for c in 0..g.in_channels {
        let dr = &mut dx[c * g.in_len..(c + 1) * g.in_len];
        for k in 0..g.kernel {
            let row = &cols[(c * g.kernel + k) * lo..(c * g.kernel + k + 1) * lo];
            let off = k * g.dilation;
            for (t, &v) in row.iter().enumerate() {
                let i = t * g.stride + off;
                dr[i] = dr[i] + v;
            }
        }
    }
}

/// Forward convolution (cross-correlation). `y` must be zero-initialised or
/// will be overwritten; shape `[batch, out_channels, out_len]`.
pub fn conv1d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, y: &mut [T]) {
    if T::PREFER_GEMM {
        conv1d_forward_gemm(g, x, w, b, y)
    } else {
        conv1d_forward_direct(g, x, w, b, y)
    }
}

pub fn conv1d_forward_direct<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, y: &mut [T]) {
    let (li, lo) = (g.in_len, g.out_len);
    for n in 0..g.batch {
        let xn = &x[n * g.in_channels * li..(n + 1) * g.in_channels * li];
        for o in 0..g.out_channels {
            let row = &mut y[(n * g.out_channels + o) * lo..(n * g.out_channels + o + 1) * lo];
            row.fill(T::zero());
            for c in 0..g.in_channels {
                let xr = &xn[c * li..(c + 1) * li];
                for k in 0..g.kernel {
                    let wv = w[(o * g.in_channels + c) * g.kernel + k];
                    let off = k * g.dilation;
                    for (t, r) in row.iter_mut().enumerate() {
                        *r = *r + wv * xr[t * g.stride + off];
                    }
                }
            }
            if let Some(b) = b {
                for r in row.iter_mut() {
                    *r = *r + b[o];
                }
            }
        }
    }
}

pub fn conv1d_forward_gemm<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, y: &mut [T]) {
    let (li, lo, ck) = (g.in_len, g.out_len, g.ck());
    let mut cols = vec![T::zero(); ck * lo];
    for n in 0..g.batch {
        let xn = &x[n * g.in_channels * li..(n + 1) * g.in_channels * li];
        im2col(g, xn, &mut cols);
        let yn = &mut y[n * g.out_channels * lo..(n + 1) * g.out_channels * lo];
        T::gemm(
            g.out_channels,
            ck,
            lo,
            T::one(),
            w,
            ck as isize,
            1,
            &cols,
            lo as isize,
            1,
            T::zero(),
            yn,
            lo as isize,
            1,
        );
        if let Some(b) = b {
            for o in 0..g.out_channels {
                for r in &mut yn[o * lo..(o + 1) * lo] {
                    *r = *r + b[o];
                }
            }
        }
    }
}

/// Accumulates gradients of a convolution. Any of `dx`, `dw`, `db` may be
/// skipped by passing `None`.
pub fn conv1d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        let lo = g.out_len;
        for n in 0..g.batch {
            for o in 0..g.out_channels {
                let s: T = dy[(n * g.out_channels + o) * lo..(n * g.out_channels + o + 1) * lo]
                    .iter()
                    .copied()
                    .sum();
                db[o] = db[o] + s;
            }
        }
    }
    if T::PREFER_GEMM {
        conv1d_backward_gemm(g, x, w, dy, dx, dw)
    } else {
        conv1d_backward_direct(g, x, w, dy, dx, dw)
    }
}

pub fn conv1d_backward_direct<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (li, lo) = (g.in_len, g.out_len);
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let dyr = &dy[(n * g.out_channels + o) * lo..(n * g.out_channels + o + 1) * lo];
            for c in 0..g.in_channels {
                let base = (n * g.in_channels + c) * li;
                for k in 0..g.kernel {
                    let wi = (o * g.in_channels + c) * g.kernel + k;
                    let off = k * g.dilation;
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = T::zero();
                        for (t, &d) in dyr.iter().enumerate() {
                            acc = acc + d * x[base + t * g.stride + off];
                        }
                        dw[wi] = dw[wi] + acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[wi];
                        for (t, &d) in dyr.iter().enumerate() {
                            let i = base + t * g.stride + off;
                            dx[i] = dx[i] + wv * d;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv1d_backward_gemm<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (li, lo, ck) = (g.in_len, g.out_len, g.ck());
    let mut cols = vec![T::zero(); ck * lo];
    for n in 0..g.batch {
        let dyn_ = &dy[n * g.out_channels * lo..(n + 1) * g.out_channels * lo];
        if let Some(dw) = dw.as_deref_mut() {
            let xn = &x[n * g.in_channels * li..(n + 1) * g.in_channels * li];
            im2col(g, xn, &mut cols);
            // dW[O, CK] += dY[O, Lo] * cols^T[Lo, CK]
            T::gemm(
                g.out_channels,
                lo,
                ck,
                T::one(),
                dyn_,
                lo as isize,
                1,
                &cols,
                1,
                lo as isize,
                T::one(),
                dw,
                ck as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols[CK, Lo] = W^T[CK, O] * dY[O, Lo]
            T::gemm(
                ck,
                g.out_channels,
                lo,
                T::one(),
                w,
                1,
                ck as isize,
                dyn_,
                lo as isize,
                1,
                T::zero(),
                &mut cols,
                lo as isize,
                1,
            );
            col2im_add(g, &cols, &mut dx[n * g.in_channels * li..(n + 1) * g.in_channels * li]);
        }
    }
}

/// Average pooling over the last axis of `[rows, len]` (rows = batch * channels).
pub fn avg_pool_forward<T: Real>(x: &[T], rows: usize, len: usize, window: usize, stride: usize) -> Vec<T> {
    let lo = (len - window) / stride + 1;
    let inv = T::one() / T::from_usize(window).unwrap();
    let mut y = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        let xr = &x[r * len..(r + 1) * len];
        for t in 0..lo {
            let s: T = xr[t * stride..t * stride + window].iter().copied().sum();
            y.push(s * inv);
        }
    }
    y
}

pub fn avg_pool_backward<T: Real>(dy: &[T], rows: usize, len: usize, window: usize, stride: usize, dx: &mut [T]) {
    let lo = (len - window) / stride + 1;
    let inv = T::one() / T::from_usize(window).unwrap();
    for r in 0..rows {
        for t in 0..lo {
            let g = dy[r * lo + t] * inv;
            for v in &mut dx[r * len + t * stride..r * len + t * stride + window] {
                *v = *v + g;
            }
        }
    }
}

/// Max pooling; returns the pooled values and the flat argmax index of each
/// output (first maximum wins on ties).
pub fn max_pool_forward<T: Real>(
    x: &[T],
    rows: usize,
    len: usize,
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let lo = (len - window) / stride + 1;
    let mut y = Vec::with_capacity(rows * lo);
    let mut arg = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        for t in 0..lo {
            let start = r * len + t * stride;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            y.push(x[best]);
            arg.push(best);
        }
    }
    (y, arg)
}
