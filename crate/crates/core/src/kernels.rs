//! Forward and adjoint kernels behind the tape operations.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Source indices and weights of output sample `o` when resampling an axis
/// of `n_in` samples to `n_out`, half-pixel centers, edge clamped.
pub(crate) fn bilinear_taps(o: usize, n_out: usize, n_in: usize) -> (usize, usize, f64, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (libm::floor(src) as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let frac = src - i0 as f64;
    (i0, i1, 1.0 - frac, frac)
}

/// Output extent of a convolution along one axis, if the kernel fits.
pub(crate) fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if k > padded {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Range of output columns `ox` for which `ox * stride + k - pad` lands in `[0, n)`.
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n + pad > k { ((n + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Tensor<T> {
    let (p, ck) = (g.oh * g.ow, g.cin * g.kh * g.kw);
    let mut out = vec![T::ZERO; g.n * g.cout * p];
    let mut col = vec![T::ZERO; ck * p];
    for b in 0..g.n {
        im2col(g, &input[b * g.cin * g.h * g.w..][..g.cin * g.h * g.w], &mut col);
        let dst = &mut out[b * g.cout * p..][..g.cout * p];
        for (co, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[co]);
        }
        // out[cout × P] += K[cout × CK] · col[CK × P]
        T::gemm(g.cout, ck, p, kernel, (ck as isize, 1), &col, (p as isize, 1), T::ONE, dst, (p as isize, 1));
    }
    Tensor::from_vec(Shape::nchw(g.n, g.cout, g.oh, g.ow), out).expect("conv output extent")
}

/// Unfolds one image into `[cin·kh·kw, oh·ow]` patch columns, zero padded.
fn im2col<T: Real>(g: &ConvGeometry, src: &[T], col: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        let plane = &src[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                let (lo, hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h || lo >= hi {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..][..g.w];
                    dst[..lo].iter_mut().for_each(|v| *v = T::ZERO);
                    dst[hi..].iter_mut().for_each(|v| *v = T::ZERO);
                    let ix0 = lo * g.stride + kx - g.pad;
                    for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                        *d = src_row[ix0 + j * g.stride];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch columns back into an image.
fn col2im<T: Real>(g: &ConvGeometry, col: &[T], dst: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        let plane = &mut dst[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                let (lo, hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                if lo >= hi {
                    continue;
                }
                let ix0 = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..][..g.w];
                    for (j, &v) in row[oy * g.ow + lo..oy * g.ow + hi].iter().enumerate() {
                        dst_row[ix0 + j * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    want: [bool; 3],
) -> [Option<Vec<T>>; 3] {
    let (p, ck) = (g.oh * g.ow, g.cin * g.kh * g.kw);
    let img = g.cin * g.h * g.w;
    let mut d_in = want[0].then(|| vec![T::ZERO; input.len()]);
    let mut d_k = want[1].then(|| vec![T::ZERO; kernel.len()]);
    let mut d_b = want[2].then(|| vec![T::ZERO; g.cout]);
    let mut col = vec![T::ZERO; ck * p];
    for b in 0..g.n {
        let gout = &grad_out[b * g.cout * p..][..g.cout * p];
        if let Some(db) = d_b.as_mut() {
            for (co, plane) in gout.chunks_exact(p).enumerate() {
                db[co] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = d_k.as_mut() {
            im2col(g, &input[b * img..][..img], &mut col);
            // dK[cout × CK] += dOut[cout × P] · colᵀ[P × CK]
            T::gemm(g.cout, p, ck, gout, (p as isize, 1), &col, (1, p as isize), T::ONE, dk, (ck as isize, 1));
        }
        if let Some(di) = d_in.as_mut() {
            // dcol[CK × P] = Kᵀ[CK × cout] · dOut[cout × P]
            T::gemm(ck, g.cout, p, kernel, (1, ck as isize), gout, (p as isize, 1), T::ZERO, &mut col, (p as isize, 1));
            col2im(g, &col, &mut di[b * img..][..img]);
        }
    }
    [d_in, d_k, d_b]
}

/// 2×2 stride-2 max pooling. Returns the pooled tensor and, per output, the
/// flat input index of the first maximum in row-major window order.
pub(crate) fn maxpool2x_forward<T: Real>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2x_forward<T: Real>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps: Vec<_> = (0..oh).map(|o| bilinear_taps(o, oh, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|o| bilinear_taps(o, ow, w)).collect();
    let mut out = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                let top = wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1];
                let bottom = wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1];
                dst[oy * ow + ox] = wy0 * top + wy1 * bottom;
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Real>(grad: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps: Vec<_> = (0..oh).map(|o| bilinear_taps(o, oh, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|o| bilinear_taps(o, ow, w)).collect();
    let mut out = vec![T::ZERO; planes * h * w];
    for p in 0..planes {
        let g = &grad[p * oh * ow..][..oh * ow];
        let dst = &mut out[p * h * w..][..h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                let gv = g[oy * ow + ox];
                dst[y0 * w + x0] += wy0 * wx0 * gv;
                dst[y0 * w + x1] += wy0 * wx1 * gv;
                dst[y1 * w + x0] += wy1 * wx0 * gv;
                dst[y1 * w + x1] += wy1 * wx1 * gv;
            }
        }
    }
    out
}
