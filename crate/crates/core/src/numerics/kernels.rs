//! Slice-level kernels behind the tape primitives. All layouts are NCHW,
//! row-major, and every loop runs in a fixed order.

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2};

use super::Scalar;

/// `c = op(a) · op(b) + beta · c` with `op(a)` of size `m × k` and `op(b)` of size `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) {
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(S::one(), &a, &b, beta, &mut c);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize) -> Self {
        let pad = kernel / 2;
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            out_width: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// A 1×1 stride-1 convolution reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

pub(crate) fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, cols: &mut [S]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad() as isize);
    let npix = g.out_pixels();
    for ci in 0..g.channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.width as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeom, dx: &mut [S]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad() as isize);
    let npix = g.out_pixels();
    for ci in 0..g.channels {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch; returns `[n, out_channels, oh, ow]` data.
pub(crate) fn conv2d_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    g: &ConvGeom,
    weight: &[S],
    out_channels: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let in_len = g.channels * g.height * g.width;
    let npix = g.out_pixels();
    let mut out = vec![S::zero(); batch * out_channels * npix];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); g.patch_len() * npix]
    };
    for n in 0..batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let yn = &mut out[n * out_channels * npix..(n + 1) * out_channels * npix];
        let colsn: &[S] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(false, false, out_channels, npix, g.patch_len(), weight, colsn, S::zero(), yn);
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                for v in &mut yn[o * npix..(o + 1) * npix] {
                    *v = *v + bo;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dw: Option<Vec<S>>,
    pub db: Option<Vec<S>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Scalar>(
    x: &[S],
    batch: usize,
    g: &ConvGeom,
    weight: &[S],
    out_channels: usize,
    dy: &[S],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<S> {
    let in_len = g.channels * g.height * g.width;
    let npix = g.out_pixels();
    let plen = g.patch_len();
    let mut dx = need_dx.then(|| vec![S::zero(); batch * in_len]);
    let mut dw = need_dw.then(|| vec![S::zero(); out_channels * plen]);
    let mut db = need_db.then(|| vec![S::zero(); out_channels]);
    let mut cols = vec![S::zero(); if need_dw && !g.is_pointwise() { plen * npix } else { 0 }];
    let mut dcols = vec![S::zero(); if need_dx { plen * npix } else { 0 }];
    for n in 0..batch {
        let dyn_ = &dy[n * out_channels * npix..(n + 1) * out_channels * npix];
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let colsn: &[S] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, g, &mut cols);
                &cols
            };
            gemm(false, true, out_channels, plen, npix, dyn_, colsn, S::one(), dw);
        }
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                let mut s = S::zero();
                for &v in &dyn_[o * npix..(o + 1) * npix] {
                    s = s + v;
                }
                *acc = *acc + s;
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm(true, false, plen, npix, out_channels, weight, dyn_, S::zero(), dxn);
            } else {
                gemm(true, false, plen, npix, out_channels, weight, dyn_, S::zero(), &mut dcols);
                col2im_add(&dcols, g, dxn);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub(crate) fn upsample2x_forward<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<S: Scalar>(dy: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let a = src[(2 * y) * ow + 2 * x];
                let b = src[(2 * y) * ow + 2 * x + 1];
                let c = src[(2 * y + 1) * ow + 2 * x];
                let d = src[(2 * y + 1) * ow + 2 * x + 1];
                dst[y * w + x] = ((a + b) + c) + d;
            }
        }
    }
    dx
}

/// Per-(sample, group) statistics saved by the group-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct GroupStats<S> {
    pub mean: Vec<S>,
    pub rstd: Vec<S>,
}

pub(crate) fn group_norm_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[S],
    beta: &[S],
    eps: S,
) -> (Vec<S>, GroupStats<S>) {
    let cpg = channels / groups;
    let glen = cpg * spatial;
    let count = S::of(glen as f64);
    let mut out = vec![S::zero(); x.len()];
    let mut stats = GroupStats {
        mean: Vec::with_capacity(batch * groups),
        rstd: Vec::with_capacity(batch * groups),
    };
    for n in 0..batch {
        for gi in 0..groups {
            let base = (n * channels + gi * cpg) * spatial;
            let seg = &x[base..base + glen];
            let mut sum = S::zero();
            for &v in seg {
                sum = sum + v;
            }
            let mean = sum / count;
            let mut var = S::zero();
            for &v in seg {
                let d = v - mean;
                var = var + d * d;
            }
            let var = var / count;
            let rstd = S::one() / (var + eps).sqrt();
            stats.mean.push(mean);
            stats.rstd.push(rstd);
            for c in 0..cpg {
                let ch = gi * cpg + c;
                let (gm, bt) = (gamma[ch], beta[ch]);
                let off = base + c * spatial;
                for i in 0..spatial {
                    out[off + i] = (x[off + i] - mean) * rstd * gm + bt;
                }
            }
        }
    }
    (out, stats)
}

pub(crate) struct GroupNormGrads<S> {
    pub dx: Vec<S>,
    pub dgamma: Vec<S>,
    pub dbeta: Vec<S>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[S],
    stats: &GroupStats<S>,
) -> GroupNormGrads<S> {
    let cpg = channels / groups;
    let glen = cpg * spatial;
    let count = S::of(glen as f64);
    let mut dx = vec![S::zero(); x.len()];
    let mut dgamma = vec![S::zero(); channels];
    let mut dbeta = vec![S::zero(); channels];
    for n in 0..batch {
        for gi in 0..groups {
            let idx = n * groups + gi;
            let (mean, rstd) = (stats.mean[idx], stats.rstd[idx]);
            let base = (n * channels + gi * cpg) * spatial;
            let mut sum_dxh = S::zero();
            let mut sum_dxh_xh = S::zero();
            for c in 0..cpg {
                let ch = gi * cpg + c;
                let off = base + c * spatial;
                let mut dg = S::zero();
                let mut dbt = S::zero();
                for i in 0..spatial {
                    let xh = (x[off + i] - mean) * rstd;
                    let g = dy[off + i];
                    dg = dg + g * xh;
                    dbt = dbt + g;
                    let dxh = g * gamma[ch];
                    sum_dxh = sum_dxh + dxh;
                    sum_dxh_xh = sum_dxh_xh + dxh * xh;
                }
                dgamma[ch] = dgamma[ch] + dg;
                dbeta[ch] = dbeta[ch] + dbt;
            }
            let m1 = sum_dxh / count;
            let m2 = sum_dxh_xh / count;
            for c in 0..cpg {
                let ch = gi * cpg + c;
                let off = base + c * spatial;
                for i in 0..spatial {
                    let xh = (x[off + i] - mean) * rstd;
                    let dxh = dy[off + i] * gamma[ch];
                    dx[off + i] = rstd * (dxh - m1 - xh * m2);
                }
            }
        }
    }
    GroupNormGrads { dx, dgamma, dbeta }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}
