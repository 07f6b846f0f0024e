//! im2col-based convolution kernels shared by the forward and backward rules.

use crate::scalar::{gemm, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Visits every (patch row, output position, input offset) triple whose
    /// input position lies inside the unpadded image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w) = (self.height as isize, self.width as isize);
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let src = (c * self.height + iy as usize) * self.width + ix as usize;
                            f(row, oy * self.out_w + ox, src);
                        }
                    }
                }
            }
        }
    }
}

/// Batched column matrices are `(patch_len, N·out_len)`: sample `n` owns
/// columns `n·out_len .. (n+1)·out_len`.
fn im2col_batch<T: Real>(g: &Geometry, batch: usize, images: &[T]) -> Vec<T> {
    let (il, ol) = (g.image_len(), g.out_len());
    let ld = batch * ol;
    let mut cols = vec![T::zero(); g.patch_len() * ld];
    for n in 0..batch {
        let image = &images[n * il..(n + 1) * il];
        let off = n * ol;
        g.for_each_tap(|row, o, src| cols[row * ld + off + o] = image[src]);
    }
    cols
}

fn col2im_batch<T: Real>(g: &Geometry, batch: usize, cols: &[T], images: &mut [T]) {
    let (il, ol) = (g.image_len(), g.out_len());
    let ld = batch * ol;
    for n in 0..batch {
        let image = &mut images[n * il..(n + 1) * il];
        let off = n * ol;
        g.for_each_tap(|row, o, src| image[src] += cols[row * ld + off + o]);
    }
}

/// `(N, F, L)` → `(F, N·L)`.
fn to_channel_major<T: Real>(x: &[T], batch: usize, filters: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for f in 0..filters {
            let src = (n * filters + f) * len;
            let dst = f * batch * len + n * len;
            out[dst..dst + len].copy_from_slice(&x[src..src + len]);
        }
    }
    out
}

/// `(F, N·L)` → `(N, F, L)`.
fn to_batch_major<T: Real>(x: &[T], batch: usize, filters: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for f in 0..filters {
            let src = f * batch * len + n * len;
            let dst = (n * filters + f) * len;
            out[dst..dst + len].copy_from_slice(&x[src..src + len]);
        }
    }
    out
}

/// `x (N, C, H, W)` ⋆ `w (F, C, kh, kw)` → `(N, F, out_h, out_w)`.
pub(crate) fn conv2d_forward<T: Real>(g: &Geometry, batch: usize, filters: usize, x: &[T], w: &[T]) -> Vec<T> {
    let (pl, ol) = (g.patch_len(), g.out_len());
    let cols = im2col_batch(g, batch, x);
    let mut out = vec![T::zero(); filters * batch * ol];
    gemm(false, false, filters, pl, batch * ol, w, &cols, T::zero(), &mut out);
    to_batch_major(&out, batch, filters, ol)
}

/// Gradients of [`conv2d_forward`] with respect to its input and weights.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    g: &Geometry,
    batch: usize,
    filters: usize,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (pl, ol) = (g.patch_len(), g.out_len());
    let go = to_channel_major(grad_out, batch, filters, ol);
    let gw = want_w.then(|| {
        let cols = im2col_batch(g, batch, x);
        let mut gw = vec![T::zero(); w.len()];
        gemm(false, true, filters, batch * ol, pl, &go, &cols, T::zero(), &mut gw);
        gw
    });
    let gx = want_x.then(|| {
        let mut cols = vec![T::zero(); pl * batch * ol];
        gemm(true, false, pl, filters, batch * ol, w, &go, T::zero(), &mut cols);
        let mut gx = vec![T::zero(); batch * g.image_len()];
        col2im_batch(g, batch, &cols, &mut gx);
        gx
    });
    (gx, gw)
}

/// Adjoint of [`conv2d_forward`] in its input: `x (N, F, out_h, out_w)` with
/// `w (F, C, kh, kw)` → `(N, C, H, W)` where `g` describes the forward conv.
pub(crate) fn conv_transpose_forward<T: Real>(g: &Geometry, batch: usize, filters: usize, x: &[T], w: &[T]) -> Vec<T> {
    let (pl, ol) = (g.patch_len(), g.out_len());
    let xr = to_channel_major(x, batch, filters, ol);
    let mut cols = vec![T::zero(); pl * batch * ol];
    gemm(true, false, pl, filters, batch * ol, w, &xr, T::zero(), &mut cols);
    let mut out = vec![T::zero(); batch * g.image_len()];
    col2im_batch(g, batch, &cols, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward<T: Real>(
    g: &Geometry,
    batch: usize,
    filters: usize,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (pl, ol) = (g.patch_len(), g.out_len());
    let cols = im2col_batch(g, batch, grad_out);
    let gw = want_w.then(|| {
        let xr = to_channel_major(x, batch, filters, ol);
        let mut gw = vec![T::zero(); w.len()];
        gemm(false, true, filters, batch * ol, pl, &xr, &cols, T::zero(), &mut gw);
        gw
    });
    let gx = want_x.then(|| {
        let mut gx = vec![T::zero(); filters * batch * ol];
        gemm(false, false, filters, pl, batch * ol, w, &cols, T::zero(), &mut gx);
        to_batch_major(&gx, batch, filters, ol)
    });
    (gx, gw)
}
