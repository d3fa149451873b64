//! Slice-level forward and backward kernels behind the graph operations.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + kj - pad`
/// falls inside the image.
fn valid_span(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let lo = g.padding.saturating_sub(kj).min(g.out_w);
    let hi = (g.width + g.padding).saturating_sub(kj).min(g.out_w).max(lo);
    (lo, hi)
}

/// Unfolds one sample `[C,H,W]` into `[C·kH·kW, H'·W']` columns.
fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let p = g.out_len();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(g, kj);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        if lo < hi {
                            let start = (lo + kj) - g.padding;
                            out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *o = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `[C,H,W]`.
fn col2im_add<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let p = g.out_len();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(g, kj);
                        if lo < hi {
                            let start = (lo + kj) - g.padding;
                            let row = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                            for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let (p, k) = (g.out_len(), g.patch_len());
    let mut out = vec![T::zero(); g.batch * g.filters * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..g.batch {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let on = &mut out[n * g.filters * p..(n + 1) * g.filters * p];
        for (f, row) in on.chunks_mut(p).enumerate() {
            row.fill(bias[f]);
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(
            g.filters,
            k,
            p,
            kernel,
            (k as isize, 1),
            cols_ref,
            (p as isize, 1),
            on,
            true,
        );
    }
    out
}

/// Returns `(d_input, d_kernel, d_bias)`; entries are only computed when
/// requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    d_out: &[T],
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (p, k) = (g.out_len(), g.patch_len());
    let mut dx = want.0.then(|| vec![T::zero(); g.batch * g.in_len()]);
    let mut dk = want.1.then(|| vec![T::zero(); g.filters * k]);
    let mut db = want.2.then(|| vec![T::zero(); g.filters]);
    let mut cols = vec![T::zero(); k * p];
    for n in 0..g.batch {
        let don = &d_out[n * g.filters * p..(n + 1) * g.filters * p];
        if let Some(db) = db.as_mut() {
            for (f, row) in don.chunks(p).enumerate() {
                db[f] = db[f] + row.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
            let cols_ref: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // dK[F,K] += dOut[F,P] · colsᵀ[P,K]
            T::gemm(
                g.filters,
                p,
                k,
                don,
                (p as isize, 1),
                cols_ref,
                (1, p as isize),
                dk,
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
            if g.is_pointwise() {
                T::gemm(
                    k,
                    g.filters,
                    p,
                    kernel,
                    (1, k as isize),
                    don,
                    (p as isize, 1),
                    dxn,
                    true,
                );
            } else {
                // dCols[K,P] = Kᵀ[K,F] · dOut[F,P]
                T::gemm(
                    k,
                    g.filters,
                    p,
                    kernel,
                    (1, k as isize),
                    don,
                    (p as isize, 1),
                    &mut cols,
                    false,
                );
                col2im_add(g, &cols, dxn);
            }
        }
    }
    (dx, dk, db)
}

/// 2×2 stride-2 max pooling over `[N·C, H, W]` planes. Returns the pooled
/// values and, for each, the flat input index of the winning element (first
/// in row-major order on ties).
pub(crate) fn maxpool2_forward<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    x: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                let o = 2 * y * ow + 2 * xx;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(planes: usize, h: usize, w: usize, d_out: &[T]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &d_out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                let o = 2 * y * ow + 2 * xx;
                dx[pl * h * w + y * w + xx] = src[o] + src[o + 1] + src[o + ow] + src[o + ow + 1];
            }
        }
    }
    dx
}
