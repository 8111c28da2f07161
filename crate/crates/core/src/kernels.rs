//! Raw forward/backward kernels over flat `(B, C, H, W)` buffers.

use alloc::vec;
use alloc::vec::Vec;

/// Geometry of a 2-D convolution with square kernel and symmetric zero padding.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn cols_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index touched is bounded by the slice lengths, which the
    // callers size from the same geometry passed here.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kk = g.cols_rows();
    let mut out = vec![0.0; g.batch * g.cout * n];
    let mut cols = vec![0.0; kk * n];
    let in_item = g.cin * g.h * g.w;
    for b in 0..g.batch {
        im2col(g, &x[b * in_item..(b + 1) * in_item], &mut cols);
        let o = &mut out[b * g.cout * n..(b + 1) * g.cout * n];
        if let Some(bias) = bias {
            for (co, chunk) in o.chunks_mut(n).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        gemm(g.cout, kk, n, weight, (kk as isize, 1), &cols, (n as isize, 1), 1.0, o);
    }
    out
}

/// Accumulates gradients of a convolution into whichever of `dx`, `dw`, `db`
/// are requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kk = g.cols_rows();
    let in_item = g.cin * g.h * g.w;
    let mut cols = vec![0.0; kk * n];
    for b in 0..g.batch {
        let dout_b = &dout[b * g.cout * n..(b + 1) * g.cout * n];
        if let Some(db) = db.as_deref_mut() {
            for (co, chunk) in dout_b.chunks(n).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, &x[b * in_item..(b + 1) * in_item], &mut cols);
            // dW[cout×kk] += dout[cout×n] · colsᵀ[n×kk]
            gemm(g.cout, n, kk, dout_b, (n as isize, 1), &cols, (1, n as isize), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols[kk×n] = Wᵀ[kk×cout] · dout[cout×n]
            gemm(kk, g.cout, n, weight, (1, kk as isize), dout_b, (n as isize, 1), 0.0, &mut cols);
            col2im(g, &cols, &mut dx[b * in_item..(b + 1) * in_item]);
        }
    }
}

/// Per-plane standardization. Returns the output and `1/sqrt(var + eps)` per plane.
pub(crate) fn instance_norm_forward(x: &[f64], planes: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let size = x.len() / planes;
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; planes];
    for p in 0..planes {
        let src = &x[p * size..(p + 1) * size];
        let mean = src.iter().sum::<f64>() / size as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / size as f64;
        let inv = 1.0 / libm::sqrt(var + eps);
        inv_std[p] = inv;
        for (o, v) in out[p * size..(p + 1) * size].iter_mut().zip(src) {
            *o = (v - mean) * inv;
        }
    }
    (out, inv_std)
}

pub(crate) fn instance_norm_backward(y: &[f64], inv_std: &[f64], dy: &[f64], dx: &mut [f64]) {
    let planes = inv_std.len();
    let size = y.len() / planes;
    for p in 0..planes {
        let r = p * size..(p + 1) * size;
        let (yp, dyp) = (&y[r.clone()], &dy[r.clone()]);
        let mean_dy = dyp.iter().sum::<f64>() / size as f64;
        let mean_dyy = dyp.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / size as f64;
        for ((d, &g), &yv) in dx[r].iter_mut().zip(dyp).zip(yp) {
            *d += inv_std[p] * (g - mean_dy - yv * mean_dyy);
        }
    }
}

/// Source taps of half-pixel bilinear resampling along one axis:
/// `(i0, i1, weight_of_i1)` per output index.
pub(crate) fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn resize_bilinear_forward(
    x: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(
    dy: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    dx: &mut [f64],
) {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    for p in 0..planes {
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                d[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                d[y0 * w + x1] += v * (1.0 - ly) * lx;
                d[y1 * w + x0] += v * ly * (1.0 - lx);
                d[y1 * w + x1] += v * ly * lx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], wt: &[f64]) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut out = vec![0.0; g.batch * g.cout * ho * wo];
        for b in 0..g.batch {
            for co in 0..g.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                        acc += x[((b * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize]
                                            * wt[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                    }
                                }
                            }
                        }
                        out[((b * g.cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        for &(k, stride, pad) in &[(3, 1, 1), (4, 2, 1), (7, 1, 3), (3, 2, 1)] {
            let g = ConvGeom { batch: 2, cin: 3, h: 9, w: 8, cout: 4, k, stride, pad };
            let x: Vec<f64> = (0..2 * 3 * 9 * 8).map(|i| libm::sin(i as f64 * 0.37)).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|i| libm::cos(i as f64 * 0.11)).collect();
            let fast = conv2d_forward(&g, &x, &wt, None);
            let slow = naive_conv(&g, &x, &wt);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bilinear_eight_to_one_samples_centre_quad() {
        let taps = bilinear_taps(8, 1);
        assert_eq!(taps, vec![(3, 4, 0.5)]);
    }
}
