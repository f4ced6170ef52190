//! Array kernels behind the tape ops.
//!
//! Convolutions run as im2col/col2im plus one matrix product. Parallel work
//! is split into fixed-size chunks so results are bit-identical no matter
//! how many worker threads execute them.

use ndarray::{Array2, Array4, ArrayD, ArrayView2, ArrayView4, ArrayViewMut2, Axis, Ix2, Ix4, IxDyn};
use rayon::prelude::*;

/// Row-chunk size for parallel matrix products. Fixed so the partition (and
/// therefore every accumulation order) does not depend on thread count.
const MM_CHUNK: usize = 256;

pub fn matmul(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    let (m, _k) = a.dim();
    let n = b.dim().1;
    let mut out = Array2::<f32>::zeros((m, n));
    if m <= MM_CHUNK {
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut out);
        return out;
    }
    let a_chunks: Vec<ArrayView2<f32>> = a.axis_chunks_iter(Axis(0), MM_CHUNK).collect();
    let mut out_chunks: Vec<ArrayViewMut2<f32>> =
        out.axis_chunks_iter_mut(Axis(0), MM_CHUNK).collect();
    out_chunks
        .par_iter_mut()
        .zip(a_chunks.par_iter())
        .for_each(|(oc, ac)| {
            ndarray::linalg::general_mat_mul(1.0, ac, &b, 0.0, oc);
        });
    out
}

pub fn matmul_dyn(a: &ArrayD<f32>, b: &ArrayD<f32>) -> ArrayD<f32> {
    let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul: lhs not 2-D");
    let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul: rhs not 2-D");
    assert_eq!(a2.dim().1, b2.dim().0, "matmul: inner dims differ");
    matmul(a2, b2).into_dyn()
}

fn as4(x: &ArrayD<f32>) -> ArrayView4<'_, f32> {
    x.view().into_dimensionality::<Ix4>().expect("expected NCHW tensor")
}

/// Output spatial side of a convolution; panics unless the stride tiles exactly.
pub fn conv_out_side(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    let span = input + 2 * pad - k;
    assert!(
        span % stride == 0,
        "conv geometry does not tile: input={input} k={k} stride={stride} pad={pad}"
    );
    span / stride + 1
}

/// im2col: `[b, ci, h, w] -> [b*oh*ow, ci*kh*kw]`.
fn im2col(
    x: ArrayView4<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Array2<f32>, usize, usize) {
    let (b, ci, h, w) = x.dim();
    let oh = conv_out_side(h, kh, stride, pad);
    let ow = conv_out_side(w, kw, stride, pad);
    let mut cols = Array2::<f32>::zeros((b * oh * ow, ci * kh * kw));
    let rows_per_image = oh * ow;
    let mut row_chunks: Vec<ArrayViewMut2<f32>> =
        cols.axis_chunks_iter_mut(Axis(0), rows_per_image).collect();
    row_chunks.par_iter_mut().enumerate().for_each(|(bi, chunk)| {
        let img = x.index_axis(Axis(0), bi);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..ci {
                    for u in 0..kh {
                        let iy = (oy * stride + u) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let ix = (ox * stride + v) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            chunk[[row, (c * kh + u) * kw + v]] =
                                img[[c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    });
    (cols, oh, ow)
}

/// col2im scatter-add: inverse layout of [`im2col`].
fn col2im(
    cols: ArrayView2<f32>,
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let oh = conv_out_side(h, kh, stride, pad);
    let ow = conv_out_side(w, kw, stride, pad);
    let mut out = Array4::<f32>::zeros((b, ci, h, w));
    let rows_per_image = oh * ow;
    let mut images: Vec<_> = out.axis_iter_mut(Axis(0)).collect();
    images.par_iter_mut().enumerate().for_each(|(bi, img)| {
        let chunk = cols.slice(ndarray::s![bi * rows_per_image..(bi + 1) * rows_per_image, ..]);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..ci {
                    for u in 0..kh {
                        let iy = (oy * stride + u) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let ix = (ox * stride + v) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            img[[c, iy as usize, ix as usize]] +=
                                chunk[[row, (c * kh + u) * kw + v]];
                        }
                    }
                }
            }
        }
    });
    out
}

/// `y[b,co,oh,ow] = sum_{ci,u,v} x[b,ci,oh*s+u-p, ow*s+v-p] * w[co,ci,u,v]`
pub fn conv2d(x: &ArrayD<f32>, w: &ArrayD<f32>, stride: usize, pad: usize) -> ArrayD<f32> {
    let x4 = as4(x);
    let w4 = as4(w);
    let (b, ci, _, _) = x4.dim();
    let (co, wci, kh, kw) = w4.dim();
    assert_eq!(ci, wci, "conv2d: channel mismatch");
    let (cols, oh, ow) = im2col(x4, kh, kw, stride, pad);
    let wf = w4.into_shape_with_order((co, ci * kh * kw)).unwrap();
    // [b*oh*ow, ci*kh*kw] x [ci*kh*kw, co]
    let yf = matmul(cols.view(), wf.t());
    let y = yf
        .into_shape_with_order((b, oh, ow, co))
        .unwrap()
        .permuted_axes([0, 3, 1, 2]);
    y.as_standard_layout().to_owned().into_dyn()
}

/// Adjoint of [`conv2d`] in its input: maps O-channel maps to I-channel maps.
/// Output side is `(in-1)*stride + k - 2*pad`.
pub fn convt2d(z: &ArrayD<f32>, w: &ArrayD<f32>, stride: usize, pad: usize) -> ArrayD<f32> {
    let z4 = as4(z);
    let w4 = as4(w);
    let (b, co, zh, zw) = z4.dim();
    let (wco, ci, kh, kw) = w4.dim();
    assert_eq!(co, wco, "convt2d: channel mismatch");
    let h = (zh - 1) * stride + kh - 2 * pad;
    let w_out = (zw - 1) * stride + kw - 2 * pad;
    // cols = z_flat[b*zh*zw, co] x w_flat[co, ci*kh*kw]
    let zf = z4
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((b * zh * zw, co))
        .unwrap();
    let wf = w4.into_shape_with_order((co, ci * kh * kw)).unwrap();
    let cols = matmul(zf.view(), wf);
    col2im(cols.view(), b, ci, h, w_out, kh, kw, stride, pad).into_dyn()
}

/// `gw[co,ci,u,v] = sum_{b,oh,ow} gy[b,co,oh,ow] * x[b,ci,oh*s+u-p, ow*s+v-p]`
pub fn conv_wgrad(
    x: &ArrayD<f32>,
    gy: &ArrayD<f32>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> ArrayD<f32> {
    let x4 = as4(x);
    let gy4 = as4(gy);
    let (b, ci, _, _) = x4.dim();
    let (gb, co, oh, ow) = gy4.dim();
    assert_eq!(b, gb, "conv_wgrad: batch mismatch");
    let (cols, coh, cow) = im2col(x4, kh, kw, stride, pad);
    assert_eq!((coh, cow), (oh, ow), "conv_wgrad: geometry mismatch");
    let gf = gy4
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((b * oh * ow, co))
        .unwrap();
    // [co, b*oh*ow] x [b*oh*ow, ci*kh*kw]
    let gw = matmul(gf.t(), cols.view());
    gw.into_shape_with_order((co, ci, kh, kw)).unwrap().into_dyn()
}

pub fn sum_axes_keep(x: &ArrayD<f32>, axes: &[usize]) -> ArrayD<f32> {
    let mut out = x.clone();
    let mut sorted: Vec<usize> = axes.to_vec();
    sorted.sort_unstable();
    for &ax in sorted.iter().rev() {
        out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
    }
    out
}

/// Axes a gradient must be summed over to undo a broadcast from `from` to `to`.
pub fn broadcast_reduce_axes(from: &[usize], to: &[usize]) -> Vec<usize> {
    assert!(from.len() <= to.len(), "broadcast cannot drop axes");
    let offset = to.len() - from.len();
    let mut axes: Vec<usize> = (0..offset).collect();
    for (i, &f) in from.iter().enumerate() {
        let t = to[offset + i];
        if f == 1 && t != 1 {
            axes.push(offset + i);
        } else {
            assert_eq!(f, t, "broadcast_reduce_axes: incompatible shapes");
        }
    }
    axes
}

/// 2x2/stride-2 max pooling; returns pooled values and flat argmax indices.
pub fn maxpool2(x: &ArrayD<f32>) -> (ArrayD<f32>, Vec<usize>) {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2: odd spatial dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<f32>::zeros((b, c, oh, ow));
    let mut idx = vec![0usize; b * c * oh * ow];
    let xs = x4.as_standard_layout();
    let xf = xs.as_slice().unwrap();
    let mut pos = 0usize;
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let at = base + (oy * 2 + dy) * w + ox * 2 + dx;
                            if xf[at] > best {
                                best = xf[at];
                                best_at = at;
                            }
                        }
                    }
                    out[[bi, ci, oy, ox]] = best;
                    idx[pos] = best_at;
                    pos += 1;
                }
            }
        }
    }
    (out.into_dyn(), idx)
}

/// Scatter pooled values to their argmax positions in a zeroed input-shape tensor.
pub fn pool_scatter2(g: &ArrayD<f32>, indices: &[usize], shape: &[usize]) -> ArrayD<f32> {
    let mut out = ArrayD::<f32>::zeros(IxDyn(shape));
    let of = out.as_slice_mut().unwrap();
    let gs = g.as_standard_layout();
    let gf = gs.as_slice().unwrap();
    assert_eq!(gf.len(), indices.len());
    for (v, &at) in gf.iter().zip(indices) {
        of[at] += v;
    }
    out
}

/// Gather values at argmax positions; adjoint of [`pool_scatter2`].
pub fn pool_gather2(x: &ArrayD<f32>, indices: &[usize]) -> ArrayD<f32> {
    let xs = x.as_standard_layout();
    let xf = xs.as_slice().unwrap();
    let vals: Vec<f32> = indices.iter().map(|&at| xf[at]).collect();
    let (b, c, h, w) = as4(x).dim();
    ArrayD::from_shape_vec(IxDyn(&[b, c, h / 2, w / 2]), vals).unwrap()
}

pub fn upsample2(x: &ArrayD<f32>) -> ArrayD<f32> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    let mut out = Array4::<f32>::zeros((b, c, h * 2, w * 2));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x4[[bi, ci, y, xx]];
                    out[[bi, ci, 2 * y, 2 * xx]] = v;
                    out[[bi, ci, 2 * y, 2 * xx + 1]] = v;
                    out[[bi, ci, 2 * y + 1, 2 * xx]] = v;
                    out[[bi, ci, 2 * y + 1, 2 * xx + 1]] = v;
                }
            }
        }
    }
    out.into_dyn()
}

/// Sum over each 2x2 block; adjoint of [`upsample2`].
pub fn sum_pool2(x: &ArrayD<f32>) -> ArrayD<f32> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2: odd spatial dims");
    let mut out = Array4::<f32>::zeros((b, c, h / 2, w / 2));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    out[[bi, ci, y, xx]] = x4[[bi, ci, 2 * y, 2 * xx]]
                        + x4[[bi, ci, 2 * y, 2 * xx + 1]]
                        + x4[[bi, ci, 2 * y + 1, 2 * xx]]
                        + x4[[bi, ci, 2 * y + 1, 2 * xx + 1]];
                }
            }
        }
    }
    out.into_dyn()
}

pub fn pad_axis1(x: &ArrayD<f32>, start: usize, total: usize) -> ArrayD<f32> {
    let mut shape = x.shape().to_vec();
    let len = shape[1];
    shape[1] = total;
    let mut out = ArrayD::<f32>::zeros(IxDyn(&shape));
    out.slice_axis_mut(Axis(1), ndarray::Slice::from(start..start + len))
        .assign(x);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn(shape, || rng.gen_range(-1.0f32..1.0))
    }

    /// Direct nested-loop convolution used as the oracle.
    fn conv2d_naive(x: &Array4<f32>, w: &Array4<f32>, s: usize, p: usize) -> Array4<f32> {
        let (b, ci, h, ww) = x.dim();
        let (co, _, kh, kw) = w.dim();
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (ww + 2 * p - kw) / s + 1;
        let mut y = Array4::<f32>::zeros((b, co, oh, ow));
        for bi in 0..b {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for c in 0..ci {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let iy = (oy * s + u) as isize - p as isize;
                                    let ix = (ox * s + v) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= ww as isize {
                                        continue;
                                    }
                                    acc += (x[[bi, c, iy as usize, ix as usize]]
                                        * w[[o, c, u, v]]) as f64;
                                }
                            }
                        }
                        y[[bi, o, oy, ox]] = acc as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv2d_matches_naive() {
        for &(s, p, k) in &[(2usize, 1usize, 4usize), (1, 1, 3), (1, 0, 4)] {
            let x = randn4((2, 3, 8, 8), 7);
            let w = randn4((5, 3, k, k), 8);
            let fast = conv2d(&x.clone().into_dyn(), &w.clone().into_dyn(), s, p);
            let slow = conv2d_naive(&x, &w, s, p).into_dyn();
            let diff = (&fast - &slow).mapv(f32::abs).iter().cloned().fold(0.0, f32::max);
            assert!(diff < 1e-4, "stride {s} pad {p} k {k}: max diff {diff}");
        }
    }

    #[test]
    fn convt2d_is_conv_adjoint() {
        // <conv(x, w), z> == <x, convt(z, w)> for all x, z
        let x = randn4((2, 3, 8, 8), 1).into_dyn();
        let w = randn4((5, 3, 4, 4), 2).into_dyn();
        let y = conv2d(&x, &w, 2, 1);
        let z = randn4((2, 5, 4, 4), 3).into_dyn();
        let xt = convt2d(&z, &w, 2, 1);
        let lhs: f64 = y.iter().zip(z.iter()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(xt.iter()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-2 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_wgrad_is_weight_adjoint() {
        // <conv(x, w), gy> == <w, wgrad(x, gy)>
        let x = randn4((2, 3, 8, 8), 4).into_dyn();
        let w = randn4((5, 3, 4, 4), 5).into_dyn();
        let gy = randn4((2, 5, 4, 4), 6).into_dyn();
        let y = conv2d(&x, &w, 2, 1);
        let gw = conv_wgrad(&x, &gy, 2, 1, 4, 4);
        let lhs: f64 = y.iter().zip(gy.iter()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = w.iter().zip(gw.iter()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-2 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_roundtrip_shapes() {
        let x = randn4((1, 2, 4, 4), 9).into_dyn();
        let (y, idx) = maxpool2(&x);
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        let back = pool_scatter2(&y, &idx, &[1, 2, 4, 4]);
        let again = pool_gather2(&back, &idx);
        assert_eq!(again, y);
    }

    #[test]
    fn upsample_sumpool_adjoint() {
        let x = randn4((1, 2, 3, 3), 10).into_dyn();
        let z = randn4((1, 2, 6, 6), 11).into_dyn();
        let up = upsample2(&x);
        let down = sum_pool2(&z);
        let lhs: f64 = up.iter().zip(z.iter()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(down.iter()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn matmul_parallel_matches_serial() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let a = Array::from_shape_simple_fn((700, 33), || rng.gen_range(-1.0f32..1.0));
        let b = Array::from_shape_simple_fn((33, 41), || rng.gen_range(-1.0f32..1.0));
        let fast = matmul(a.view(), b.view());
        let mut slow = Array2::<f32>::zeros((700, 41));
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut slow);
        assert_eq!(fast, slow);
    }
}
