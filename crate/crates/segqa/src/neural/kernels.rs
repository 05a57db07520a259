//! Forward and backward kernels for the 3D layer set.
//!
//! Convolutions use a shift-and-add loop order: for each kernel offset the
//! inner loop walks a contiguous output row, which keeps accumulation order
//! fixed per output element (bitwise deterministic) and lets stride-1 inner
//! loops vectorize.

use super::tensor::{Scalar, Tensor};

/// Iteration bounds for indices `i` with `i*stride + k_off - pad` inside
/// `[0, limit)`: returns (lo, hi, offset) so the valid input index is
/// `i*stride + offset` for `i in lo..hi`, `hi <= count`.
#[inline]
fn valid_range(
    limit: usize,
    k_off: usize,
    stride: usize,
    pad: usize,
    count: usize,
) -> (usize, usize, isize) {
    let offset = k_off as isize - pad as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let max_in = limit as isize - 1 - offset;
    let hi = if max_in < 0 {
        0
    } else {
        (max_in as usize / stride + 1).min(count)
    };
    (lo.min(hi), hi, offset)
}

/// Output spatial size of a strided convolution.
#[inline]
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Dot product with four independent accumulator lanes. The lane order is
/// fixed, so results are bitwise reproducible run to run.
#[inline]
fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        s0 = s0 + ca[0] * cb[0];
        s1 = s1 + ca[1] * cb[1];
        s2 = s2 + ca[2] * cb[2];
        s3 = s3 + ca[3] * cb[3];
    }
    let mut tail = T::zero();
    let rem = a.len() - a.len() % 4;
    for (&x, &y) in a[rem..].iter().zip(&b[rem..]) {
        tail = tail + x * y;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `dst[i] += w * src[i]` over equal-length slices.
#[inline]
fn axpy<T: Scalar>(w: T, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + w * s;
    }
}

/// Output spatial size of a transposed convolution.
#[inline]
pub fn convt_out_size(input: usize, kernel: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (input - 1) * stride + kernel + out_pad - 2 * pad
}

/// Cross-correlation of `x` [N,Ci,D,H,W] with `w` [Co,Ci,K,K,K] plus bias.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n_batch, ci, d, h, wid) = x.dims5();
    let (co, ci_w, kd, kh, kw) = w.dims5();
    assert_eq!(ci, ci_w, "channel mismatch");
    assert_eq!(b.numel(), co);
    let (od, oh, ow) = (
        conv_out_size(d, kd, stride, pad),
        conv_out_size(h, kh, stride, pad),
        conv_out_size(wid, kw, stride, pad),
    );
    let mut out = Tensor::zeros(&[n_batch, co, od, oh, ow]);

    let x_data = x.data();
    let w_data = w.data();
    let out_data = out.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for n in 0..n_batch {
        for c_out in 0..co {
            let bias = b.data()[c_out];
            let o_base = (n * co + c_out) * out_plane;
            out_data[o_base..o_base + out_plane].fill(bias);
            for c_in in 0..ci {
                let x_base = (n * ci + c_in) * in_plane;
                let w_base = ((c_out * ci + c_in) * kd) * kh * kw;
                for kz in 0..kd {
                    let (z_lo, z_hi, z_off) = valid_range(d, kz, stride, pad, od);
                    for ky in 0..kh {
                        let (y_lo, y_hi, y_off) = valid_range(h, ky, stride, pad, oh);
                        for kx in 0..kw {
                            let (x_lo, x_hi, x_off) = valid_range(wid, kx, stride, pad, ow);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let wv = w_data[w_base + (kz * kh + ky) * kw + kx];
                            for oz in z_lo..z_hi {
                                let iz = (oz * stride) as isize + z_off;
                                for oy in y_lo..y_hi {
                                    let iy = (oy * stride) as isize + y_off;
                                    let row_in =
                                        x_base + (iz as usize * h + iy as usize) * wid;
                                    let row_out = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 {
                                        let src = &x_data[(row_in as isize + x_lo as isize + x_off)
                                            as usize
                                            ..(row_in as isize + x_hi as isize - 1 + x_off)
                                                as usize
                                                + 1];
                                        let dst = &mut out_data[row_out + x_lo..row_out + x_hi];
                                        for (o, &xv) in dst.iter_mut().zip(src) {
                                            *o = *o + wv * xv;
                                        }
                                    } else {
                                        for ox in x_lo..x_hi {
                                            let ix =
                                                ((ox * stride) as isize + x_off) as usize;
                                            out_data[row_out + ox] =
                                                out_data[row_out + ox] + wv * x_data[row_in + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv3d_forward`] with respect to the input.
pub fn conv3d_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n_batch, co, od, oh, ow) = dy.dims5();
    let (co_w, ci, kd, kh, kw) = w.dims5();
    assert_eq!(co, co_w);
    let (d, h, wid) = (x_shape[2], x_shape[3], x_shape[4]);
    let mut dx = Tensor::zeros(x_shape);
    let dy_data = dy.data();
    let w_data = w.data();
    let dx_data = dx.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for n in 0..n_batch {
        for c_in in 0..ci {
            let x_base = (n * ci + c_in) * in_plane;
            for c_out in 0..co {
                let o_base = (n * co + c_out) * out_plane;
                let w_base = ((c_out * ci + c_in) * kd) * kh * kw;
                for kz in 0..kd {
                    let (z_lo, z_hi, z_off) = valid_range(d, kz, stride, pad, od);
                    for ky in 0..kh {
                        let (y_lo, y_hi, y_off) = valid_range(h, ky, stride, pad, oh);
                        for kx in 0..kw {
                            let (x_lo, x_hi, x_off) = valid_range(wid, kx, stride, pad, ow);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let wv = w_data[w_base + (kz * kh + ky) * kw + kx];
                            for oz in z_lo..z_hi {
                                let iz = ((oz * stride) as isize + z_off) as usize;
                                for oy in y_lo..y_hi {
                                    let iy = ((oy * stride) as isize + y_off) as usize;
                                    let row_x = x_base + (iz * h + iy) * wid;
                                    let row_dy = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 {
                                        let start =
                                            (row_x as isize + x_lo as isize + x_off) as usize;
                                        let end = (row_x as isize + x_hi as isize - 1 + x_off)
                                            as usize
                                            + 1;
                                        axpy(
                                            wv,
                                            &dy_data[row_dy + x_lo..row_dy + x_hi],
                                            &mut dx_data[start..end],
                                        );
                                    } else {
                                        for ox in x_lo..x_hi {
                                            let ix = ((ox * stride) as isize + x_off) as usize;
                                            dx_data[row_x + ix] =
                                                dx_data[row_x + ix] + wv * dy_data[row_dy + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient of [`conv3d_forward`] with respect to the weights.
pub fn conv3d_backward_weights<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n_batch, co, od, oh, ow) = dy.dims5();
    let (_, ci, d, h, wid) = x.dims5();
    let (kd, kh, kw) = (w_shape[2], w_shape[3], w_shape[4]);
    let mut dw = Tensor::zeros(w_shape);
    let dy_data = dy.data();
    let x_data = x.data();
    let dw_data = dw.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for c_out in 0..co {
        for c_in in 0..ci {
            let w_base = ((c_out * ci + c_in) * kd) * kh * kw;
            for kz in 0..kd {
                let (z_lo, z_hi, z_off) = valid_range(d, kz, stride, pad, od);
                for ky in 0..kh {
                    let (y_lo, y_hi, y_off) = valid_range(h, ky, stride, pad, oh);
                    for kx in 0..kw {
                        let (x_lo, x_hi, x_off) = valid_range(wid, kx, stride, pad, ow);
                        let mut acc = T::zero();
                        for n in 0..n_batch {
                            let x_base = (n * ci + c_in) * in_plane;
                            let o_base = (n * co + c_out) * out_plane;
                            for oz in z_lo..z_hi {
                                let iz = ((oz * stride) as isize + z_off) as usize;
                                for oy in y_lo..y_hi {
                                    let iy = ((oy * stride) as isize + y_off) as usize;
                                    let row_x = x_base + (iz * h + iy) * wid;
                                    let row_dy = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 && x_lo < x_hi {
                                        let start = (row_x as isize + x_lo as isize + x_off)
                                            as usize;
                                        let end = (row_x as isize + x_hi as isize - 1 + x_off)
                                            as usize
                                            + 1;
                                        acc = acc
                                            + dot4(
                                                &x_data[start..end],
                                                &dy_data[row_dy + x_lo..row_dy + x_hi],
                                            );
                                    } else {
                                        for ox in x_lo..x_hi {
                                            let ix = ((ox * stride) as isize + x_off) as usize;
                                            acc = acc
                                                + x_data[row_x + ix] * dy_data[row_dy + ox];
                                        }
                                    }
                                }
                            }
                        }
                        dw_data[w_base + (kz * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
    }
    dw
}

/// Bias gradient: sum of `dy` over batch and spatial dims per channel.
pub fn conv3d_backward_bias<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n_batch, co, od, oh, ow) = dy.dims5();
    let plane = od * oh * ow;
    let mut db = Tensor::zeros(&[co]);
    for n in 0..n_batch {
        for c in 0..co {
            let base = (n * co + c) * plane;
            let mut acc = T::zero();
            for v in &dy.data()[base..base + plane] {
                acc = acc + *v;
            }
            db.data_mut()[c] = db.data()[c] + acc;
        }
    }
    db
}

/// Transposed convolution of `x` [N,Ci,D,H,W] with `w` [Ci,Co,K,K,K]:
/// the adjoint scatter of [`conv3d_forward`], plus bias.
pub fn convt3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Tensor<T> {
    let (n_batch, ci, d, h, wid) = x.dims5();
    let (ci_w, co, kd, kh, kw) = w.dims5();
    assert_eq!(ci, ci_w, "channel mismatch");
    assert_eq!(b.numel(), co);
    let (od, oh, ow) = (
        convt_out_size(d, kd, stride, pad, out_pad),
        convt_out_size(h, kh, stride, pad, out_pad),
        convt_out_size(wid, kw, stride, pad, out_pad),
    );
    let mut out = Tensor::zeros(&[n_batch, co, od, oh, ow]);
    let x_data = x.data();
    let w_data = w.data();
    let out_data = out.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for n in 0..n_batch {
        for c_out in 0..co {
            let o_base = (n * co + c_out) * out_plane;
            out_data[o_base..o_base + out_plane].fill(b.data()[c_out]);
            for c_in in 0..ci {
                let x_base = (n * ci + c_in) * in_plane;
                let w_base = ((c_in * co + c_out) * kd) * kh * kw;
                for kz in 0..kd {
                    let (z_lo, z_hi, z_off) = valid_range(od, kz, stride, pad, d);
                    for ky in 0..kh {
                        let (y_lo, y_hi, y_off) = valid_range(oh, ky, stride, pad, h);
                        for kx in 0..kw {
                            let (x_lo, x_hi, x_off) = valid_range(ow, kx, stride, pad, wid);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let wv = w_data[w_base + (kz * kh + ky) * kw + kx];
                            for iz in z_lo..z_hi {
                                let oz = ((iz * stride) as isize + z_off) as usize;
                                for iy in y_lo..y_hi {
                                    let oy = ((iy * stride) as isize + y_off) as usize;
                                    let row_x = x_base + (iz * h + iy) * wid;
                                    let row_out = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 {
                                        let start = (row_out as isize + x_lo as isize + x_off)
                                            as usize;
                                        let end = (row_out as isize + x_hi as isize - 1 + x_off)
                                            as usize
                                            + 1;
                                        axpy(
                                            wv,
                                            &x_data[row_x + x_lo..row_x + x_hi],
                                            &mut out_data[start..end],
                                        );
                                    } else {
                                        for ix in x_lo..x_hi {
                                            let ox = ((ix * stride) as isize + x_off) as usize;
                                            out_data[row_out + ox] =
                                                out_data[row_out + ox] + wv * x_data[row_x + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`convt3d_forward`] with respect to the input: a strided
/// gather of `dy`.
pub fn convt3d_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n_batch, co, od, oh, ow) = dy.dims5();
    let (ci, co_w, kd, kh, kw) = w.dims5();
    assert_eq!(co, co_w);
    let (d, h, wid) = (x_shape[2], x_shape[3], x_shape[4]);
    let mut dx = Tensor::zeros(x_shape);
    let dy_data = dy.data();
    let w_data = w.data();
    let dx_data = dx.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for n in 0..n_batch {
        for c_in in 0..ci {
            let x_base = (n * ci + c_in) * in_plane;
            for c_out in 0..co {
                let o_base = (n * co + c_out) * out_plane;
                let w_base = ((c_in * co + c_out) * kd) * kh * kw;
                for kz in 0..kd {
                    let (z_lo, z_hi, z_off) = valid_range(od, kz, stride, pad, d);
                    for ky in 0..kh {
                        let (y_lo, y_hi, y_off) = valid_range(oh, ky, stride, pad, h);
                        for kx in 0..kw {
                            let (x_lo, x_hi, x_off) = valid_range(ow, kx, stride, pad, wid);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let wv = w_data[w_base + (kz * kh + ky) * kw + kx];
                            for iz in z_lo..z_hi {
                                let oz = ((iz * stride) as isize + z_off) as usize;
                                for iy in y_lo..y_hi {
                                    let oy = ((iy * stride) as isize + y_off) as usize;
                                    let row_x = x_base + (iz * h + iy) * wid;
                                    let row_dy = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 {
                                        let start = (row_dy as isize + x_lo as isize + x_off)
                                            as usize;
                                        let end = (row_dy as isize + x_hi as isize - 1 + x_off)
                                            as usize
                                            + 1;
                                        axpy(
                                            wv,
                                            &dy_data[start..end],
                                            &mut dx_data[row_x + x_lo..row_x + x_hi],
                                        );
                                    } else {
                                        for ix in x_lo..x_hi {
                                            let ox = ((ix * stride) as isize + x_off) as usize;
                                            dx_data[row_x + ix] =
                                                dx_data[row_x + ix] + wv * dy_data[row_dy + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient of [`convt3d_forward`] with respect to the weights.
pub fn convt3d_backward_weights<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n_batch, co, od, oh, ow) = dy.dims5();
    let (_, ci, d, h, wid) = x.dims5();
    let (kd, kh, kw) = (w_shape[2], w_shape[3], w_shape[4]);
    let mut dw = Tensor::zeros(w_shape);
    let dy_data = dy.data();
    let x_data = x.data();
    let dw_data = dw.data_mut();
    let in_plane = d * h * wid;
    let out_plane = od * oh * ow;

    for c_in in 0..ci {
        for c_out in 0..co {
            let w_base = ((c_in * co + c_out) * kd) * kh * kw;
            for kz in 0..kd {
                let (z_lo, z_hi, z_off) = valid_range(od, kz, stride, pad, d);
                for ky in 0..kh {
                    let (y_lo, y_hi, y_off) = valid_range(oh, ky, stride, pad, h);
                    for kx in 0..kw {
                        let (x_lo, x_hi, x_off) = valid_range(ow, kx, stride, pad, wid);
                        let mut acc = T::zero();
                        for n in 0..n_batch {
                            let x_base = (n * ci + c_in) * in_plane;
                            let o_base = (n * co + c_out) * out_plane;
                            for iz in z_lo..z_hi {
                                let oz = ((iz * stride) as isize + z_off) as usize;
                                for iy in y_lo..y_hi {
                                    let oy = ((iy * stride) as isize + y_off) as usize;
                                    let row_x = x_base + (iz * h + iy) * wid;
                                    let row_dy = o_base + (oz * oh + oy) * ow;
                                    if stride == 1 && x_lo < x_hi {
                                        let start = (row_dy as isize + x_lo as isize + x_off)
                                            as usize;
                                        let end = (row_dy as isize + x_hi as isize - 1 + x_off)
                                            as usize
                                            + 1;
                                        acc = acc
                                            + dot4(
                                                &x_data[row_x + x_lo..row_x + x_hi],
                                                &dy_data[start..end],
                                            );
                                    } else {
                                        for ix in x_lo..x_hi {
                                            let ox = ((ix * stride) as isize + x_off) as usize;
                                            acc = acc
                                                + x_data[row_x + ix] * dy_data[row_dy + ox];
                                        }
                                    }
                                }
                            }
                        }
                        dw_data[w_base + (kz * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
    }
    dw
}

/// Per-sample, per-channel standardization over spatial dims followed by a
/// learned affine map. `x` is rank 5, `gamma`/`beta` are [C].
pub fn instance_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let (n_batch, c_total, d, h, w) = x.dims5();
    let plane = d * h * w;
    let mut out = Tensor::zeros(x.shape());
    let epsilon = T::from_f64(eps);
    for n in 0..n_batch {
        for c in 0..c_total {
            let base = (n * c_total + c) * plane;
            let xs = &x.data()[base..base + plane];
            let (mean, var) = moments(xs);
            let inv_std = T::one() / (var + epsilon).sqrt();
            let g = gamma.data()[c] * inv_std;
            let b = beta.data()[c];
            let shift = b - mean * g;
            for (o, &xv) in out.data_mut()[base..base + plane].iter_mut().zip(xs) {
                *o = xv * g + shift;
            }
        }
    }
    out
}

fn moments<T: Scalar>(xs: &[T]) -> (T, T) {
    let count = T::from_f64(xs.len() as f64);
    let mut sum = T::zero();
    for &v in xs {
        sum = sum + v;
    }
    let mean = sum / count;
    let mut sq = T::zero();
    for &v in xs {
        let d = v - mean;
        sq = sq + d * d;
    }
    (mean, sq / count)
}

/// Backward of instance norm; returns (dx, dgamma, dbeta).
pub fn instance_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n_batch, c_total, d, h, w) = x.dims5();
    let plane = d * h * w;
    let count = T::from_f64(plane as f64);
    let epsilon = T::from_f64(eps);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c_total]);
    let mut dbeta = Tensor::zeros(&[c_total]);

    for n in 0..n_batch {
        for c in 0..c_total {
            let base = (n * c_total + c) * plane;
            let xs = &x.data()[base..base + plane];
            let dys = &dy.data()[base..base + plane];
            let (mean, var) = moments(xs);
            let inv_std = T::one() / (var + epsilon).sqrt();

            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for (&dv, &xv) in dys.iter().zip(xs) {
                let xhat = (xv - mean) * inv_std;
                sum_dy = sum_dy + dv;
                sum_dy_xhat = sum_dy_xhat + dv * xhat;
            }
            dgamma.data_mut()[c] = dgamma.data()[c] + sum_dy_xhat;
            dbeta.data_mut()[c] = dbeta.data()[c] + sum_dy;

            let g = gamma.data()[c];
            let mean_dy = sum_dy / count;
            let mean_dy_xhat = sum_dy_xhat / count;
            for ((o, &dv), &xv) in dx.data_mut()[base..base + plane]
                .iter_mut()
                .zip(dys)
                .zip(xs)
            {
                let xhat = (xv - mean) * inv_std;
                *o = g * inv_std * (dv - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Parametric rectifier with one shared slope parameter (`alpha` is a
/// 1-element tensor): `y = x if x > 0 else alpha*x`.
pub fn prelu_forward<T: Scalar>(x: &Tensor<T>, alpha: &Tensor<T>) -> Tensor<T> {
    let a = alpha.data()[0];
    let mut out = Tensor::zeros(x.shape());
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = if v > T::zero() { v } else { a * v };
    }
    out
}

/// Backward of PReLU; returns (dx, dalpha).
pub fn prelu_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    alpha: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let a = alpha.data()[0];
    let mut dx = Tensor::zeros(x.shape());
    let mut da = T::zero();
    for ((o, &dv), &xv) in dx.data_mut().iter_mut().zip(dy.data()).zip(x.data()) {
        if xv > T::zero() {
            *o = dv;
        } else {
            *o = dv * a;
            da = da + dv * xv;
        }
    }
    (dx, Tensor::from_vec(&[1], vec![da]))
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape());
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = T::one() / (T::one() + (-v).exp());
    }
    out
}

/// Backward of sigmoid given the forward output `y`.
pub fn sigmoid_backward<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(y.shape());
    for ((o, &dv), &yv) in dx.data_mut().iter_mut().zip(dy.data()).zip(y.data()) {
        *o = dv * yv * (T::one() - yv);
    }
    dx
}

/// Fully connected layer: `x` [N,F] with `w` [O,F] and bias [O].
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n_batch, f_in) = x.dims2();
    let (f_out, f_in_w) = w.dims2();
    assert_eq!(f_in, f_in_w, "dense feature mismatch");
    let mut out = Tensor::zeros(&[n_batch, f_out]);
    for n in 0..n_batch {
        let xs = &x.data()[n * f_in..(n + 1) * f_in];
        for o in 0..f_out {
            let ws = &w.data()[o * f_in..(o + 1) * f_in];
            let mut acc = b.data()[o];
            for (&xv, &wv) in xs.iter().zip(ws) {
                acc = acc + xv * wv;
            }
            out.data_mut()[n * f_out + o] = acc;
        }
    }
    out
}

/// Backward of dense; returns (dx, dw, db).
pub fn dense_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n_batch, f_in) = x.dims2();
    let (f_out, _) = w.dims2();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[f_out]);
    for n in 0..n_batch {
        let xs = &x.data()[n * f_in..(n + 1) * f_in];
        let dys = &dy.data()[n * f_out..(n + 1) * f_out];
        for o in 0..f_out {
            let g = dys[o];
            db.data_mut()[o] = db.data()[o] + g;
            let ws = &w.data()[o * f_in..(o + 1) * f_in];
            let dxs = &mut dx.data_mut()[n * f_in..(n + 1) * f_in];
            for (dxv, &wv) in dxs.iter_mut().zip(ws) {
                *dxv = *dxv + g * wv;
            }
            let dws = &mut dw.data_mut()[o * f_in..(o + 1) * f_in];
            for (dwv, &xv) in dws.iter_mut().zip(xs) {
                *dwv = *dwv + g * xv;
            }
        }
    }
    (dx, dw, db)
}

/// Soft Dice loss with fused logistic sigmoid: mean over batch and channels
/// of `1 - (2*Σ p*t + s) / (Σ p + Σ t + s)` where `p = sigmoid(logits)`.
pub fn soft_dice_forward<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>, smooth: f64) -> T {
    assert_eq!(logits.shape(), target.shape(), "shape mismatch");
    let (n_batch, c_total, d, h, w) = logits.dims5();
    let plane = d * h * w;
    let s = T::from_f64(smooth);
    let mut total = T::zero();
    for n in 0..n_batch {
        for c in 0..c_total {
            let base = (n * c_total + c) * plane;
            let ls = &logits.data()[base..base + plane];
            let ts = &target.data()[base..base + plane];
            let mut num = T::zero();
            let mut den = T::zero();
            for (&lv, &tv) in ls.iter().zip(ts) {
                let p = T::one() / (T::one() + (-lv).exp());
                num = num + p * tv;
                den = den + p + tv;
            }
            total = total + T::one() - (num + num + s) / (den + s);
        }
    }
    total / T::from_f64((n_batch * c_total) as f64)
}

/// Gradient of [`soft_dice_forward`] with respect to the logits.
pub fn soft_dice_backward<T: Scalar>(
    dy: T,
    logits: &Tensor<T>,
    target: &Tensor<T>,
    smooth: f64,
) -> Tensor<T> {
    let (n_batch, c_total, d, h, w) = logits.dims5();
    let plane = d * h * w;
    let s = T::from_f64(smooth);
    let scale = dy / T::from_f64((n_batch * c_total) as f64);
    let mut dl = Tensor::zeros(logits.shape());
    for n in 0..n_batch {
        for c in 0..c_total {
            let base = (n * c_total + c) * plane;
            let ls = &logits.data()[base..base + plane];
            let ts = &target.data()[base..base + plane];
            let mut num = T::zero();
            let mut den = T::zero();
            for (&lv, &tv) in ls.iter().zip(ts) {
                let p = T::one() / (T::one() + (-lv).exp());
                num = num + p * tv;
                den = den + p + tv;
            }
            let a = num + num + s;
            let b = den + s;
            for ((o, &lv), &tv) in dl.data_mut()[base..base + plane]
                .iter_mut()
                .zip(ls)
                .zip(ts)
            {
                let p = T::one() / (T::one() + (-lv).exp());
                // d/dp of -(2*num+s)/(den+s) = -(2*t*b - a) / b^2
                let dp = -((tv + tv) * b - a) / (b * b);
                *o = scale * dp * p * (T::one() - p);
            }
        }
    }
    dl
}

/// Mean-over-batch KL divergence of N(mean, diag exp(logvar)) from N(0, I):
/// `(1/N) * 0.5 * Σ (exp(lv) + m^2 - 1 - lv)`.
pub fn kl_normal_forward<T: Scalar>(mean: &Tensor<T>, logvar: &Tensor<T>) -> T {
    let (n_batch, _) = mean.dims2();
    let mut total = T::zero();
    for (&m, &lv) in mean.data().iter().zip(logvar.data()) {
        total = total + lv.exp() + m * m - T::one() - lv;
    }
    total * T::from_f64(0.5) / T::from_f64(n_batch as f64)
}

/// Gradients of [`kl_normal_forward`]; returns (dmean, dlogvar).
pub fn kl_normal_backward<T: Scalar>(
    dy: T,
    mean: &Tensor<T>,
    logvar: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n_batch, _) = mean.dims2();
    let scale = dy / T::from_f64(n_batch as f64);
    let half = T::from_f64(0.5);
    let mut dm = Tensor::zeros(mean.shape());
    let mut dlv = Tensor::zeros(logvar.shape());
    for i in 0..mean.numel() {
        dm.data_mut()[i] = scale * mean.data()[i];
        dlv.data_mut()[i] = scale * half * (logvar.data()[i].exp() - T::one());
    }
    (dm, dlv)
}

/// Reparameterized Gaussian sample `z = mean + exp(logvar/2) * eps`.
pub fn reparameterize_forward<T: Scalar>(
    mean: &Tensor<T>,
    logvar: &Tensor<T>,
    eps: &Tensor<T>,
) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let mut z = Tensor::zeros(mean.shape());
    for i in 0..mean.numel() {
        z.data_mut()[i] = mean.data()[i] + (logvar.data()[i] * half).exp() * eps.data()[i];
    }
    z
}

/// Gradients of [`reparameterize_forward`]; returns (dmean, dlogvar).
pub fn reparameterize_backward<T: Scalar>(
    dz: &Tensor<T>,
    logvar: &Tensor<T>,
    eps: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let half = T::from_f64(0.5);
    let dm = dz.clone();
    let mut dlv = Tensor::zeros(logvar.shape());
    for i in 0..logvar.numel() {
        dlv.data_mut()[i] =
            dz.data()[i] * half * (logvar.data()[i] * half).exp() * eps.data()[i];
    }
    (dm, dlv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_from(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let x = tensor_from(&[1, 1, 4, 5, 6], 1);
        let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        w.data_mut()[13] = 1.0; // centered delta
        let b = Tensor::zeros(&[1]);
        let y = conv3d_forward(&x, &w, &b, 1, 1);
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_all_ones_kernel_sums_neighborhood() {
        let mut x = Tensor::zeros(&[1, 1, 5, 5, 5]);
        x.fill(1.0);
        let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        w.fill(1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv3d_forward(&x, &w, &b, 1, 1);
        // interior outputs see the full 27-voxel neighborhood
        let (_, _, d, h, wid) = y.dims5();
        for z in 1..d - 1 {
            for yy in 1..h - 1 {
                for xx in 1..wid - 1 {
                    let v = y.data()[(z * h + yy) * wid + xx];
                    assert_eq!(v, 27.0);
                }
            }
        }
        // a corner sees 8
        assert_eq!(y.data()[0], 8.0);
    }

    /// 7-nested-loop direct convolution oracle.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (nb, ci, d, h, wid) = x.dims5();
        let (co, _, kd, kh, kw) = w.dims5();
        let od = conv_out_size(d, kd, stride, pad);
        let oh = conv_out_size(h, kh, stride, pad);
        let ow = conv_out_size(wid, kw, stride, pad);
        let mut out = Tensor::zeros(&[nb, co, od, oh, ow]);
        for n in 0..nb {
            for c_out in 0..co {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b.data()[c_out];
                            for c_in in 0..ci {
                                for kz in 0..kd {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let iz = (oz * stride + kz) as isize - pad as isize;
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= wid as isize
                                            {
                                                continue;
                                            }
                                            let xv = x.data()[(((n * ci + c_in) * d
                                                + iz as usize)
                                                * h
                                                + iy as usize)
                                                * wid
                                                + ix as usize];
                                            let wv = w.data()[(((c_out * ci + c_in) * kd + kz)
                                                * kh
                                                + ky)
                                                * kw
                                                + kx];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((n * co + c_out) * od + oz) * oh + oy) * ow + ox] =
                                acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop_oracle() {
        for (seed, stride, k) in [(1u64, 1usize, 3usize), (2, 2, 3), (3, 1, 1), (4, 2, 1)] {
            let pad = if k == 3 { 1 } else { 0 };
            let x = tensor_from(&[2, 3, 5, 6, 7], seed);
            let w = tensor_from(&[4, 3, k, k, k], seed + 100);
            let b = tensor_from(&[4], seed + 200);
            let got = conv3d_forward(&x, &w, &b, stride, pad);
            let expect = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), expect.shape());
            for (a, e) in got.data().iter().zip(expect.data()) {
                assert!((a - e).abs() < 1e-12, "stride {stride} k {k}");
            }
        }
    }

    #[test]
    fn convt_doubles_dims_at_stride_two() {
        for d in [2usize, 3, 4, 7] {
            assert_eq!(convt_out_size(d, 3, 2, 1, 1), 2 * d);
            assert_eq!(convt_out_size(d, 3, 1, 1, 0), d);
        }
    }

    #[test]
    fn convt_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convt(y)> with shared weights and zero bias
        let stride = 2;
        let pad = 1;
        let x = tensor_from(&[1, 2, 4, 4, 4], 5);
        let w = tensor_from(&[3, 2, 3, 3, 3], 6); // conv layout [Co,Ci,k,k,k]
        let zero_co = Tensor::zeros(&[3]);
        let y = conv3d_forward(&x, &w, &zero_co, stride, pad);
        let g = tensor_from(y.shape(), 7);

        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();

        // the conv weight [Co,Ci,k,k,k] is exactly the transposed-conv
        // weight [Ci_t,Co_t,k,k,k] of the adjoint map
        let zero_ci = Tensor::zeros(&[2]);
        // output_padding reconstructs the conv input size exactly
        let back = convt3d_forward(&g, &w, &zero_ci, stride, pad, 1);
        assert_eq!(back.shape(), x.shape());
        let rhs: f64 = back.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn instance_norm_constant_input_is_beta() {
        let mut x = Tensor::<f64>::zeros(&[2, 3, 2, 2, 2]);
        x.fill(5.0);
        let mut gamma = Tensor::zeros(&[3]);
        gamma.fill(1.0);
        let mut beta = Tensor::zeros(&[3]);
        beta.data_mut().copy_from_slice(&[0.0, 1.0, -2.0]);
        let y = instance_norm_forward(&x, &gamma, &beta, 1e-5);
        let plane = 8;
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..plane {
                    let v = y.data()[(n * 3 + c) * plane + i];
                    assert!((v - beta.data()[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn instance_norm_standardizes_then_shifts() {
        let x = tensor_from(&[1, 2, 3, 4, 5], 8);
        let mut gamma = Tensor::zeros(&[2]);
        gamma.data_mut().copy_from_slice(&[2.0, 0.5]);
        let mut beta = Tensor::zeros(&[2]);
        beta.data_mut().copy_from_slice(&[1.0, -1.0]);
        let y = instance_norm_forward(&x, &gamma, &beta, 1e-5);
        let plane = 60;
        for c in 0..2 {
            let ys = &y.data()[c * plane..(c + 1) * plane];
            let mean: f64 = ys.iter().sum::<f64>() / plane as f64;
            let var: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
            assert!((mean - beta.data()[c]).abs() < 1e-4);
            assert!((var.sqrt() - gamma.data()[c].abs()).abs() < 1e-4);
        }
    }

    #[test]
    fn soft_dice_saturated_logits_reach_zero_loss() {
        let mut target = Tensor::<f64>::zeros(&[1, 1, 2, 2, 2]);
        target.data_mut()[0] = 1.0;
        target.data_mut()[5] = 1.0;
        let mut logits = Tensor::zeros(&[1, 1, 2, 2, 2]);
        for i in 0..8 {
            logits.data_mut()[i] = if target.data()[i] > 0.5 { 30.0 } else { -30.0 };
        }
        let loss = soft_dice_forward(&logits, &target, 1e-5);
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn soft_dice_empty_target_with_negative_logits_is_zero() {
        let target = Tensor::<f64>::zeros(&[1, 1, 2, 2, 2]);
        let mut logits = Tensor::zeros(&[1, 1, 2, 2, 2]);
        logits.fill(-30.0);
        let loss = soft_dice_forward(&logits, &target, 1e-5);
        assert!(loss.abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn kl_zero_mean_unit_variance_is_zero() {
        let mean = Tensor::<f64>::zeros(&[2, 5]);
        let logvar = Tensor::zeros(&[2, 5]);
        assert_eq!(kl_normal_forward(&mean, &logvar), 0.0);
    }

    #[test]
    fn kl_matches_closed_form_summation() {
        let mean = tensor_from(&[3, 4], 9);
        let logvar = tensor_from(&[3, 4], 10);
        let got = kl_normal_forward(&mean, &logvar);
        let mut expect = 0.0;
        for (&m, &lv) in mean.data().iter().zip(logvar.data()) {
            expect += 0.5 * (lv.exp() + m * m - 1.0 - lv);
        }
        expect /= 3.0;
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn reparameterize_zero_eps_returns_mean() {
        let mean = tensor_from(&[2, 6], 11);
        let logvar = tensor_from(&[2, 6], 12);
        let eps = Tensor::zeros(&[2, 6]);
        let z = reparameterize_forward(&mean, &logvar, &eps);
        assert_eq!(z, mean);
    }
}
