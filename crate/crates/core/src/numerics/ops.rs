//! Forward and backward kernels on plain tensors.
//!
//! Feature maps are `[C, H, W]`. Token matrices are `[L, C]`. All kernels use a
//! fixed reduction order per output element, so results do not depend on how
//! outer loops are scheduled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn finite(t: Tensor, op: &'static str) -> Result<Tensor> {
    t.check_finite(op)?;
    Ok(t)
}

/// Runs `f(index, chunk)` over consecutive `chunk`-sized pieces of `out`.
fn for_each_chunk<F>(out: &mut [f32], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

// ---------------------------------------------------------------------------
// Convolution

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = (n + 2 * padding).checked_sub(k)?;
    Some(span / stride + 1)
}

/// Range of output positions `j` for which `j*stride + offset - padding` is inside `[0, n)`.
fn valid_range(out: usize, n: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    // j*stride + offset >= padding
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    // j*stride + offset - padding <= n - 1
    let hi = if n + padding < offset + 1 {
        0
    } else {
        ((n + padding - offset - 1) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

fn check_conv(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (cin, h, w) = x.dims3()?;
    let &[cout, wcin, k, k2] = weight.shape() else {
        return Err(Error::shape("conv2d", format!("weight must be rank 4, got {:?}", weight.shape())));
    };
    if wcin != cin || k != k2 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} vs weight {:?}", x.shape(), weight.shape()),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv2d", format!("bias {:?} for {cout} outputs", bias.shape())));
    }
    if k % 2 == 0 {
        return Err(Error::arg("conv2d", format!("kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d", "stride must be >= 1"));
    }
    Ok((cin, h, w, cout, k))
}

/// Direct 2-D convolution in the cross-correlation convention (no kernel flip):
/// `y[o,i,j] = b[o] + sum_{c,ky,kx} w[o,c,ky,kx] * x[c, i*s+ky-p, j*s+kx-p]`,
/// with zero padding.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    x.check_finite("conv2d")?;
    weight.check_finite("conv2d")?;
    finite(conv2d_unchecked(x, weight, bias, stride, padding)?, "conv2d")
}

pub(crate) fn conv2d_unchecked(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (cin, h, w, cout, k) = check_conv(x, weight, bias, stride)?;
    let (ho, wo) = match (conv_out_extent(h, k, stride, padding), conv_out_extent(w, k, stride, padding)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv2d", format!("kernel {k} larger than padded input {h}x{w}"))),
    };
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f32; cout * ho * wo];
    for_each_chunk(&mut out, ho * wo, |o, plane| {
        plane.fill(bd[o]);
        for c in 0..cin {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (ilo, ihi) = valid_range(ho, h, stride, ky, padding);
                for kx in 0..k {
                    let wv = wd[((o * cin + c) * k + ky) * k + kx];
                    let (jlo, jhi) = valid_range(wo, w, stride, kx, padding);
                    for i in ilo..ihi {
                        let iy = i * stride + ky - padding;
                        let xrow = &xc[iy * w..(iy + 1) * w];
                        let orow = &mut plane[i * wo..(i + 1) * wo];
                        if stride == 1 {
                            let base = jlo + kx - padding;
                            for (dst, src) in orow[jlo..jhi].iter_mut().zip(&xrow[base..base + (jhi - jlo)]) {
                                *dst += wv * src;
                            }
                        } else {
                            for j in jlo..jhi {
                                orow[j] += wv * xrow[j * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![cout, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, h, w) = x.dims3()?;
    let &[cout, _, k, _] = weight.shape() else {
        return Err(Error::shape("conv2d_backward", "weight must be rank 4"));
    };
    let (gc, ho, wo) = grad_out.dims3()?;
    if gc != cout {
        return Err(Error::shape("conv2d_backward", "grad channels"));
    }
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();

    let mut gx = vec![0.0f32; cin * h * w];
    for_each_chunk(&mut gx, h * w, |c, gplane| {
        for o in 0..cout {
            let go = &gd[o * ho * wo..(o + 1) * ho * wo];
            for ky in 0..k {
                let (ilo, ihi) = valid_range(ho, h, stride, ky, padding);
                for kx in 0..k {
                    let wv = wd[((o * cin + c) * k + ky) * k + kx];
                    let (jlo, jhi) = valid_range(wo, w, stride, kx, padding);
                    for i in ilo..ihi {
                        let iy = i * stride + ky - padding;
                        let grow = &go[i * wo..(i + 1) * wo];
                        let xrow = &mut gplane[iy * w..(iy + 1) * w];
                        for j in jlo..jhi {
                            xrow[j * stride + kx - padding] += wv * grow[j];
                        }
                    }
                }
            }
        }
    });

    let mut gw = vec![0.0f32; cout * cin * k * k];
    for_each_chunk(&mut gw, cin * k * k, |o, gwo| {
        let go = &gd[o * ho * wo..(o + 1) * ho * wo];
        for c in 0..cin {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (ilo, ihi) = valid_range(ho, h, stride, ky, padding);
                for kx in 0..k {
                    let (jlo, jhi) = valid_range(wo, w, stride, kx, padding);
                    let mut acc = 0.0f32;
                    for i in ilo..ihi {
                        let iy = i * stride + ky - padding;
                        let xrow = &xc[iy * w..(iy + 1) * w];
                        let grow = &go[i * wo..(i + 1) * wo];
                        for j in jlo..jhi {
                            acc += grow[j] * xrow[j * stride + kx - padding];
                        }
                    }
                    gwo[(c * k + ky) * k + kx] = acc;
                }
            }
        }
    });

    let gb = (0..cout)
        .map(|o| gd[o * ho * wo..(o + 1) * ho * wo].iter().sum())
        .collect();

    Ok((
        Tensor::new(vec![cin, h, w], gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

// ---------------------------------------------------------------------------
// Dense products

/// `y[l, o] = b[o] + sum_i x[l, i] * w[o, i]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let &[l, fin] = x.shape() else {
        return Err(Error::shape("linear", format!("input must be [L, C], got {:?}", x.shape())));
    };
    let &[fout, wfin] = weight.shape() else {
        return Err(Error::shape("linear", "weight must be rank 2"));
    };
    if wfin != fin {
        return Err(Error::shape("linear", format!("input {:?} vs weight {:?}", x.shape(), weight.shape())));
    }
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::shape("linear", "bias extent"));
        }
    }
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; l * fout];
    for_each_chunk(&mut out, fout, |r, row| {
        let xr = &xd[r * fin..(r + 1) * fin];
        for (o, dst) in row.iter_mut().enumerate() {
            let wr = &wd[o * fin..(o + 1) * fin];
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            *dst = acc;
        }
    });
    Tensor::new(vec![l, fout], out)
}

/// Gradients of [`linear`]: `(grad_x, grad_w, grad_b)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (l, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut gx = vec![0.0f32; l * fin];
    for_each_chunk(&mut gx, fin, |r, row| {
        let gr = &gd[r * fout..(r + 1) * fout];
        for (o, &g) in gr.iter().enumerate() {
            let wr = &wd[o * fin..(o + 1) * fin];
            for (dst, w) in row.iter_mut().zip(wr) {
                *dst += g * w;
            }
        }
    });
    let mut gw = vec![0.0f32; fout * fin];
    for_each_chunk(&mut gw, fin, |o, row| {
        for r in 0..l {
            let g = gd[r * fout + o];
            let xr = &xd[r * fin..(r + 1) * fin];
            for (dst, xv) in row.iter_mut().zip(xr) {
                *dst += g * xv;
            }
        }
    });
    let mut gb = vec![0.0f32; fout];
    for r in 0..l {
        for (dst, g) in gb.iter_mut().zip(&gd[r * fout..(r + 1) * fout]) {
            *dst += g;
        }
    }
    Ok((
        Tensor::new(vec![l, fin], gx)?,
        Tensor::new(vec![fout, fin], gw)?,
        Tensor::new(vec![fout], gb)?,
    ))
}

/// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`; with
/// `transpose_b` the second operand is read as `[B, N, K]`.
pub fn bmm(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
    let &[batch, m, k] = a.shape() else {
        return Err(Error::shape("bmm", "lhs must be rank 3"));
    };
    let &[bb, b1, b2] = b.shape() else {
        return Err(Error::shape("bmm", "rhs must be rank 3"));
    };
    let (bk, n) = if transpose_b { (b2, b1) } else { (b1, b2) };
    if bb != batch || bk != k {
        return Err(Error::shape("bmm", format!("{:?} x {:?} (transpose_b={transpose_b})", a.shape(), b.shape())));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0f32; batch * m * n];
    for_each_chunk(&mut out, m * n, |bi, ob| {
        let ab = &ad[bi * m * k..(bi + 1) * m * k];
        let bbk = &bd[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            let orow = &mut ob[i * n..(i + 1) * n];
            if transpose_b {
                for (j, dst) in orow.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for p in 0..k {
                        acc += ab[i * k + p] * bbk[j * k + p];
                    }
                    *dst = acc;
                }
            } else {
                for p in 0..k {
                    let av = ab[i * k + p];
                    for (dst, bv) in orow.iter_mut().zip(&bbk[p * n..(p + 1) * n]) {
                        *dst += av * bv;
                    }
                }
            }
        }
    });
    Tensor::new(vec![batch, m, n], out)
}

/// Gradients of [`bmm`] with respect to both operands.
pub fn bmm_backward(a: &Tensor, b: &Tensor, transpose_b: bool, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let transpose = |t: &Tensor| -> Result<Tensor> {
        let &[bt, r, c] = t.shape() else { unreachable!() };
        let d = t.data();
        let mut out = vec![0.0f32; bt * r * c];
        for bi in 0..bt {
            for i in 0..r {
                for j in 0..c {
                    out[bi * r * c + j * r + i] = d[bi * r * c + i * c + j];
                }
            }
        }
        Tensor::new(vec![bt, c, r], out)
    };
    // y = a b      => ga = gy b^T,  gb = a^T gy
    // y = a b^T    => ga = gy b,    gb = gy^T a
    if transpose_b {
        let ga = bmm(grad_out, b, false)?;
        let gb = bmm(&transpose(grad_out)?, a, false)?;
        Ok((ga, gb))
    } else {
        let ga = bmm(grad_out, b, true)?;
        let gb = bmm(&transpose(a)?, grad_out, false)?;
        Ok((ga, gb))
    }
}

// ---------------------------------------------------------------------------
// Softmax and normalization

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Softmax along `axis`, with max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::arg("softmax", format!("axis {axis} for rank {}", x.rank())));
    }
    x.check_finite("softmax")?;
    let (outer, len, inner) = axis_strides(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let m = (0..len).map(|j| xd[at(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for j in 0..len {
                let e = (xd[at(j)] - m).exp();
                out[at(j)] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for j in 0..len {
                out[at(j)] *= inv;
            }
        }
    }
    finite(Tensor::new(x.shape().to_vec(), out)?, "softmax")
}

/// Softmax gradient along the last axis given the softmax output `y`.
pub fn softmax_last_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let len = *y.shape().last().unwrap_or(&1);
    let mut gx = vec![0.0f32; y.numel()];
    for ((yr, gr), dst) in y
        .data()
        .chunks(len)
        .zip(grad_out.data().chunks(len))
        .zip(gx.chunks_mut(len))
    {
        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), gx).expect("shape preserved")
}

/// Per-row statistics saved by [`layer_norm_with_stats`].
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

/// Layer normalization over the last axis.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    x.check_finite("layer_norm")?;
    let (y, _) = layer_norm_with_stats(x, gamma, beta, eps)?;
    finite(y, "layer_norm")
}

pub fn layer_norm_with_stats(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<(Tensor, NormStats)> {
    let d = *x.shape().last().ok_or_else(|| Error::arg("layer_norm", "scalar input"))?;
    if d == 0 {
        return Err(Error::arg("layer_norm", "zero-length normalization axis"));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", format!("affine params must be [{d}]")));
    }
    if eps <= 0.0 {
        return Err(Error::arg("layer_norm", "eps must be > 0"));
    }
    let rows = x.numel() / d;
    let mut out = vec![0.0f32; x.numel()];
    let mut mean = vec![0.0f32; rows];
    let mut rstd = vec![0.0f32; rows];
    let (g, b) = (gamma.data(), beta.data());
    for (r, (xr, yr)) in x.data().chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let m = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - m) * (v - m)).sum::<f32>() / d as f32;
        let rs = 1.0 / (var + eps).sqrt();
        for i in 0..d {
            yr[i] = (xr[i] - m) * rs * g[i] + b[i];
        }
        mean[r] = m;
        rstd[r] = rs;
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, NormStats { mean, rstd }))
}

/// Gradients of layer normalization: `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &NormStats,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = gamma.numel();
    let g = gamma.data();
    let mut gx = vec![0.0f32; x.numel()];
    let mut gg = vec![0.0f32; d];
    let mut gb = vec![0.0f32; d];
    for (r, ((xr, gr), dst)) in x
        .data()
        .chunks(d)
        .zip(grad_out.data().chunks(d))
        .zip(gx.chunks_mut(d))
        .enumerate()
    {
        let (m, rs) = (stats.mean[r], stats.rstd[r]);
        let mut sum_dxhat = 0.0f32;
        let mut sum_dxhat_xhat = 0.0f32;
        for i in 0..d {
            let xhat = (xr[i] - m) * rs;
            let dxhat = gr[i] * g[i];
            gg[i] += gr[i] * xhat;
            gb[i] += gr[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let inv_d = 1.0 / d as f32;
        for i in 0..d {
            let xhat = (xr[i] - m) * rs;
            let dxhat = gr[i] * g[i];
            dst[i] = rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(vec![d], gg).expect("shape"),
        Tensor::new(vec![d], gb).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// Pointwise activations: (forward, derivative)

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(v: f32) -> f32 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

pub fn gelu_grad(v: f32) -> f32 {
    let u = GELU_C * (v + 0.044715 * v * v * v);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn silu(v: f32) -> f32 {
    v * sigmoid(v)
}

pub fn silu_grad(v: f32) -> f32 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

/// `ln(1 + e^v)`, overflow-safe.
pub fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else if v < -20.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive outputs.
pub fn softplus_inverse(y: f32) -> f32 {
    y + (-(-y).exp_m1()).ln()
}

pub fn leaky_relu(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        v * slope
    }
}

// ---------------------------------------------------------------------------
// Index-map rearrangements

/// `out[i] = x[index[i]]`.
pub fn gather(x: &Tensor, index: &[usize], shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != index.len() {
        return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", index.len())));
    }
    let xd = x.data();
    if let Some(&bad) = index.iter().find(|&&i| i >= xd.len()) {
        return Err(Error::arg("gather", format!("index {bad} out of range {}", xd.len())));
    }
    Tensor::new(shape.to_vec(), index.iter().map(|&i| xd[i]).collect())
}

/// Adjoint of [`gather`]: `out[index[i]] += g[i]`.
pub fn scatter_add(grad: &Tensor, index: &[usize], shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for (&i, &g) in index.iter().zip(grad.data()) {
        od[i] += g;
    }
    out
}

/// Index map for sub-pixel rearrangement `[C*r^2, H, W] -> [C, rH, rW]`:
/// `out[c, h*r+i, w*r+j] = in[c*r^2 + i*r + j, h, w]`.
pub fn pixel_shuffle_index(channels: usize, h: usize, w: usize, r: usize) -> Result<(Vec<usize>, [usize; 3])> {
    if r == 0 || channels % (r * r) != 0 {
        return Err(Error::arg(
            "pixel_shuffle",
            format!("{channels} channels not divisible by r^2 = {}", r * r),
        ));
    }
    let c_out = channels / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut idx = Vec::with_capacity(channels * h * w);
    for c in 0..c_out {
        for y in 0..ho {
            for x in 0..wo {
                let (i, j) = (y % r, x % r);
                idx.push(((c * r * r + i * r + j) * h + y / r) * w + x / r);
            }
        }
    }
    Ok((idx, [c_out, ho, wo]))
}

pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (idx, shape) = pixel_shuffle_index(c, h, w, r)?;
    gather(x, &idx, &shape)
}

/// Inverse of [`pixel_shuffle`]: `[C, rH, rW] -> [C*r^2, H, W]`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, hr, wr) = x.dims3()?;
    if r == 0 || hr % r != 0 || wr % r != 0 {
        return Err(Error::arg("pixel_unshuffle", format!("{hr}x{wr} not divisible by {r}")));
    }
    let (h, w) = (hr / r, wr / r);
    let (fwd, _) = pixel_shuffle_index(c * r * r, h, w, r)?;
    let mut inv = vec![0usize; fwd.len()];
    for (o, &i) in fwd.iter().enumerate() {
        inv[i] = o;
    }
    gather(x, &inv, &[c * r * r, h, w])
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear-warp sampling stencil: for each output pixel, up to four
/// `(source index, weight)` pairs.
#[derive(Clone, Debug)]
pub struct WarpStencil {
    pub h: usize,
    pub w: usize,
    pub taps: Vec<[(usize, f32); 4]>,
}

/// Builds the stencil for a flow field `[2, H, W]` where channel 0 is the
/// horizontal displacement `dx` and channel 1 the vertical displacement `dy`,
/// both in pixels. Output `(y, x)` samples the source at `(y + dy, x + dx)`;
/// sample coordinates are clamped to the image border.
pub fn warp_stencil(flow: &Tensor, h: usize, w: usize) -> Result<WarpStencil> {
    if flow.shape() != [2, h, w] {
        return Err(Error::shape("bilinear_warp", format!("flow {:?} for {h}x{w}", flow.shape())));
    }
    flow.check_finite("bilinear_warp")?;
    let fd = flow.data();
    let mut taps = Vec::with_capacity(h * w);
    let axis = |pos: f32, n: usize| -> (usize, usize, f32) {
        let p = pos.clamp(0.0, (n - 1) as f32);
        let lo = p.floor();
        let frac = p - lo;
        let lo = lo as usize;
        (lo, (lo + 1).min(n - 1), frac)
    };
    for y in 0..h {
        for x in 0..w {
            let dx = fd[y * w + x];
            let dy = fd[h * w + y * w + x];
            let (x0, x1, fx) = axis(x as f32 + dx, w);
            let (y0, y1, fy) = axis(y as f32 + dy, h);
            taps.push([
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ]);
        }
    }
    Ok(WarpStencil { h, w, taps })
}

fn sample(plane: &[f32], taps: &[(usize, f32); 4]) -> f32 {
    // Zero-weight taps are skipped so integer displacements copy values exactly.
    let mut acc = 0.0f32;
    let mut first = true;
    for &(i, wt) in taps {
        if wt != 0.0 {
            if first {
                acc = wt * plane[i];
                first = false;
            } else {
                acc += wt * plane[i];
            }
        }
    }
    acc
}

pub fn warp_apply(x: &Tensor, st: &WarpStencil) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if (h, w) != (st.h, st.w) {
        return Err(Error::shape("bilinear_warp", "stencil extent"));
    }
    let xd = x.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for (p, taps) in st.taps.iter().enumerate() {
            out[ch * h * w + p] = sample(plane, taps);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn warp_backward(grad_out: &Tensor, st: &WarpStencil) -> Tensor {
    let (c, h, w) = (grad_out.shape()[0], st.h, st.w);
    let gd = grad_out.data();
    let mut gx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for (p, taps) in st.taps.iter().enumerate() {
            let g = gd[ch * h * w + p];
            for &(i, wt) in taps {
                if wt != 0.0 {
                    gx[ch * h * w + i] += wt * g;
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], gx).expect("shape")
}

/// Warps `x: [C, H, W]` by `flow: [2, H, W]` with bilinear sampling and
/// border clamping (see [`warp_stencil`] for the flow convention).
pub fn bilinear_warp(x: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    let st = warp_stencil(flow, h, w)?;
    finite(warp_apply(x, &st)?, "bilinear_warp")
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four-tap cubic stencil per output coordinate, align-centers convention:
/// output `i` samples source position `(i + 0.5) * n_in / n_out - 0.5`,
/// indices clamped to the border.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f32); 4]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut taps = [(0usize, 0.0f32); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let off = k as f64 - 1.0;
                let idx = (base + off).clamp(0.0, (n_in - 1) as f64) as usize;
                *tap = (idx, cubic_kernel(t - off) as f32);
            }
            taps
        })
        .collect()
}

/// Output extent for a resize by `scale`.
pub fn resized_extent(n: usize, scale: f32) -> usize {
    (n as f64 * scale as f64).round() as usize
}

/// Separable bicubic resize of `[C, H, W]` by `scale` (no antialiasing on
/// downscale).
pub fn bicubic_resize(x: &Tensor, scale: f32) -> Result<Tensor> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::arg("bicubic_resize", format!("scale {scale}")));
    }
    let (_, h, w) = x.dims3()?;
    let (ho, wo) = (resized_extent(h, scale), resized_extent(w, scale));
    if ho == 0 || wo == 0 {
        return Err(Error::arg("bicubic_resize", format!("degenerate output {ho}x{wo}")));
    }
    bicubic_resize_to(x, ho, wo)
}

/// Bicubic resize to explicit extents.
pub fn bicubic_resize_to(x: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if ho == 0 || wo == 0 || h == 0 || w == 0 {
        return Err(Error::arg("bicubic_resize", "degenerate extent"));
    }
    x.check_finite("bicubic_resize")?;
    let tx = cubic_taps(w, wo);
    let ty = cubic_taps(h, ho);
    let xd = x.data();
    let mut rows = vec![0.0f32; c * h * wo];
    for ch in 0..c {
        for y in 0..h {
            let src = &xd[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut rows[(ch * h + y) * wo..(ch * h + y + 1) * wo];
            for (d, taps) in dst.iter_mut().zip(&tx) {
                *d = taps.iter().map(|&(i, wt)| wt * src[i]).sum();
            }
        }
    }
    let mut out = vec![0.0f32; c * ho * wo];
    for ch in 0..c {
        for (oy, taps) in ty.iter().enumerate() {
            for ox in 0..wo {
                out[(ch * ho + oy) * wo + ox] = taps
                    .iter()
                    .map(|&(i, wt)| wt * rows[(ch * h + i) * wo + ox])
                    .sum();
            }
        }
    }
    finite(Tensor::new(vec![c, ho, wo], out)?, "bicubic_resize")
}

// ---------------------------------------------------------------------------
// Loss

/// Charbonnier penalty parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharbonnierConfig {
    pub epsilon: f32,
}

impl Default for CharbonnierConfig {
    fn default() -> Self {
        CharbonnierConfig { epsilon: 1e-3 }
    }
}

impl CharbonnierConfig {
    pub fn new(epsilon: f32) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::arg("CharbonnierConfig", "epsilon must be > 0"));
        }
        Ok(CharbonnierConfig { epsilon })
    }
}

fn check_pair(sr: &Tensor, hr: &Tensor, op: &'static str) -> Result<()> {
    if sr.shape() != hr.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", sr.shape(), hr.shape())));
    }
    sr.check_finite(op)?;
    hr.check_finite(op)
}

/// Global Charbonnier penalty `sqrt(||hr - sr||^2 + eps^2)` over the whole
/// tensor.
pub fn charbonnier_loss(sr: &Tensor, hr: &Tensor, cfg: CharbonnierConfig) -> Result<f32> {
    check_pair(sr, hr, "charbonnier_loss")?;
    let eps = cfg.epsilon as f64;
    let ss: f64 = sr
        .data()
        .iter()
        .zip(hr.data())
        .map(|(&a, &b)| {
            let d = b as f64 - a as f64;
            d * d
        })
        .sum();
    Ok((ss + eps * eps).sqrt() as f32)
}

/// Per-pixel Charbonnier `mean(sqrt((hr - sr)^2 + eps^2))`, the optimization
/// form.
pub fn charbonnier_mean(sr: &Tensor, hr: &Tensor, cfg: CharbonnierConfig) -> Result<f32> {
    check_pair(sr, hr, "charbonnier_mean")?;
    let eps2 = (cfg.epsilon as f64).powi(2);
    let total: f64 = sr
        .data()
        .iter()
        .zip(hr.data())
        .map(|(&a, &b)| {
            let d = b as f64 - a as f64;
            (d * d + eps2).sqrt()
        })
        .sum();
    Ok((total / sr.numel().max(1) as f64) as f32)
}
