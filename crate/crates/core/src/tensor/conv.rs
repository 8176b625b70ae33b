use super::{Scalar, Tensor};
use crate::error::{Error, Result};

struct DwDims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

fn dw_dims(z: &Tensor, k: &Tensor) -> Result<DwDims> {
    let (zs, ks) = (z.shape(), k.shape());
    if zs.len() != 4 || ks.len() != 4 || ks[1] != 1 || ks[0] != zs[1] {
        return Err(Error::shape("depthwise_conv2d", zs, ks));
    }
    if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "depthwise kernel extents must be odd, got {}x{}",
            ks[2], ks[3]
        )));
    }
    Ok(DwDims { b: zs[0], c: zs[1], h: zs[2], w: zs[3], kh: ks[2], kw: ks[3] })
}

/// Copies a `h×w` plane into the centre of a zeroed `(h+2ph)×(w+2pw)` buffer.
fn pad_plane(src: &[Scalar], h: usize, w: usize, ph: usize, pw: usize, buf: &mut Vec<Scalar>) {
    let pwid = w + 2 * pw;
    buf.clear();
    buf.resize((h + 2 * ph) * pwid, 0.0);
    for y in 0..h {
        buf[(y + ph) * pwid + pw..(y + ph) * pwid + pw + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// `dst[y, x] += Σ ker[i, j] · padded[y + i, x + j]` for one plane.
fn correlate_plane(padded: &[Scalar], ker: &[Scalar], kh: usize, kw: usize, h: usize, w: usize, dst: &mut [Scalar]) {
    let pwid = w + kw - 1;
    for y in 0..h {
        let drow = &mut dst[y * w..(y + 1) * w];
        for i in 0..kh {
            let prow = &padded[(y + i) * pwid..(y + i) * pwid + pwid];
            for j in 0..kw {
                let wgt = ker[i * kw + j];
                for (o, &s) in drow.iter_mut().zip(&prow[j..j + w]) {
                    *o += wgt * s;
                }
            }
        }
    }
}

/// Depthwise cross-correlation with zero "same" padding.
///
/// `z: [B, C, H, W]`, `k: [C, 1, kh, kw]` with odd extents; each channel is
/// filtered only by its own kernel slice and spatial extents are preserved.
pub fn depthwise_conv2d(z: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = dw_dims(z, k)?;
    let plane = d.h * d.w;
    let taps = d.kh * d.kw;
    let mut out = vec![0.0; z.numel()];
    let (zd, kd) = (z.data(), k.data());
    let mut buf = Vec::new();
    for bc in 0..d.b * d.c {
        let ch = bc % d.c;
        pad_plane(&zd[bc * plane..(bc + 1) * plane], d.h, d.w, d.kh / 2, d.kw / 2, &mut buf);
        let ker = &kd[ch * taps..(ch + 1) * taps];
        correlate_plane(&buf, ker, d.kh, d.kw, d.h, d.w, &mut out[bc * plane..(bc + 1) * plane]);
    }
    Ok(Tensor::from_parts(z.shape().to_vec(), out))
}

/// Gradients of [`depthwise_conv2d`] with respect to input and kernel.
pub fn depthwise_conv2d_backward(
    z: &Tensor,
    k: &Tensor,
    g: &Tensor,
    need_z: bool,
    need_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = dw_dims(z, k).expect("depthwise_conv2d_backward on unchecked shapes");
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let plane = d.h * d.w;
    let taps = d.kh * d.kw;
    let pwid = d.w + 2 * pw;
    let (zd, kd, gd) = (z.data(), k.data(), g.data());
    let mut gz = need_z.then(|| vec![0.0; z.numel()]);
    let mut gk = need_k.then(|| vec![0.0; k.numel()]);
    // The input gradient is a correlation of the output gradient with the flipped kernel.
    let flipped: Vec<Scalar> = (0..d.c)
        .flat_map(|ch| (0..taps).rev().map(move |t| ch * taps + t))
        .map(|i| kd[i])
        .collect();
    let mut buf = Vec::new();
    for bc in 0..d.b * d.c {
        let ch = bc % d.c;
        let grd = &gd[bc * plane..(bc + 1) * plane];
        if let Some(gz) = gz.as_mut() {
            pad_plane(grd, d.h, d.w, ph, pw, &mut buf);
            let ker = &flipped[ch * taps..(ch + 1) * taps];
            correlate_plane(&buf, ker, d.kh, d.kw, d.h, d.w, &mut gz[bc * plane..(bc + 1) * plane]);
        }
        if let Some(gk) = gk.as_mut() {
            pad_plane(&zd[bc * plane..(bc + 1) * plane], d.h, d.w, ph, pw, &mut buf);
            let acc = &mut gk[ch * taps..(ch + 1) * taps];
            for y in 0..d.h {
                let grow = &grd[y * d.w..(y + 1) * d.w];
                for i in 0..d.kh {
                    let prow = &buf[(y + i) * pwid..(y + i + 1) * pwid];
                    for j in 0..d.kw {
                        acc[i * d.kw + j] += grow.iter().zip(&prow[j..j + d.w]).map(|(a, b)| a * b).sum::<Scalar>();
                    }
                }
            }
        }
    }
    (
        gz.map(|v| Tensor::from_parts(z.shape().to_vec(), v)),
        gk.map(|v| Tensor::from_parts(k.shape().to_vec(), v)),
    )
}

/// `[start, end)` of adaptive-pooling cell `i` of `out` cells over `n` inputs.
#[inline]
fn cell(i: usize, out: usize, n: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

fn pool_dims(x: &Tensor, oh: usize, ow: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "adaptive_avg_pool expects [B, C, H, W]".into() });
    }
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument("adaptive_avg_pool target extents must be positive".into()));
    }
    if oh > s[2] || ow > s[3] {
        return Err(Error::InvalidArgument(format!(
            "adaptive_avg_pool target {oh}x{ow} exceeds input {}x{}",
            s[2], s[3]
        )));
    }
    Ok((s[0] * s[1], s[2], s[3]))
}

/// Averages each of the `oh×ow` near-equal cells of the spatial grid.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (bc, h, w) = pool_dims(x, oh, ow)?;
    let mut out = Vec::with_capacity(bc * oh * ow);
    for p in 0..bc {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (y0, y1) = cell(i, oh, h);
            for j in 0..ow {
                let (x0, x1) = cell(j, ow, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += plane[y * w + x0..y * w + x1].iter().sum::<Scalar>();
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as Scalar);
            }
        }
    }
    let s = x.shape();
    Ok(Tensor::from_parts(vec![s[0], s[1], oh, ow], out))
}

pub fn adaptive_avg_pool_backward(x_shape: &[usize], g: &Tensor) -> Tensor {
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let (h, w) = (x_shape[2], x_shape[3]);
    let bc = x_shape[0] * x_shape[1];
    let mut out = vec![0.0; bc * h * w];
    for p in 0..bc {
        let plane = &mut out[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (y0, y1) = cell(i, oh, h);
            for j in 0..ow {
                let (x0, x1) = cell(j, ow, w);
                let v = g.data()[(p * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as Scalar;
                for y in y0..y1 {
                    for o in &mut plane[y * w + x0..y * w + x1] {
                        *o += v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(x_shape.to_vec(), out)
}
