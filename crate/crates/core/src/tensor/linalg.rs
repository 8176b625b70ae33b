use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Strided view of a row-major (or transposed) matrix.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [Scalar],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    pub fn row_major(data: &'a [Scalar], rows: usize, cols: usize) -> Self {
        Mat { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Mat { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c ← beta·c + a·b` with `c` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: Scalar, c: &mut [Scalar]) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.len(), a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    // The raw pointers cover exactly the strided extents checked above.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.data.as_ptr(), a.rs, a.cs, b.data.as_ptr(), b.rs, b.cs, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.data.as_ptr(), a.rs, a.cs, b.data.as_ptr(), b.rs, b.cs, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Standard matrix product of `[m, n]` and `[n, p]`.
pub fn matmul(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    match (w.shape(), x.shape()) {
        (&[m, n], &[n2, p]) if n == n2 => {
            let mut out = vec![0.0; m * p];
            gemm(Mat::row_major(w.data(), m, n), Mat::row_major(x.data(), n, p), 0.0, &mut out);
            Ok(Tensor::from_parts(vec![m, p], out))
        }
        _ => Err(Error::shape("matmul", w.shape(), x.shape())),
    }
}

/// Gradients of `matmul` with respect to both operands.
pub fn matmul_backward(w: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (m, n, p) = (w.shape()[0], w.shape()[1], x.shape()[1]);
    let mut gw = vec![0.0; m * n];
    gemm(Mat::row_major(g.data(), m, p), Mat::row_major(x.data(), n, p).t(), 0.0, &mut gw);
    let mut gx = vec![0.0; n * p];
    gemm(Mat::row_major(w.data(), m, n).t(), Mat::row_major(g.data(), m, p), 0.0, &mut gx);
    (Tensor::from_parts(vec![m, n], gw), Tensor::from_parts(vec![n, p], gx))
}

fn mix_dims(w: &Tensor, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match (w.shape(), x.shape()) {
        (&[co, ci], xs) if xs.len() >= 2 && xs[1] == ci => {
            Ok((xs[0], co, ci, xs[2..].iter().product()))
        }
        _ => Err(Error::shape("channel_mix", w.shape(), x.shape())),
    }
}

/// Per-position linear map over the channel axis (a 1×1 convolution without
/// bias): `out[b, :, s] = w · x[b, :, s]` for `w: [C_out, C_in]`,
/// `x: [B, C_in, ...]`.
pub fn channel_mix(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (b, co, ci, s) = mix_dims(w, x)?;
    let mut out = vec![0.0; b * co * s];
    let wm = Mat::row_major(w.data(), co, ci);
    for bi in 0..b {
        let xb = Mat::row_major(&x.data()[bi * ci * s..(bi + 1) * ci * s], ci, s);
        gemm(wm, xb, 0.0, &mut out[bi * co * s..(bi + 1) * co * s]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = co;
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of [`channel_mix`]: `(d/dw, d/dx)`. Either side can be skipped.
pub fn channel_mix_backward(
    w: &Tensor,
    x: &Tensor,
    g: &Tensor,
    need_w: bool,
    need_x: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (b, co, ci, s) = mix_dims(w, x).expect("channel_mix_backward on unchecked shapes");
    let gw = need_w.then(|| {
        let mut gw = vec![0.0; co * ci];
        for bi in 0..b {
            let gb = Mat::row_major(&g.data()[bi * co * s..(bi + 1) * co * s], co, s);
            let xb = Mat::row_major(&x.data()[bi * ci * s..(bi + 1) * ci * s], ci, s);
            gemm(gb, xb.t(), 1.0, &mut gw);
        }
        Tensor::from_parts(vec![co, ci], gw)
    });
    let gx = need_x.then(|| {
        let mut gx = vec![0.0; b * ci * s];
        let wt = Mat::row_major(w.data(), co, ci).t();
        for bi in 0..b {
            let gb = Mat::row_major(&g.data()[bi * co * s..(bi + 1) * co * s], co, s);
            gemm(wt, gb, 0.0, &mut gx[bi * ci * s..(bi + 1) * ci * s]);
        }
        Tensor::from_parts(x.shape().to_vec(), gx)
    });
    (gw, gx)
}
