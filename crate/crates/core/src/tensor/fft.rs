use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<Scalar>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<Scalar>>, Arc<dyn Fft<Scalar>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Row-wise `iFFT(FFT(a) ⊙ op(FFT(b)))` over the last axis, where `op` is the
/// identity (convolution) or complex conjugation (correlation).
fn spectral_rows(op: &'static str, a: &Tensor, b: &Tensor, conjugate: bool) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    let n = *a.shape().last().expect("rank >= 1");
    let rows = a.numel() / n;
    let (fwd, inv) = plans(n);
    let mut scratch = vec![Complex::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    let mut fa = vec![Complex::new(0.0, 0.0); n];
    let mut fb = vec![Complex::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(a.numel());
    let scale = 1.0 / n as Scalar;
    for r in 0..rows {
        let (ra, rb) = (&a.data()[r * n..(r + 1) * n], &b.data()[r * n..(r + 1) * n]);
        for i in 0..n {
            fa[i] = Complex::new(ra[i], 0.0);
            fb[i] = Complex::new(rb[i], 0.0);
        }
        fwd.process_with_scratch(&mut fa, &mut scratch);
        fwd.process_with_scratch(&mut fb, &mut scratch);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= if conjugate { y.conj() } else { *y };
        }
        inv.process_with_scratch(&mut fa, &mut scratch);
        out.extend(fa.iter().map(|c| c.re * scale));
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Circular convolution along the last axis, computed spectrally:
/// `out[n] = Σ_m z[m]·k[(n − m) mod L]`. Works for any length `L` (mixed
/// radix / Bluestein), so no zero padding alters the circular semantics.
pub fn circular_conv_fft(z: &Tensor, k: &Tensor) -> Result<Tensor> {
    spectral_rows("circular_conv_fft", z, k, false)
}

/// Circular cross-correlation `out[n] = Σ_m g[m]·k[(m − n) mod L]`, the
/// adjoint of [`circular_conv_fft`] in either argument.
pub fn circular_corr_fft(g: &Tensor, k: &Tensor) -> Result<Tensor> {
    spectral_rows("circular_corr_fft", g, k, true)
}
