//! HyperZZW operators: input-dependent fast weights built from slow kernels.
//!
//! 2D activations are `[B, C, H, W]`, 1D activations `[B, C, L]`.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

fn spatial_axes(g: &Graph, x: Var) -> Vec<usize> {
    (2..g.shape(x).len()).collect()
}

/// `K̂_g = Z ⊙ K_g` and `Z_g = Z ⊙ K̂_g`. Returns `(K̂_g, Z_g)`.
pub fn global_hyperzzw_2d(g: &mut Graph, z: Var, k_g: Var) -> Result<(Var, Var)> {
    let k_hat = g.mul(z, k_g)?;
    let z_g = g.mul(z, k_hat)?;
    Ok((k_hat, z_g))
}

/// `K̂_g = Z ⊙ K_g` and `Z_g = iFFT(FFT(Z) ⊙ FFT(K̂_g))` along the sequence.
pub fn global_hyperzzw_1d(g: &mut Graph, z: Var, k_g: Var) -> Result<(Var, Var)> {
    let k_hat = g.mul(z, k_g)?;
    let z_g = g.circular_conv(z, k_hat)?;
    Ok((k_hat, z_g))
}

/// Depthwise convolution of `z` with a generated kernel `[C, 1, kh, kw]`.
/// A 1D `z: [B, C, L]` is convolved as `[B, C, 1, L]` with a `[C, 1, 1, k]` kernel.
pub fn local_hyperzzw(g: &mut Graph, z: Var, k_l: Var) -> Result<Var> {
    let zs = g.shape(z).to_vec();
    match zs.len() {
        4 => g.depthwise_conv2d(z, k_l),
        3 => {
            let z4 = g.reshape(z, &[zs[0], zs[1], 1, zs[2]])?;
            let out = g.depthwise_conv2d(z4, k_l)?;
            g.reshape(out, &zs)
        }
        _ => Err(Error::InvalidShape { shape: zs, reason: "expected [B, C, H, W] or [B, C, L]".into() }),
    }
}

/// Per-sample channel descriptor: mean over space, axes kept.
fn channel_descriptor(g: &mut Graph, x: Var) -> Result<Var> {
    let axes = spatial_axes(g, x);
    g.mean(x, &axes)
}

/// `x ⊙ σ(z_c ⊙ w_c ⊙ z_c)` with `z_c` the spatial mean of `x`.
pub fn hyper_channel_interaction(g: &mut Graph, x: Var, w_c: Var) -> Result<Var> {
    let z_c = channel_descriptor(g, x)?;
    let s = g.mul(z_c, w_c)?;
    let s = g.mul(s, z_c)?;
    let gate = g.sigmoid(s);
    g.mul(x, gate)
}

/// Gates `x_low` with channel and spatial scores computed from `h_high`:
/// `x_low ⊙ σ((z_c ⊙ w_c ⊙ z_c) ⊙ (z_s ⊙ w_s ⊙ z_s))`, where `z_c` is the
/// spatial mean and `z_s` the channel mean of `h_high`.
pub fn hyper_interaction(g: &mut Graph, x_low: Var, h_high: Var, w_c: Var, w_s: Var) -> Result<Var> {
    if g.shape(x_low) != g.shape(h_high) {
        return Err(Error::shape("hyper_interaction", g.shape(x_low), g.shape(h_high)));
    }
    let z_c = channel_descriptor(g, h_high)?;
    let s_c = g.mul(z_c, w_c)?;
    let s_c = g.mul(s_c, z_c)?;
    let z_s = g.mean(h_high, &[1])?;
    let s_s = g.mul(z_s, w_s)?;
    let s_s = g.mul(s_s, z_s)?;
    let combined = g.mul(s_c, s_s)?;
    let gate = g.sigmoid(combined);
    g.mul(x_low, gate)
}
