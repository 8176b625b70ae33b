//! Affine-free standardization without running statistics.
//!
//! Everything here works for `[B, C, H, W]` and `[B, C, L]` activations:
//! "spatial" means every axis after the channel axis.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: Scalar = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdConfig {
    pub eps: Scalar,
    pub groups: usize,
}

impl Default for StdConfig {
    fn default() -> Self {
        StdConfig { eps: DEFAULT_EPS, groups: 1 }
    }
}

impl StdConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("standardization eps must be positive, got {}", self.eps)));
        }
        check_groups(channels, self.groups)
    }
}

fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::InvalidArgument(format!("{groups} groups do not divide {channels} channels")));
    }
    Ok(())
}

fn spatial_axes(rank: usize) -> std::ops::Range<usize> {
    2..rank
}

fn check_rank(g: &Graph, x: Var) -> Result<usize> {
    let r = g.shape(x).len();
    if r < 2 {
        return Err(Error::InvalidShape { shape: g.shape(x).to_vec(), reason: "expected [B, C, ...]".into() });
    }
    Ok(r)
}

pub fn z_score(g: &mut Graph, x: Var, axes: &[usize], eps: Scalar) -> Result<Var> {
    g.z_score(x, axes, eps)
}

/// Per channel over batch and space.
pub fn batch_standardize(g: &mut Graph, x: Var, eps: Scalar) -> Result<Var> {
    let r = check_rank(g, x)?;
    let axes: Vec<usize> = std::iter::once(0).chain(spatial_axes(r)).collect();
    g.z_score(x, &axes, eps)
}

/// Per (sample, channel) over space.
pub fn instance_standardize(g: &mut Graph, x: Var, eps: Scalar) -> Result<Var> {
    let r = check_rank(g, x)?;
    let axes: Vec<usize> = spatial_axes(r).collect();
    g.z_score(x, &axes, eps)
}

/// Contiguous channel groups; even groups are standardized jointly over
/// (batch, group channels, space), odd groups per sample over (group
/// channels, space).
pub fn g_ibs(g: &mut Graph, x: Var, groups: usize, eps: Scalar) -> Result<Var> {
    let r = check_rank(g, x)?;
    let c = g.shape(x)[1];
    check_groups(c, groups)?;
    let per = c / groups;
    let mut parts = Vec::with_capacity(groups);
    for i in 0..groups {
        let xi = g.narrow(x, 1, i * per, per)?;
        let axes: Vec<usize> = if i % 2 == 0 { (0..r).collect() } else { (1..r).collect() };
        parts.push(g.z_score(xi, &axes, eps)?);
    }
    g.concat(&parts, 1)
}

/// Standardization choice for tensor-level use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Batch,
    Instance,
    Gibs { groups: usize },
}

/// Applies `mode` outside of any training graph.
pub fn apply(x: &Tensor, mode: Mode, eps: Scalar) -> Result<Tensor> {
    let mut g = Graph::no_grad();
    let v = g.constant(x.clone());
    let out = match mode {
        Mode::Batch => batch_standardize(&mut g, v, eps)?,
        Mode::Instance => instance_standardize(&mut g, v, eps)?,
        Mode::Gibs { groups } => g_ibs(&mut g, v, groups, eps)?,
    };
    Ok(g.value(out).clone())
}
