//! Coordinate networks that generate kernels and hyper-weights.
//!
//! All generators are multiplicative filter networks over a grid of
//! normalized coordinates. Internally a grid is a `[D, P]` matrix (D
//! coordinate axes, P positions) and hidden states are `[d, P]`; vector
//! parameters are stored as `[d, 1]` columns so they broadcast over P.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Role, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Epsilon added to channel norms in s-renormalization.
pub const RENORM_EPS: Scalar = 1e-8;

/// Base filter frequency; a generator's bound is `BASE_OMEGA · scale`.
pub const BASE_OMEGA: Scalar = 64.0;

fn default_scale() -> Scalar {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfnConfig {
    /// Hidden width d.
    pub width: usize,
    /// Number of hidden layers l.
    pub depth: usize,
    /// Filter frequencies start in `±BASE_OMEGA·scale / √(depth + 1)`.
    /// Coordinates span [−1, 1], so a grid of n points aliases anything
    /// above about `π(n − 1)/2` rad.
    #[serde(default = "default_scale")]
    pub scale: Scalar,
}

impl MfnConfig {
    pub fn new(width: usize, depth: usize) -> Self {
        MfnConfig { width, depth, scale: default_scale() }
    }

    pub fn with_scale(self, scale: Scalar) -> Self {
        MfnConfig { scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("slow network width must be at least 1".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("frequency scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

fn axis_coords(n: usize) -> Vec<Scalar> {
    if n == 1 {
        return vec![0.0];
    }
    let step = 2.0 / (n - 1) as Scalar;
    let mut v: Vec<Scalar> = (0..n).map(|i| -1.0 + step * i as Scalar).collect();
    v[n - 1] = 1.0;
    v
}

/// `[1, 2, H, W]` grid; channel 0 holds the row coordinate, channel 1 the column.
pub fn make_grid(h: usize, w: usize) -> Tensor {
    let (rows, cols) = (axis_coords(h), axis_coords(w));
    Tensor::from_fn(&[1, 2, h, w], |i| if i[1] == 0 { rows[i[2]] } else { cols[i[3]] })
}

/// `[1, 1, L]` grid.
pub fn make_grid_1d(l: usize) -> Tensor {
    Tensor::new(&[1, 1, l], axis_coords(l)).expect("l >= 1")
}

/// Grid over `spatial` extents (one or two axes) as a `[D, P]` matrix.
pub fn grid_matrix(spatial: &[usize]) -> Result<Tensor> {
    let grid = match *spatial {
        [l] => make_grid_1d(l),
        [h, w] => make_grid(h, w),
        _ => {
            return Err(Error::InvalidShape { shape: spatial.to_vec(), reason: "expected one or two spatial axes".into() })
        }
    };
    let p = spatial.iter().product();
    Ok(grid.into_reshaped(&[spatial.len(), p]))
}

/// `sin(w·c + φ)`: coordinates `[D, P]`, `w: [d, D]`, `φ: [d, 1]` → `[d, P]`.
pub fn sin_filter(g: &mut Graph, coords: Var, w: Var, phi: Var) -> Result<Var> {
    let u = g.matmul(w, coords)?;
    let u = g.add(u, phi)?;
    Ok(g.sin(u))
}

/// `ĥ_j = a_j·h_j + b_j·h_j/(‖h_j‖₂ + ε)`, norms per row of `h: [d, P]`.
pub fn s_renormalize(g: &mut Graph, h: Var, a: Var, b: Var) -> Result<Var> {
    let n = g.l2_normalize(h, &[1], RENORM_EPS)?;
    let id = g.mul(h, a)?;
    let nb = g.mul(n, b)?;
    g.add(id, nb)
}

/// One multiplicative filter network with optional context gating.
#[derive(Clone, Debug)]
pub struct Mfn {
    prefix: String,
    cfg: MfnConfig,
    in_dim: usize,
    out_dim: usize,
    gated: bool,
}

impl Mfn {
    /// Registers all parameters under `prefix`.
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        cfg: &MfnConfig,
        in_dim: usize,
        out_dim: usize,
        gated: bool,
        block: Option<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let l = cfg.depth;
        let wf = BASE_OMEGA * cfg.scale / ((l + 1) as Scalar).sqrt();
        let lin = (1.0 / d as Scalar).sqrt();
        let pi = std::f64::consts::PI as Scalar;
        let mut put = |name: String, t: Tensor| store.insert(name, t, Role::SlowNet, block);
        for i in 0..=l {
            put(format!("{prefix}.filter{i}.w"), Tensor::uniform(&[d, in_dim], -wf, wf, rng))?;
            put(format!("{prefix}.filter{i}.phi"), Tensor::uniform(&[d, 1], -pi, pi, rng))?;
        }
        for i in 0..l {
            put(format!("{prefix}.W{i}"), Tensor::uniform(&[d, d], -lin, lin, rng))?;
            put(format!("{prefix}.b{i}"), Tensor::uniform(&[d, 1], -lin, lin, rng))?;
            if gated {
                put(format!("{prefix}.ctx{i}.W"), Tensor::uniform(&[d, d], -lin, lin, rng))?;
                put(format!("{prefix}.ctx{i}.b"), Tensor::ones(&[d, 1]))?;
            }
        }
        if l > 0 {
            put(format!("{prefix}.renorm.a"), Tensor::ones(&[d, 1]))?;
            put(format!("{prefix}.renorm.b"), Tensor::full(&[d, 1], 0.1))?;
        }
        put(format!("{prefix}.out.W"), Tensor::uniform(&[out_dim, d], -lin, lin, rng))?;
        put(format!("{prefix}.out.b"), Tensor::uniform(&[out_dim, 1], -lin, lin, rng))?;
        Ok(Mfn { prefix: prefix.to_string(), cfg: cfg.clone(), in_dim, out_dim, gated })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn config(&self) -> &MfnConfig {
        &self.cfg
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Closed-form parameter count; independent of the grid size.
    pub fn num_params(cfg: &MfnConfig, in_dim: usize, out_dim: usize, gated: bool) -> usize {
        let (d, l) = (cfg.width, cfg.depth);
        let filters = (l + 1) * (d * in_dim + d);
        let hidden = l * (d * d + d) * if gated { 2 } else { 1 };
        let renorm = if l > 0 { 2 * d } else { 0 };
        filters + hidden + renorm + out_dim * d + out_dim
    }

    /// Evaluates the network on `coords: [D, P]`; `ctx: [d, P]` is required
    /// for gated networks. Returns `[out_dim, P]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, coords: Var, ctx: Option<Var>) -> Result<Var> {
        if g.shape(coords)[0] != self.in_dim {
            return Err(Error::shape(
                "mfn_forward",
                &[self.in_dim, g.shape(coords)[1]],
                g.shape(coords),
            ));
        }
        let p = &self.prefix;
        let param = |g: &mut Graph, n: String| g.param(store, &n);
        let w = param(g, format!("{p}.filter0.w"))?;
        let phi = param(g, format!("{p}.filter0.phi"))?;
        let mut h = sin_filter(g, coords, w, phi)?;
        for i in 0..self.cfg.depth {
            let wl = param(g, format!("{p}.W{i}"))?;
            let bl = param(g, format!("{p}.b{i}"))?;
            let lin = g.matmul(wl, h)?;
            let lin = g.add(lin, bl)?;
            let wf = param(g, format!("{p}.filter{}.w", i + 1))?;
            let pf = param(g, format!("{p}.filter{}.phi", i + 1))?;
            let filt = sin_filter(g, coords, wf, pf)?;
            h = g.mul(lin, filt)?;
            if self.gated {
                let z = ctx.ok_or_else(|| Error::InvalidArgument(format!("{p}: gated network needs a context")))?;
                let wz = param(g, format!("{p}.ctx{i}.W"))?;
                let bz = param(g, format!("{p}.ctx{i}.b"))?;
                let gate = g.matmul(wz, z)?;
                let gate = g.add(gate, bz)?;
                h = g.mul(gate, h)?;
            }
            let a = param(g, format!("{p}.renorm.a"))?;
            let b = param(g, format!("{p}.renorm.b"))?;
            h = s_renormalize(g, h, a, b)?;
        }
        let wo = param(g, format!("{p}.out.W"))?;
        let bo = param(g, format!("{p}.out.b"))?;
        let o = g.matmul(wo, h)?;
        g.add(o, bo)
    }
}

/// Generates the input-independent global kernel `K_g: [1, C, spatial...]`.
#[derive(Clone, Debug)]
pub struct GlobalKernelNet {
    mfn: Mfn,
    channels: usize,
    spatial: Vec<usize>,
    coords: Tensor,
}

impl GlobalKernelNet {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        cfg: &MfnConfig,
        channels: usize,
        spatial: &[usize],
        block: Option<usize>,
    ) -> Result<Self> {
        let coords = grid_matrix(spatial)?;
        let mfn = Mfn::register(store, rng, prefix, cfg, spatial.len(), channels, false, block)?;
        Ok(GlobalKernelNet { mfn, channels, spatial: spatial.to_vec(), coords })
    }

    pub fn mfn(&self) -> &Mfn {
        &self.mfn
    }

    pub fn generate(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let c = g.constant(self.coords.clone());
        let k = self.mfn.forward(g, store, c, None)?;
        let mut shape = vec![1, self.channels];
        shape.extend(&self.spatial);
        g.reshape(k, &shape)
    }
}

/// Summarizes activations for local kernel generation: pool to the kernel
/// grid, reduce channels with `w_t: [d, C]`, average over the batch.
///
/// `z: [B, C, H, W]` gives `[1, d, kh, kw]`.
pub fn transform_t(g: &mut Graph, z: Var, w_t: Var, kh: usize, kw: usize) -> Result<Var> {
    let pooled = g.adaptive_avg_pool(z, kh, kw)?;
    let reduced = g.channel_mix(w_t, pooled)?;
    g.mean(reduced, &[0])
}

/// Generates context-dependent depthwise kernels `K̂_l: [C, 1, kh, kw]`.
///
/// In 1D mode the kernel is `[C, 1, 1, k]` and activations are viewed as
/// `[B, C, 1, L]`.
#[derive(Clone, Debug)]
pub struct LocalKernelNet {
    mfn: Mfn,
    channels: usize,
    kh: usize,
    kw: usize,
    t_name: String,
    coords: Tensor,
}

impl LocalKernelNet {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        cfg: &MfnConfig,
        channels: usize,
        k: usize,
        one_d: bool,
        block: Option<usize>,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Config(format!("{prefix}: local kernel size must be odd, got {k}")));
        }
        if cfg.depth == 0 {
            return Err(Error::Config(format!("{prefix}: a context-gated network needs depth >= 1")));
        }
        let (kh, kw) = if one_d { (1, k) } else { (k, k) };
        let spatial: Vec<usize> = if one_d { vec![k] } else { vec![k, k] };
        let coords = grid_matrix(&spatial)?;
        let mfn = Mfn::register(store, rng, prefix, cfg, spatial.len(), channels, true, block)?;
        let t_name = format!("{prefix}.T.W");
        let s = 1.0 / (channels as Scalar).sqrt();
        store.insert(t_name.clone(), Tensor::uniform(&[cfg.width, channels], -s, s, rng), Role::SlowNet, block)?;
        Ok(LocalKernelNet { mfn, channels, kh, kw, t_name, coords })
    }

    pub fn mfn(&self) -> &Mfn {
        &self.mfn
    }

    pub fn kernel_size(&self) -> usize {
        self.kw
    }

    pub fn num_params(cfg: &MfnConfig, channels: usize, one_d: bool) -> usize {
        Mfn::num_params(cfg, if one_d { 1 } else { 2 }, channels, true) + cfg.width * channels
    }

    /// `z` is `[B, C, H, W]` (or `[B, C, 1, L]` in 1D mode).
    pub fn generate(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let zs = g.shape(z);
        if zs.len() != 4 || zs[1] != self.channels {
            return Err(Error::shape("generate_local", &[zs[0], self.channels, self.kh, self.kw], zs));
        }
        let w_t = g.param(store, &self.t_name)?;
        let t = transform_t(g, z, w_t, self.kh, self.kw)?;
        let d = self.mfn.config().width;
        let ctx = g.reshape(t, &[d, self.kh * self.kw])?;
        let c = g.constant(self.coords.clone());
        let k = self.mfn.forward(g, store, c, Some(ctx))?;
        g.reshape(k, &[self.channels, 1, self.kh, self.kw])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperWeightKind {
    /// `w_c: [C, 1, 1]` (or `[C, 1]` in 1D) from a grid of length C.
    Channel,
    /// `w_s: [1, H, W]` (or `[1, L]`) from the spatial grid.
    Spatial,
}

/// Generates channel or spatial hyper-weights.
#[derive(Clone, Debug)]
pub struct HyperWeightNet {
    mfn: Mfn,
    out_shape: Vec<usize>,
    coords: Tensor,
}

impl HyperWeightNet {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        cfg: &MfnConfig,
        kind: HyperWeightKind,
        channels: usize,
        spatial: &[usize],
        block: Option<usize>,
    ) -> Result<Self> {
        let (grid, out_shape) = match kind {
            HyperWeightKind::Channel => {
                let mut s = vec![channels];
                s.extend(std::iter::repeat(1).take(spatial.len()));
                (vec![channels], s)
            }
            HyperWeightKind::Spatial => {
                let mut s = vec![1];
                s.extend(spatial);
                (spatial.to_vec(), s)
            }
        };
        let coords = grid_matrix(&grid)?;
        let mfn = Mfn::register(store, rng, prefix, cfg, grid.len(), 1, false, block)?;
        Ok(HyperWeightNet { mfn, out_shape, coords })
    }

    pub fn mfn(&self) -> &Mfn {
        &self.mfn
    }

    pub fn generate(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let c = g.constant(self.coords.clone());
        let w = self.mfn.forward(g, store, c, None)?;
        g.reshape(w, &self.out_shape)
    }
}
