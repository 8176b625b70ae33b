//! The nine-branch slow-fast encoding block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Role, Var};
use crate::error::{Error, Result};
use crate::hyperzzw::{
    global_hyperzzw_1d, global_hyperzzw_2d, hyper_channel_interaction, hyper_interaction, local_hyperzzw,
};
use crate::slownet::{GlobalKernelNet, HyperWeightKind, HyperWeightNet, LocalKernelNet, MfnConfig};
use crate::standardize::{self, g_ibs, instance_standardize};
use crate::tensor::{Scalar, Tensor};

/// Branches in concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Global HyperZZW on the channel-mixer view.
    GlobalMixer,
    /// Global HyperZZW on the RGU view.
    GlobalRgu,
    /// Global HyperZZW on the hyper-channel view.
    GlobalChannel,
    /// Local HyperZZW on the channel-mixer view, first kernel size.
    Local,
    /// Mutual pair, member on the RGU view (second kernel size).
    MutualRgu,
    /// Mutual pair, member on the hyper-channel view (third kernel size).
    MutualChannel,
    SiGlu,
    /// Channel-mixer view passed through.
    Middle,
    HyperInteraction,
}

impl Branch {
    pub const ALL: [Branch; 9] = [
        Branch::GlobalMixer,
        Branch::GlobalRgu,
        Branch::GlobalChannel,
        Branch::Local,
        Branch::MutualRgu,
        Branch::MutualChannel,
        Branch::SiGlu,
        Branch::Middle,
        Branch::HyperInteraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Branch::GlobalMixer => "global_mixer",
            Branch::GlobalRgu => "global_rgu",
            Branch::GlobalChannel => "global_channel",
            Branch::Local => "local",
            Branch::MutualRgu => "mutual_rgu",
            Branch::MutualChannel => "mutual_channel",
            Branch::SiGlu => "si_glu",
            Branch::Middle => "middle",
            Branch::HyperInteraction => "hyper_interaction",
        }
    }
}

fn default_lambda() -> usize {
    2
}
fn default_kernels() -> Vec<usize> {
    vec![3, 5, 7]
}
fn default_global_mfn() -> MfnConfig {
    MfnConfig::new(32, 2)
}
fn default_local_mfn() -> MfnConfig {
    MfnConfig::new(32, 2)
}
fn default_hyper_mfn() -> MfnConfig {
    MfnConfig::new(16, 1)
}
fn default_groups() -> usize {
    4
}
fn default_eps() -> Scalar {
    standardize::DEFAULT_EPS
}
fn default_branches() -> Vec<Branch> {
    Branch::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfneConfig {
    pub in_channels: usize,
    /// Output channels are `lambda · in_channels`.
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    /// Kernel sizes of the local, mutual-RGU and mutual-channel branches.
    #[serde(default = "default_kernels")]
    pub local_kernels: Vec<usize>,
    #[serde(default = "default_global_mfn")]
    pub global_mfn: MfnConfig,
    #[serde(default = "default_local_mfn")]
    pub local_mfn: MfnConfig,
    /// Generators of the hyper-weights `w_c`, `w_s`.
    #[serde(default = "default_hyper_mfn")]
    pub hyper_mfn: MfnConfig,
    /// G-IBS groups after the bottleneck.
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_eps")]
    pub eps: Scalar,
    /// Enabled branches; order in the concat is fixed regardless.
    #[serde(default = "default_branches")]
    pub branches: Vec<Branch>,
}

impl SfneConfig {
    pub fn new(in_channels: usize) -> Self {
        SfneConfig {
            in_channels,
            lambda: default_lambda(),
            local_kernels: default_kernels(),
            global_mfn: default_global_mfn(),
            local_mfn: default_local_mfn(),
            hyper_mfn: default_hyper_mfn(),
            groups: default_groups(),
            eps: default_eps(),
            branches: default_branches(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.lambda * self.in_channels
    }

    pub fn has(&self, b: Branch) -> bool {
        self.branches.contains(&b)
    }

    pub fn num_branches(&self) -> usize {
        Branch::ALL.iter().filter(|&&b| self.has(b)).count()
    }

    pub fn concat_channels(&self) -> usize {
        self.num_branches() * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.in_channels;
        if c == 0 || self.lambda == 0 {
            return Err(Error::Config("block channels and lambda must be at least 1".into()));
        }
        if self.local_kernels.len() != 3 {
            return Err(Error::Config(format!("expected three local kernel sizes, got {:?}", self.local_kernels)));
        }
        if let Some(k) = self.local_kernels.iter().find(|&&k| k % 2 == 0 || k == 0) {
            return Err(Error::Config(format!("local kernel sizes must be odd, got {k}")));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].contains(b) {
                return Err(Error::Config(format!("branch {} listed twice", b.name())));
            }
        }
        if self.branches.is_empty() {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if self.concat_channels() < self.out_channels() {
            return Err(Error::Config(format!(
                "bottleneck would expand {} concatenated channels to {}",
                self.concat_channels(),
                self.out_channels()
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.groups == 0 || self.out_channels() % self.groups != 0 {
            return Err(Error::Config(format!(
                "{} G-IBS groups do not divide {} output channels",
                self.groups,
                self.out_channels()
            )));
        }
        self.global_mfn.validate()?;
        self.local_mfn.validate()?;
        self.hyper_mfn.validate()
    }

    fn needs_mixer(&self) -> bool {
        self.has(Branch::GlobalMixer) || self.has(Branch::Local) || self.has(Branch::Middle)
    }

    fn needs_rgu(&self) -> bool {
        self.has(Branch::GlobalRgu) || self.has(Branch::MutualRgu)
    }

    fn needs_channel_view(&self) -> bool {
        self.has(Branch::GlobalChannel) || self.has(Branch::MutualChannel)
    }

    /// True when the block generates a global kernel (and so joins the slow loss).
    pub fn has_global_kernel(&self) -> bool {
        self.needs_rgu() || [Branch::GlobalMixer, Branch::GlobalChannel].iter().any(|&b| self.has(b))
    }
}

/// Si-GLU, `σ(x) ⊙ x`.
pub fn si_glu(g: &mut Graph, x: Var) -> Var {
    g.si_glu(x)
}

/// Per-position linear channel map followed by instance standardization.
/// `w: [C, C]`, `b: [C, 1, ...]`.
pub fn channel_mixer(g: &mut Graph, x: Var, w: Var, b: Var, eps: Scalar) -> Result<Var> {
    let y = g.channel_mix(w, x)?;
    let y = g.add(y, b)?;
    instance_standardize(g, y, eps)
}

/// Parameters of one recursive gated unit.
#[derive(Clone, Copy, Debug)]
pub struct RguVars {
    pub w_k: Var,
    pub w_v: Var,
    pub w: Var,
    pub w_y: Var,
    pub b: Var,
}

/// `Y = W^Y (GeLU(IS(W^K x ⊙ W W^V x)) + b)`.
pub fn rgu(g: &mut Graph, x: Var, p: &RguVars, eps: Scalar) -> Result<Var> {
    let k = g.channel_mix(p.w_k, x)?;
    let v = g.channel_mix(p.w_v, x)?;
    let wv = g.channel_mix(p.w, v)?;
    let kwv = g.mul(k, wv)?;
    let s = instance_standardize(g, kwv, eps)?;
    let q = g.gelu(s);
    let q = g.add(q, p.b)?;
    g.channel_mix(p.w_y, q)
}

/// Mutual pair: `slow1` turns `z2` into `K̂_l^1` and `slow2` turns `z1` into
/// `K̂_l^2`; returns `(z1 ⊛ K̂_l^2, z2 ⊛ K̂_l^1)`.
pub fn muhkgen(
    g: &mut Graph,
    store: &ParamStore,
    z1: Var,
    z2: Var,
    slow1: &LocalKernelNet,
    slow2: &LocalKernelNet,
) -> Result<(Var, Var)> {
    if g.shape(z1) != g.shape(z2) {
        return Err(Error::shape("muhkgen", g.shape(z1), g.shape(z2)));
    }
    let k2 = local_kernel(g, store, slow2, z1)?;
    let k1 = local_kernel(g, store, slow1, z2)?;
    Ok((local_hyperzzw(g, z1, k2)?, local_hyperzzw(g, z2, k1)?))
}

/// Runs a local generator on `z`, viewing 1D activations as `[B, C, 1, L]`.
fn local_kernel(g: &mut Graph, store: &ParamStore, net: &LocalKernelNet, z: Var) -> Result<Var> {
    let zs = g.shape(z).to_vec();
    let z4 = if zs.len() == 3 { g.reshape(z, &[zs[0], zs[1], 1, zs[2]])? } else { z };
    net.generate(g, store, z4)
}

/// 1×1 projection of the concatenated branches followed by G-IBS.
pub fn bottleneck(g: &mut Graph, concat: Var, w: Var, b: Var, groups: usize, eps: Scalar) -> Result<Var> {
    let (co, ci) = (g.shape(w)[0], g.shape(w)[1]);
    if g.shape(concat)[1] != ci || ci < co {
        return Err(Error::shape("bottleneck", g.shape(w), g.shape(concat)));
    }
    let y = g.channel_mix(w, concat)?;
    let y = g.add(y, b)?;
    g_ibs(g, y, groups, eps)
}

/// Everything a block exposes besides its output.
#[derive(Clone, Debug)]
pub struct SfneOutput {
    pub y: Var,
    /// Shared global kernel `[1, C, ...]`, if any global path is enabled.
    pub k_g: Option<Var>,
    /// `K̂_g` of the first enabled global branch.
    pub k_hat_g: Option<Var>,
    /// Branch outputs in concatenation order.
    pub branches: Vec<(Branch, Var)>,
}

/// A registered block.
#[derive(Clone, Debug)]
pub struct SfneBlock {
    cfg: SfneConfig,
    prefix: String,
    spatial: Vec<usize>,
    global: Option<GlobalKernelNet>,
    local: Option<LocalKernelNet>,
    /// Generator feeding the RGU-view member (kernel from that view).
    mutual_rgu: Option<LocalKernelNet>,
    /// Generator feeding the channel-view member.
    mutual_channel: Option<LocalKernelNet>,
    hci_wc: Option<HyperWeightNet>,
    hi: Option<(HyperWeightNet, HyperWeightNet)>,
}

impl SfneBlock {
    /// Registers parameters for block `index` operating on `spatial` extents
    /// (`[H, W]` or `[L]`).
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &SfneConfig,
        index: usize,
        spatial: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.in_channels;
        let blk = Some(index);
        let p = format!("block{index}");
        let one_d = spatial.len() == 1;
        let s_c = 1.0 / (c as Scalar).sqrt();
        let col: Vec<usize> = std::iter::once(c).chain(std::iter::repeat(1).take(spatial.len())).collect();
        let fast = |store: &mut ParamStore, rng: &mut R, name: String, shape: &[usize], bound: Scalar, role: Role| {
            store.insert(name, Tensor::uniform(shape, -bound, bound, rng), role, blk)
        };
        if cfg.needs_mixer() {
            fast(store, rng, format!("{p}.mixer.W"), &[c, c], s_c, Role::ChannelMixer)?;
            fast(store, rng, format!("{p}.mixer.b"), &col, s_c, Role::ChannelMixer)?;
        }
        if cfg.needs_rgu() {
            for n in ["W_K", "W_V", "W", "W_Y"] {
                fast(store, rng, format!("{p}.rgu.{n}"), &[c, c], s_c, Role::ChannelMixer)?;
            }
            fast(store, rng, format!("{p}.rgu.b"), &col, s_c, Role::ChannelMixer)?;
        }
        let global = if cfg.has_global_kernel() {
            Some(GlobalKernelNet::register(store, rng, &format!("{p}.slow.global"), &cfg.global_mfn, c, spatial, blk)?)
        } else {
            None
        };
        let ks = &cfg.local_kernels;
        let local_net = |store: &mut ParamStore, rng: &mut R, name: &str, k: usize| {
            LocalKernelNet::register(store, rng, &format!("{p}.slow.{name}"), &cfg.local_mfn, c, k, one_d, blk)
        };
        let local = if cfg.has(Branch::Local) { Some(local_net(store, rng, "local", ks[0])?) } else { None };
        let mutual_rgu =
            if cfg.has(Branch::MutualRgu) { Some(local_net(store, rng, "mutual_rgu", ks[1])?) } else { None };
        let mutual_channel =
            if cfg.has(Branch::MutualChannel) { Some(local_net(store, rng, "mutual_channel", ks[2])?) } else { None };
        let hw = |store: &mut ParamStore, rng: &mut R, name: &str, kind| {
            HyperWeightNet::register(store, rng, &format!("{p}.slow.{name}"), &cfg.hyper_mfn, kind, c, spatial, blk)
        };
        let hci_wc = if cfg.needs_channel_view() { Some(hw(store, rng, "hci_wc", HyperWeightKind::Channel)?) } else { None };
        let hi = if cfg.has(Branch::HyperInteraction) {
            Some((hw(store, rng, "hi_wc", HyperWeightKind::Channel)?, hw(store, rng, "hi_ws", HyperWeightKind::Spatial)?))
        } else {
            None
        };
        let n = cfg.concat_channels();
        let co = cfg.out_channels();
        let out_col: Vec<usize> = std::iter::once(co).chain(std::iter::repeat(1).take(spatial.len())).collect();
        fast(store, rng, format!("{p}.bottleneck.W"), &[co, n], 1.0 / (n as Scalar).sqrt(), Role::Bottleneck)?;
        store.insert(format!("{p}.bottleneck.b"), Tensor::zeros(&out_col), Role::Bottleneck, blk)?;
        Ok(SfneBlock {
            cfg: cfg.clone(),
            prefix: p,
            spatial: spatial.to_vec(),
            global,
            local,
            mutual_rgu,
            mutual_channel,
            hci_wc,
            hi,
        })
    }

    pub fn config(&self) -> &SfneConfig {
        &self.cfg
    }

    pub fn global_kernel_net(&self) -> Option<&GlobalKernelNet> {
        self.global.as_ref()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<SfneOutput> {
        self.check_input(g, x)?;
        let k_g = match &self.global {
            Some(net) => Some(net.generate(g, store).map_err(|e| e.in_branch("global_kernel"))?),
            None => None,
        };
        self.forward_inner(g, store, x, k_g)
    }

    /// Like [`forward`](Self::forward) but with a caller-supplied global
    /// kernel `[1, C, spatial...]` in place of the generated one.
    pub fn forward_with_kernel(&self, g: &mut Graph, store: &ParamStore, x: Var, k_g: Var) -> Result<SfneOutput> {
        self.check_input(g, x)?;
        if self.global.is_none() {
            return Err(Error::InvalidArgument(format!("{}: no global branch is enabled", self.prefix)));
        }
        let mut expect = vec![1, self.cfg.in_channels];
        expect.extend(&self.spatial);
        if g.shape(k_g) != expect {
            return Err(Error::shape("sfne_forward", &expect, g.shape(k_g)));
        }
        self.forward_inner(g, store, x, Some(k_g))
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let xs = g.shape(x);
        if xs.len() != self.spatial.len() + 2 || xs[1] != self.cfg.in_channels || xs[2..] != self.spatial[..] {
            let mut expect = vec![xs[0], self.cfg.in_channels];
            expect.extend(&self.spatial);
            return Err(Error::shape("sfne_forward", &expect, xs));
        }
        Ok(())
    }

    fn forward_inner(&self, g: &mut Graph, store: &ParamStore, x: Var, k_g: Option<Var>) -> Result<SfneOutput> {
        let cfg = &self.cfg;
        let p = &self.prefix;
        let eps = cfg.eps;
        let one_d = self.spatial.len() == 1;
        let global_op = if one_d { global_hyperzzw_1d } else { global_hyperzzw_2d };
        let br = |name: &'static str| move |e: Error| e.in_branch(name);
        let m = if cfg.needs_mixer() {
            let w = g.param(store, &format!("{p}.mixer.W"))?;
            let b = g.param(store, &format!("{p}.mixer.b"))?;
            Some(channel_mixer(g, x, w, b, eps).map_err(br("channel_mixer"))?)
        } else {
            None
        };
        let r = if cfg.needs_rgu() {
            let vars = RguVars {
                w_k: g.param(store, &format!("{p}.rgu.W_K"))?,
                w_v: g.param(store, &format!("{p}.rgu.W_V"))?,
                w: g.param(store, &format!("{p}.rgu.W"))?,
                w_y: g.param(store, &format!("{p}.rgu.W_Y"))?,
                b: g.param(store, &format!("{p}.rgu.b"))?,
            };
            let view = (|| -> Result<Var> {
                let kx = g.mul(x, k_g.expect("rgu view implies a global kernel"))?;
                let a = rgu(g, x, &vars, eps)?;
                let b = rgu(g, kx, &vars, eps)?;
                let s = g.add(a, b)?;
                instance_standardize(g, s, eps)
            })();
            Some(view.map_err(br("rgu_mixer"))?)
        } else {
            None
        };
        let hc = match &self.hci_wc {
            Some(net) => {
                let view = (|| -> Result<Var> {
                    let w_c = net.generate(g, store)?;
                    let h = hyper_channel_interaction(g, x, w_c)?;
                    instance_standardize(g, h, eps)
                })();
                Some(view.map_err(br("hyper_channel"))?)
            }
            None => None,
        };

        let mut outs: Vec<(Branch, Var)> = Vec::with_capacity(9);
        let mut k_hat_g = None;
        for (b, view) in [(Branch::GlobalMixer, m), (Branch::GlobalRgu, r), (Branch::GlobalChannel, hc)] {
            if cfg.has(b) {
                let (kh, zg) = global_op(g, view.expect("view built"), k_g.expect("kernel built")).map_err(br(b.name()))?;
                k_hat_g.get_or_insert(kh);
                outs.push((b, zg));
            }
        }
        if let Some(net) = &self.local {
            let z = m.expect("mixer view");
            let y = (|| -> Result<Var> {
                let k = local_kernel(g, store, net, z)?;
                local_hyperzzw(g, z, k)
            })()
            .map_err(br(Branch::Local.name()))?;
            outs.push((Branch::Local, y));
        }
        for (b, net, view) in [
            (Branch::MutualRgu, &self.mutual_rgu, r),
            (Branch::MutualChannel, &self.mutual_channel, hc),
        ] {
            if let Some(net) = net {
                let z = view.expect("view built");
                let y = (|| -> Result<Var> {
                    let k = local_kernel(g, store, net, z)?;
                    local_hyperzzw(g, z, k)
                })()
                .map_err(br(b.name()))?;
                outs.push((b, y));
            }
        }
        if cfg.has(Branch::SiGlu) {
            outs.push((Branch::SiGlu, si_glu(g, x)));
        }
        if cfg.has(Branch::Middle) {
            outs.push((Branch::Middle, m.expect("mixer view")));
        }
        if let Some((wc_net, ws_net)) = &self.hi {
            let y = (|| -> Result<Var> {
                let high = if outs.is_empty() {
                    x
                } else {
                    let mut acc = outs[0].1;
                    for &(_, v) in &outs[1..] {
                        acc = g.add(acc, v)?;
                    }
                    g.scale(acc, 1.0 / outs.len() as Scalar)
                };
                let w_c = wc_net.generate(g, store)?;
                let w_s = ws_net.generate(g, store)?;
                hyper_interaction(g, x, high, w_c, w_s)
            })()
            .map_err(br(Branch::HyperInteraction.name()))?;
            outs.push((Branch::HyperInteraction, y));
        }

        let parts: Vec<Var> = outs.iter().map(|&(_, v)| v).collect();
        let cat = g.concat(&parts, 1)?;
        let w = g.param(store, &format!("{p}.bottleneck.W"))?;
        let b = g.param(store, &format!("{p}.bottleneck.b"))?;
        let y = bottleneck(g, cat, w, b, cfg.groups, eps).map_err(br("bottleneck"))?;
        Ok(SfneOutput { y, k_g, k_hat_g, branches: outs })
    }
}
