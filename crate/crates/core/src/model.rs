//! Full classifier: 1×1 stem, stacked SFNE blocks, global pool, linear head.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Component, Graph, ParamStore, Role, Var};
use crate::error::{Error, Result};
use crate::losses::{slow_neural_loss_var, SlowLossReduction};
use crate::sfne::{SfneBlock, SfneConfig};
use crate::slownet::MfnConfig;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "1d")]
    OneD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub input_channels: usize,
    /// `[H, W]` in 2D mode, `[L]` in 1D mode.
    pub input_shape: Vec<usize>,
    pub stem_channels: usize,
    pub blocks: Vec<SfneConfig>,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Four blocks doubling 8 → 16 → 32 → 64 input channels on 28×28 images.
    /// Generator frequencies are scaled down to stay below the 28-point grid's
    /// Nyquist rate.
    pub fn desk() -> Self {
        let block = |c: usize| SfneConfig {
            global_mfn: MfnConfig::new(16, 2).with_scale(0.125),
            local_mfn: MfnConfig::new(16, 1).with_scale(0.125),
            hyper_mfn: MfnConfig::new(8, 1).with_scale(0.125),
            ..SfneConfig::new(c)
        };
        ModelConfig {
            mode: Mode::TwoD,
            input_channels: 1,
            input_shape: vec![28, 28],
            stem_channels: 8,
            blocks: vec![block(8), block(16), block(32), block(64)],
            num_classes: 10,
        }
    }

    /// Smallest configuration that still exercises every branch.
    pub fn tiny() -> Self {
        let block = |c: usize| SfneConfig {
            global_mfn: MfnConfig::new(4, 2),
            local_mfn: MfnConfig::new(3, 1),
            hyper_mfn: MfnConfig::new(3, 1),
            local_kernels: vec![3, 3, 5],
            groups: 2,
            ..SfneConfig::new(c)
        };
        ModelConfig {
            mode: Mode::TwoD,
            input_channels: 1,
            input_shape: vec![6, 6],
            stem_channels: 2,
            blocks: vec![block(2), block(4)],
            num_classes: 3,
        }
    }

    /// Two small blocks on 8×8 synthetic images with two classes.
    pub fn smoke() -> Self {
        let block = |c: usize| SfneConfig {
            global_mfn: MfnConfig::new(8, 1),
            local_mfn: MfnConfig::new(6, 1),
            hyper_mfn: MfnConfig::new(4, 1),
            local_kernels: vec![3, 3, 5],
            groups: 2,
            ..SfneConfig::new(c)
        };
        ModelConfig {
            mode: Mode::TwoD,
            input_channels: 1,
            input_shape: vec![8, 8],
            stem_channels: 4,
            blocks: vec![block(4), block(8)],
            num_classes: 2,
        }
    }

    /// Three blocks over 784-step pixel sequences. The local kernels span
    /// one to three image rows, and the global generator starts at four
    /// times the base frequency.
    pub fn seq() -> Self {
        let block = |c: usize| SfneConfig {
            global_mfn: MfnConfig::new(16, 2).with_scale(4.0),
            local_mfn: MfnConfig::new(16, 1),
            hyper_mfn: MfnConfig::new(8, 1),
            local_kernels: vec![29, 57, 85],
            ..SfneConfig::new(c)
        };
        ModelConfig {
            mode: Mode::OneD,
            input_channels: 1,
            input_shape: vec![784],
            stem_channels: 8,
            blocks: vec![block(8), block(16), block(32)],
            num_classes: 10,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["desk", "tiny", "smoke", "seq"];

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            "smoke" => Some(Self::smoke()),
            "seq" => Some(Self::seq()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rank = match self.mode {
            Mode::TwoD => 2,
            Mode::OneD => 1,
        };
        if self.input_shape.len() != rank || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input_shape {:?} does not fit {:?} mode",
                self.input_shape, self.mode
            )));
        }
        if self.input_channels == 0 || self.stem_channels == 0 || self.num_classes < 2 {
            return Err(Error::Config("channels must be positive and num_classes at least 2".into()));
        }
        let mut c = self.stem_channels;
        let mut kernels: Vec<usize> = Vec::new();
        for (j, b) in self.blocks.iter().enumerate() {
            if b.in_channels != c {
                return Err(Error::Config(format!("block {j} expects {} channels but receives {c}", b.in_channels)));
            }
            b.validate().map_err(|e| Error::Config(format!("block {j}: {e}")))?;
            for &k in &b.local_kernels {
                if self.input_shape.iter().any(|&s| k > s) {
                    return Err(Error::Config(format!("block {j}: kernel {k} exceeds input {:?}", self.input_shape)));
                }
            }
            if b.has_global_kernel() {
                if let Some(&t) = kernels.iter().find(|&&t| c % t != 0) {
                    return Err(Error::Config(format!(
                        "block {j}: kernel channels {c} are not a multiple of earlier {t}"
                    )));
                }
                kernels.push(c);
            }
            c = b.out_channels();
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, |b| b.out_channels())
    }

    /// Shape of a batch of `b` inputs.
    pub fn input_batch_shape(&self, b: usize) -> Vec<usize> {
        let mut s = vec![b, self.input_channels];
        s.extend(&self.input_shape);
        s
    }
}

/// Per-block view returned by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Tap {
    pub block: usize,
    /// Block output `[B, λC, ...]`.
    pub feature: Var,
    pub k_g: Option<Var>,
    pub k_hat_g: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Global kernels of the blocks that have one, in block order.
    pub trace: Vec<Var>,
    pub taps: Vec<Tap>,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub ce: Var,
    pub ls: Var,
    pub forward: ForwardOutput,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    blocks: Vec<SfneBlock>,
}

impl Model {
    /// Builds the model and its freshly initialized parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c0, c1) = (cfg.input_channels, cfg.stem_channels);
        let col = |c: usize| -> Vec<usize> { std::iter::once(c).chain(cfg.input_shape.iter().map(|_| 1)).collect() };
        let s = 1.0 / (c0 as Scalar).sqrt();
        store.insert("stem.W", Tensor::uniform(&[c1, c0], -s, s, &mut rng), Role::Stem, None)?;
        store.insert("stem.b", Tensor::uniform(&col(c1), -s, s, &mut rng), Role::Stem, None)?;
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for (j, b) in cfg.blocks.iter().enumerate() {
            blocks.push(SfneBlock::register(&mut store, &mut rng, b, j, &cfg.input_shape)?);
        }
        let cl = cfg.out_channels();
        let s = 1.0 / (cl as Scalar).sqrt();
        store.insert("head.W", Tensor::uniform(&[cl, cfg.num_classes], -s, s, &mut rng), Role::Head, None)?;
        store.insert("head.b", Tensor::zeros(&[1, cfg.num_classes]), Role::Head, None)?;
        Ok((Model { cfg: cfg.clone(), blocks }, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[SfneBlock] {
        &self.blocks
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<ForwardOutput> {
        let xs = g.shape(x).to_vec();
        let expect = self.cfg.input_batch_shape(xs[0]);
        if xs != expect {
            return Err(Error::shape("model_forward", &expect, &xs));
        }
        let w = g.param(store, "stem.W")?;
        let b = g.param(store, "stem.b")?;
        let h = g.channel_mix(w, x)?;
        let mut h = g.add(h, b)?;
        let mut trace = Vec::new();
        let mut taps = Vec::with_capacity(self.blocks.len());
        for (j, blk) in self.blocks.iter().enumerate() {
            let (y, k_g, k_hat_g) = if g.grad_enabled() {
                let out = blk.forward(g, store, h)?;
                (out.y, out.k_g, out.k_hat_g)
            } else {
                // Nothing is needed for backward, so each block's
                // intermediates are dropped as soon as it finishes.
                let mut sub = Graph::no_grad();
                let hv = sub.constant(g.value(h).clone());
                let out = blk.forward(&mut sub, store, hv)?;
                let mut keep = |v: Var| g.constant(sub.value(v).clone());
                (keep(out.y), out.k_g.map(&mut keep), out.k_hat_g.map(&mut keep))
            };
            trace.extend(k_g);
            taps.push(Tap { block: j, feature: y, k_g, k_hat_g });
            h = y;
        }
        let spatial: Vec<usize> = (2..xs.len()).collect();
        let pooled = g.mean(h, &spatial)?;
        let c = g.shape(pooled)[1];
        let feats = g.reshape(pooled, &[xs[0], c])?;
        let hw = g.param(store, "head.W")?;
        let hb = g.param(store, "head.b")?;
        let logits = g.matmul(feats, hw)?;
        let logits = g.add(logits, hb)?;
        Ok(ForwardOutput { logits, trace, taps })
    }

    /// `CE + α·L_s` for one batch.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        labels: &[usize],
        alpha: Scalar,
        reduction: SlowLossReduction,
    ) -> Result<LossOutput> {
        let forward = self.forward(g, store, x)?;
        let ce = g.cross_entropy(forward.logits, labels)?;
        let ls = slow_neural_loss_var(g, &forward.trace, reduction)?;
        let weighted = g.scale(ls, alpha);
        let total = g.add(ce, weighted)?;
        Ok(LossOutput { total, ce, ls, forward })
    }

    /// Logits for `x` in chunks of `batch_size`, without recording gradients.
    pub fn predict(&self, store: &ParamStore, x: &Tensor, batch_size: usize) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let len = batch_size.max(1).min(n - start);
            let mut g = Graph::no_grad();
            let xv = g.constant(x.narrow(0, start, len)?);
            let out = self.forward(&mut g, store, xv)?;
            parts.push(g.value(out.logits).clone());
            start += len;
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, 0)
    }
}

/// Parameter counts by component and role.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub slow: usize,
    pub fast: usize,
    pub by_role: BTreeMap<Role, usize>,
}

impl Counts {
    fn add(&mut self, role: Role, n: usize) {
        match role.component() {
            Component::Slow => self.slow += n,
            Component::Fast => self.fast += n,
        }
        *self.by_role.entry(role).or_default() += n;
    }

    pub fn total(&self) -> usize {
        self.slow + self.fast
    }

    pub fn role(&self, r: Role) -> usize {
        self.by_role.get(&r).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamReport {
    pub overall: Counts,
    /// Index `j` holds block `j`; stem and head are reported separately.
    pub blocks: Vec<Counts>,
    pub other: Counts,
}

impl ParamReport {
    pub fn slow_fraction(&self) -> f64 {
        self.overall.slow as f64 / self.overall.total().max(1) as f64
    }

    pub fn fast_fraction(&self) -> f64 {
        self.overall.fast as f64 / self.overall.total().max(1) as f64
    }

    /// Plain-text table: one row per block plus stem/head and a total row.
    pub fn table(&self) -> String {
        let roles = [Role::SlowNet, Role::ChannelMixer, Role::Bottleneck, Role::Stem, Role::Head];
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "part");
        for r in roles {
            let _ = write!(s, " {:>14}", r.label());
        }
        let _ = writeln!(s, " {:>10} {:>8}", "total", "slow%");
        let mut row = |name: String, c: &Counts| {
            let _ = write!(s, "{name:<8}");
            for r in roles {
                let _ = write!(s, " {:>14}", c.role(r));
            }
            let frac = 100.0 * c.slow as f64 / c.total().max(1) as f64;
            let _ = writeln!(s, " {:>10} {:>7.1}%", c.total(), frac);
        };
        for (j, c) in self.blocks.iter().enumerate() {
            row(format!("block{j}"), c);
        }
        row("stem+head".into(), &self.other);
        row("total".into(), &self.overall);
        s
    }
}

/// Counts every stored parameter by component, role and block.
pub fn count_params(model: &Model, store: &ParamStore) -> ParamReport {
    let mut blocks = vec![Counts::default(); model.blocks.len()];
    let mut other = Counts::default();
    let mut overall = Counts::default();
    for p in store.iter() {
        let n = p.value.numel();
        overall.add(p.role, n);
        match p.block {
            Some(j) if j < blocks.len() => blocks[j].add(p.role, n),
            _ => other.add(p.role, n),
        }
    }
    ParamReport { overall, blocks, other }
}
