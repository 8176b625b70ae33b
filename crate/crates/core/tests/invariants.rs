use std::time::Instant;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use terminator_core::autograd::{grad_check, Component, GradCheckOptions, Graph, ParamStore};
use terminator_core::data::{self, batches, SyntheticKind};
use terminator_core::hyperzzw::{global_hyperzzw_1d, global_hyperzzw_2d};
use terminator_core::losses::{channel_expand, cross_entropy, slow_neural_loss, SlowLossReduction};
use terminator_core::model::{Model, ModelConfig};
use terminator_core::sfne::{Branch, SfneBlock, SfneConfig};
use terminator_core::slownet::{GlobalKernelNet, LocalKernelNet, MfnConfig};
use terminator_core::standardize::{self, Mode};
use terminator_core::tensor::{reduce, ReduceKind, Scalar};
use terminator_core::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- tensors ----

fn tile(t: &Tensor, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let idx: Vec<usize> = i.iter().zip(t.shape()).map(|(&x, &d)| if d == 1 { 0 } else { x }).collect();
        t.get(&idx)
    })
}

#[test]
fn delta_kernel_is_identity() {
    let z = Tensor::uniform(&[2, 3, 5, 4], -1.0, 1.0, &mut rng(0));
    for k in [1, 3, 5] {
        let ker = Tensor::from_fn(&[3, 1, k, k], |i| if i[2] == k / 2 && i[3] == k / 2 { 1.0 } else { 0.0 });
        assert_eq!(terminator_core::tensor::depthwise_conv2d(&z, &ker).unwrap(), z);
    }
}

#[test]
fn constant_reductions() {
    let t = Tensor::full(&[3, 4, 5], 2.5);
    for axes in [vec![0], vec![1, 2], vec![0, 1, 2]] {
        assert!(reduce(&t, &axes, ReduceKind::Mean).unwrap().data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(reduce(&t, &axes, ReduceKind::Var).unwrap().data().iter().all(|&v| v.abs() < 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_multiply_equals_tiling(
        shape in prop::collection::vec(1usize..=5, 1..=4),
        mask_a in prop::collection::vec(any::<bool>(), 4),
        mask_b in prop::collection::vec(any::<bool>(), 4),
        seed in any::<u64>(),
    ) {
        let collapse = |m: &[bool]| -> Vec<usize> { shape.iter().zip(m).map(|(&d, &k)| if k { d } else { 1 }).collect() };
        let mut r = rng(seed);
        let a = Tensor::uniform(&collapse(&mask_a), -1.0, 1.0, &mut r);
        let b = Tensor::uniform(&collapse(&mask_b), -1.0, 1.0, &mut r);
        let out_shape: Vec<usize> = a.shape().iter().zip(b.shape()).map(|(&x, &y)| x.max(y)).collect();
        let (ta, tb) = (tile(&a, &out_shape), tile(&b, &out_shape));
        let want = Tensor::new(&out_shape, ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()).unwrap();
        prop_assert_eq!(terminator_core::tensor::ew_mul(&a, &b).unwrap(), want);
    }
}

// ---- standardization ----

fn region_stats(x: &Tensor, axes: &[usize]) -> (Tensor, Tensor) {
    (reduce(x, axes, ReduceKind::Mean).unwrap(), reduce(x, axes, ReduceKind::Var).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn standardized_regions_have_zero_mean_unit_variance(
        b in 2usize..5, c in 1usize..5, h in 2usize..6, w in 2usize..6, scale in 0.1f64..10.0, shift in -5.0f64..5.0, seed in any::<u64>(),
    ) {
        let x = Tensor::uniform(&[b, c, h, w], -1.0, 1.0, &mut rng(seed)).map(|v| v * scale as Scalar + shift as Scalar);
        let eps = 1e-12;
        for (mode, axes) in [(Mode::Batch, vec![0, 2, 3]), (Mode::Instance, vec![2, 3])] {
            let y = standardize::apply(&x, mode, eps).unwrap();
            let (m, v) = region_stats(&y, &axes);
            prop_assert!(m.data().iter().all(|v| v.abs() < 1e-8));
            prop_assert!(v.data().iter().all(|v| (v - 1.0).abs() < 1e-5));
            prop_assert_eq!(standardize::apply(&x, mode, eps).unwrap(), y);
        }
        if c % 2 == 0 {
            let y = standardize::apply(&x, Mode::Gibs { groups: 2 }, eps).unwrap();
            let per = c / 2;
            let bs = y.narrow(1, 0, per).unwrap();
            let is = y.narrow(1, per, per).unwrap();
            let (m, v) = region_stats(&bs, &[0, 1, 2, 3]);
            prop_assert!(m.item().abs() < 1e-8 && (v.item() - 1.0).abs() < 1e-5);
            let (m, v) = region_stats(&is, &[1, 2, 3]);
            prop_assert!(m.data().iter().all(|v| v.abs() < 1e-8));
            prop_assert!(v.data().iter().all(|v| (v - 1.0).abs() < 1e-5));
        }
    }

    #[test]
    fn batch_standardize_commutes_with_sample_permutation(b in 2usize..6, seed in any::<u64>()) {
        let x = Tensor::uniform(&[b, 3, 4, 4], -2.0, 2.0, &mut rng(seed));
        let p = data::permutation(b, seed);
        let y = standardize::apply(&x.select_rows(&p), Mode::Batch, 1e-5).unwrap();
        let back = y.select_rows(&data::inverse_permutation(&p));
        prop_assert!(back.max_abs_diff(&standardize::apply(&x, Mode::Batch, 1e-5).unwrap()) < 1e-12);
    }
}

#[test]
fn standardization_has_no_parameters() {
    let x = Tensor::uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut rng(3));
    let store = ParamStore::new();
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = standardize::g_ibs(&mut g, v, 2, 1e-5).unwrap();
    let l = g.sum_all(y);
    assert!(g.param_grads(l, &store).unwrap().is_empty());
    assert!(g.param_names().is_empty());
}

// ---- slow networks ----

#[test]
fn global_kernel_parameters_do_not_depend_on_resolution() {
    let cfg = MfnConfig::new(8, 2);
    let count = |side: usize| {
        let mut s = ParamStore::new();
        GlobalKernelNet::register(&mut s, &mut rng(0), "k", &cfg, 4, &[side, side], None).unwrap();
        s.num_scalars()
    };
    assert_eq!(count(16), count(32));
    assert_eq!(count(3), count(64));
}

#[test]
fn global_kernel_is_input_independent_and_deterministic() {
    let mut s = ParamStore::new();
    let net = GlobalKernelNet::register(&mut s, &mut rng(0), "k", &MfnConfig::new(8, 2), 4, &[6, 6], None).unwrap();
    let mut g = Graph::no_grad();
    let a = net.generate(&mut g, &s).unwrap();
    let _noise = g.constant(Tensor::uniform(&[2, 4, 6, 6], -1.0, 1.0, &mut rng(1)));
    let b = net.generate(&mut g, &s).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_eq!(g.shape(a), &[1, 4, 6, 6]);
}

#[test]
fn local_generator_with_open_gates_reduces_to_global() {
    let cfg = MfnConfig::new(6, 2);
    let (c, k) = (3, 5);
    let mut s = ParamStore::new();
    let local = LocalKernelNet::register(&mut s, &mut rng(0), "loc", &cfg, c, k, false, None).unwrap();
    let global = GlobalKernelNet::register(&mut s, &mut rng(1), "glob", &cfg, c, &[k, k], None).unwrap();
    let names: Vec<String> = s.iter().map(|p| p.name.clone()).filter(|n| n.starts_with("glob.")).collect();
    for n in names {
        let src = s.value(&n.replacen("glob.", "loc.", 1)).unwrap().clone();
        s.set_value(&n, src).unwrap();
    }
    for i in 0..cfg.depth {
        let w = s.value(&format!("loc.ctx{i}.W")).unwrap().shape().to_vec();
        s.set_value(&format!("loc.ctx{i}.W"), Tensor::zeros(&w)).unwrap();
        s.set_value(&format!("loc.ctx{i}.b"), Tensor::ones(&[cfg.width, 1])).unwrap();
    }
    let mut g = Graph::no_grad();
    let z = g.constant(Tensor::uniform(&[2, c, 9, 9], -1.0, 1.0, &mut rng(2)));
    let kl = local.generate(&mut g, &s, z).unwrap();
    let kg = global.generate(&mut g, &s).unwrap();
    assert_eq!(g.shape(kl), &[c, 1, k, k]);
    assert!(g.value(kl).reshape(&[1, c, k, k]).unwrap().max_abs_diff(g.value(kg)) < 1e-12);
}

#[test]
fn local_generator_depends_on_input() {
    let mut s = ParamStore::new();
    let net = LocalKernelNet::register(&mut s, &mut rng(0), "loc", &MfnConfig::new(6, 1), 3, 3, false, None).unwrap();
    let mut g = Graph::no_grad();
    let a = g.constant(Tensor::uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng(1)));
    let b = g.constant(Tensor::uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng(2)));
    let ka = net.generate(&mut g, &s, a).unwrap();
    let kb = net.generate(&mut g, &s, b).unwrap();
    assert!(g.value(ka).max_abs_diff(g.value(kb)) > 1e-6);
}

#[test]
fn generators_pass_grad_check() {
    let mut s = ParamStore::new();
    let global = GlobalKernelNet::register(&mut s, &mut rng(0), "g", &MfnConfig::new(4, 2), 2, &[4, 5], None).unwrap();
    let local = LocalKernelNet::register(&mut s, &mut rng(1), "l", &MfnConfig::new(4, 1), 2, 3, false, None).unwrap();
    let z = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng(2));
    let r = Tensor::uniform(&[1, 2, 4, 5], -1.0, 1.0, &mut rng(3));
    let report = grad_check(
        &mut s,
        |g, s| {
            let kg = global.generate(g, s)?;
            let zv = g.constant(z.clone());
            let kl = local.generate(g, s, zv)?;
            let rv = g.constant(r.clone());
            let a = g.mul(kg, rv)?;
            let a = g.sum_all(a);
            let b = g.square(kl);
            let b = g.sum_all(b);
            g.add(a, b)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.failures().collect::<Vec<_>>());
}

// ---- HyperZZW ----

#[test]
fn global_kernel_is_shared_while_fast_weights_adapt() {
    let mut s = ParamStore::new();
    let net = GlobalKernelNet::register(&mut s, &mut rng(0), "k", &MfnConfig::new(8, 2), 3, &[5, 5], None).unwrap();
    let mut g = Graph::no_grad();
    let z1 = g.constant(Tensor::uniform(&[1, 3, 5, 5], -1.0, 1.0, &mut rng(1)));
    let z2 = g.constant(Tensor::uniform(&[1, 3, 5, 5], -1.0, 1.0, &mut rng(2)));
    let k1 = net.generate(&mut g, &s).unwrap();
    let k2 = net.generate(&mut g, &s).unwrap();
    let (h1, _) = global_hyperzzw_2d(&mut g, z1, k1).unwrap();
    let (h2, _) = global_hyperzzw_2d(&mut g, z2, k2).unwrap();
    assert_eq!(g.value(k1), g.value(k2));
    assert!(g.value(h1).max_abs_diff(g.value(h2)) > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn global_2d_is_even_in_z(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = Tensor::uniform(&[2, c, h, w], -1.0, 1.0, &mut r);
        let k = Tensor::uniform(&[1, c, h, w], -1.0, 1.0, &mut r);
        let mut g = Graph::no_grad();
        let kv = g.constant(k);
        let zp = g.constant(z.clone());
        let zn = g.constant(z.map(|v| -v));
        let (_, a) = global_hyperzzw_2d(&mut g, zp, kv).unwrap();
        let (_, b) = global_hyperzzw_2d(&mut g, zn, kv).unwrap();
        prop_assert_eq!(g.value(a), g.value(b));
    }
}

#[test]
fn global_1d_grows_quasi_linearly() {
    let time = |l: usize| {
        let z = Tensor::uniform(&[1, 4, l], -1.0, 1.0, &mut rng(0));
        let k = Tensor::uniform(&[1, 4, l], -1.0, 1.0, &mut rng(1));
        (0..5)
            .map(|_| {
                let start = Instant::now();
                let mut g = Graph::no_grad();
                let (zv, kv) = (g.constant(z.clone()), g.constant(k.clone()));
                std::hint::black_box(global_hyperzzw_1d(&mut g, zv, kv).unwrap());
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let _warm = time(1024);
    let (t1, t8) = (time(1024), time(8192));
    // 8× the length: n log n gives about 10.4×, quadratic 64×.
    assert!(t8 / t1 < 24.0, "1k: {t1:.2e}s, 8k: {t8:.2e}s");
}

// ---- blocks ----

fn small_block(c: usize) -> SfneConfig {
    SfneConfig {
        global_mfn: MfnConfig::new(4, 1),
        local_mfn: MfnConfig::new(4, 1),
        hyper_mfn: MfnConfig::new(3, 1),
        local_kernels: vec![3, 3, 5],
        groups: 2,
        ..SfneConfig::new(c)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn block_preserves_extent_and_scales_channels(
        c in 1usize..4, lambda in 1usize..4, h in 5usize..9, w in 5usize..9, one_d in any::<bool>(), seed in any::<u64>(),
    ) {
        let cfg = SfneConfig { lambda, groups: lambda, ..small_block(2 * c) };
        let spatial = if one_d { vec![h * w] } else { vec![h, w] };
        let mut s = ParamStore::new();
        let blk = SfneBlock::register(&mut s, &mut rng(seed), &cfg, 0, &spatial).unwrap();
        let mut shape = vec![2, 2 * c];
        shape.extend(&spatial);
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 1)));
        let out = blk.forward(&mut g, &s, x).unwrap();
        let mut want = vec![2, lambda * 2 * c];
        want.extend(&spatial);
        prop_assert_eq!(g.shape(out.y), &want[..]);
    }
}

#[test]
fn single_branch_block_has_no_bypass() {
    for b in Branch::ALL {
        let cfg = SfneConfig { lambda: 1, branches: vec![b], ..small_block(4) };
        let mut s = ParamStore::new();
        let blk = SfneBlock::register(&mut s, &mut rng(0), &cfg, 0, &[6, 6]).unwrap();
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::uniform(&[2, 4, 6, 6], -1.0, 1.0, &mut rng(1)));
        let out = blk.forward(&mut g, &s, x).unwrap();
        assert_eq!(out.branches.len(), 1);
        let branch = g.value(out.branches[0].1).clone();
        let w = s.value("block0.bottleneck.W").unwrap();
        let bias = s.value("block0.bottleneck.b").unwrap();
        let mixed = terminator_core::tensor::channel_mix(w, &branch).unwrap();
        let mixed = terminator_core::tensor::add(&mixed, bias).unwrap();
        let want = standardize::apply(&mixed, Mode::Gibs { groups: 2 }, cfg.eps).unwrap();
        assert!(g.value(out.y).max_abs_diff(&want) < 1e-12, "{}", b.name());
    }
}

#[test]
fn global_branches_share_one_kernel() {
    let cfg = small_block(4);
    let mut s = ParamStore::new();
    let blk = SfneBlock::register(&mut s, &mut rng(0), &cfg, 0, &[6, 6]).unwrap();
    let xt = Tensor::uniform(&[2, 4, 6, 6], -1.0, 1.0, &mut rng(1));
    let is_global = |b: &Branch| matches!(b, Branch::GlobalMixer | Branch::GlobalRgu | Branch::GlobalChannel);

    let mut g = Graph::no_grad();
    let x = g.constant(xt.clone());
    let base = blk.forward(&mut g, &s, x).unwrap();
    let k = g.value(base.k_g.unwrap()).clone();

    // Feeding the generated kernel back in reproduces the block exactly.
    let kv = g.constant(k.clone());
    let same = blk.forward_with_kernel(&mut g, &s, x, kv).unwrap();
    assert_eq!(g.value(same.y), g.value(base.y));

    // A different kernel reaches every global branch.
    let kp = g.constant(k.map(|v| v + 0.25));
    let moved = blk.forward_with_kernel(&mut g, &s, x, kp).unwrap();
    let mut globals = 0;
    for ((b, a), (_, m)) in base.branches.iter().zip(&moved.branches) {
        if is_global(b) {
            globals += 1;
            assert!(g.value(*a).max_abs_diff(g.value(*m)) > 1e-6, "{} ignores the shared kernel", b.name());
        }
    }
    assert_eq!(globals, 3);
}

#[test]
fn tiny_block_passes_grad_check() {
    let cfg = SfneConfig { groups: 2, ..small_block(4) };
    let mut s = ParamStore::new();
    let blk = SfneBlock::register(&mut s, &mut rng(0), &cfg, 0, &[6, 6]).unwrap();
    let x = Tensor::uniform(&[2, 4, 6, 6], -1.0, 1.0, &mut rng(1));
    let r = Tensor::uniform(&[2, 8, 6, 6], -1.0, 1.0, &mut rng(2));
    let report = grad_check(
        &mut s,
        |g, s| {
            let xv = g.constant(x.clone());
            let out = blk.forward(g, s, xv)?;
            let rv = g.constant(r.clone());
            let y = g.mul(out.y, rv)?;
            Ok(g.mean_all(y))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.failures().collect::<Vec<_>>());
}

// ---- losses ----

#[test]
fn slow_loss_vanishes_on_consistent_trace() {
    let k0 = Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng(0));
    let trace = vec![k0.clone(), channel_expand(&k0, 4).unwrap(), channel_expand(&k0, 8).unwrap()];
    for red in [SlowLossReduction::Mean, SlowLossReduction::Sum] {
        assert_eq!(slow_neural_loss(&trace, red).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn slow_loss_is_nonnegative_and_permutation_covariant(n in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let trace: Vec<Tensor> = (0..n).map(|_| Tensor::uniform(&[1, c, 3, 3], -1.0, 1.0, &mut r)).collect();
        let p = data::permutation(c, seed);
        let permuted: Vec<Tensor> = trace
            .iter()
            .map(|k| {
                let ch: Vec<Tensor> = p.iter().map(|&i| k.narrow(1, i, 1).unwrap()).collect();
                Tensor::concat(&ch.iter().collect::<Vec<_>>(), 1).unwrap()
            })
            .collect();
        for red in [SlowLossReduction::Mean, SlowLossReduction::Sum] {
            let a = slow_neural_loss(&trace, red).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - slow_neural_loss(&permuted, red).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_is_shift_invariant(b in 1usize..5, k in 2usize..8, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let logits = Tensor::uniform(&[b, k], -3.0, 3.0, &mut rng(seed));
        let labels: Vec<usize> = (0..b).map(|i| (i * 3 + 1) % k).collect();
        let shifted = logits.map(|v| v + shift as Scalar);
        let a = cross_entropy(&logits, &labels).unwrap();
        prop_assert!((a - cross_entropy(&shifted, &labels).unwrap()).abs() < 1e-10);
    }
}

// ---- model ----

fn tiny_model() -> (Model, ParamStore, Tensor) {
    let cfg = ModelConfig::tiny();
    let (m, s) = Model::new(&cfg, 5).unwrap();
    let x = Tensor::uniform(&cfg.input_batch_shape(3), -1.0, 1.0, &mut rng(6));
    (m, s, x)
}

#[test]
fn slow_loss_gradient_reaches_only_slow_networks() {
    let (m, s, x) = tiny_model();
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = m.loss(&mut g, &s, xv, &[0, 1, 2], 0.1, SlowLossReduction::Mean).unwrap();
    let grads = g.param_grads(out.ls, &s).unwrap();
    let mut slow_nonzero = 0;
    for p in s.iter() {
        let grad = grads.get(&p.name);
        let nonzero = grad.is_some_and(|t| t.data().iter().any(|&v| v != 0.0));
        match p.component() {
            Component::Fast => assert!(!nonzero, "{} receives slow-loss gradient", p.name),
            Component::Slow => slow_nonzero += nonzero as usize,
        }
    }
    assert!(slow_nonzero > 0);
}

#[test]
fn forward_is_bit_deterministic() {
    let (m, s, x) = tiny_model();
    let a = m.predict(&s, &x, 3).unwrap();
    let b = m.predict(&s, &x, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn blocks_chain_without_skips() {
    let (m, s, x) = tiny_model();
    let mut g = Graph::no_grad();
    let xv = g.constant(x);
    let out = m.forward(&mut g, &s, xv).unwrap();
    for j in 1..out.taps.len() {
        // Re-running block j on block j-1's output alone reproduces it.
        let mut g2 = Graph::no_grad();
        let prev = g2.constant(g.value(out.taps[j - 1].feature).clone());
        let y = m.blocks()[j].forward(&mut g2, &s, prev).unwrap().y;
        assert_eq!(g2.value(y), g.value(out.taps[j].feature));
    }
    // And the head sees only the last block.
    let last = g.value(out.taps.last().unwrap().feature);
    let pooled = reduce(last, &[2, 3], ReduceKind::Mean).unwrap();
    let feats = pooled.reshape(&[3, pooled.shape()[1]]).unwrap();
    let logits = terminator_core::tensor::matmul(&feats, s.value("head.W").unwrap()).unwrap();
    let logits = terminator_core::tensor::add(&logits, s.value("head.b").unwrap()).unwrap();
    assert!(logits.max_abs_diff(g.value(out.logits)) < 1e-12);
}

#[test]
fn fast_weights_adapt_per_input() {
    let (m, s, x) = tiny_model();
    let other = x.map(|v| (v * 3.0).sin());
    let run = |x: Tensor| {
        let mut g = Graph::no_grad();
        let xv = g.constant(x);
        let out = m.forward(&mut g, &s, xv).unwrap();
        out.taps.iter().map(|t| (g.value(t.k_g.unwrap()).clone(), g.value(t.k_hat_g.unwrap()).clone())).collect::<Vec<_>>()
    };
    for ((kg_a, kh_a), (kg_b, kh_b)) in run(x).into_iter().zip(run(other)) {
        assert_eq!(kg_a, kg_b);
        assert!(kh_a.max_abs_diff(&kh_b) > 1e-6);
    }
}

// ---- data ----

#[test]
fn loaders_are_deterministic() {
    for kind in [SyntheticKind::Stripes, SyntheticKind::Blobs] {
        let a = data::synthetic(kind, 40, 3).unwrap();
        let b = data::synthetic(kind, 40, 3).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.images, data::synthetic(kind, 40, 4).unwrap().images);
    }
    assert_eq!(data::permutation(784, 42), data::permutation(784, 42));
}

#[test]
fn test_split_uses_train_statistics() {
    let mut tr = data::synthetic(SyntheticKind::Blobs, 50, 0).unwrap();
    let mut te = data::synthetic(SyntheticKind::Blobs, 30, 1).unwrap();
    let raw_te = te.clone();
    let fitted = data::Normalizer::fit(&tr);
    let norm = data::standardize_pair(&mut tr, &mut te);
    assert_eq!(norm, fitted);
    let mut expect = raw_te;
    fitted.apply(&mut expect);
    assert_eq!(te.images, expect.images);
    assert!(data::Normalizer::fit(&te) != fitted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_round_trip(n in 1usize..200, seed in any::<u64>()) {
        let p = data::permutation(n, seed);
        let inv = data::inverse_permutation(&p);
        for i in 0..n {
            prop_assert_eq!(inv[p[i]], i);
        }
        let x = Tensor::from_fn(&[2, 1, n], |i| (i[0] * 1000 + i[2]) as Scalar);
        let back = data::permute_positions(&data::permute_positions(&x, &p).unwrap(), &inv).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn batches_cover_every_sample_once(n in 2usize..60, bs in 1usize..17, seed in any::<u64>()) {
        let ds = data::synthetic(SyntheticKind::Stripes, n, 0).unwrap();
        let mut sizes = Vec::new();
        let mut rows: Vec<Vec<Scalar>> = Vec::new();
        let it = batches(&ds, bs, Some(seed));
        let expected_batches = it.num_batches();
        for (x, labels) in it {
            sizes.push(labels.len());
            let per = x.numel() / labels.len();
            rows.extend(x.data().chunks(per).map(|c| c.to_vec()));
        }
        prop_assert_eq!(sizes.len(), expected_batches);
        prop_assert_eq!(sizes.len(), n.div_ceil(bs));
        prop_assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == bs));
        let mut want: Vec<Vec<Scalar>> = ds.images.data().chunks(64).map(|c| c.to_vec()).collect();
        let key = |v: &Vec<Scalar>| v.iter().map(|x| x.to_bits() as u64).collect::<Vec<_>>();
        rows.sort_by_key(key);
        want.sort_by_key(key);
        prop_assert_eq!(rows, want);
    }
}
