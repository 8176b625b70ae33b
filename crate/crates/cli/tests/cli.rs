use std::path::{Path, PathBuf};
use std::process::Command;

use terminator_cli::commands::{self, CHECKPOINT_FILE, METRICS_FILE};
use terminator_cli::config::{DataSource, DATA_DIR_ENV};
use terminator_cli::RunConfig;
use terminator_core::autograd::{Component, Graph};
use terminator_core::checkpoint::{Checkpoint, Header};
use terminator_core::model::{Model, ModelConfig};
use terminator_core::Tensor;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> RunConfig {
    RunConfig::from_file(&repo().join("configs").join(name)).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terminator"))
}

fn mnist_dir() -> Option<PathBuf> {
    let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| repo().join("data"));
    let labels = root.join("mnist").join("t10k-labels-idx1-ubyte");
    (labels.exists() || labels.with_extension("gz").exists()).then_some(root)
}

fn smoke_run(dir: &Path) -> commands::TrainOutcome {
    commands::train(config("smoke.json"), dir, |_| {}).unwrap()
}

#[test]
fn smoke_config_separates_stripes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smoke_run(tmp.path());
    assert_eq!(out.metrics.len(), 5);
    assert_eq!(out.metrics.last().unwrap().test_acc, 1.0);
    for f in [METRICS_FILE, CHECKPOINT_FILE, "config.json", "eval.json", "confusion.csv"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn same_seed_gives_same_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    smoke_run(a.path());
    smoke_run(b.path());
    let read = |d: &Path| std::fs::read_to_string(d.join(METRICS_FILE)).unwrap();
    let (ma, mb) = (read(a.path()), read(b.path()));
    assert_eq!(ma.lines().next().unwrap(), "epoch,train_loss,ce,ls,test_acc");
    assert_eq!(ma, mb);
    let params = |d: &Path| commands::load_checkpoint(&d.join(CHECKPOINT_FILE)).unwrap().store;
    assert_eq!(params(a.path()), params(b.path()));
}

#[test]
fn run_directory_reproduces_its_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smoke_run(tmp.path());
    let logged = out.metrics.last().unwrap().test_acc;
    let ckpt = tmp.path().join(CHECKPOINT_FILE);
    let first = commands::eval(&ckpt, None, Some(&tmp.path().join("e1"))).unwrap();
    let second = commands::eval(&ckpt, None, Some(&tmp.path().join("e2"))).unwrap();
    assert_eq!(first.accuracy, logged);
    assert_eq!(first, second);
    let read = |d: &str| std::fs::read_to_string(tmp.path().join(d).join("confusion.csv")).unwrap();
    assert_eq!(read("e1"), read("e2"));

    let (_, test) = out.config.data.load().unwrap();
    let counts = test.class_counts();
    for (row, &n) in first.confusion.iter().zip(&counts) {
        assert_eq!(row.iter().sum::<usize>(), n);
    }
}

#[test]
fn alpha_zero_still_logs_and_trains_slow_networks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("smoke.json");
    cfg.train.epochs = 2;
    cfg.train.alpha = 0.0;
    let zero = commands::train(cfg.clone(), &tmp.path().join("a0"), |_| {}).unwrap();
    cfg.train.alpha = 0.1;
    let weighted = commands::train(cfg.clone(), &tmp.path().join("a1"), |_| {}).unwrap();
    for run in [&zero, &weighted] {
        assert!(run.metrics.iter().all(|m| m.ls.is_finite() && m.ls > 0.0));
    }
    for m in &zero.metrics {
        assert_eq!(m.train_loss, m.ce);
    }
    assert_ne!(zero.metrics[1].ls, weighted.metrics[1].ls);

    // Slow networks still move through the cross-entropy path.
    let init = Model::new(cfg.model(), cfg.seed).unwrap().1;
    let trained = commands::load_checkpoint(&tmp.path().join("a0").join(CHECKPOINT_FILE)).unwrap().store;
    let moved = init
        .iter()
        .filter(|p| p.component() == Component::Slow)
        .filter(|p| trained.value(&p.name).unwrap() != &p.value)
        .count();
    assert!(moved > 0);

    // With α = 0 the update direction is the cross-entropy gradient alone.
    let (model, store) = Model::new(cfg.model(), cfg.seed).unwrap();
    let x = Tensor::uniform(&cfg.model().input_batch_shape(4), -1.0, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = model.loss(&mut g, &store, xv, &[0, 1, 0, 1], 0.0, cfg.train.slow_loss_reduction).unwrap();
    let total = g.param_grads(out.total, &store).unwrap();
    let ce = g.param_grads(out.ce, &store).unwrap();
    for (name, t) in total.iter() {
        assert_eq!(t, ce.get(name).unwrap(), "{name}");
    }
}

use rand::SeedableRng;

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smoke_run(tmp.path());
    let loaded = commands::load_checkpoint(&tmp.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(loaded.config.model(), out.config.model());
    let again = tmp.path().join("again.ckpt");
    Checkpoint::from_store(loaded.header.clone(), &loaded.store).save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(tmp.path().join(CHECKPOINT_FILE)).unwrap());
    assert_eq!(loaded.header.metrics_digest, commands::metrics_digest(&out.metrics));
}

#[test]
fn untrained_model_is_at_chance_on_ten_classes() {
    let Some(root) = mnist_dir() else {
        eprintln!("MNIST not found under data/mnist; skipping the 10-class chance check");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut model = ModelConfig::smoke();
    model.input_shape = vec![28, 28];
    model.num_classes = 10;
    let mut cfg = config("smoke.json");
    cfg.model = Some(model);
    cfg.data.source = DataSource::Mnist;
    cfg.data.dir = Some(root);
    cfg.data.train_size = Some(100);
    cfg.data.test_size = Some(1000);
    let cfg = cfg.resolve().unwrap();
    let (_, store) = Model::new(cfg.model(), cfg.seed).unwrap();
    let header = Header { config: serde_json::to_value(&cfg).unwrap(), step: 0, metrics_digest: String::new() };
    let ckpt = tmp.path().join("untrained.ckpt");
    Checkpoint::from_store(header, &store).save(&ckpt).unwrap();
    let report = commands::eval(&ckpt, None, None).unwrap();
    assert!((report.accuracy - 0.1).abs() <= 0.05, "accuracy {}", report.accuracy);
    assert!(tmp.path().join("confusion.csv").exists());
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let cfg = config("tiny.json");
    let report = commands::gradcheck(&cfg, None).unwrap();
    assert!(report.passed(), "{:#?}", report.failures().collect::<Vec<_>>());
    assert!(report.max_rel_error() < 1e-4);
    let (_, store) = Model::new(cfg.model(), cfg.seed).unwrap();
    let trainable = store.iter().filter(|p| p.trainable).count();
    let csv = commands::gradcheck_csv(&report);
    assert_eq!(csv.lines().count(), trainable + 1);
    // Every module family is covered.
    for family in ["slow.global", "slow.local", "slow.mutual", "slow.hi_", "rgu", "mixer", "bottleneck", "head", "stem"] {
        assert!(report.entries.iter().any(|e| e.name.contains(family)), "{family}");
    }

    let target = "block1.rgu.W_Y";
    let bad = commands::gradcheck(&cfg, Some(target)).unwrap();
    let failing: Vec<&str> = bad.failures().map(|e| e.name.as_str()).collect();
    assert_eq!(failing, vec![target]);

    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gradcheck", "--config"])
        .arg(repo().join("configs/tiny.json"))
        .args(["--inject-fault", target, "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(target));
    let ok = bin().args(["gradcheck", "--config"]).arg(repo().join("configs/tiny.json")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
}

fn pgm_pixels(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    // Header is "P5\n<w> <h>\n255\n".
    let mut newlines = 0;
    let start = bytes.iter().position(|&b| {
        newlines += (b == b'\n') as usize;
        newlines == 3
    });
    bytes[start.unwrap() + 1..].to_vec()
}

#[test]
fn inspect_dumps_heatmaps_and_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    smoke_run(tmp.path());
    let ckpt = tmp.path().join(CHECKPOINT_FILE);
    let a = commands::inspect(&ckpt, 0, None, Some(&tmp.path().join("s0"))).unwrap();
    let b = commands::inspect(&ckpt, 1, None, Some(&tmp.path().join("s1"))).unwrap();
    let blocks = ModelConfig::smoke().blocks.len();
    assert_eq!(a.heatmaps.len(), 3 * blocks);
    assert!(tmp.path().join("s0/channel_stats.csv").exists());
    assert_eq!(a.channel_stats.len(), ModelConfig::smoke().out_channels());
    for j in 0..blocks {
        let read = |s: &str, kind: &str| pgm_pixels(&tmp.path().join(s).join(format!("block{j}_{kind}.pgm")));
        assert_eq!(read("s0", "kg"), read("s1", "kg"), "block {j}");
        assert_ne!(read("s0", "khat"), read("s1", "khat"), "block {j}");
    }
    assert_eq!(a.channel_stats, b.channel_stats);

    // A zero image leaves nothing for the first block's fast weights.
    let loaded = commands::load_checkpoint(&ckpt).unwrap();
    let zero = Tensor::zeros(&loaded.config.model().input_batch_shape(1));
    let files = commands::write_heatmaps(&loaded.model, &loaded.store, &zero, &tmp.path().join("zero")).unwrap();
    let khat = files.iter().find(|p| p.ends_with("block0_khat.pgm")).unwrap();
    let px = pgm_pixels(khat);
    assert!(px.iter().all(|&p| p == px[0]));

    let out = bin().args(["inspect", "--ckpt"]).arg(&ckpt).args(["--sample", "100000"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };

    let typo = write("typo.json", "{\n  \"preset\": \"smoke\",\n  \"trian\": {}\n}\n");
    let out = bin().args(["train", "--config"]).arg(&typo).arg("--out").arg(tmp.path().join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo.json:3:"));

    assert_eq!(bin().arg("train").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));

    let missing = write(
        "missing.json",
        &format!(
            r#"{{"preset": "desk", "data": {{"source": "mnist", "dir": "{}"}}}}"#,
            tmp.path().join("nowhere").display()
        ),
    );
    let out = bin().args(["train", "--config"]).arg(&missing).arg("--out").arg(tmp.path().join("m")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let garbage = write("garbage.ckpt", "not a checkpoint");
    assert_eq!(bin().args(["eval", "--ckpt"]).arg(&garbage).output().unwrap().status.code(), Some(2));

    let nan = write(
        "nan.json",
        r#"{"preset": "smoke", "train": {"epochs": 2, "lr": 1e300, "grad_clip": null}, "data": {"source": "stripes"}}"#,
    );
    let out = bin().args(["train", "--config"]).arg(&nan).arg("--out").arg(tmp.path().join("n")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn binary_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(repo().join("configs/smoke.json"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accuracy 1.0000"), "{stdout}");
    let out = bin().args(["eval", "--ckpt"]).arg(tmp.path().join(CHECKPOINT_FILE)).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy 1.0000"));
    let out = bin().args(["params", "--config"]).arg(repo().join("configs/smoke.json")).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("slow fraction"));
    let out = bin()
        .args(["eval", "--ckpt"])
        .arg(tmp.path().join(CHECKPOINT_FILE))
        .args(["--data", "blobs"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
