//! Subcommand implementations. Each returns what it wrote so callers and
//! tests can inspect the results without re-reading files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use terminator_core::autograd::{grad_check, CustomOp, GradCheckOptions, GradCheckReport, Graph, ParamStore};
use terminator_core::checkpoint::{Checkpoint, Header};
use terminator_core::data::Dataset;
use terminator_core::model::{count_params, Model, ParamReport};
use terminator_core::train::{channel_stats, evaluate, ChannelStat, EvalReport, Trainer};
use terminator_core::{Result as CoreResult, Tensor};

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pgm::Heatmap;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,train_loss,ce,ls,test_acc";
/// Wall-clock seconds per epoch, kept apart so `metrics.csv` is reproducible.
pub const TIMING_FILE: &str = "timing.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Largest model the gradient check accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce: f64,
    pub ls: f64,
    pub test_acc: f64,
    pub wall_s: f64,
}

impl MetricRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.ce, self.ls, self.test_acc
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

pub fn timing_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,wall_s\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.3}", r.epoch, r.wall_s);
    }
    s
}

/// CRC32 of [`metrics_csv`].
pub fn metrics_digest(rows: &[MetricRow]) -> String {
    format!("{:08x}", crc32fast::hash(metrics_csv(rows).as_bytes()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub config: RunConfig,
    pub metrics: Vec<MetricRow>,
    pub final_eval: EvalReport,
}

/// Trains per `cfg`, writing the resolved config, metrics and checkpoint
/// into `out_dir`. `log` receives one line per epoch.
pub fn train(mut cfg: RunConfig, out_dir: &Path, mut log: impl FnMut(&str)) -> CliResult<TrainOutcome> {
    cfg.check_data().map_err(CliError::Usage)?;
    create_dir(out_dir)?;
    cfg.out_dir = Some(out_dir.to_path_buf());
    write(&out_dir.join(CONFIG_FILE), cfg.to_json())?;
    let (train_ds, test_ds) = cfg.data.load()?;
    fits(&cfg, &test_ds)?;
    let (model, mut store) = Model::new(cfg.model(), cfg.seed)?;
    let mut trainer = Trainer::new(cfg.train.clone(), train_ds.len())?;
    let config_value = serde_json::to_value(&cfg).expect("config serializes");
    let start = Instant::now();
    let mut rows = Vec::with_capacity(cfg.train.epochs);
    let mut last = None;
    for epoch in 1..=cfg.train.epochs {
        let stats = trainer.train_epoch(&model, &mut store, &train_ds, epoch)?;
        let report = evaluate(&model, &store, &test_ds, cfg.train.eval_batch_size)?;
        let row = MetricRow {
            epoch,
            train_loss: stats.loss,
            ce: stats.ce,
            ls: stats.ls,
            test_acc: report.accuracy,
            wall_s: start.elapsed().as_secs_f64(),
        };
        rows.push(row);
        write(&out_dir.join(METRICS_FILE), metrics_csv(&rows))?;
        write(&out_dir.join(TIMING_FILE), timing_csv(&rows))?;
        let header = Header { config: config_value.clone(), step: trainer.step() as u64, metrics_digest: metrics_digest(&rows) };
        save_checkpoint(&Checkpoint::from_store(header, &store), &out_dir.join(CHECKPOINT_FILE))?;
        log(&format!(
            "epoch {epoch:>3}  loss {:.4}  ce {:.4}  ls {:.5}  test_acc {:.4}  {:.0}s",
            row.train_loss, row.ce, row.ls, row.test_acc, row.wall_s
        ));
        last = Some(report);
    }
    let final_eval = last.expect("at least one epoch");
    write_eval(out_dir, &final_eval)?;
    Ok(TrainOutcome { out_dir: out_dir.to_path_buf(), config: cfg, metrics: rows, final_eval })
}

/// Writes to a sibling temp file first so a crash never leaves a torn checkpoint.
fn save_checkpoint(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    let tmp = path.with_extension("ckpt.tmp");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Data(format!("cannot move checkpoint into place: {e}")))
}

/// A checkpoint with the model it belongs to.
pub struct Loaded {
    pub config: RunConfig,
    pub model: Model,
    pub store: ParamStore,
    pub header: Header,
}

pub fn load_checkpoint(path: &Path) -> CliResult<Loaded> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_value(ck.header.config.clone())
        .map_err(|e| CliError::Data(format!("{}: embedded config: {e}", path.display())))?;
    let config = config.resolve().map_err(|e| CliError::Data(format!("{}: embedded config: {e}", path.display())))?;
    let (model, mut store) = Model::new(config.model(), config.seed)?;
    ck.apply_to(&mut store)?;
    Ok(Loaded { config, model, store, header: ck.header })
}

/// The checkpoint's run config with the data source optionally replaced.
fn with_data(loaded: &Loaded, data: Option<&str>) -> CliResult<RunConfig> {
    let mut cfg = loaded.config.clone();
    if let Some(name) = data {
        cfg.data.source = DataSource::parse(name).ok_or_else(|| {
            CliError::Usage(format!("unknown dataset `{name}` (known: mnist, smnist, pmnist, stripes, blobs)"))
        })?;
    }
    cfg.check_data().map_err(|e| CliError::Data(format!("dataset does not fit the model: {e}")))?;
    Ok(cfg)
}

fn fits(cfg: &RunConfig, ds: &Dataset) -> CliResult<()> {
    let want = &cfg.model().input_batch_shape(1)[1..];
    if ds.sample_shape() != want {
        return Err(CliError::Data(format!("samples of shape {:?} do not fit a model expecting {want:?}", ds.sample_shape())));
    }
    Ok(())
}

fn write_eval(dir: &Path, r: &EvalReport) -> CliResult<()> {
    write(&dir.join("eval.json"), serde_json::to_string_pretty(r).expect("report serializes"))?;
    write(&dir.join("confusion.csv"), r.confusion_csv())
}

pub fn format_eval(r: &EvalReport) -> String {
    let mut s = format!("accuracy {:.4} ({}/{})\n", r.accuracy, r.correct, r.total);
    for (i, a) in r.per_class.iter().enumerate() {
        match a {
            Some(a) => {
                let _ = writeln!(s, "  class {i}: {a:.4}");
            }
            None => {
                let _ = writeln!(s, "  class {i}: (absent)");
            }
        }
    }
    s
}

/// Evaluates a checkpoint on the test split; writes `eval.json` and
/// `confusion.csv` into `out` (default: the checkpoint's directory).
pub fn eval(ckpt: &Path, data: Option<&str>, out: Option<&Path>) -> CliResult<EvalReport> {
    let loaded = load_checkpoint(ckpt)?;
    let cfg = with_data(&loaded, data)?;
    let (_, test) = cfg.data.load()?;
    fits(&cfg, &test)?;
    let report = evaluate(&loaded.model, &loaded.store, &test, cfg.train.eval_batch_size)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(ckpt));
    create_dir(&dir)?;
    write_eval(&dir, &report)?;
    Ok(report)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Adds zero to the loss but claims a unit gradient for its input; used to
/// show that the checker catches a wrong backward rule.
struct Fault;

impl CustomOp for Fault {
    fn name(&self) -> &str {
        "fault"
    }

    fn forward(&self, _: &[&Tensor]) -> CoreResult<Tensor> {
        Ok(Tensor::zeros(&[1]))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        vec![Tensor::full(inputs[0].shape(), grad.item())]
    }
}

/// Finite-difference check of the full model loss on a seeded random batch
/// of two. `fault` names a parameter whose gradient is deliberately corrupted.
pub fn gradcheck(cfg: &RunConfig, fault: Option<&str>) -> CliResult<GradCheckReport> {
    let (model, mut store) = Model::new(cfg.model(), cfg.seed)?;
    let n = store.num_scalars();
    if n > GRADCHECK_MAX_PARAMS {
        return Err(CliError::Usage(format!("{n} parameters is too many for a gradient check (limit {GRADCHECK_MAX_PARAMS})")));
    }
    if let Some(name) = fault {
        if store.get(name).is_none() {
            return Err(CliError::Usage(format!("no parameter named `{name}`")));
        }
    }
    let mcfg = cfg.model();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let x = Tensor::uniform(&mcfg.input_batch_shape(2), -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..2).map(|i| (i * 7 + 1) % mcfg.num_classes).collect();
    let (alpha, red) = (cfg.train.alpha, cfg.train.slow_loss_reduction);
    let report = grad_check(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let out = model.loss(g, s, xv, &labels, alpha, red)?;
            match fault {
                Some(name) => {
                    let p = g.param(s, name)?;
                    let f = g.custom(&[p], Box::new(Fault))?;
                    g.add(out.total, f)
                }
                None => Ok(out.total),
            }
        },
        &GradCheckOptions::default(),
    )?;
    Ok(report)
}

pub fn gradcheck_csv(r: &GradCheckReport) -> String {
    let mut s = String::from("parameter,numel,checked,max_rel_error,max_abs_error,passed\n");
    for e in &r.entries {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{}",
            e.name, e.numel, e.checked, e.max_rel_error, e.max_abs_error, e.passed
        );
    }
    s
}

/// Per-block heatmaps plus last-layer channel statistics.
#[derive(Clone, Debug)]
pub struct InspectOutcome {
    pub heatmaps: Vec<PathBuf>,
    pub channel_stats: Vec<ChannelStat>,
}

/// Writes `block{j}_feature.pgm`, `block{j}_kg.pgm` and `block{j}_khat.pgm`
/// for the single sample `x: [1, C, ...]`.
pub fn write_heatmaps(model: &Model, store: &ParamStore, x: &Tensor, dir: &Path) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut g = Graph::no_grad();
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, store, xv)?;
    let mut files = Vec::new();
    for tap in &out.taps {
        let maps = [("feature", Some(tap.feature)), ("kg", tap.k_g), ("khat", tap.k_hat_g)];
        for (kind, var) in maps {
            let Some(v) = var else { continue };
            let path = dir.join(format!("block{}_{kind}.pgm", tap.block));
            Heatmap::channel_sum(g.value(v), 0).save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            files.push(path);
        }
    }
    Ok(files)
}

pub fn channel_stats_csv(stats: &[ChannelStat]) -> String {
    let mut s = String::from("channel,mean,var\n");
    for (i, c) in stats.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", c.mean, c.var);
    }
    s
}

/// Heatmaps for test sample `sample` and channel statistics over the test
/// split, written to `out` (default: `<ckpt dir>/inspect_<sample>`).
pub fn inspect(ckpt: &Path, sample: usize, data: Option<&str>, out: Option<&Path>) -> CliResult<InspectOutcome> {
    let loaded = load_checkpoint(ckpt)?;
    let cfg = with_data(&loaded, data)?;
    let (_, test) = cfg.data.load()?;
    fits(&cfg, &test)?;
    if sample >= test.len() {
        return Err(CliError::Usage(format!("sample {sample} out of range for {} test samples", test.len())));
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(ckpt).join(format!("inspect_{sample}")));
    let x = test.images.narrow(0, sample, 1)?;
    let heatmaps = write_heatmaps(&loaded.model, &loaded.store, &x, &dir)?;
    let stats = channel_stats(&loaded.model, &loaded.store, &test, cfg.train.eval_batch_size)?;
    write(&dir.join("channel_stats.csv"), channel_stats_csv(&stats))?;
    Ok(InspectOutcome { heatmaps, channel_stats: stats })
}

pub fn params(cfg: &RunConfig) -> CliResult<ParamReport> {
    let (model, store) = Model::new(cfg.model(), cfg.seed)?;
    Ok(count_params(&model, &store))
}
