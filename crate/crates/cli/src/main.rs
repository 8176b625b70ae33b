use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use terminator_cli::commands::{self, CHECKPOINT_FILE};
use terminator_cli::{CliError, CliResult, RunConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Slow-fast hyper-kernel networks: training, evaluation and inspection.
#[derive(Parser)]
#[command(name = "terminator", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes config.json, metrics.csv, timing.csv, model.ckpt, eval.json and confusion.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of its dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// mnist, smnist, pmnist, stripes or blobs; defaults to the training dataset.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences on a small model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Where to write gradcheck.csv; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt the gradient of this parameter (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Dump feature and kernel heatmaps for one test sample, plus channel statistics.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter counts by block and role.
    Params {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Train { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| CliError::Usage("no output directory: pass --out or set out_dir".into()))?;
            let res = commands::train(cfg, &out, |line| println!("{line}"))?;
            print!("{}", commands::format_eval(&res.final_eval));
            println!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
        }
        Cmd::Eval { ckpt, data, out } => {
            let r = commands::eval(&ckpt, data.as_deref(), out.as_deref())?;
            print!("{}", commands::format_eval(&r));
        }
        Cmd::Gradcheck { config, out, inject_fault } => {
            let cfg = RunConfig::from_file(&config)?;
            let report = commands::gradcheck(&cfg, inject_fault.as_deref())?;
            let csv = commands::gradcheck_csv(&report);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
                    std::fs::write(dir.join("gradcheck.csv"), &csv).map_err(|e| CliError::Data(e.to_string()))?;
                }
                None => print!("{csv}"),
            }
            println!("max relative error {:e} over {} tensors", report.max_rel_error(), report.entries.len());
            let bad: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
            if !bad.is_empty() {
                return Err(CliError::Numeric(format!("gradient check failed for: {}", bad.join(", "))));
            }
        }
        Cmd::Inspect { ckpt, sample, data, out } => {
            let res = commands::inspect(&ckpt, sample, data.as_deref(), out.as_deref())?;
            for f in &res.heatmaps {
                println!("{}", f.display());
            }
            let near_zero = res.channel_stats.iter().filter(|c| c.mean.abs() <= 0.5).count();
            println!("{near_zero}/{} channel means within [-0.5, 0.5]", res.channel_stats.len());
        }
        Cmd::Params { config, json } => {
            let report = commands::params(&RunConfig::from_file(&config)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.table());
                println!("slow fraction {:.4}", report.slow_fraction());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
