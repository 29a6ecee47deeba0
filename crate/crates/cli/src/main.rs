//! `aotsnn` command-line tool.
//!
//! Settings are resolved as defaults < `--config` file < `AOTSNN_OUT_DIR`
//! (output directory only) < flags. Exit codes: 0 success, 2 config error,
//! 3 numeric failure, 4 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aotsnn::config::{ExperimentConfig, OUT_DIR_ENV};
use aotsnn::eval::{format_summary_csv, read_results, summarize, write_summary_csv, ResultRecord};
use aotsnn::experiment::{run_bench, run_toy, write_bench_artifacts, write_config_artifact, write_toy_artifacts};
use aotsnn::gradcheck::run_gradcheck;
use aotsnn::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aotsnn",
    version,
    about = "Spiking-network regression with predictive uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both heads on the toy cubic and write metrics and plot tables.
    Toy(RunArgs),
    /// Run the fold protocol on manifest datasets.
    Bench(RunArgs),
    /// Compare BPTT gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradient of this slot (self-test).
        #[arg(long, hide = true)]
        corrupt_slot: Option<String>,
    },
    /// Recompute the summary table from a results file.
    Summarize {
        results: PathBuf,
        /// Also write summary.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// gaussian, rac or both.
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest name, comma list, or `all`.
    #[arg(long)]
    dataset: Option<String>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = &self.head {
            cfg.set("heads", h)?;
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_toy(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve(ExperimentConfig::toy())?;
    if cfg.dataset != "toy" {
        return Err(Error::Config(format!(
            "the toy command runs dataset 'toy', not '{}'",
            cfg.dataset
        )));
    }
    let outcome = run_toy(&cfg)?;
    for h in &outcome.heads {
        println!(
            "{:<8} rmse {:.4}  nll {:.4}  interior sigma {:.4}",
            h.head, h.metrics.rmse, h.metrics.nll, h.interior_sigma
        );
    }
    let mut paths = vec![write_config_artifact(&cfg, &cfg.out_dir)?];
    paths.extend(write_toy_artifacts(&outcome, &cfg, &cfg.out_dir)?);
    print_paths(&paths);
    Ok(())
}

fn cmd_bench(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve(ExperimentConfig::bench())?;
    let outcome = run_bench(&cfg)?;
    let mut paths = vec![write_config_artifact(&cfg, &cfg.out_dir)?];
    paths.extend(write_bench_artifacts(&outcome, &cfg, &cfg.out_dir)?);
    for row in &outcome.summary {
        println!(
            "{:<10} {:<8} folds {:>2}  rmse {:.3} ± {:.3}  nll {:.3} ± {:.3}",
            row.dataset, row.head, row.folds, row.rmse.mean, row.rmse.se, row.nll.mean, row.nll.se
        );
    }
    print_paths(&paths);
    let failed: Vec<_> = outcome.failures().collect();
    for f in &failed {
        eprintln!("fold failed: {} {} fold {}: {}", f.dataset, f.head, f.fold, f.error);
    }
    if !failed.is_empty() {
        return Err(Error::Numeric(format!("{} fold(s) failed", failed.len())));
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<()> {
    let report = run_gradcheck(seed, corrupt)?;
    print!("{}", report.to_text());
    let worst = report.slots.iter().map(|s| s.max_rel_error).fold(0.0, f64::max);
    println!("max relative error {worst:.3e} (tolerance {:.0e})", report.tolerance);
    if report.passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|f| format!("{}:{} ({:.3e})", f.head, f.slot, f.max_rel_error))
            .collect();
        Err(Error::Numeric(format!("gradcheck failed for {}", names.join(", "))))
    }
}

fn results_header(path: &Path) -> Result<(String, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let mut hash = String::new();
    let mut seed = 0;
    for tok in first.trim_start_matches('#').split_whitespace() {
        if let Some(h) = tok.strip_prefix("config_hash=") {
            hash = h.to_string();
        } else if let Some(s) = tok.strip_prefix("seed=") {
            seed = s
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad seed in header", path.display())))?;
        }
    }
    Ok((hash, seed))
}

fn cmd_summarize(results: &Path, out: Option<&Path>) -> Result<()> {
    let (hash, seed) = results_header(results)?;
    let ok: Vec<_> = read_results(results)?
        .into_iter()
        .filter_map(|r| match r {
            ResultRecord::Ok(f) => Some(f),
            ResultRecord::Failed(_) => None,
        })
        .collect();
    if ok.is_empty() {
        return Err(Error::Data(format!("{}: no successful folds", results.display())));
    }
    let rows = summarize(&ok)?;
    print!("{}", format_summary_csv(&rows, &hash, seed));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("summary.csv");
        write_summary_csv(&path, &rows, &hash, seed)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    aotsnn::alloc::retain_freed_memory();
    let result = match &cli.command {
        Command::Toy(a) => cmd_toy(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck { seed, corrupt_slot } => cmd_gradcheck(*seed, corrupt_slot.as_deref()),
        Command::Summarize { results, out } => cmd_summarize(results, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
