//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{rho_grid, ExperimentConfig};
use crate::csvio::{read_dataset, write_dataset, write_trace};
use crate::error::{HarnessError, Result};
use crate::experiment::{
    check_dataset, first_point, generate, result_dir, run_experiment, run_method, sweep_nmc,
    write_experiment, write_sweep,
};
use crate::metrics::mse_second_half;

#[derive(Debug, Parser)]
#[command(
    name = "viking",
    version,
    about = "Variational adaptive filtering experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate datasets and write them as CSV.
    Simulate(Common),
    /// Filter a dataset CSV (--data) and write the trace.
    Filter(Common),
    /// Run an experiment end to end over the configured grid.
    Experiment(Common),
    /// Sweep the number of Monte-Carlo draws.
    SweepNmc(Common),
    /// Grid search over rho_a and rho_b (defaults to e^-1..e^-10 for both).
    Grid(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file with one `key = value` per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed list: integers and inclusive ranges, e.g. `1..20` or `1,5,9`.
    #[arg(long, visible_alias = "seeds")]
    pub seed: Option<String>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub n_mc: Option<String>,
    /// Value, comma list, `e^-k`, or `grid`.
    #[arg(long)]
    pub rho_a: Option<String>,
    /// Value, comma list, `e^-k`, or `grid`.
    #[arg(long)]
    pub rho_b: Option<String>,
    /// Comma list of n_mc values for `sweep-nmc`.
    #[arg(long)]
    pub nmc_list: Option<String>,
    /// Dataset CSV for `filter`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Any other config key, as KEY=VALUE. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// Defaults, then the config file, then flags.
    pub fn config(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            cfg.apply_text(&text, path)?;
        }
        let flags = [
            ("experiment", &self.experiment),
            ("n", &self.n),
            ("seeds", &self.seed),
            ("method", &self.method),
            ("setting", &self.setting),
            ("n_mc", &self.n_mc),
            ("rho_a", &self.rho_a),
            ("rho_b", &self.rho_b),
            ("nmc_list", &self.nmc_list),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                HarnessError::usage(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `argv` (including the program name) and run. Returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command. Returns the lines to report on stdout.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    match &cli.command {
        Command::Simulate(c) => simulate(&c.config(ExperimentConfig::default())?, &c.out),
        Command::Filter(c) => {
            let data = c
                .data
                .as_deref()
                .ok_or_else(|| HarnessError::usage("filter needs --data <csv>"))?;
            filter(&c.config(ExperimentConfig::default())?, data, &c.out)
        }
        Command::Experiment(c) => experiment(&c.config(ExperimentConfig::default())?, &c.out),
        Command::Grid(c) => {
            let base = ExperimentConfig {
                rho_a: rho_grid(),
                rho_b: rho_grid(),
                ..ExperimentConfig::default()
            };
            experiment(&c.config(base)?, &c.out)
        }
        Command::SweepNmc(c) => sweep(&c.config(ExperimentConfig::default())?, &c.out),
    }
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for &seed in &cfg.seeds {
        let data = generate(cfg.experiment, cfg.n, seed)?;
        let path = out
            .join(cfg.experiment.name())
            .join(format!("data-seed{seed}.csv"));
        write_dataset(&path, &data)?;
        lines.push(path.display().to_string());
    }
    Ok(lines)
}

fn filter(cfg: &ExperimentConfig, data_path: &Path, out: &Path) -> Result<Vec<String>> {
    let data = read_dataset(data_path)?;
    check_dataset(cfg, &data)?;
    let seed = cfg.seeds[0];
    let trace = run_method(cfg, first_point(cfg), &data, seed)?;
    let stem = data_path
        .file_stem()
        .map_or("data".into(), |s| s.to_string_lossy().into_owned());
    let path = out.join(format!("{stem}-{}-{}.csv", cfg.method, cfg.setting));
    write_trace(&path, &trace)?;
    Ok(vec![
        path.display().to_string(),
        format!("mse_second_half = {}", mse_second_half(&trace)?),
    ])
}

fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let result = run_experiment(cfg)?;
    let dir = write_experiment(&result, out)?;
    let best = result.best_row();
    Ok(vec![
        dir.display().to_string(),
        format!(
            "best grid point {} of {}: mean second-half MSE {:.6} (stderr {:.6}, {} seeds)",
            best.index,
            result.rows.len(),
            best.mean_mse,
            best.stderr,
            best.mses.len()
        ),
    ])
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let rows = sweep_nmc(cfg, &cfg.nmc_list)?;
    let dir = result_dir(out, cfg.experiment, cfg.method, cfg.setting);
    let path = dir.with_file_name(format!("sweep-nmc-{}.csv", cfg.setting));
    write_sweep(&path, &rows)?;
    let mut lines = vec![path.display().to_string()];
    lines.extend(
        rows.iter()
            .map(|r| format!("n_mc = {:3}: ratio {:.4}", r.n_mc, r.ratio)),
    );
    Ok(lines)
}
