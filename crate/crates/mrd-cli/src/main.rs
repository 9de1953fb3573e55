//! `mrd`: sample designs, classify cells, estimate effects, replicate
//! simulations, run the scaling study and the enumeration oracle.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 oracle failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrd::core::{classify_cells, AxisAssignments, Rule};
use mrd::designs::stream_rng;
use mrd::estimators::{spillover_estimates, type_means, EstimateRecord};
use mrd::harness::{
    build_bank, design_dims, run_oracle_suite, run_replication, run_scaling_study, write_json, write_replication,
    write_scaling, write_sidecar, ExperimentConfig, OracleOptions, RunMeta,
};
use mrd::oracle::Realization;
use mrd::variance::{sigma_hats, spillover_variance_bounds};
use mrd::MrdError;

#[derive(Parser)]
#[command(name = "mrd", version, about = "Multiple randomization designs for marketplace experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one assignment from the configured design.
    Sample,
    /// Exposure types for given buyer and seller labels.
    Classify {
        /// Comma-separated 0/1 buyer labels.
        #[arg(long, value_delimiter = ',')]
        buyer: Vec<i32>,
        /// Comma-separated 0/1 seller labels.
        #[arg(long, value_delimiter = ',')]
        seller: Vec<i32>,
        #[arg(long)]
        disjunctive: bool,
    },
    /// Point estimates, Σ̂ and variance bounds from one simulated draw.
    Estimate,
    /// Monte-Carlo replication of the configured design.
    Replicate,
    /// Replication across the configured size ladder.
    Scale,
    /// Enumeration checks of the exact moment formulas.
    Oracle {
        /// Largest support size to enumerate.
        #[arg(long, default_value_t = 1000)]
        budget: u64,
        /// Perturb the closed forms; the suite must then fail.
        #[arg(long)]
        fault_injection: bool,
    },
}

enum Failure {
    Config(String),
    Oracle,
    Runtime(String),
}

impl From<MrdError> for Failure {
    fn from(e: MrdError) -> Self {
        match e {
            MrdError::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let path = c.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn write_with<F>(dir: &Path, name: &str, columns: Vec<String>, meta: &RunMeta, f: F) -> Result<(), Failure>
where
    F: FnOnce(fs::File) -> mrd::Result<()>,
{
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let file = fs::File::create(dir.join(name)).map_err(|e| Failure::Runtime(e.to_string()))?;
    f(file)?;
    write_sidecar(dir, name, &columns, meta)?;
    Ok(())
}

fn grid_columns(j: usize) -> Vec<String> {
    std::iter::once("buyer".to_string()).chain((0..j).map(|c| c.to_string())).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = cli.common;
    match cli.command {
        Command::Sample => {
            let cfg = load_config(&c)?;
            let draw = cfg.design.sample(&mut stream_rng(cfg.seed, 0))?;
            let dir = out_dir(&cfg);
            let meta = RunMeta::of(&cfg);
            let w = draw
                .assignment()
                .ok_or_else(|| Failure::Runtime("design has no assignment matrix".into()))?;
            write_with(&dir, "assignment.csv", grid_columns(w.dims().j), &meta, |f| w.write_csv(f))?;
            if let Some(t) = draw.types() {
                write_with(&dir, "types.csv", grid_columns(t.dims().j), &meta, |f| t.write_csv(f))?;
            }
            print!("{w}");
        }
        Command::Classify { buyer, seller, disjunctive } => {
            let rule = if disjunctive { Rule::Disjunctive } else { Rule::Conjunctive };
            let types = classify_cells(&AxisAssignments::new(buyer, seller), rule)?;
            match &c.out {
                Some(dir) => {
                    let meta = RunMeta { config_hash: String::new(), seed: c.seed.unwrap_or(0) };
                    write_with(dir, "types.csv", grid_columns(types.dims().j), &meta, |f| types.write_csv(f))?;
                }
                None => types.write_csv(std::io::stdout())?,
            }
        }
        Command::Estimate => {
            let cfg = load_config(&c)?;
            let dims = design_dims(&cfg.design)?;
            let bank = build_bank(&cfg, dims, 0)?;
            let draw = cfg.design.sample(&mut stream_rng(cfg.seed, 0))?;
            let r = Realization::from_draw(&bank, draw)?;
            let types = r.types.as_ref().ok_or_else(|| {
                Failure::Runtime("estimate needs a design with exposure types (smrd_conjunctive or smrd_disjunctive)".into())
            })?;
            let means = type_means(&r.observed, types)?;
            let record = EstimateRecord::new(&means, &spillover_estimates(&means)?)?;
            let csv = record.to_csv()?;
            let dir = out_dir(&cfg);
            let meta = RunMeta::of(&cfg);
            let columns = csv.lines().next().unwrap_or_default().split(',').map(str::to_owned).collect();
            write_with(&dir, "estimate.csv", columns, &meta, |mut f| {
                std::io::Write::write_all(&mut f, csv.as_bytes()).map_err(Into::into)
            })?;
            let sigma = sigma_hats(&r.observed, types).ok();
            let bounds = sigma.map(|s| spillover_variance_bounds(s.map(|x| x.value), cfg.cross_scale));
            #[derive(serde::Serialize)]
            struct EstimateReport<'a> {
                config_hash: String,
                seed: u64,
                estimates: &'a EstimateRecord,
                sigma_hat: Option<[mrd::variance::SigmaHat; 4]>,
                bounds: Option<[(mrd::variance::Effect, mrd::variance::Bounds); 4]>,
            }
            write_json(
                &dir.join("estimate.json"),
                &EstimateReport { config_hash: cfg.hash(), seed: cfg.seed, estimates: &record, sigma_hat: sigma, bounds },
            )?;
            print!("{csv}");
        }
        Command::Replicate => {
            let cfg = load_config(&c)?;
            let out = run_replication(&cfg, c.threads)?;
            let dir = out_dir(&cfg);
            write_replication(&out, &dir)?;
            println!("wrote {} replicas to {}", cfg.replicas, dir.display());
        }
        Command::Scale => {
            let cfg = load_config(&c)?;
            let report = run_scaling_study(&cfg, c.threads)?;
            let dir = out_dir(&cfg);
            write_scaling(&report, &cfg, &dir)?;
            for (t, ok) in mrd::core::ExposureType::SMRD.iter().zip(report.sigma_hat_decreasing) {
                println!("sigma_hat_{} decreasing across ladder: {ok}", t.name());
            }
        }
        Command::Oracle { budget, fault_injection } => {
            let report = run_oracle_suite(OracleOptions { budget, seed: c.seed.unwrap_or(0), fault_injection })?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for line in &report.lines {
                println!("{line}");
            }
            if let Some(dir) = &c.out {
                fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
                write_json(&dir.join("oracle.json"), &report)?;
            }
            if !report.passed() {
                return Err(Failure::Oracle);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Oracle) => {
            eprintln!("error: oracle suite failed");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
