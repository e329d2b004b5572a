//! `sourcedr` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use sourcedr_core::dgp::{read_dataset_csv, write_dataset_csv, DatasetMeta};
use sourcedr_core::estimator::{fit, Side};
use sourcedr_core::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use sourcedr_core::inference::cross_fit_infer;
use sourcedr_core::rkhs::MomentFunctional;
use sourcedr_core::Error;

#[derive(Parser, Debug)]
#[command(name = "sourcedr", version, about = "Doubly robust inference for linear inverse problems")]
struct Cli {
    /// Experiment or model configuration (TOML, or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    Primal,
    Dual,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Primal => Side::Primal,
            SideArg::Dual => Side::Dual,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Strong,
    Weak,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from the configured model.
    Simulate {
        /// Sample size (default: last entry of `n_grid`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit one nuisance on a dataset and write `fit.json`.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        side: Option<SideArg>,
    },
    /// Cross-fit inference on a dataset; writes `report.json`.
    Infer {
        #[arg(long)]
        data: PathBuf,
    },
    /// Confidence-interval coverage study.
    Coverage,
    /// Error-rate study of one nuisance.
    Rates {
        /// Overrides the metric implied by `kind`.
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
    /// Coverage under uncertainty about which side is well posed.
    SourceDr,
    /// Rate exponents over a grid of β, as `curves.csv`.
    Curves,
    /// Self-check of the exact oracles.
    OracleCheck,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::new(ExperimentKind::Coverage),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

fn moments(cfg: &ExperimentConfig) -> anyhow::Result<(MomentFunctional, Option<MomentFunctional>)> {
    let from_dgp = cfg.dgp.as_ref().map(|_| cfg.simulator()).transpose()?;
    let m = cfg
        .m
        .clone()
        .or_else(|| from_dgp.as_ref().map(|s| s.m.clone()))
        .unwrap_or_else(MomentFunctional::outcome);
    let m_tilde = cfg.m_tilde.clone().or_else(|| from_dgp.map(|s| s.m_tilde));
    Ok((m, m_tilde))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Simulate { n } => {
            let spec = cfg.dgp.as_ref().ok_or_else(|| anyhow!("simulate needs a [dgp] section"))?;
            let n = n.or(cfg.n_grid.last().copied()).ok_or_else(|| anyhow!("pass --n or set n_grid"))?;
            let sim = cfg.simulator()?;
            let data = sim.sample(n, cfg.base_seed)?;
            fs::create_dir_all(out)?;
            write_dataset_csv(&data, &out.join("data.csv"))?;
            let meta = DatasetMeta {
                seed: cfg.base_seed,
                n,
                config_hash: spec.config_hash()?,
                theta0: sim.truth.theta0,
                beta_h: sim.truth.beta_h,
                beta_q: sim.truth.beta_q,
            };
            write_json(&out.join("meta.json"), &meta)?;
            println!("{}", serde_json::to_string(&meta)?);
        }
        Command::Fit { data, side } => {
            let side = side.map(Side::from).unwrap_or(cfg.side);
            let dataset = read_dataset_csv(data, cfg.base_seed)?;
            let (m, m_tilde) = moments(&cfg)?;
            let (moment, est) = match side {
                Side::Primal => (m, cfg.estimator.clone()),
                Side::Dual => (
                    m_tilde.ok_or_else(|| anyhow!("the dual fit needs `m_tilde` or a [dgp]"))?,
                    cfg.dual_estimator.clone().unwrap_or_else(|| cfg.estimator.clone()),
                ),
            };
            let result = fit(&dataset, side, &moment, &est)?;
            write_json(&out.join("fit.json"), &result)?;
        }
        Command::Infer { data } => {
            let dataset = read_dataset_csv(data, cfg.base_seed)?;
            let (m, m_tilde) = moments(&cfg)?;
            let m_tilde = m_tilde.ok_or_else(|| anyhow!("inference needs `m_tilde` or a [dgp]"))?;
            let truth = cfg.dgp.as_ref().map(|_| cfg.simulator()).transpose()?.map(|s| s.truth);
            let report = cross_fit_infer(&dataset, &m, &m_tilde, &cfg.inference_config(), truth.as_ref())?;
            write_json(&out.join("report.json"), &report)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        cmd => {
            cfg.kind = match cmd {
                Command::Coverage => ExperimentKind::Coverage,
                Command::Rates { metric: Some(MetricArg::Strong) } => ExperimentKind::RateStrong,
                Command::Rates { metric: Some(MetricArg::Weak) } => ExperimentKind::RateWeak,
                Command::Rates { metric: None } if cfg.kind == ExperimentKind::RateWeak => ExperimentKind::RateWeak,
                Command::Rates { metric: None } => ExperimentKind::RateStrong,
                Command::SourceDr => ExperimentKind::SourceDr,
                Command::Curves => ExperimentKind::Curves,
                _ => ExperimentKind::OracleCheck,
            };
            let summary = run_experiment(&cfg, out, cli.jobs)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

/// 2 for non-convergence, 3 for infeasibility, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::NonConvergence { .. }) => 2,
        Some(Error::PrimalInfeasible { .. } | Error::DualInfeasible { .. } | Error::EmptyVersionSpace) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = format!("error: {e}");
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !shown.contains(&text) {
                    shown.push_str(&format!("\n  caused by: {text}"));
                }
            }
            eprintln!("{shown}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_error() {
        let wrapped = Error::Fold {
            fold: 1,
            source: Box::new(Error::NonConvergence { iterations: 200, last_change: 1.0, last_coeffs: vec![] }),
        };
        assert_eq!(exit_code(&anyhow::Error::new(wrapped)), 2);
        assert_eq!(exit_code(&anyhow::Error::new(Error::EmptyVersionSpace)), 3);
        assert_eq!(exit_code(&anyhow::Error::new(Error::DualInfeasible { residual: 1.0 })), 3);
        assert_eq!(exit_code(&anyhow!("plain failure")), 1);
    }
}
