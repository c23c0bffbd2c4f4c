use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use netcoop::harness::{self, ExperimentPlan, Target};
use netcoop::scenario::{drop_rng, load_config_with, Config, Stream};
use netcoop::sensing;
use netcoop::Scheme;

#[derive(Parser)]
#[command(
    name = "netcoop",
    version,
    about = "Downlink network cooperative MIMO simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep schemes over SNR points and drops.
    Simulate {
        /// TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `scenario.n_drops=10`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// single, static, central, distributed or all; repeatable.
        #[arg(long, default_value = "all")]
        scheme: Vec<String>,
        /// se, coverage, throughput, ee; repeatable. Defaults to all.
        #[arg(long)]
        target: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        /// Master seed, overriding `scenario.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the contents of an existing output directory.
        #[arg(long)]
        overwrite: bool,
        /// Also write per-drop channel statistics.
        #[arg(long)]
        dump_channels: bool,
        /// Also write per-solve sum-rate traces.
        #[arg(long)]
        dump_traces: bool,
        /// Relative sum-rate change that stops the solver.
        #[arg(long)]
        solver_tol: Option<f64>,
        /// Iteration cap of the centralized and per-cluster independent solves.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Reference-path synchronization experiment.
    Sensing {
        /// TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `sensing.snr_db=10`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Replace earlier sensing results in the output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Rank schemes in a finished run and check the expected trends.
    Compare {
        /// Output directory of a `simulate` run.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(config: Option<&Path>, overrides: &[String]) -> Result<Config, String> {
    match config {
        Some(p) => load_config_with(p, overrides).map_err(|e| e.to_string()),
        None => Config::from_toml_str("", overrides).map_err(|e| e.to_string()),
    }
}

fn parse_schemes(raw: &[String]) -> Result<Vec<Scheme>, String> {
    let mut out = Vec::new();
    for item in raw.iter().flat_map(|s| s.split(',')) {
        if item == "all" {
            out.extend(Scheme::ALL);
        } else {
            out.push(item.parse::<Scheme>().map_err(|e| e.to_string())?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate {
            config,
            mut set,
            scheme,
            target,
            out,
            jobs,
            seed,
            overwrite,
            dump_channels,
            dump_traces,
            solver_tol,
            max_iter,
        } => {
            if let Some(s) = seed {
                set.push(format!("scenario.seed={s}"));
            }
            if let Some(t) = solver_tol {
                set.push(format!("solver.tol={t:e}"));
            }
            if let Some(m) = max_iter {
                set.push(format!("solver.max_iter={m}"));
            }
            let cfg = load(config.as_deref(), &set)?;
            let mut plan = ExperimentPlan::from_config(&cfg, out);
            plan.schemes = parse_schemes(&scheme)?;
            if !target.is_empty() {
                plan.targets = target
                    .iter()
                    .flat_map(|s| s.split(','))
                    .map(|s| s.parse::<Target>())
                    .collect::<Result<_, _>>()?;
            }
            plan.jobs = jobs;
            plan.overwrite = overwrite;
            plan.dump_channels = dump_channels;
            plan.dump_traces = dump_traces;
            let res = harness::run_experiment(&plan, &cfg).map_err(|e| e.to_string())?;
            log::info!(
                "{} samples, {} failed, config {}",
                res.total_samples,
                res.failures.len(),
                res.config_hash
            );
            for row in &res.summary {
                println!(
                    "{:<12} {:>5} dB  SE {:8.3} ± {:.3}  coverage {:.3}  throughput {:.3e}",
                    row.scheme.name(),
                    row.snr_db,
                    row.se_mean,
                    row.se_ci,
                    row.coverage_mean,
                    row.throughput_mean
                );
            }
            Ok(())
        }
        Command::Sensing {
            config,
            set,
            out,
            overwrite,
        } => {
            let cfg = load(config.as_deref(), &set)?;
            const FILES: [&str; 3] = ["sensing.csv", "sensing_summary.csv", "sensing_report.txt"];
            if !overwrite && FILES.iter().any(|f| out.join(f).exists()) {
                return Err(format!(
                    "{} already holds sensing results; pass --overwrite to replace them",
                    out.display()
                ));
            }
            let s = &cfg.sensing;
            let est = s.estimator();
            let draws: Vec<sensing::SensingDraw> = (0..s.n_draws)
                .into_par_iter()
                .map(|d| {
                    sensing::run_draw(
                        &s.scene,
                        s.snr_db,
                        &est,
                        &mut drop_rng(s.seed, d, Stream::Sensing),
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let summary = sensing::summarize(&s.scene, &draws);
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let write = |name: &str,
                         f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>|
             -> Result<(), String> {
                let mut buf = Vec::new();
                f(&mut buf).map_err(|e| e.to_string())?;
                std::fs::write(out.join(name), buf).map_err(|e| e.to_string())
            };
            write("sensing.csv", &|b| {
                sensing::write_draws_csv(b, &s.scene, &draws)
            })?;
            write("sensing_summary.csv", &|b| {
                sensing::write_summary_csv(b, &summary)
            })?;
            write("sensing_report.txt", &|b| {
                sensing::write_report(b, s, &summary)
            })?;
            let mut report = Vec::new();
            sensing::write_report(&mut report, s, &summary).map_err(|e| e.to_string())?;
            print!("{}", String::from_utf8_lossy(&report));
            Ok(())
        }
        Command::Compare { input } => {
            let records = harness::load_results(&input).map_err(|e| e.to_string())?;
            let report = harness::compare_schemes(&records).map_err(|e| e.to_string())?;
            report.write_csv(&input).map_err(|e| e.to_string())?;
            print!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
