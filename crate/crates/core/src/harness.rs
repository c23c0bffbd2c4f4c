//! Monte-Carlo sweeps over schemes, SNR points and drops; aggregation and
//! trend comparison.
//!
//! Every drop is an independent job: it draws its own topology and fading
//! from per-drop random streams and evaluates every (SNR, scheme) pair.
//! Results are sorted by key before aggregation, so output files do not
//! depend on the number of worker threads or on completion order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{generate_channels, ChannelState, CHANNEL_CSV_HEADER};
use crate::clustering::{assign, ClusterAssignment, Scheme, ASSIGNMENT_CSV_HEADER};
use crate::metrics::{evaluate, MeanCi};
use crate::precoding::{solve, solve_warm, PrecodingSolution};
use crate::scenario::{drop_rng, generate_topology, Config, ConfigError, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("output directory {0} already holds results; pass --overwrite to replace them")]
    OutputExists(PathBuf),
    #[error("{failed} of {total} samples failed (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("experiment plan needs at least one scheme and one SNR point")]
    EmptyPlan,
    #[error("comparison needs at least two schemes")]
    NotEnoughSchemes,
    #[error("schemes were run on different sweep grids: {0}")]
    GridMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Power sweep of the energy-efficiency experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Smallest per-BS budget of the log-spaced grid, watts.
    pub ee_p_min: f64,
    pub ee_p_max: f64,
    pub ee_points: usize,
    pub ee_drops: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ee_p_min: 1e-3,
            ee_p_max: 1e4,
            ee_points: 15,
            ee_drops: 10,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.ee_p_min > 0.0
            && self.ee_p_max > self.ee_p_min
            && self.ee_points >= 2
            && self.ee_drops >= 1;
        if !ok {
            return Err(ConfigError::Invalid {
                field: "sweep".into(),
                reason: "need 0 < ee_p_min < ee_p_max, ee_points >= 2, ee_drops >= 1".into(),
            });
        }
        Ok(())
    }

    /// Log-spaced per-BS budgets, watts.
    pub fn power_grid(&self) -> Vec<f64> {
        let (a, b) = (self.ee_p_min.log10(), self.ee_p_max.log10());
        let n = self.ee_points;
        (0..n)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    SpectralEfficiency,
    Coverage,
    Throughput,
    EnergyEfficiency,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::SpectralEfficiency,
        Target::Coverage,
        Target::Throughput,
        Target::EnergyEfficiency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::SpectralEfficiency => "se",
            Target::Coverage => "coverage",
            Target::Throughput => "throughput",
            Target::EnergyEfficiency => "ee",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown target `{s}` (expected se|coverage|throughput|ee)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub schemes: Vec<Scheme>,
    pub snr_points: Vec<f64>,
    pub n_drops: usize,
    pub out_dir: PathBuf,
    pub targets: Vec<Target>,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub overwrite: bool,
    pub dump_channels: bool,
    pub dump_traces: bool,
}

impl ExperimentPlan {
    /// Every scheme, the configured sweep and all targets.
    pub fn from_config(cfg: &Config, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            snr_points: cfg.scenario.snr_sweep.clone(),
            n_drops: cfg.scenario.n_drops,
            out_dir: out_dir.into(),
            targets: Target::ALL.to_vec(),
            jobs: None,
            overwrite: false,
            dump_channels: false,
            dump_traces: false,
        }
    }

    fn wants_sweep(&self) -> bool {
        self.targets.iter().any(|t| *t != Target::EnergyEfficiency)
    }

    fn wants_ee(&self) -> bool {
        self.targets.contains(&Target::EnergyEfficiency)
    }
}

/// One (scheme, SNR, drop) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub drop: usize,
    pub sum_se: f64,
    /// Fraction of the drop's UEs meeting the SINR threshold.
    pub coverage: f64,
    pub throughput: f64,
    /// Throughput with unlimited compute capacity, `B * R`.
    pub throughput_unlimited: f64,
    pub energy_eff: f64,
    pub p_tx: f64,
    pub flops: f64,
    pub flops_total: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub n: usize,
    pub se_mean: f64,
    pub se_ci: f64,
    pub coverage_mean: f64,
    pub coverage_ci: f64,
    pub throughput_mean: f64,
    pub throughput_ci: f64,
    pub throughput_unlimited_mean: f64,
    pub ee_mean: f64,
    pub ee_ci: f64,
    pub p_tx_mean: f64,
    pub flops_mean: f64,
    pub iterations_mean: f64,
}

/// One (scheme, power) point of the energy-efficiency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeSample {
    pub scheme: Scheme,
    pub p_max: f64,
    pub drop: usize,
    pub sum_se: f64,
    pub energy_eff: f64,
    pub p_tx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeRow {
    pub scheme: Scheme,
    pub p_max: f64,
    pub n: usize,
    pub se_mean: f64,
    pub se_ci: f64,
    pub ee_mean: f64,
    pub ee_ci: f64,
    pub p_tx_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub scheme: String,
    pub point: f64,
    pub drop: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub records: Vec<SampleRecord>,
    pub summary: Vec<SummaryRow>,
    pub ee_samples: Vec<EeSample>,
    pub ee: Vec<EeRow>,
    pub failures: Vec<FailureRecord>,
    pub total_samples: usize,
    pub config_hash: String,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EE_FILE: &str = "ee.csv";
pub const EE_SAMPLES_FILE: &str = "ee_samples.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHANNELS_FILE: &str = "channels.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const TRACES_FILE: &str = "traces.csv";

const OUTPUT_FILES: [&str; 10] = [
    RESULTS_FILE,
    SUMMARY_FILE,
    EE_FILE,
    EE_SAMPLES_FILE,
    FAILURES_FILE,
    MANIFEST_FILE,
    CONFIG_FILE,
    CHANNELS_FILE,
    ASSIGNMENTS_FILE,
    TRACES_FILE,
];

pub fn config_hash(cfg: &Config) -> String {
    let digest = Sha256::digest(cfg.to_toml_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
struct DropOutput {
    records: Vec<SampleRecord>,
    failures: Vec<FailureRecord>,
    attempted: usize,
    channels: String,
    assignments: String,
    traces: String,
}

fn fail(out: &mut DropOutput, scheme: &str, point: f64, drop: usize, error: String) {
    log::warn!("drop {drop}, {scheme} at {point}: {error}");
    out.failures.push(FailureRecord {
        scheme: scheme.to_string(),
        point,
        drop,
        error,
    });
}

/// Topology and physical channels of drop `drop`, drawn from that drop's
/// fading substream.
pub fn drop_channel(cfg: &Config, drop: usize) -> Result<ChannelState, String> {
    let topo = generate_topology(&cfg.scenario, drop).map_err(|e| e.to_string())?;
    let mut rng = drop_rng(cfg.scenario.seed, drop, Stream::Fading);
    generate_channels(&cfg.scenario, &topo, &mut rng).map_err(|e| e.to_string())
}

fn assignments(
    cfg: &Config,
    channel: &ChannelState,
    schemes: &[Scheme],
) -> Vec<Result<ClusterAssignment, String>> {
    let sc = &cfg.scenario;
    schemes
        .iter()
        .map(|&s| {
            assign(
                s,
                sc.grid_shape(),
                &channel.rsrp_dbm,
                sc.static_groups,
                sc.cluster_size_l,
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

fn run_drop(cfg: &Config, plan: &ExperimentPlan, drop: usize) -> DropOutput {
    use std::fmt::Write;
    let mut out = DropOutput {
        attempted: plan.schemes.len() * plan.snr_points.len(),
        ..Default::default()
    };
    let channel = match drop_channel(cfg, drop) {
        Ok(c) => c,
        Err(e) => {
            for &s in &plan.schemes {
                for &snr in &plan.snr_points {
                    fail(&mut out, s.name(), snr, drop, e.clone());
                }
            }
            return out;
        }
    };
    let assigned = assignments(cfg, &channel, &plan.schemes);
    if plan.dump_channels {
        let mut buf = Vec::new();
        channel.write_csv(&mut buf, drop).expect("write to memory");
        out.channels = String::from_utf8(buf).expect("utf8");
        for a in assigned.iter().flatten() {
            let mut buf = Vec::new();
            a.write_csv(&mut buf, drop).expect("write to memory");
            for line in String::from_utf8(buf).expect("utf8").lines() {
                let _ = writeln!(out.assignments, "{},{line}", a.scheme);
            }
        }
    }
    let sc = &cfg.scenario;
    let mut csi_rng = drop_rng(sc.seed, drop, Stream::CsiError);
    for &snr in &plan.snr_points {
        let (truth, p_max) = channel.operating_point(snr, sc.p_max_per_bs, sc.normalize_gains);
        let estimate = truth.with_estimation_error(sc.csi_error, &mut csi_rng);
        for (&scheme, a) in plan.schemes.iter().zip(&assigned) {
            let a = match a {
                Ok(a) => a,
                Err(e) => {
                    fail(&mut out, scheme.name(), snr, drop, e.clone());
                    continue;
                }
            };
            let sol = match solve(&estimate, a, p_max, &cfg.solver) {
                Ok(s) => s,
                Err(e) => {
                    fail(&mut out, scheme.name(), snr, drop, e.to_string());
                    continue;
                }
            };
            if plan.dump_traces {
                for (i, r) in sol.rate_trace.iter().enumerate() {
                    let _ = writeln!(out.traces, "{scheme},{snr},{drop},{i},{r}");
                }
            }
            let m = evaluate(&truth, a, &sol, &cfg.metrics, sc.bandwidth, snr);
            out.records.push(SampleRecord {
                scheme,
                snr_db: snr,
                drop,
                sum_se: m.sum_se,
                coverage: m.coverage,
                throughput: m.throughput,
                throughput_unlimited: sc.bandwidth * m.sum_se,
                energy_eff: m.energy_eff,
                p_tx: m.p_tx_total,
                flops: m.flops,
                flops_total: sol.flops_total,
                iterations: m.iterations,
                converged: sol.converged,
            });
        }
    }
    out
}

struct EeDropOutput {
    samples: Vec<EeSample>,
    failures: Vec<FailureRecord>,
    attempted: usize,
}

/// Physical channels (no normalization), per-BS budget swept over the grid.
fn run_ee_drop(cfg: &Config, plan: &ExperimentPlan, drop: usize) -> EeDropOutput {
    let grid = cfg.sweep.power_grid();
    let mut out = DropOutput::default();
    let mut samples = Vec::new();
    let attempted = grid.len() * plan.schemes.len();
    let channel = match drop_channel(cfg, drop) {
        Ok(c) => c,
        Err(e) => {
            for &s in &plan.schemes {
                for &p in &grid {
                    fail(&mut out, s.name(), p, drop, e.clone());
                }
            }
            return EeDropOutput {
                samples,
                failures: out.failures,
                attempted,
            };
        }
    };
    let assigned = assignments(cfg, &channel, &plan.schemes);
    // budgets ascend: a cold start that lands below the previous point's rate
    // is retried from the previous point's precoders
    let mut previous: Vec<Option<PrecodingSolution>> = vec![None; plan.schemes.len()];
    for &p in &grid {
        for ((&scheme, a), prev) in plan.schemes.iter().zip(&assigned).zip(&mut previous) {
            let res = a.as_ref().map_err(|e| e.clone()).and_then(|a| {
                let mut sol = solve(&channel, a, p, &cfg.solver).map_err(|e| e.to_string())?;
                if let Some(last) = prev.as_ref().filter(|l| l.final_rate() > sol.final_rate()) {
                    let warm = solve_warm(&channel, a, p, &cfg.solver, Some(last))
                        .map_err(|e| e.to_string())?;
                    if warm.final_rate() > sol.final_rate() {
                        sol = warm;
                    }
                }
                Ok((a, sol))
            });
            match res {
                Ok((a, sol)) => {
                    let m = evaluate(
                        &channel,
                        a,
                        &sol,
                        &cfg.metrics,
                        cfg.scenario.bandwidth,
                        f64::NAN,
                    );
                    samples.push(EeSample {
                        scheme,
                        p_max: p,
                        drop,
                        sum_se: m.sum_se,
                        energy_eff: m.energy_eff,
                        p_tx: m.p_tx_total,
                    });
                    *prev = Some(sol);
                }
                Err(e) => fail(&mut out, scheme.name(), p, drop, e),
            }
        }
    }
    EeDropOutput {
        samples,
        failures: out.failures,
        attempted,
    }
}

fn scheme_rank(plan_schemes: &[Scheme], s: Scheme) -> usize {
    plan_schemes
        .iter()
        .position(|&x| x == s)
        .unwrap_or(usize::MAX)
}

fn point_rank(points: &[f64], p: f64) -> usize {
    points.iter().position(|&x| x == p).unwrap_or(usize::MAX)
}

/// Groups records by (scheme, SNR) and averages over drops. Samples are
/// sorted by drop first, so the result does not depend on input order.
pub fn aggregate(records: &[SampleRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Scheme, u64), Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.scheme, r.snr_db.to_bits()))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|r| r.drop);
            let col = |f: fn(&SampleRecord) -> f64| {
                MeanCi::from_samples(&v.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let se = col(|r| r.sum_se);
            let cov = col(|r| r.coverage);
            let tp = col(|r| r.throughput);
            let ee = col(|r| r.energy_eff);
            SummaryRow {
                scheme: v[0].scheme,
                snr_db: v[0].snr_db,
                n: v.len(),
                se_mean: se.mean,
                se_ci: se.half_width,
                coverage_mean: cov.mean,
                coverage_ci: cov.half_width,
                throughput_mean: tp.mean,
                throughput_ci: tp.half_width,
                throughput_unlimited_mean: col(|r| r.throughput_unlimited).mean,
                ee_mean: ee.mean,
                ee_ci: ee.half_width,
                p_tx_mean: col(|r| r.p_tx).mean,
                flops_mean: col(|r| r.flops).mean,
                iterations_mean: col(|r| r.iterations as f64).mean,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.snr_db.total_cmp(&b.snr_db)));
    rows
}

pub fn aggregate_ee(samples: &[EeSample]) -> Vec<EeRow> {
    let mut groups: BTreeMap<(Scheme, u64), Vec<&EeSample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.scheme, s.p_max.to_bits()))
            .or_default()
            .push(s);
    }
    let mut rows: Vec<EeRow> = groups
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|s| s.drop);
            let col = |f: fn(&EeSample) -> f64| {
                MeanCi::from_samples(&v.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            let se = col(|s| s.sum_se);
            let ee = col(|s| s.energy_eff);
            EeRow {
                scheme: v[0].scheme,
                p_max: v[0].p_max,
                n: v.len(),
                se_mean: se.mean,
                se_ci: se.half_width,
                ee_mean: ee.mean,
                ee_ci: ee.half_width,
                p_tx_mean: col(|s| s.p_tx).mean,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.p_max.total_cmp(&b.p_max)));
    rows
}

fn prepare_output(dir: &Path, overwrite: bool) -> Result<(), HarnessError> {
    let existing: Vec<PathBuf> = OUTPUT_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect();
    if !existing.is_empty() {
        if !overwrite {
            return Err(HarnessError::OutputExists(dir.to_path_buf()));
        }
        for p in existing {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err)
}

fn write_text(path: &Path, header: &str, body: &str) -> Result<(), HarnessError> {
    fs::write(path, format!("{header}\n{body}")).map_err(io_err(path))
}

/// Runs the plan and writes its output files. Fails when more than 5% of the
/// attempted samples could not be evaluated.
pub fn run_experiment(
    plan: &ExperimentPlan,
    cfg: &Config,
) -> Result<ExperimentResults, HarnessError> {
    cfg.validate()?;
    if plan.schemes.is_empty() || plan.snr_points.is_empty() || plan.targets.is_empty() {
        return Err(HarnessError::EmptyPlan);
    }
    let mut cfg = cfg.clone();
    cfg.scenario.n_drops = cfg
        .scenario
        .n_drops
        .max(plan.n_drops)
        .max(cfg.sweep.ee_drops);
    let cfg = &cfg;
    prepare_output(&plan.out_dir, plan.overwrite)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = plan.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().expect("thread pool");

    let (drops, ee_drops) = pool.install(|| {
        let drops: Vec<DropOutput> = if plan.wants_sweep() {
            (0..plan.n_drops)
                .into_par_iter()
                .map(|d| run_drop(cfg, plan, d))
                .collect()
        } else {
            Vec::new()
        };
        let ee: Vec<EeDropOutput> = if plan.wants_ee() {
            (0..cfg.sweep.ee_drops)
                .into_par_iter()
                .map(|d| run_ee_drop(cfg, plan, d))
                .collect()
        } else {
            Vec::new()
        };
        (drops, ee)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut total = 0;
    let (mut channels, mut assigned, mut traces) = (String::new(), String::new(), String::new());
    for d in drops {
        records.extend(d.records);
        failures.extend(d.failures);
        total += d.attempted;
        channels.push_str(&d.channels);
        assigned.push_str(&d.assignments);
        traces.push_str(&d.traces);
    }
    let mut ee_samples = Vec::new();
    for d in ee_drops {
        ee_samples.extend(d.samples);
        failures.extend(d.failures);
        total += d.attempted;
    }
    records.sort_by(|a, b| {
        scheme_rank(&plan.schemes, a.scheme)
            .cmp(&scheme_rank(&plan.schemes, b.scheme))
            .then(
                point_rank(&plan.snr_points, a.snr_db).cmp(&point_rank(&plan.snr_points, b.snr_db)),
            )
            .then(a.drop.cmp(&b.drop))
    });
    ee_samples.sort_by(|a, b| {
        scheme_rank(&plan.schemes, a.scheme)
            .cmp(&scheme_rank(&plan.schemes, b.scheme))
            .then(a.p_max.total_cmp(&b.p_max))
            .then(a.drop.cmp(&b.drop))
    });

    let summary = aggregate(&records);
    let ee = aggregate_ee(&ee_samples);
    let hash = config_hash(cfg);
    let dir = &plan.out_dir;
    if plan.wants_sweep() {
        write_rows(&dir.join(RESULTS_FILE), &records)?;
        write_rows(&dir.join(SUMMARY_FILE), &summary)?;
    }
    if plan.wants_ee() {
        write_rows(&dir.join(EE_SAMPLES_FILE), &ee_samples)?;
        write_rows(&dir.join(EE_FILE), &ee)?;
    }
    if !failures.is_empty() {
        write_rows(&dir.join(FAILURES_FILE), &failures)?;
    }
    if plan.dump_channels {
        write_text(&dir.join(CHANNELS_FILE), CHANNEL_CSV_HEADER, &channels)?;
        write_text(
            &dir.join(ASSIGNMENTS_FILE),
            &format!("scheme,{ASSIGNMENT_CSV_HEADER}"),
            &assigned,
        )?;
    }
    if plan.dump_traces {
        write_text(
            &dir.join(TRACES_FILE),
            "scheme,snr_db,drop,iteration,sum_rate",
            &traces,
        )?;
    }
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml_string()).map_err(io_err(&config_path))?;
    let manifest = Manifest {
        netcoop_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash.clone(),
        seed: cfg.scenario.seed,
        schemes: plan.schemes.clone(),
        snr_points: plan.snr_points.clone(),
        n_drops: plan.n_drops,
        targets: plan.targets.iter().map(|t| t.name().to_string()).collect(),
        samples: total,
        failed: failures.len(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(
        &manifest_path,
        toml::to_string(&manifest).expect("manifest serializes"),
    )
    .map_err(io_err(&manifest_path))?;

    if failures.len() * 20 > total {
        return Err(HarnessError::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    Ok(ExperimentResults {
        records,
        summary,
        ee_samples,
        ee,
        failures,
        total_samples: total,
        config_hash: hash,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub netcoop_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub snr_points: Vec<f64>,
    pub n_drops: usize,
    pub targets: Vec<String>,
    pub samples: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Se,
    Coverage,
    Throughput,
}

impl Metric {
    fn of(self, r: &SampleRecord) -> f64 {
        match self {
            Metric::Se => r.sum_se,
            Metric::Coverage => r.coverage,
            Metric::Throughput => r.throughput,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Se => "se",
            Metric::Coverage => "coverage",
            Metric::Throughput => "throughput",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub snr_db: f64,
    pub metric: Metric,
    /// Schemes by descending mean.
    pub ranking: Vec<(Scheme, MeanCi)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub snr_db: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub snr_points: Vec<f64>,
    pub orderings: Vec<Ordering>,
    pub checks: Vec<TrendCheck>,
}

impl ComparisonReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> impl Iterator<Item = &TrendCheck> {
        let name = name.to_string();
        self.checks.iter().filter(move |c| c.name == name)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), HarnessError> {
        #[derive(Serialize)]
        struct Row<'a> {
            snr_db: f64,
            metric: &'a str,
            rank: usize,
            scheme: Scheme,
            mean: f64,
            ci: f64,
            n: usize,
        }
        #[derive(Serialize)]
        struct CheckRow<'a> {
            check: &'a str,
            snr_db: Option<f64>,
            passed: bool,
            detail: &'a str,
        }
        let mut rows = Vec::new();
        for o in &self.orderings {
            for (i, (s, ci)) in o.ranking.iter().enumerate() {
                rows.push(Row {
                    snr_db: o.snr_db,
                    metric: o.metric.name(),
                    rank: i + 1,
                    scheme: *s,
                    mean: ci.mean,
                    ci: ci.half_width,
                    n: ci.n,
                });
            }
        }
        write_rows(&dir.join("ordering.csv"), &rows)?;
        let checks: Vec<CheckRow> = self
            .checks
            .iter()
            .map(|c| CheckRow {
                check: &c.name,
                snr_db: c.snr_db,
                passed: c.passed,
                detail: &c.detail,
            })
            .collect();
        write_rows(&dir.join("checks.csv"), &checks)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.orderings {
            let chain: Vec<String> = o
                .ranking
                .iter()
                .map(|(s, c)| format!("{s} {:.4} ± {:.4}", c.mean, c.half_width))
                .collect();
            writeln!(
                f,
                "{:>6} dB {:<10} {}",
                o.snr_db,
                o.metric.name(),
                chain.join(" > ")
            )?;
        }
        writeln!(f)?;
        for c in &self.checks {
            let at = c.snr_db.map(|s| format!(" @ {s} dB")).unwrap_or_default();
            writeln!(
                f,
                "[{}] {}{at}: {}",
                if c.passed { "ok" } else { "FLAG" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

struct Table<'a> {
    by_key: BTreeMap<(Scheme, u64), Vec<&'a SampleRecord>>,
}

impl<'a> Table<'a> {
    fn new(records: &'a [SampleRecord]) -> Self {
        let mut by_key: BTreeMap<(Scheme, u64), Vec<&SampleRecord>> = BTreeMap::new();
        for r in records {
            by_key
                .entry((r.scheme, r.snr_db.to_bits()))
                .or_default()
                .push(r);
        }
        for v in by_key.values_mut() {
            v.sort_by_key(|r| r.drop);
        }
        Self { by_key }
    }

    fn stats(&self, s: Scheme, snr: f64, m: Metric) -> Option<MeanCi> {
        let v = self.by_key.get(&(s, snr.to_bits()))?;
        Some(MeanCi::from_samples(
            &v.iter().map(|r| m.of(r)).collect::<Vec<_>>(),
        ))
    }

    /// Mean and CI of the per-drop difference `a - b` over common drops.
    fn paired(&self, a: Scheme, b: Scheme, snr: f64, m: Metric) -> Option<MeanCi> {
        let va = self.by_key.get(&(a, snr.to_bits()))?;
        let vb = self.by_key.get(&(b, snr.to_bits()))?;
        let idx: BTreeMap<usize, f64> = vb.iter().map(|r| (r.drop, m.of(r))).collect();
        let diffs: Vec<f64> = va
            .iter()
            .filter_map(|r| idx.get(&r.drop).map(|x| m.of(r) - x))
            .collect();
        (!diffs.is_empty()).then(|| MeanCi::from_samples(&diffs))
    }
}

/// Per-SNR rankings with confidence intervals, plus checks of the expected
/// trends between schemes.
pub fn compare_schemes(records: &[SampleRecord]) -> Result<ComparisonReport, HarnessError> {
    let mut grids: BTreeMap<Scheme, Vec<f64>> = BTreeMap::new();
    for r in records {
        grids.entry(r.scheme).or_default().push(r.snr_db);
    }
    if grids.len() < 2 {
        return Err(HarnessError::NotEnoughSchemes);
    }
    for g in grids.values_mut() {
        g.sort_by(f64::total_cmp);
        g.dedup();
    }
    let (first, snr_points) = grids
        .iter()
        .next()
        .map(|(s, g)| (*s, g.clone()))
        .expect("two schemes");
    for (s, g) in &grids {
        if *g != snr_points {
            return Err(HarnessError::GridMismatch(format!(
                "{first}: {snr_points:?}, {s}: {g:?}"
            )));
        }
    }
    let schemes: Vec<Scheme> = grids.keys().copied().collect();
    let table = Table::new(records);

    let mut orderings = Vec::new();
    for &snr in &snr_points {
        for m in [Metric::Se, Metric::Coverage, Metric::Throughput] {
            let mut ranking: Vec<(Scheme, MeanCi)> = schemes
                .iter()
                .filter_map(|&s| table.stats(s, snr, m).map(|c| (s, c)))
                .collect();
            ranking.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean).then(a.0.cmp(&b.0)));
            orderings.push(Ordering {
                snr_db: snr,
                metric: m,
                ranking,
            });
        }
    }

    let has = |s: Scheme| schemes.contains(&s);
    let (single, stat, central, dist) = (
        Scheme::SingleNode,
        Scheme::StaticCoop,
        Scheme::NetworkCoopCentralized,
        Scheme::NetworkCoopDistributed,
    );
    let mut checks = Vec::new();
    let mut push = |name: &str, snr: Option<f64>, passed: bool, detail: String| {
        checks.push(TrendCheck {
            name: name.to_string(),
            snr_db: snr,
            passed,
            detail,
        })
    };

    // significant pairwise SE gaps at 15 dB and above
    for &snr in snr_points.iter().filter(|&&s| s >= 15.0) {
        for (a, b) in [(central, stat), (dist, stat), (stat, single)] {
            if let (true, true) = (has(a), has(b)) {
                let d = table.paired(a, b, snr, Metric::Se).expect("common drops");
                push(
                    &format!("se_{a}_gt_{b}"),
                    Some(snr),
                    d.low() > 0.0,
                    format!("paired difference {:.4} ± {:.4}", d.mean, d.half_width),
                );
            }
        }
    }
    if has(central) && has(dist) {
        for &snr in &snr_points {
            let c = table.stats(central, snr, Metric::Se).expect("present");
            let d = table.stats(dist, snr, Metric::Se).expect("present");
            let ratio = d.mean / c.mean;
            push(
                "se_distributed_over_central",
                Some(snr),
                ratio >= 0.9,
                format!("ratio {ratio:.4} (>= 0.9)"),
            );
            let tc = table
                .stats(central, snr, Metric::Throughput)
                .expect("present");
            let td = table.stats(dist, snr, Metric::Throughput).expect("present");
            push(
                "throughput_distributed_gt_central",
                Some(snr),
                td.mean > tc.mean,
                format!("{:.4e} vs {:.4e}", td.mean, tc.mean),
            );
        }
    }
    if has(single) && has(stat) {
        let snr = snr_points[0];
        let s = table.stats(single, snr, Metric::Coverage).expect("present");
        let t = table.stats(stat, snr, Metric::Coverage).expect("present");
        push(
            "coverage_single_ge_static_at_lowest_snr",
            Some(snr),
            s.mean >= t.mean,
            format!("{:.4} vs {:.4}", s.mean, t.mean),
        );
    }
    if has(single) {
        let snr = *snr_points.last().expect("non-empty");
        let s = table.stats(single, snr, Metric::Coverage).expect("present");
        for n in [central, dist].into_iter().filter(|&n| has(n)) {
            let c = table.stats(n, snr, Metric::Coverage).expect("present");
            push(
                &format!("coverage_{n}_gt_single_at_highest_snr"),
                Some(snr),
                c.mean > s.mean,
                format!("{:.4} vs {:.4}", c.mean, s.mean),
            );
        }
    }
    for &s in &schemes {
        for m in [Metric::Se, Metric::Coverage] {
            let series: Vec<MeanCi> = snr_points
                .iter()
                .map(|&p| table.stats(s, p, m).expect("present"))
                .collect();
            let violations: Vec<String> = series
                .windows(2)
                .zip(snr_points.windows(2))
                .filter(|(w, _)| w[1].high() < w[0].low())
                .map(|(_, p)| format!("{} -> {} dB", p[0], p[1]))
                .collect();
            push(
                &format!("{}_{s}_non_decreasing", m.name()),
                None,
                violations.is_empty(),
                if violations.is_empty() {
                    "non-decreasing within CI".into()
                } else {
                    format!("drops at {}", violations.join(", "))
                },
            );
        }
    }
    Ok(ComparisonReport {
        snr_points,
        orderings,
        checks,
    })
}

/// Loads `results.csv` from a run directory.
pub fn load_results(dir: &Path) -> Result<Vec<SampleRecord>, HarnessError> {
    read_rows(&dir.join(RESULTS_FILE))
}
