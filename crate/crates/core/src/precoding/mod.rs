//! Downlink precoder design maximizing weighted sum rate under per-BS power
//! budgets.
//!
//! * [`solve_centralized`] runs the weighted-MMSE iteration jointly over all
//!   UEs.
//! * [`solve_independent`] (and [`solve_single_node`]) lets every cluster
//!   optimize its own UEs, treating the other clusters' signals as fixed
//!   interference refreshed once per pass.
//! * [`solve_distributed`] adds interference cost matrices: clusters exchange
//!   them at a barrier, run a few local iterations in parallel, and the
//!   combined update is accepted with a backtracking step that keeps the
//!   global sum rate non-decreasing.
//!
//! Overlapping clusters split each BS budget in proportion to the number of
//! streams each cluster carries on that BS, which is also how the
//! matched-filter initialization distributes power.

pub mod flops;
pub mod icm;
pub mod wmmse;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelState, C64};
use crate::clustering::{Cluster, ClusterAssignment, Scheme};
use crate::scenario::ConfigError;

pub use flops::{flop_model, ClusterWork, FlopCount, FlopDims};
pub use icm::{compute_icm, InterferenceCostMatrix};
pub use wmmse::{Network, ReceiveTerm};

use wmmse::{wmmse_step, LocalSpec, StepTuning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative sum-rate change that ends an iteration.
    pub tol: f64,
    /// Iteration cap of joint and per-cluster solves.
    pub max_iter: usize,
    /// Exchange rounds of the distributed solver.
    pub max_outer: usize,
    /// Local iterations per exchange round of the distributed solver.
    pub max_inner: usize,
    /// Passes of the uncoordinated per-cluster solver.
    pub independent_passes: usize,
    /// Block-coordinate sweeps per transmit update.
    pub max_sweeps: usize,
    /// Relative objective gain that ends the sweeps of a transmit update.
    pub sweep_tol: f64,
    pub bisection_tol: f64,
    pub bisection_max: usize,
    /// Halvings tried before a combined cluster update is rejected.
    pub backtrack_steps: usize,
    /// Per-UE rate weights; empty means all ones.
    pub rate_weights: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            max_outer: 50,
            max_inner: 5,
            independent_passes: 2,
            max_sweeps: 50,
            sweep_tol: 1e-6,
            bisection_tol: 1e-8,
            bisection_max: 100,
            backtrack_steps: 10,
            rate_weights: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: &str| {
            Err(ConfigError::Invalid {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(self.tol > 0.0) {
            return bad("tol", "tol must be positive");
        }
        if self.max_iter == 0
            || self.max_outer == 0
            || self.max_inner == 0
            || self.independent_passes == 0
        {
            return bad("max_iter", "iteration caps must be at least 1");
        }
        if self.max_sweeps == 0 || self.bisection_max == 0 {
            return bad("max_sweeps", "sweep and bisection caps must be at least 1");
        }
        if !(self.sweep_tol > 0.0) {
            return bad("sweep_tol", "sweep_tol must be positive");
        }
        if !(self.bisection_tol > 0.0) {
            return bad("bisection_tol", "bisection_tol must be positive");
        }
        if self.rate_weights.iter().any(|w| !(*w > 0.0)) {
            return bad("rate_weights", "rate weights must be positive");
        }
        Ok(())
    }

    fn weights(&self, n_ue: usize) -> Result<Vec<f64>, PrecodingError> {
        if self.rate_weights.is_empty() {
            Ok(vec![1.0; n_ue])
        } else if self.rate_weights.len() == n_ue {
            Ok(self.rate_weights.clone())
        } else {
            Err(PrecodingError::Dimension(format!(
                "{} rate weights for {n_ue} UEs",
                self.rate_weights.len()
            )))
        }
    }

    fn tuning(&self) -> StepTuning {
        StepTuning {
            max_sweeps: self.max_sweeps,
            sweep_tol: self.sweep_tol,
            bisection_tol: self.bisection_tol,
            bisection_max: self.bisection_max,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PrecodingError {
    #[error("non-finite sum rate at iteration {iteration}")]
    Singular { iteration: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingSolution {
    pub scheme: Scheme,
    pub nt: usize,
    pub serving: Vec<Vec<usize>>,
    /// Per-UE precoder stacked over `serving[ue]`.
    pub w: Vec<DVector<C64>>,
    pub iterations: usize,
    /// Operation count used by the throughput model (critical path for the
    /// distributed scheme, total otherwise).
    pub flops: f64,
    pub flops_total: f64,
    /// Weighted sum rate after initialization and after every accepted
    /// iterate, bits/s/Hz.
    pub rate_trace: Vec<f64>,
    pub converged: bool,
}

impl PrecodingSolution {
    pub fn bs_powers(&self, n_bs: usize) -> Vec<f64> {
        let mut p = vec![0.0; n_bs];
        for (set, w) in self.serving.iter().zip(&self.w) {
            for (b, &n) in set.iter().enumerate() {
                p[n] += w.rows(b * self.nt, self.nt).norm_squared();
            }
        }
        p
    }

    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn final_rate(&self) -> f64 {
        *self.rate_trace.last().unwrap_or(&0.0)
    }

    /// Precoder of `ue` on `bs`, if `bs` serves it.
    pub fn block(&self, ue: usize, bs: usize) -> Option<DVector<C64>> {
        let b = self.serving[ue].iter().position(|&n| n == bs)?;
        Some(self.w[ue].rows(b * self.nt, self.nt).into_owned())
    }

    /// Writes rows `iteration,sum_rate`.
    pub fn write_trace_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "iteration,sum_rate")?;
        for (i, r) in self.rate_trace.iter().enumerate() {
            writeln!(out, "{i},{r}")?;
        }
        Ok(())
    }
}

fn check_inputs(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
) -> Result<(), PrecodingError> {
    if assignment.n_ue() != channel.n_ue() || assignment.n_bs != channel.n_bs() {
        return Err(PrecodingError::Dimension(format!(
            "assignment is {}x{}, channel is {}x{}",
            assignment.n_bs,
            assignment.n_ue(),
            channel.n_bs(),
            channel.n_ue()
        )));
    }
    for (ue, set) in assignment.serving.iter().enumerate() {
        if set.is_empty() || set.iter().any(|&b| b >= channel.n_bs()) {
            return Err(PrecodingError::Dimension(format!(
                "invalid serving set for UE {ue}"
            )));
        }
    }
    Ok(())
}

fn network<'a>(
    channel: &'a ChannelState,
    assignment: &'a ClusterAssignment,
    weights: &'a [f64],
) -> Network<'a> {
    Network {
        h: &channel.h,
        serving: &assignment.serving,
        nt: channel.nt,
        noise: channel.noise_power,
        weights,
    }
}

fn max_serving(assignment: &ClusterAssignment, ues: &[usize]) -> usize {
    ues.iter()
        .map(|&k| assignment.serving[k].len())
        .max()
        .unwrap_or(0)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

/// Joint weighted-MMSE over every UE, stopping on a relative sum-rate change
/// below `tol` or after `max_iter` iterations.
pub fn solve_centralized(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
) -> Result<PrecodingSolution, PrecodingError> {
    centralized(channel, assignment, p_max, cfg, None)
}

fn centralized(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
    init: Option<&[DVector<C64>]>,
) -> Result<PrecodingSolution, PrecodingError> {
    check_inputs(channel, assignment)?;
    let weights = cfg.weights(channel.n_ue())?;
    let net = network(channel, assignment, &weights);
    let active: Vec<usize> = (0..net.n_ue()).collect();
    let budget = vec![p_max; net.n_bs()];
    let local = LocalSpec {
        active: &active,
        budget: &budget,
        icm: None,
    };
    let mut w = init.map_or_else(|| net.matched_filter_init(p_max), <[_]>::to_vec);
    let mut prev = net.weighted_rate(&w);
    let mut trace = vec![prev];
    let mut iterations = 0;
    let mut converged = false;
    let tuning = cfg.tuning();
    for it in 1..=cfg.max_iter {
        let _ = wmmse_step(&net, &local, &mut w, &tuning);
        let rate = net.weighted_rate(&w);
        if !rate.is_finite() {
            return Err(PrecodingError::Singular { iteration: it });
        }
        trace.push(rate);
        iterations = it;
        if relative_change(rate, prev) < cfg.tol {
            converged = true;
            break;
        }
        prev = rate;
    }
    let fc = flop_model(&FlopDims::Joint {
        iterations,
        n_ue: net.n_ue(),
        antennas: max_serving(assignment, &active) * net.nt,
    });
    Ok(PrecodingSolution {
        scheme: assignment.scheme,
        nt: net.nt,
        serving: assignment.serving.clone(),
        w,
        iterations,
        flops: fc.total,
        flops_total: fc.total,
        rate_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, Copy)]
enum InnerMode {
    Fixed(usize),
    UntilConverged { max_iter: usize, tol: f64 },
}

struct ParallelRun {
    w: Vec<DVector<C64>>,
    trace: Vec<f64>,
    rounds: Vec<Vec<ClusterWork>>,
    converged: bool,
}

/// Power share of every cluster on every BS, proportional to the number of
/// its UEs the BS serves.
fn budget_shares(assignment: &ClusterAssignment, p_max: f64) -> Vec<Vec<f64>> {
    let mut load = vec![0usize; assignment.n_bs];
    for set in &assignment.serving {
        for &n in set {
            load[n] += 1;
        }
    }
    assignment
        .clusters
        .iter()
        .map(|c| {
            let mut count = vec![0usize; assignment.n_bs];
            for &k in &c.ues {
                for &n in &assignment.serving[k] {
                    count[n] += 1;
                }
            }
            (0..assignment.n_bs)
                .map(|n| {
                    if load[n] == 0 {
                        0.0
                    } else {
                        p_max * count[n] as f64 / load[n] as f64
                    }
                })
                .collect()
        })
        .collect()
}

fn local_rate(net: &Network<'_>, w: &[DVector<C64>], ues: &[usize]) -> f64 {
    let rates = net.rates(w);
    ues.iter().map(|&k| rates[k] * net.weights[k]).sum()
}

#[allow(clippy::too_many_arguments)]
fn run_cluster(
    net: &Network<'_>,
    cluster: &Cluster,
    cluster_id: usize,
    budget: &[f64],
    snapshot: &[DVector<C64>],
    terms: Option<&[ReceiveTerm]>,
    inner: InnerMode,
    tuning: &StepTuning,
) -> Result<ClusterRun, PrecodingError> {
    let icm = terms.map(|t| icm::icm_from_terms(net, t, cluster_id, &cluster.bss, &cluster.ues));
    let local = LocalSpec {
        active: &cluster.ues,
        budget,
        icm: icm.as_ref(),
    };
    let mut w = snapshot.to_vec();
    let (max_iter, tol) = match inner {
        InnerMode::Fixed(n) => (n, None),
        InnerMode::UntilConverged { max_iter, tol } => (max_iter, Some(tol)),
    };
    let mut prev = local_rate(net, &w, &cluster.ues);
    let mut done = 0;
    let mut converged = false;
    let mut multipliers = Vec::new();
    for it in 1..=max_iter {
        multipliers = wmmse_step(net, &local, &mut w, tuning);
        done = it;
        let rate = local_rate(net, &w, &cluster.ues);
        if !rate.is_finite() {
            return Err(PrecodingError::Singular { iteration: it });
        }
        if let Some(tol) = tol {
            if relative_change(rate, prev) < tol {
                converged = true;
                break;
            }
        }
        prev = rate;
    }
    Ok(ClusterRun {
        w: cluster.ues.iter().map(|&k| w[k].clone()).collect(),
        iterations: done,
        converged,
        multipliers,
    })
}

struct ClusterRun {
    w: Vec<DVector<C64>>,
    iterations: usize,
    converged: bool,
    /// Power multiplier per BS from the last local iteration.
    multipliers: Vec<f64>,
}

/// Re-divides every shared BS budget among its clusters. Clusters with
/// slack keep what they use; the rest goes to clusters whose budget binds,
/// in proportion to share times multiplier, which drives the multipliers of
/// a shared BS towards a common value.
fn rebalance(
    assignment: &ClusterAssignment,
    net: &Network<'_>,
    w: &[DVector<C64>],
    budgets: &mut [Vec<f64>],
    multipliers: &[Vec<f64>],
    p_max: f64,
) {
    let n_bs = assignment.n_bs;
    let mut usage = vec![vec![0.0; n_bs]; assignment.clusters.len()];
    let mut users = vec![vec![false; n_bs]; assignment.clusters.len()];
    for (ci, c) in assignment.clusters.iter().enumerate() {
        for &k in &c.ues {
            for (b, &n) in assignment.serving[k].iter().enumerate() {
                usage[ci][n] += w[k].rows(b * net.nt, net.nt).norm_squared();
                users[ci][n] = true;
            }
        }
    }
    for n in 0..n_bs {
        let members: Vec<usize> = (0..budgets.len()).filter(|&c| users[c][n]).collect();
        if members.len() < 2 {
            continue;
        }
        let binding: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&c| multipliers[c].get(n).is_some_and(|&m| m > 0.0))
            .collect();
        if binding.is_empty() {
            continue;
        }
        let mut rest = p_max;
        for &c in members.iter().filter(|c| !binding.contains(c)) {
            budgets[c][n] = usage[c][n];
            rest -= usage[c][n];
        }
        let weight: Vec<f64> = binding
            .iter()
            .map(|&c| budgets[c][n] * multipliers[c][n])
            .collect();
        let total: f64 = weight.iter().sum();
        if !(total > 0.0) || !(rest > 0.0) {
            continue;
        }
        for (&c, wgt) in binding.iter().zip(&weight) {
            budgets[c][n] = rest * wgt / total;
        }
    }
}

fn solve_parallel(
    net: &Network<'_>,
    assignment: &ClusterAssignment,
    p_max: f64,
    pricing: bool,
    inner: InnerMode,
    max_outer: usize,
    cfg: &SolverConfig,
    init: Option<&[DVector<C64>]>,
) -> Result<ParallelRun, PrecodingError> {
    let mut budgets = budget_shares(assignment, p_max);
    // shares under which the current iterate was produced
    let mut settled = budgets.clone();
    let tuning = cfg.tuning();
    let mut w = init.map_or_else(|| net.matched_filter_init(p_max), <[_]>::to_vec);
    let mut current = net.weighted_rate(&w);
    let mut trace = vec![current];
    let mut rounds = Vec::new();
    let mut converged = false;

    for outer in 1..=max_outer {
        let snapshot = w.clone();
        let terms = pricing.then(|| net.receive_terms(&net.gains(&snapshot)));
        let results: Vec<Result<ClusterRun, PrecodingError>> = assignment
            .clusters
            .par_iter()
            .enumerate()
            .map(|(ci, cluster)| {
                run_cluster(
                    net,
                    cluster,
                    ci,
                    &budgets[ci],
                    &snapshot,
                    terms.as_deref(),
                    inner,
                    &tuning,
                )
            })
            .collect();

        let mut candidate = snapshot.clone();
        let mut work = Vec::with_capacity(results.len());
        let mut all_inner_converged = true;
        let mut multipliers = Vec::with_capacity(results.len());
        for (cluster, res) in assignment.clusters.iter().zip(results) {
            let run = res.map_err(|e| match e {
                PrecodingError::Singular { .. } => PrecodingError::Singular { iteration: outer },
                other => other,
            })?;
            all_inner_converged &= run.converged;
            for (&k, v) in cluster.ues.iter().zip(run.w) {
                candidate[k] = v;
            }
            multipliers.push(run.multipliers);
            work.push(ClusterWork {
                iterations: run.iterations,
                n_ue: cluster.ues.len(),
                antennas: max_serving(assignment, &cluster.ues) * net.nt,
            });
        }
        rounds.push(work);

        // Convex combinations of feasible precoders stay feasible.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.backtrack_steps {
            let trial: Vec<DVector<C64>> = if step == 1.0 {
                candidate.clone()
            } else {
                snapshot
                    .iter()
                    .zip(&candidate)
                    .map(|(old, new)| old + (new - old) * C64::new(step, 0.0))
                    .collect()
            };
            let rate = net.weighted_rate(&trial);
            if !rate.is_finite() {
                return Err(PrecodingError::Singular { iteration: outer });
            }
            if rate >= current - 1e-12 * current.abs() {
                accepted = Some((trial, rate, step));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, rate, step)) = accepted else {
            if budgets != settled {
                // the new split did not pay off; retry under the old one
                budgets = settled.clone();
                continue;
            }
            converged = true;
            break;
        };
        w = trial;
        settled = budgets.clone();
        if pricing {
            rebalance(assignment, net, &w, &mut budgets, &multipliers, p_max);
        }
        trace.push(rate);
        let change = relative_change(rate, current);
        current = rate;
        match inner {
            // a shortened step says little about stationarity
            InnerMode::Fixed(_) => {
                if change < cfg.tol && step == 1.0 {
                    converged = true;
                    break;
                }
            }
            // fixed number of passes; report whether the last one settled
            InnerMode::UntilConverged { .. } => converged = all_inner_converged,
        }
    }
    Ok(ParallelRun {
        w,
        trace,
        rounds,
        converged,
    })
}

fn finish(
    assignment: &ClusterAssignment,
    nt: usize,
    run: ParallelRun,
    latency: bool,
) -> PrecodingSolution {
    let fc = flop_model(&FlopDims::Rounds(&run.rounds));
    let iterations = run
        .rounds
        .iter()
        .map(|r| r.iter().map(|c| c.iterations).max().unwrap_or(0))
        .sum();
    PrecodingSolution {
        scheme: assignment.scheme,
        nt,
        serving: assignment.serving.clone(),
        w: run.w,
        iterations: if latency {
            run.rounds.len()
        } else {
            iterations
        },
        flops: if latency { fc.latency } else { fc.total },
        flops_total: fc.total,
        rate_trace: run.trace,
        converged: run.converged,
    }
}

/// Every cluster of `assignment` solves for its own UEs with the others'
/// interference held fixed, for `independent_passes` passes. Used for the
/// single-node and static cooperative schemes.
pub fn solve_independent(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
) -> Result<PrecodingSolution, PrecodingError> {
    independent(channel, assignment, p_max, cfg, None)
}

fn independent(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
    init: Option<&[DVector<C64>]>,
) -> Result<PrecodingSolution, PrecodingError> {
    check_inputs(channel, assignment)?;
    let weights = cfg.weights(channel.n_ue())?;
    let net = network(channel, assignment, &weights);
    let inner = InnerMode::UntilConverged {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
    };
    let run = solve_parallel(
        &net,
        assignment,
        p_max,
        false,
        inner,
        cfg.independent_passes,
        cfg,
        init,
    )?;
    Ok(finish(assignment, net.nt, run, false))
}

pub fn solve_single_node(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
) -> Result<PrecodingSolution, PrecodingError> {
    if assignment.serving.iter().any(|s| s.len() != 1) {
        return Err(PrecodingError::Dimension(
            "single-node assignment needs one BS per UE".into(),
        ));
    }
    independent(channel, assignment, p_max, cfg, None)
}

/// Cluster-parallel weighted-MMSE with interference-cost-matrix exchange.
pub fn solve_distributed(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
) -> Result<PrecodingSolution, PrecodingError> {
    distributed(channel, assignment, p_max, cfg, None)
}

fn distributed(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
    init: Option<&[DVector<C64>]>,
) -> Result<PrecodingSolution, PrecodingError> {
    check_inputs(channel, assignment)?;
    let weights = cfg.weights(channel.n_ue())?;
    let net = network(channel, assignment, &weights);
    let run = solve_parallel(
        &net,
        assignment,
        p_max,
        true,
        InnerMode::Fixed(cfg.max_inner),
        cfg.max_outer,
        cfg,
        init,
    )?;
    Ok(finish(assignment, net.nt, run, true))
}

/// Runs the solver that belongs to the assignment's scheme.
pub fn solve(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
) -> Result<PrecodingSolution, PrecodingError> {
    solve_warm(channel, assignment, p_max, cfg, None)
}

/// Like [`solve`], but starts from `init` instead of the matched filter when
/// given. `init` must come from the same serving sets and respect `p_max` at
/// every BS; the returned sum rate is then never below the starting one.
pub fn solve_warm(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    p_max: f64,
    cfg: &SolverConfig,
    init: Option<&PrecodingSolution>,
) -> Result<PrecodingSolution, PrecodingError> {
    if let Some(start) = init {
        if start.serving != assignment.serving || start.nt != channel.nt {
            return Err(PrecodingError::Dimension(
                "warm start uses different serving sets".into(),
            ));
        }
        if start
            .bs_powers(assignment.n_bs)
            .iter()
            .any(|&p| p > p_max * (1.0 + 1e-9))
        {
            return Err(PrecodingError::Dimension(
                "warm start exceeds the power budget".into(),
            ));
        }
    }
    let init = init.map(|s| s.w.as_slice());
    match assignment.scheme {
        Scheme::SingleNode | Scheme::StaticCoop => {
            independent(channel, assignment, p_max, cfg, init)
        }
        Scheme::NetworkCoopCentralized => centralized(channel, assignment, p_max, cfg, init),
        Scheme::NetworkCoopDistributed => distributed(channel, assignment, p_max, cfg, init),
    }
}
