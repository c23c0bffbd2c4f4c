//! SINR, spectral efficiency, coverage, compute-penalized throughput and
//! energy efficiency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{db_to_linear, ChannelState};
use crate::clustering::{ClusterAssignment, Scheme};
use crate::precoding::{Network, PrecodingSolution};
use crate::scenario::ConfigError;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no SINR samples")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub coverage_threshold_db: f64,
    /// Slot budget shared by precoder computation and data transmission.
    pub t_slots: f64,
    /// Operations the processing node completes per slot.
    pub compute_capacity: f64,
    /// Static hardware power per active BS, watts.
    pub p_static: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            coverage_threshold_db: 0.0,
            t_slots: 10.0,
            compute_capacity: 1e9,
            p_static: 10.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: &str| {
            Err(ConfigError::Invalid {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(self.t_slots >= 1.0) {
            return bad("t_slots", "t_slots must be at least 1");
        }
        if !(self.compute_capacity > 0.0) {
            return bad("compute_capacity", "compute_capacity must be positive");
        }
        if !(self.p_static > 0.0) {
            return bad("p_static", "p_static must be positive");
        }
        if !self.coverage_threshold_db.is_finite() {
            return bad(
                "coverage_threshold_db",
                "coverage_threshold_db must be finite",
            );
        }
        Ok(())
    }
}

/// Downlink SINR per UE with coherent combining of every BS that transmits a
/// UE's stream, evaluated on `channel` (normally the true channel).
pub fn compute_sinr(
    channel: &ChannelState,
    solution: &PrecodingSolution,
    noise_power: f64,
) -> Vec<f64> {
    let weights = vec![1.0; solution.serving.len()];
    let net = Network {
        h: &channel.h,
        serving: &solution.serving,
        nt: channel.nt,
        noise: noise_power,
        weights: &weights,
    };
    net.sinr_from_gains(&net.gains(&solution.w))
}

pub fn rates(sinr: &[f64]) -> Vec<f64> {
    sinr.iter().map(|s| (1.0 + s).log2()).collect()
}

/// Fraction of samples whose SINR meets or exceeds the threshold.
pub fn coverage_probability(sinr: &[f64], threshold_db: f64) -> Result<f64, MetricsError> {
    if sinr.is_empty() {
        return Err(MetricsError::Empty);
    }
    let th = db_to_linear(threshold_db);
    Ok(sinr.iter().filter(|&&s| covered(s, th)).count() as f64 / sinr.len() as f64)
}

fn covered(sinr: f64, threshold_linear: f64) -> bool {
    sinr >= threshold_linear
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputModel {
    pub t_slots: f64,
    pub compute_capacity: f64,
    pub flops: f64,
}

/// `((t - O/c) / t) * B * R`, clamped at zero once the computation time
/// exceeds the slot budget.
pub fn throughput(model: &ThroughputModel, bandwidth: f64, sum_se: f64) -> f64 {
    let compute_slots = model.flops / model.compute_capacity;
    let fraction = ((model.t_slots - compute_slots) / model.t_slots).max(0.0);
    fraction * bandwidth * sum_se
}

/// Bits per joule: `B R / (n_active p_static + p_tx)`.
pub fn energy_efficiency(
    sum_se: f64,
    bandwidth: f64,
    n_active_bs: usize,
    p_static: f64,
    p_tx_total: f64,
) -> f64 {
    bandwidth * sum_se / (n_active_bs as f64 * p_static + p_tx_total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_se: f64,
    /// Fraction of this drop's UEs at or above the coverage threshold.
    pub coverage: f64,
    pub covered: Vec<bool>,
    pub throughput: f64,
    pub energy_eff: f64,
    pub p_tx_total: f64,
    pub flops: f64,
    pub iterations: usize,
}

/// Evaluates a solution on the true channel.
pub fn evaluate(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    solution: &PrecodingSolution,
    cfg: &MetricsConfig,
    bandwidth: f64,
    snr_db: f64,
) -> MetricsReport {
    let sinr = compute_sinr(channel, solution, channel.noise_power);
    let rate = rates(&sinr);
    let sum_se: f64 = rate.iter().sum();
    let th = db_to_linear(cfg.coverage_threshold_db);
    let covered: Vec<bool> = sinr.iter().map(|&s| covered(s, th)).collect();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / covered.len().max(1) as f64;
    let tp = throughput(
        &ThroughputModel {
            t_slots: cfg.t_slots,
            compute_capacity: cfg.compute_capacity,
            flops: solution.flops,
        },
        bandwidth,
        sum_se,
    );
    let p_tx_total = solution.total_power();
    let ee = energy_efficiency(
        sum_se,
        bandwidth,
        assignment.active_bs().len(),
        cfg.p_static,
        p_tx_total,
    );
    MetricsReport {
        scheme: assignment.scheme,
        snr_db,
        sinr,
        rate,
        sum_se,
        coverage,
        covered,
        throughput: tp,
        energy_eff: ee,
        p_tx_total,
        flops: solution.flops,
        iterations: solution.iterations,
    }
}

/// Sample mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::NAN,
                n,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            half_width,
            n,
        }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}
