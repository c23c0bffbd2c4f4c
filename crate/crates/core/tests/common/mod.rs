#![allow(dead_code)]

use nalgebra::DVector;
use netcoop::channel::{complex_gaussian, ChannelState, C64};
use netcoop::clustering::{Cluster, ClusterAssignment, Scheme};
use netcoop::precoding::{PrecodingSolution, SolverConfig};
use rand::Rng;

/// Random Rayleigh channels with per-link gains drawn in `[0.1, 1]`.
pub fn random_channel<R: Rng>(
    rng: &mut R,
    n_bs: usize,
    n_ue: usize,
    nt: usize,
    noise: f64,
) -> ChannelState {
    let mut h = Vec::new();
    let mut beta = Vec::new();
    for _ in 0..n_bs {
        let mut hr = Vec::new();
        let mut br = Vec::new();
        for _ in 0..n_ue {
            let b: f64 = rng.random_range(0.1..1.0);
            hr.push(DVector::from_fn(nt, |_, _| {
                complex_gaussian(rng) * b.sqrt()
            }));
            br.push(b);
        }
        h.push(hr);
        beta.push(br);
    }
    from_parts(nt, h, beta, noise)
}

pub fn from_parts(
    nt: usize,
    h: Vec<Vec<DVector<C64>>>,
    beta: Vec<Vec<f64>>,
    noise: f64,
) -> ChannelState {
    let rsrp_dbm = beta
        .iter()
        .map(|r| r.iter().map(|b| 10.0 * b.log10()).collect())
        .collect();
    let los = beta.iter().map(|r| vec![false; r.len()]).collect();
    ChannelState {
        nt,
        h,
        beta,
        los,
        rsrp_dbm,
        noise_power: noise,
    }
}

/// Scalar single-antenna channel from a `[bs][ue]` table.
pub fn scalar_channel(table: &[&[f64]], noise: f64) -> ChannelState {
    let h = table
        .iter()
        .map(|r| {
            r.iter()
                .map(|&v| DVector::from_element(1, C64::new(v, 0.0)))
                .collect()
        })
        .collect();
    let beta = table
        .iter()
        .map(|r| r.iter().map(|v| (v * v).max(1e-30)).collect())
        .collect();
    from_parts(1, h, beta, noise)
}

/// Assignment from explicit serving sets and clusters given as UE lists.
pub fn manual_assignment(
    scheme: Scheme,
    n_bs: usize,
    serving: Vec<Vec<usize>>,
    groups: &[Vec<usize>],
) -> ClusterAssignment {
    let clusters = groups
        .iter()
        .map(|ues| {
            let mut bss: Vec<usize> = ues
                .iter()
                .flat_map(|&u| serving[u].iter().copied())
                .collect();
            bss.sort_unstable();
            bss.dedup();
            Cluster {
                master: serving[ues[0]][0],
                bss,
                ues: ues.clone(),
            }
        })
        .collect();
    let master = serving.iter().map(|s| s[0]).collect();
    ClusterAssignment {
        scheme,
        n_bs,
        serving,
        master,
        clusters,
    }
}

pub fn tight_solver() -> SolverConfig {
    SolverConfig {
        tol: 1e-10,
        max_iter: 5000,
        max_outer: 2000,
        sweep_tol: 1e-12,
        max_sweeps: 200,
        bisection_tol: 1e-12,
        bisection_max: 200,
        ..SolverConfig::default()
    }
}

/// Rates recomputed from the precoders with an independent per-UE loop.
pub fn oracle_rates(
    channel: &ChannelState,
    serving: &[Vec<usize>],
    w: &[DVector<C64>],
) -> Vec<f64> {
    let nt = channel.nt;
    let n_ue = serving.len();
    let gain = |k: usize, j: usize| -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (b, &n) in serving[j].iter().enumerate() {
            for a in 0..nt {
                s += channel.h[n][k][a].conj() * w[j][b * nt + a];
            }
        }
        s
    };
    (0..n_ue)
        .map(|k| {
            let desired = gain(k, k).norm_sqr();
            let interf: f64 = (0..n_ue)
                .filter(|&j| j != k)
                .map(|j| gain(k, j).norm_sqr())
                .sum();
            (1.0 + desired / (interf + channel.noise_power)).log2()
        })
        .collect()
}

/// Transmits unit-power symbols through every BS antenna and measures the
/// per-UE signal and interference-plus-noise energies.
pub fn monte_carlo_sinr<R: Rng>(
    ch: &ChannelState,
    sol: &PrecodingSolution,
    symbols: usize,
    rng: &mut R,
) -> Vec<f64> {
    let nt = ch.nt;
    let n_bs = ch.n_bs();
    let n_ue = ch.n_ue();
    let mut sig = vec![0.0; n_ue];
    let mut rest = vec![0.0; n_ue];
    let noise_sd = ch.noise_power.sqrt();
    for _ in 0..symbols {
        let s: Vec<C64> = (0..n_ue).map(|_| complex_gaussian(rng)).collect();
        let mut x = vec![vec![C64::new(0.0, 0.0); nt]; n_bs];
        let mut own = vec![vec![vec![C64::new(0.0, 0.0); nt]; n_bs]; n_ue];
        for j in 0..n_ue {
            for (b, &n) in sol.serving[j].iter().enumerate() {
                for a in 0..nt {
                    let v = sol.w[j][b * nt + a] * s[j];
                    x[n][a] += v;
                    own[j][n][a] = v;
                }
            }
        }
        for k in 0..n_ue {
            let mut y = complex_gaussian(rng) * noise_sd;
            let mut d = C64::new(0.0, 0.0);
            for n in 0..n_bs {
                for a in 0..nt {
                    y += ch.h[n][k][a].conj() * x[n][a];
                    d += ch.h[n][k][a].conj() * own[k][n][a];
                }
            }
            sig[k] += d.norm_sqr();
            rest[k] += (y - d).norm_sqr();
        }
    }
    sig.iter().zip(&rest).map(|(s, r)| s / r).collect()
}
