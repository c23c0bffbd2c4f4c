//! Floating-point operation model of the precoder designs.
//!
//! Each UE's transmit update is charged one Hermitian solve of the size of
//! its serving antenna set, at the dominant Cholesky cost `2/3 m^3`; lower
//! order terms are dropped.

/// Cholesky leading-term constant.
pub const C_INV: f64 = 2.0 / 3.0;

/// Work done by one cluster in one exchange round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterWork {
    pub iterations: usize,
    pub n_ue: usize,
    /// Antennas in each UE's serving set.
    pub antennas: usize,
}

impl ClusterWork {
    pub fn flops(&self) -> f64 {
        self.iterations as f64 * self.n_ue as f64 * C_INV * (self.antennas as f64).powi(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlopDims<'a> {
    /// One joint problem over all UEs.
    Joint {
        iterations: usize,
        n_ue: usize,
        antennas: usize,
    },
    /// Rounds of per-cluster solves; clusters within a round run in parallel.
    Rounds(&'a [Vec<ClusterWork>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopCount {
    /// Work summed over every cluster and round.
    pub total: f64,
    /// Critical path: per round, the slowest cluster.
    pub latency: f64,
}

pub fn flop_model(dims: &FlopDims<'_>) -> FlopCount {
    match dims {
        FlopDims::Joint {
            iterations,
            n_ue,
            antennas,
        } => {
            let f = ClusterWork {
                iterations: *iterations,
                n_ue: *n_ue,
                antennas: *antennas,
            }
            .flops();
            FlopCount {
                total: f,
                latency: f,
            }
        }
        FlopDims::Rounds(rounds) => {
            let mut total = 0.0;
            let mut latency = 0.0;
            for round in rounds.iter() {
                total += round.iter().map(ClusterWork::flops).sum::<f64>();
                latency += round.iter().map(ClusterWork::flops).fold(0.0, f64::max);
            }
            FlopCount { total, latency }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centralized_reference_size() {
        let f = flop_model(&FlopDims::Joint {
            iterations: 20,
            n_ue: 32,
            antennas: 64,
        });
        assert_relative_eq!(
            f.total,
            20.0 * 32.0 * (2.0 / 3.0) * 64f64.powi(3),
            max_relative = 1e-15
        );
        assert!((f.total - 1.12e8).abs() < 0.01e8);
    }

    #[test]
    fn distributed_latency_form() {
        let round: Vec<ClusterWork> = (0..8)
            .map(|_| ClusterWork {
                iterations: 5,
                n_ue: 4,
                antennas: 16,
            })
            .collect();
        let rounds = vec![round; 10];
        let f = flop_model(&FlopDims::Rounds(&rounds));
        assert_relative_eq!(
            f.latency,
            10.0 * 5.0 * 4.0 * (2.0 / 3.0) * 4096.0,
            max_relative = 1e-15
        );
        assert!((f.latency - 5.46e5).abs() < 0.01e5);
        assert_relative_eq!(f.total, 8.0 * f.latency, max_relative = 1e-15);
    }

    #[test]
    fn single_global_cluster_collapses_to_joint() {
        let rounds = vec![vec![ClusterWork {
            iterations: 7,
            n_ue: 32,
            antennas: 64,
        }]];
        let r = flop_model(&FlopDims::Rounds(&rounds));
        let j = flop_model(&FlopDims::Joint {
            iterations: 7,
            n_ue: 32,
            antennas: 64,
        });
        assert_eq!(r, j);
    }
}
