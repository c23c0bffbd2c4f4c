//! Interference cost matrices exchanged between clusters.
//!
//! For cluster `c` with BS set `B_c` the matrix is
//! `sum_{k not in c} alpha_k omega_k |u_k|^2 h_{B_c,k} h_{B_c,k}^H`, where
//! `h_{B_c,k}` stacks the channels from every BS of the cluster to external
//! UE `k`. Its `nt x nt` diagonal blocks are the per-BS cost matrices; the
//! off-diagonal blocks carry the cross terms of coherent joint transmission,
//! which makes `w_j^H ICM w_j` exactly the leakage that cluster `c` adds to
//! the other clusters' MSE objectives.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use super::wmmse::{Network, ReceiveTerm};
use crate::channel::{ChannelState, C64};
use crate::clustering::ClusterAssignment;

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceCostMatrix {
    pub cluster: usize,
    /// BS indices of the cluster, ascending; block `i` belongs to `bss[i]`.
    pub bss: Vec<usize>,
    pub nt: usize,
    pub matrix: DMatrix<C64>,
}

impl InterferenceCostMatrix {
    pub fn zeros(cluster: usize, bss: Vec<usize>, nt: usize) -> Self {
        let dim = bss.len() * nt;
        Self {
            cluster,
            bss,
            nt,
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn position(&self, bs: usize) -> Option<usize> {
        self.bss.binary_search(&bs).ok()
    }

    /// Per-BS `nt x nt` cost matrix.
    pub fn block(&self, bs: usize) -> Option<DMatrix<C64>> {
        let p = self.position(bs)?;
        Some(
            self.matrix
                .view((p * self.nt, p * self.nt), (self.nt, self.nt))
                .into_owned(),
        )
    }

    /// Adds `cost * v v^H` for the stacked vector `v` built from `channel(bs)`.
    pub fn add_term<'c>(&mut self, cost: f64, channel: impl Fn(usize) -> &'c DVector<C64>) {
        if cost == 0.0 {
            return;
        }
        let nt = self.nt;
        let mut v = DVector::zeros(self.bss.len() * nt);
        for (i, &bs) in self.bss.iter().enumerate() {
            v.rows_mut(i * nt, nt).copy_from(channel(bs));
        }
        self.matrix
            .gerc(Complex::new(cost, 0.0), &v, &v, Complex::new(1.0, 0.0));
    }

    /// `w^H ICM w` for a precoder stacked over `serving`; blocks on BSs
    /// outside the cluster contribute nothing.
    pub fn quadratic_form(&self, serving: &[usize], nt: usize, w: &DVector<C64>) -> f64 {
        let mut acc = Complex::new(0.0, 0.0);
        for (a, &m) in serving.iter().enumerate() {
            let Some(p) = self.position(m) else { continue };
            for (b, &n) in serving.iter().enumerate() {
                let Some(q) = self.position(n) else { continue };
                let blk = self.matrix.view((p * nt, q * nt), (nt, nt));
                let wa = w.rows(a * nt, nt);
                let wb = w.rows(b * nt, nt);
                acc += wa.dotc(&(blk * wb));
            }
        }
        acc.re
    }

    /// Largest deviation from Hermitian symmetry.
    pub fn hermitian_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.matrix.is_empty() {
            return 0.0;
        }
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex::new(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn icm_from_terms(
    net: &Network<'_>,
    terms: &[ReceiveTerm],
    cluster: usize,
    bss: &[usize],
    members: &[usize],
) -> InterferenceCostMatrix {
    let mut icm = InterferenceCostMatrix::zeros(cluster, bss.to_vec(), net.nt);
    let mut inside = vec![false; net.n_ue()];
    for &k in members {
        inside[k] = true;
    }
    for k in (0..net.n_ue()).filter(|&k| !inside[k]) {
        icm.add_term(terms[k].cost, |bs| &net.h[bs][k]);
    }
    icm
}

/// Interference cost matrix of cluster `cluster_id` given every UE's current
/// precoder `w` (stacked over `assignment.serving`). Receive scalars and MSE
/// weights of the external UEs are evaluated at `w`.
pub fn compute_icm(
    channel: &ChannelState,
    assignment: &ClusterAssignment,
    w: &[DVector<C64>],
    weights: &[f64],
    cluster_id: usize,
) -> InterferenceCostMatrix {
    let net = Network {
        h: &channel.h,
        serving: &assignment.serving,
        nt: channel.nt,
        noise: channel.noise_power,
        weights,
    };
    let terms = net.receive_terms(&net.gains(w));
    let cluster = &assignment.clusters[cluster_id];
    icm_from_terms(&net, &terms, cluster_id, &cluster.bss, &cluster.ues)
}
