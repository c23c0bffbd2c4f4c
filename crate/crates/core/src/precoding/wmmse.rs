//! Weighted-MMSE iteration with per-BS power constraints.
//!
//! Each UE `j` has one stacked precoder over its serving set; block `b` of
//! `w[j]` (entries `b*nt .. (b+1)*nt`) is transmitted by BS `serving[j][b]`.
//! The transmit update is solved by block-coordinate descent over BSs: with
//! every other BS fixed, the per-BS subproblem has a single multiplier,
//! found by bisection on a small Hermitian eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use super::icm::InterferenceCostMatrix;
use crate::channel::C64;

#[inline]
pub(crate) fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter()
        .zip(b)
        .fold(Complex::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Receive scalar, MSE weight and the resulting quadratic cost coefficient
/// `alpha * omega * |u|^2` of one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiveTerm {
    pub u: C64,
    pub omega: f64,
    pub cost: f64,
}

/// Read-only view of the network seen by a precoder.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    /// `h[bs][ue]`
    pub h: &'a [Vec<DVector<C64>>],
    pub serving: &'a [Vec<usize>],
    pub nt: usize,
    pub noise: f64,
    pub weights: &'a [f64],
}

impl<'a> Network<'a> {
    pub fn n_ue(&self) -> usize {
        self.serving.len()
    }

    pub fn n_bs(&self) -> usize {
        self.h.len()
    }

    fn block<'w>(&self, w: &'w DVector<C64>, b: usize) -> &'w [C64] {
        &w.as_slice()[b * self.nt..(b + 1) * self.nt]
    }

    /// `g[(k, j)] = h_{k,j}^H w_j`: amplitude of UE `j`'s stream at UE `k`.
    pub fn gains(&self, w: &[DVector<C64>]) -> DMatrix<C64> {
        let k = self.n_ue();
        let mut g = DMatrix::zeros(k, k);
        for j in 0..k {
            for (b, &n) in self.serving[j].iter().enumerate() {
                let wb = self.block(&w[j], b);
                for kk in 0..k {
                    g[(kk, j)] += dotc(self.h[n][kk].as_slice(), wb);
                }
            }
        }
        g
    }

    pub fn sinr_from_gains(&self, g: &DMatrix<C64>) -> Vec<f64> {
        (0..self.n_ue())
            .map(|k| {
                let total: f64 = g.row(k).iter().map(|v| v.norm_sqr()).sum();
                let desired = g[(k, k)].norm_sqr();
                desired / (total - desired + self.noise)
            })
            .collect()
    }

    pub fn rates(&self, w: &[DVector<C64>]) -> Vec<f64> {
        self.sinr_from_gains(&self.gains(w))
            .into_iter()
            .map(|s| (1.0 + s).log2())
            .collect()
    }

    pub fn weighted_rate(&self, w: &[DVector<C64>]) -> f64 {
        self.rates(w)
            .iter()
            .zip(self.weights)
            .map(|(r, a)| r * a)
            .sum()
    }

    pub fn receive_term(&self, g: &DMatrix<C64>, k: usize) -> ReceiveTerm {
        let total: f64 = g.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>() + self.noise;
        let desired = g[(k, k)];
        let u = desired / total;
        // 1 / MSE; interference plus noise is at least the noise power
        let omega = total / (total - desired.norm_sqr());
        ReceiveTerm {
            u,
            omega,
            cost: self.weights[k] * omega * u.norm_sqr(),
        }
    }

    pub fn receive_terms(&self, g: &DMatrix<C64>) -> Vec<ReceiveTerm> {
        (0..self.n_ue()).map(|k| self.receive_term(g, k)).collect()
    }

    pub fn bs_powers(&self, w: &[DVector<C64>]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_bs()];
        for (j, set) in self.serving.iter().enumerate() {
            for (b, &n) in set.iter().enumerate() {
                p[n] += self
                    .block(&w[j], b)
                    .iter()
                    .map(|v| v.norm_sqr())
                    .sum::<f64>();
            }
        }
        p
    }

    /// Matched filter per (BS, UE) link at full BS power, split equally over
    /// the UEs each BS serves.
    pub fn matched_filter_init(&self, p_max: f64) -> Vec<DVector<C64>> {
        let mut load = vec![0usize; self.n_bs()];
        for set in self.serving {
            for &n in set {
                load[n] += 1;
            }
        }
        self.serving
            .iter()
            .enumerate()
            .map(|(j, set)| {
                let mut w = DVector::zeros(set.len() * self.nt);
                for (b, &n) in set.iter().enumerate() {
                    let h = &self.h[n][j];
                    let norm = h.norm();
                    let amp = (p_max / load[n] as f64).sqrt();
                    for a in 0..self.nt {
                        w[b * self.nt + a] = if norm > 0.0 {
                            h[a] * (amp / norm)
                        } else if a == 0 {
                            Complex::new(amp, 0.0)
                        } else {
                            Complex::new(0.0, 0.0)
                        };
                    }
                }
                w
            })
            .collect()
    }

    /// Weighted-MMSE objective `sum_k alpha_k (omega_k e_k - ln omega_k)` for
    /// fixed receive terms.
    pub fn mse_objective(&self, w: &[DVector<C64>], terms: &[ReceiveTerm]) -> f64 {
        let g = self.gains(w);
        (0..self.n_ue())
            .map(|k| self.weights[k] * self.weighted_mse(&g, k, &terms[k]))
            .sum()
    }

    fn weighted_mse(&self, g: &DMatrix<C64>, k: usize, t: &ReceiveTerm) -> f64 {
        let total: f64 = g.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>() + self.noise;
        let e = t.u.norm_sqr() * total - 2.0 * (t.u.conj() * g[(k, k)]).re + 1.0;
        t.omega * e - t.omega.ln()
    }

    /// Objective seen by one cluster: the MSE terms of its own UEs plus the
    /// priced leakage `w_j^H ICM w_j` of its precoders.
    pub fn priced_objective(
        &self,
        w: &[DVector<C64>],
        terms: &[ReceiveTerm],
        cluster_ues: &[usize],
        icm: &InterferenceCostMatrix,
    ) -> f64 {
        let g = self.gains(w);
        let mut f = 0.0;
        for &k in cluster_ues {
            f += self.weights[k] * self.weighted_mse(&g, k, &terms[k]);
        }
        for &j in cluster_ues {
            f += icm.quadratic_form(&self.serving[j], self.nt, &w[j]);
        }
        f
    }
}

/// One cluster's share of a transmit update.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalSpec<'a> {
    pub active: &'a [usize],
    /// Power available to the active UEs at each BS (global BS index).
    pub budget: &'a [f64],
    pub icm: Option<&'a InterferenceCostMatrix>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StepTuning {
    pub max_sweeps: usize,
    /// Sweeps stop once one gains less than this fraction of the first.
    pub sweep_tol: f64,
    pub bisection_tol: f64,
    pub bisection_max: usize,
}

struct BsBlock {
    bs: usize,
    /// `(ue, block index within serving[ue])`
    users: Vec<(usize, usize)>,
    gram: DMatrix<C64>,
    eigvecs: DMatrix<C64>,
    eigvals: Vec<f64>,
    /// Channels from this BS to the active UEs, one column each.
    h_active: DMatrix<C64>,
    /// `alpha_j omega_j u_j h_j` for every served UE `j`.
    desired: DMatrix<C64>,
}

/// Smallest multiplier `mu >= 0` with `sum_i energy_i / (lambda_i + mu)^2
/// <= budget`, where `energy_i` is the energy of the right-hand sides along
/// Gram eigenvector `i`.
fn solve_multiplier(
    energy: &[f64],
    eigvals: &[f64],
    budget: f64,
    tol: f64,
    max_steps: usize,
) -> f64 {
    let power = |mu: f64| -> f64 {
        let mut p = 0.0;
        for (&m, &l) in energy.iter().zip(eigvals) {
            if m == 0.0 {
                continue;
            }
            let d = l + mu;
            if d <= 0.0 {
                return f64::INFINITY;
            }
            p += m / (d * d);
        }
        p
    };
    if power(0.0) <= budget {
        return 0.0;
    }
    let total: f64 = energy.iter().sum();
    let mut lo = 0.0;
    // power(mu) <= total / mu^2, so this end is always feasible
    let mut hi = (total / budget).sqrt();
    for _ in 0..max_steps {
        if budget - power(hi) <= tol * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if power(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `sum_j x_j^H G x_j - 2 Re r_j^H x_j` over the columns of `x` and `r`.
fn quad_value(gram: &DMatrix<C64>, r: &DMatrix<C64>, x: &DMatrix<C64>) -> f64 {
    let gx = gram * x;
    let mut v = 0.0;
    for (c, (xc, gc)) in x.column_iter().zip(gx.column_iter()).enumerate() {
        v += xc.dotc(&gc).re - 2.0 * r.column(c).dotc(&xc).re;
    }
    v
}

/// One weighted-MMSE iteration over the active UEs of `local`, in place.
/// UEs outside `active` keep their precoders and enter only as interference.
/// Returns the power multiplier of every BS from the last sweep (zero for
/// BSs the active UEs do not use or whose budget is slack).
pub(crate) fn wmmse_step(
    net: &Network<'_>,
    local: &LocalSpec<'_>,
    w: &mut [DVector<C64>],
    tuning: &StepTuning,
) -> Vec<f64> {
    let nt = net.nt;
    let one = Complex::new(1.0, 0.0);
    let zero = Complex::new(0.0, 0.0);
    let active = local.active;
    let g_full = net.gains(w);
    let terms: Vec<ReceiveTerm> = active
        .iter()
        .map(|&k| net.receive_term(&g_full, k))
        .collect();
    let costs: Vec<f64> = terms.iter().map(|t| t.cost).collect();
    // column of each UE in the active-only gain rows
    let mut slot = vec![usize::MAX; net.n_ue()];
    for (i, &k) in active.iter().enumerate() {
        slot[k] = i;
    }
    // g[(i, j)]: gain of UE j's stream at active UE active[i]
    let mut g = DMatrix::from_fn(active.len(), net.n_ue(), |i, j| g_full[(active[i], j)]);

    let mut users_at: Vec<Vec<(usize, usize)>> = vec![Vec::new(); net.n_bs()];
    for &j in active {
        for (b, &n) in net.serving[j].iter().enumerate() {
            users_at[n].push((j, b));
        }
    }
    let icm_pos: Vec<Option<usize>> = (0..net.n_bs())
        .map(|n| local.icm.and_then(|m| m.position(n)))
        .collect();

    let mut blocks: Vec<BsBlock> = Vec::new();
    for (bs, users) in users_at.into_iter().enumerate() {
        if users.is_empty() {
            continue;
        }
        let h_active = DMatrix::from_fn(nt, active.len(), |a, i| net.h[bs][active[i]][a]);
        let mut gram = DMatrix::<C64>::zeros(nt, nt);
        for (i, &k) in active.iter().enumerate() {
            if costs[i] == 0.0 {
                continue;
            }
            let h = &net.h[bs][k];
            gram.gerc(Complex::new(costs[i], 0.0), h, h, one);
        }
        if let (Some(icm), Some(p)) = (local.icm, icm_pos[bs]) {
            gram += icm.matrix.view((p * nt, p * nt), (nt, nt));
        }
        // symmetrize against round-off before the Hermitian eigensolver
        let gram = (&gram + gram.adjoint()) * Complex::new(0.5, 0.0);
        let eig = SymmetricEigen::new(gram.clone());
        let desired = DMatrix::from_fn(nt, users.len(), |a, u| {
            let j = users[u].0;
            let t = &terms[slot[j]];
            net.h[bs][j][a] * (t.u * (net.weights[j] * t.omega))
        });
        blocks.push(BsBlock {
            bs,
            users,
            gram,
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
            h_active,
            desired,
        });
    }

    let mut multipliers = vec![0.0; net.n_bs()];
    let mut first_gain = None;
    for _sweep in 0..tuning.max_sweeps {
        let mut sweep_gain = 0.0;
        for blk in &blocks {
            let n = blk.bs;
            let nu = blk.users.len();
            let current = DMatrix::from_fn(nt, nu, |a, u| {
                let (j, b) = blk.users[u];
                w[j][b * nt + a]
            });
            // cost-weighted gains of the served streams at every active UE
            let coef = DMatrix::from_fn(active.len(), nu, |i, u| g[(i, blk.users[u].0)] * costs[i]);
            // r_j = desired_j - (A w_j) restricted to BS n + (diagonal block) w_j^(n)
            let mut r = blk.desired.clone();
            r.gemm(-one, &blk.h_active, &coef, one);
            r.gemm(one, &blk.gram, &current, one);
            if let (Some(icm), Some(p)) = (local.icm, icm_pos[n]) {
                for (u, &(j, _)) in blk.users.iter().enumerate() {
                    for (b2, &m) in net.serving[j].iter().enumerate() {
                        if let Some(q) = icm_pos[m] {
                            let wm = w[j].rows(b2 * nt, nt);
                            let cross = icm.matrix.view((p * nt, q * nt), (nt, nt)) * wm;
                            let mut col = r.column_mut(u);
                            col -= cross;
                        }
                    }
                }
            }

            let z = blk.eigvecs.ad_mul(&r);
            let energy: Vec<f64> = z
                .row_iter()
                .map(|row| row.iter().map(|v| v.norm_sqr()).sum())
                .collect();
            let mu = solve_multiplier(
                &energy,
                &blk.eigvals,
                local.budget[n],
                tuning.bisection_tol,
                tuning.bisection_max,
            );
            multipliers[n] = mu;
            let mut scaled = z;
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                let d = blk.eigvals[i] + mu;
                let f = if d > 0.0 { 1.0 / d } else { 0.0 };
                row *= Complex::new(f, 0.0);
            }
            let candidate = &blk.eigvecs * scaled;

            let old = quad_value(&blk.gram, &r, &current);
            let new = quad_value(&blk.gram, &r, &candidate);
            let new_power = candidate.norm_squared();
            let old_power = current.norm_squared();
            let limit = local.budget[n] * (1.0 + 1e-12);
            // a block left over budget by a shrunken share is always replaced
            let restore = old_power > limit;
            if new_power > limit || !(restore || new < old) {
                continue;
            }
            sweep_gain += (old - new).max(0.0);
            let delta = &candidate - &current;
            let mut dg = DMatrix::zeros(active.len(), nu);
            dg.gemm_ad(one, &blk.h_active, &delta, zero);
            for (u, &(j, b)) in blk.users.iter().enumerate() {
                w[j].rows_mut(b * nt, nt).copy_from(&candidate.column(u));
                for i in 0..active.len() {
                    g[(i, j)] += dg[(i, u)];
                }
            }
        }
        let first = *first_gain.get_or_insert(sweep_gain);
        if sweep_gain <= tuning.sweep_tol * first || sweep_gain <= 1e-300 {
            break;
        }
    }
    multipliers
}
