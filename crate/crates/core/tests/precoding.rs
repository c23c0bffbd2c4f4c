mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::DVector;
use netcoop::channel::{ChannelState, C64};
use netcoop::clustering::{
    assign_centralized, assign_single_node, assign_user_centric, ClusterAssignment, Scheme,
};
use netcoop::precoding::{
    compute_icm, solve, solve_centralized, solve_distributed, solve_independent, solve_single_node,
    solve_warm, Network, PrecodingSolution, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_trace_and_power(sol: &PrecodingSolution, n_bs: usize, p_max: f64) {
    for pair in sol.rate_trace.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-9, "trace decreased: {:?}", pair);
    }
    for p in sol.bs_powers(n_bs) {
        assert!(p <= p_max * (1.0 + 1e-9), "power {p} over {p_max}");
    }
}

fn network<'a>(ch: &'a ChannelState, a: &'a ClusterAssignment, weights: &'a [f64]) -> Network<'a> {
    Network {
        h: &ch.h,
        serving: &a.serving,
        nt: ch.nt,
        noise: ch.noise_power,
        weights,
    }
}

#[test]
fn single_user_solution_is_full_power_matched_filter() {
    let h = DVector::from_vec(vec![C64::new(0.8, -0.3), C64::new(-0.2, 1.1)]);
    let ch = from_parts(2, vec![vec![h.clone()]], vec![vec![1.0]], 0.05);
    let a = assign_centralized(&ch.rsrp_dbm).unwrap();
    let sol = solve_centralized(&ch, &a, 2.0, &SolverConfig::default()).unwrap();
    let expected = (1.0 + 2.0 * h.norm_squared() / 0.05).log2();
    assert_relative_eq!(sol.final_rate(), expected, max_relative = 1e-9);
    let w = &sol.w[0];
    assert_relative_eq!(w.norm_squared(), 2.0, max_relative = 1e-9);
    let align = h.dotc(w).norm() / (h.norm() * w.norm());
    assert_relative_eq!(align, 1.0, max_relative = 1e-12);
}

#[test]
fn two_user_scalar_beats_closed_form_baselines() {
    let ch = scalar_channel(&[&[1.0, 0.5]], 0.1);
    let a = assign_centralized(&ch.rsrp_dbm).unwrap();
    let sol = solve_centralized(&ch, &a, 1.0, &tight_solver()).unwrap();
    let tdma = (1.0f64 + 1.0 / 0.1).log2();
    let sup = (1.0f64 + 0.5 / (0.5 + 0.1)).log2() + (1.0f64 + 0.125 / (0.125 + 0.1)).log2();
    assert!(
        sol.final_rate() >= tdma.max(sup) - 1e-9,
        "{} < {}",
        sol.final_rate(),
        tdma.max(sup)
    );
    let oracle: f64 = oracle_rates(&ch, &sol.serving, &sol.w).iter().sum();
    assert_relative_eq!(oracle, sol.final_rate(), max_relative = 1e-12);
}

#[test]
fn traces_are_monotone_and_power_feasible_for_every_scheme() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SolverConfig::default();
    for _ in 0..15 {
        let n_bs = rng.random_range(2..5);
        let n_ue = rng.random_range(2..7);
        let nt = rng.random_range(1..4);
        let noise = rng.random_range(0.01..1.0);
        let ch = random_channel(&mut rng, n_bs, n_ue, nt, noise);
        let l = rng.random_range(1..=n_bs);
        let assignments = [
            assign_single_node(&ch.rsrp_dbm).unwrap(),
            assign_centralized(&ch.rsrp_dbm).unwrap(),
            assign_user_centric(&ch.rsrp_dbm, l).unwrap(),
        ];
        for a in &assignments {
            let sol = solve(&ch, a, 1.0, &cfg).unwrap();
            check_trace_and_power(&sol, n_bs, 1.0);
            let oracle: f64 = oracle_rates(&ch, &sol.serving, &sol.w).iter().sum();
            assert_relative_eq!(oracle, sol.final_rate(), max_relative = 1e-9);
        }
    }
}

#[test]
fn warm_start_never_loses_rate_under_a_larger_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = SolverConfig::default();
    for _ in 0..10 {
        let n_bs = rng.random_range(2..5);
        let n_ue = rng.random_range(2..7);
        let ch = random_channel(&mut rng, n_bs, n_ue, 2, 0.1);
        let l = rng.random_range(1..=n_bs);
        for a in [
            assign_single_node(&ch.rsrp_dbm).unwrap(),
            assign_user_centric(&ch.rsrp_dbm, l).unwrap(),
        ] {
            let low = solve(&ch, &a, 0.5, &cfg).unwrap();
            let high = solve_warm(&ch, &a, 2.0, &cfg, Some(&low)).unwrap();
            check_trace_and_power(&high, n_bs, 2.0);
            assert_relative_eq!(high.rate_trace[0], low.final_rate(), max_relative = 1e-12);
            assert!(high.final_rate() >= low.final_rate() * (1.0 - 1e-12));
            assert!(solve_warm(&ch, &a, 0.1, &cfg, Some(&low)).is_err());
        }
    }
    let ch = random_channel(&mut rng, 2, 3, 2, 0.1);
    let single = assign_single_node(&ch.rsrp_dbm).unwrap();
    let central = assign_centralized(&ch.rsrp_dbm).unwrap();
    let start = solve(&ch, &single, 1.0, &cfg).unwrap();
    assert!(solve_warm(&ch, &central, 1.0, &cfg, Some(&start)).is_err());
}

#[test]
fn single_bs_single_ue_matches_centralized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ch = random_channel(&mut rng, 1, 1, 3, 0.2);
    let s = solve_single_node(
        &ch,
        &assign_single_node(&ch.rsrp_dbm).unwrap(),
        1.0,
        &SolverConfig::default(),
    )
    .unwrap();
    let c = solve_centralized(
        &ch,
        &assign_centralized(&ch.rsrp_dbm).unwrap(),
        1.0,
        &SolverConfig::default(),
    )
    .unwrap();
    assert_relative_eq!(s.final_rate(), c.final_rate(), max_relative = 1e-9);
}

#[test]
fn isolated_pairs_separate() {
    let ch = scalar_channel(&[&[1.2, 0.0], &[0.0, 0.7]], 0.1);
    let a = assign_single_node(&ch.rsrp_dbm).unwrap();
    let sol = solve_single_node(&ch, &a, 1.0, &SolverConfig::default()).unwrap();
    let expected = (1.0f64 + 1.44 / 0.1).log2() + (1.0f64 + 0.49 / 0.1).log2();
    assert_relative_eq!(sol.final_rate(), expected, max_relative = 1e-9);
}

#[test]
fn single_node_does_not_beat_centralized() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = tight_solver();
    for _ in 0..10 {
        let ch = random_channel(&mut rng, 3, 4, 2, 0.1);
        let s =
            solve_single_node(&ch, &assign_single_node(&ch.rsrp_dbm).unwrap(), 1.0, &cfg).unwrap();
        let c =
            solve_centralized(&ch, &assign_centralized(&ch.rsrp_dbm).unwrap(), 1.0, &cfg).unwrap();
        assert!(
            s.final_rate() <= c.final_rate() * (1.0 + 1e-6),
            "{} > {}",
            s.final_rate(),
            c.final_rate()
        );
    }
}

#[test]
fn icm_without_external_ues_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ch = random_channel(&mut rng, 2, 3, 2, 0.1);
    let a = assign_centralized(&ch.rsrp_dbm).unwrap();
    let w = network(&ch, &a, &[1.0; 3]).matched_filter_init(1.0);
    let icm = compute_icm(&ch, &a, &w, &[1.0; 3], 0);
    assert!(icm.matrix.iter().all(|v| *v == C64::new(0.0, 0.0)));
}

#[test]
fn icm_single_external_ue_hand_value() {
    // UE1 sees h=1 from both BSs, its own precoder 0.5 and noise 0.25, so
    // u = 0.5 / 0.5 = 1 and the MSE weight is 0.5 / (0.5 - 0.25) = 2.
    let ch = scalar_channel(&[&[1.0, 1.0], &[0.0, 1.0]], 0.25);
    let a = manual_assignment(
        Scheme::NetworkCoopDistributed,
        2,
        vec![vec![0], vec![1]],
        &[vec![0], vec![1]],
    );
    let w = vec![
        DVector::from_element(1, C64::new(0.0, 0.0)),
        DVector::from_element(1, C64::new(0.5, 0.0)),
    ];
    let icm = compute_icm(&ch, &a, &w, &[1.0, 1.0], 0);
    assert_eq!(icm.matrix.shape(), (1, 1));
    assert_relative_eq!(icm.matrix[(0, 0)].re, 2.0, max_relative = 1e-14);
    assert_eq!(icm.matrix[(0, 0)].im, 0.0);
}

#[test]
fn icm_is_hermitian_psd_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let ch = random_channel(&mut rng, 4, 6, 2, 0.05);
        let a = assign_user_centric(&ch.rsrp_dbm, 2).unwrap();
        let weights = vec![1.0; 6];
        let w: Vec<DVector<C64>> = a
            .serving
            .iter()
            .map(|s| {
                DVector::from_fn(s.len() * 2, |_, _| {
                    netcoop::channel::complex_gaussian(&mut rng) * 0.3
                })
            })
            .collect();
        for c in 0..a.clusters.len() {
            let icm = compute_icm(&ch, &a, &w, &weights, c);
            let scale = icm.matrix.norm().max(1e-300);
            assert!(icm.hermitian_error() <= 1e-12 * scale);
            assert!(icm.min_eigenvalue() >= -1e-12 * scale);
        }
    }
}

fn perturb(w: &[DVector<C64>], j: usize, idx: usize, delta: C64) -> Vec<DVector<C64>> {
    let mut out = w.to_vec();
    out[j][idx] += delta;
    out
}

#[test]
fn icm_prices_leakage_with_exact_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ch = random_channel(&mut rng, 2, 4, 2, 0.1);
    let serving = vec![vec![0, 1], vec![0], vec![1, 0], vec![1]];
    let a = manual_assignment(
        Scheme::NetworkCoopDistributed,
        2,
        serving,
        &[vec![0, 1], vec![2, 3]],
    );
    let weights = [1.0, 0.7, 1.3, 1.1];
    let net = network(&ch, &a, &weights);
    let w0 = net.matched_filter_init(1.0);
    let terms = net.receive_terms(&net.gains(&w0));
    let icm = compute_icm(&ch, &a, &w0, &weights, 0);
    let cluster = &a.clusters[0].ues;
    let global = |w: &[DVector<C64>]| net.mse_objective(w, &terms);
    let local = |w: &[DVector<C64>]| net.priced_objective(w, &terms, cluster, &icm);
    let step = 1e-6;
    for &j in cluster {
        for idx in 0..w0[j].len() {
            for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                let plus = perturb(&w0, j, idx, dir * step);
                let minus = perturb(&w0, j, idx, -dir * step);
                let dg = (global(&plus) - global(&minus)) / (2.0 * step);
                let dl = (local(&plus) - local(&minus)) / (2.0 * step);
                let scale = dg.abs().max(dl.abs()).max(1e-3);
                assert!(
                    (dg - dl).abs() <= 1e-4 * scale,
                    "j={j} idx={idx}: {dg} vs {dl}"
                );
            }
        }
    }
}

#[test]
fn distributed_with_one_cluster_matches_centralized() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = tight_solver();
    for _ in 0..20 {
        let n_bs = rng.random_range(1..4);
        let n_ue = rng.random_range(1..5);
        let noise = rng.random_range(0.05..0.5);
        let ch = random_channel(&mut rng, n_bs, n_ue, 2, noise);
        let central = assign_centralized(&ch.rsrp_dbm).unwrap();
        let mut global = central.clone();
        global.scheme = Scheme::NetworkCoopDistributed;
        let c = solve_centralized(&ch, &central, 1.0, &cfg).unwrap();
        let d = solve_distributed(&ch, &global, 1.0, &cfg).unwrap();
        assert_relative_eq!(d.final_rate(), c.final_rate(), max_relative = 1e-6);
    }
}

#[test]
fn isolated_clusters_converge_after_one_round() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut ch = random_channel(&mut rng, 2, 4, 2, 0.1);
    for (bs, ues) in [(0, [2, 3]), (1, [0, 1])] {
        for ue in ues {
            ch.h[bs][ue].fill(C64::new(0.0, 0.0));
        }
    }
    let a = manual_assignment(
        Scheme::NetworkCoopDistributed,
        2,
        vec![vec![0], vec![0], vec![1], vec![1]],
        &[vec![0, 1], vec![2, 3]],
    );
    let cfg = SolverConfig {
        max_inner: 3000,
        ..tight_solver()
    };
    let d = solve_distributed(&ch, &a, 1.0, &cfg).unwrap();
    assert!(d.converged);
    assert!(d.iterations <= 2, "rounds {}", d.iterations);
    assert_relative_eq!(d.rate_trace[1], d.final_rate(), max_relative = 1e-9);
    let mut independent = 0.0;
    for (bs, ues) in [(0usize, [0usize, 1usize]), (1, [2, 3])] {
        let sub = from_parts(
            2,
            vec![ues.iter().map(|&u| ch.h[bs][u].clone()).collect()],
            vec![vec![1.0, 1.0]],
            0.1,
        );
        let sa = assign_centralized(&sub.rsrp_dbm).unwrap();
        independent += solve_centralized(&sub, &sa, 1.0, &tight_solver())
            .unwrap()
            .final_rate();
    }
    assert_relative_eq!(d.final_rate(), independent, max_relative = 1e-6);
}

#[test]
fn distributed_close_to_centralized_on_small_network() {
    use netcoop::channel::generate_channels;
    use netcoop::scenario::{drop_rng, generate_topology, ScenarioConfig, Stream};
    let sc = ScenarioConfig {
        n_bs: 4,
        n_ue: 8,
        area_side: 200.0,
        cluster_size_l: 4,
        ..ScenarioConfig::default()
    };
    let cfg = SolverConfig::default();
    for drop in 0..4 {
        let topo = generate_topology(&sc, drop).unwrap();
        let phys =
            generate_channels(&sc, &topo, &mut drop_rng(sc.seed, drop, Stream::Fading)).unwrap();
        let (ch, p) = phys.operating_point(10.0, sc.p_max_per_bs, true);
        let c = solve(&ch, &assign_centralized(&ch.rsrp_dbm).unwrap(), p, &cfg).unwrap();
        let d = solve(&ch, &assign_user_centric(&ch.rsrp_dbm, 4).unwrap(), p, &cfg).unwrap();
        assert!(
            d.final_rate() >= 0.9 * c.final_rate(),
            "drop {drop}: {} vs {}",
            d.final_rate(),
            c.final_rate()
        );
    }
}

#[test]
fn rates_and_directions_are_scale_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let ch = random_channel(&mut rng, 3, 4, 2, 0.1);
    let gamma = 37.0;
    let mut scaled = ch.clone();
    for row in scaled.h.iter_mut() {
        for h in row.iter_mut() {
            *h *= C64::new(gamma, 0.0);
        }
    }
    scaled.noise_power *= gamma * gamma;
    let cfg = SolverConfig::default();
    for a in [
        assign_centralized(&ch.rsrp_dbm).unwrap(),
        assign_user_centric(&ch.rsrp_dbm, 2).unwrap(),
    ] {
        let s0 = solve(&ch, &a, 1.0, &cfg).unwrap();
        let s1 = solve(&scaled, &a, 1.0, &cfg).unwrap();
        assert_relative_eq!(s0.final_rate(), s1.final_rate(), max_relative = 1e-6);
        for (w0, w1) in s0.w.iter().zip(&s1.w) {
            let n = w0.norm() * w1.norm();
            if n > 1e-9 {
                assert_relative_eq!(w0.dotc(w1).norm() / n, 1.0, max_relative = 1e-6);
            }
        }
    }
}

#[test]
fn independent_solver_flops_follow_the_joint_form_per_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let ch = random_channel(&mut rng, 1, 3, 2, 0.1);
    let a = assign_single_node(&ch.rsrp_dbm).unwrap();
    let s = solve_independent(&ch, &a, 1.0, &SolverConfig::default()).unwrap();
    let c = solve_centralized(
        &ch,
        &assign_centralized(&ch.rsrp_dbm).unwrap(),
        1.0,
        &SolverConfig::default(),
    )
    .unwrap();
    assert_relative_eq!(
        c.flops,
        c.iterations as f64 * 3.0 * (2.0 / 3.0) * 8.0,
        max_relative = 1e-12
    );
    assert!(s.flops > 0.0 && s.flops == s.flops_total);
}
