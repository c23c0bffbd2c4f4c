mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::DVector;
use netcoop::channel::{complex_gaussian, C64};
use netcoop::clustering::{assign_user_centric, Scheme};
use netcoop::metrics::{compute_sinr, coverage_probability, throughput, ThroughputModel};
use netcoop::precoding::{solve, PrecodingSolution, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solution(serving: Vec<Vec<usize>>, w: Vec<DVector<C64>>, nt: usize) -> PrecodingSolution {
    PrecodingSolution {
        scheme: Scheme::NetworkCoopDistributed,
        nt,
        serving,
        w,
        iterations: 0,
        flops: 0.0,
        flops_total: 0.0,
        rate_trace: Vec::new(),
        converged: true,
    }
}

#[test]
fn scalar_two_user_sinr() {
    let ch = scalar_channel(&[&[1.0, 0.3]], 0.1);
    let one = DVector::from_element(1, C64::new(1.0, 0.0));
    let sol = solution(vec![vec![0], vec![0]], vec![one.clone(), one], 1);
    let s = compute_sinr(&ch, &sol, 0.1);
    assert_relative_eq!(s[0], 1.0 / (1.0 + 0.1), max_relative = 1e-14);
    // Stream 2 from a second BS reaches UE 0 with gain 0.3.
    let ch2 = from_parts(
        1,
        vec![
            vec![
                DVector::from_element(1, C64::new(1.0, 0.0)),
                DVector::from_element(1, C64::new(0.0, 0.0)),
            ],
            vec![
                DVector::from_element(1, C64::new(0.3, 0.0)),
                DVector::from_element(1, C64::new(1.0, 0.0)),
            ],
        ],
        vec![vec![1.0, 1e-30], vec![0.09, 1.0]],
        0.1,
    );
    let one = DVector::from_element(1, C64::new(1.0, 0.0));
    let sol2 = solution(vec![vec![0], vec![1]], vec![one.clone(), one], 1);
    let s2 = compute_sinr(&ch2, &sol2, 0.1);
    assert_relative_eq!(s2[0], 1.0 / (0.09 + 0.1), max_relative = 1e-14);
    assert!((s2[0] - 5.263).abs() < 1e-3);
}

#[test]
fn single_ue_sinr_is_desired_over_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ch = random_channel(&mut rng, 2, 1, 3, 0.2);
    let w = DVector::from_fn(6, |_, _| complex_gaussian(&mut rng));
    let mut g = C64::new(0.0, 0.0);
    for b in 0..2 {
        g += ch.h[b][0].dotc(&w.rows(b * 3, 3));
    }
    let s = compute_sinr(&ch, &solution(vec![vec![0, 1]], vec![w], 3), 0.2);
    assert_relative_eq!(s[0], g.norm_sqr() / 0.2, max_relative = 1e-12);
}

#[test]
fn closed_form_sinr_matches_symbol_level_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..3 {
        let ch = random_channel(&mut rng, 3, 3, 2, 0.3);
        let a = assign_user_centric(&ch.rsrp_dbm, 2).unwrap();
        let sol = solve(&ch, &a, 1.0, &SolverConfig::default()).unwrap();
        let closed = compute_sinr(&ch, &sol, ch.noise_power);
        let mc = monte_carlo_sinr(&ch, &sol, 100_000, &mut rng);
        for (c, m) in closed.iter().zip(&mc) {
            assert!((m / c - 1.0).abs() < 0.02, "{m} vs {c}");
        }
    }
}

#[test]
fn coverage_reconstructs_sample_quantiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..400)
        .map(|_| 10f64.powf(rng.random_range(-2.0..2.0)))
        .collect();
    let step = 0.05;
    let grid: Vec<f64> = (0..=800).map(|i| -20.0 + step * i as f64).collect();
    let cov: Vec<f64> = grid
        .iter()
        .map(|&t| coverage_probability(&samples, t).unwrap())
        .collect();
    let mut db: Vec<f64> = samples.iter().map(|s| 10.0 * s.log10()).collect();
    db.sort_by(f64::total_cmp);
    for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let idx = ((q * db.len() as f64).ceil() as usize).saturating_sub(1);
        let truth = db[idx];
        // Smallest threshold whose CDF reaches q.
        let pos = cov.iter().position(|&c| 1.0 - c >= q - 1e-12).unwrap();
        let est = grid[pos];
        assert!(
            (est - truth).abs() <= step + 1e-12,
            "q={q}: {est} vs {truth}"
        );
    }
}

#[test]
fn throughput_identity_holds_to_machine_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let t: f64 = rng.random_range(1.0..50.0);
        let c: f64 = rng.random_range(1e6..1e10);
        let o = rng.random_range(0.0..t * c);
        let b = rng.random_range(1e6..1e9);
        let r = rng.random_range(0.0..200.0);
        let tp = throughput(
            &ThroughputModel {
                t_slots: t,
                compute_capacity: c,
                flops: o,
            },
            b,
            r,
        );
        let lhs = tp * t;
        let rhs = (t - o / c) * b * r;
        assert!((lhs - rhs).abs() <= 1e-12 * (t * b * r).max(1.0));
        assert!(tp <= b * r);
    }
}
