mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use selfsync::netgen::{random_multi_root, random_qsc, ReferenceTopology};
use selfsync::protocols::{predict_clusters, predict_consensus, predict_consensus_vector};
use selfsync::sim::{simulate_noisy, simulate_vector, InitialCondition};
use selfsync::spectral::empirical_rate;
use selfsync::{detect_sync, simulate, DelayMatrix, Error, SensorDigraph, SimConfig, SyncOptions};

const T_S: f64 = 1e-3;

fn cycle3() -> SensorDigraph {
    SensorDigraph::from_edges(3, &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap()
}

#[test]
fn delay_scaling_tracks_prediction() {
    let mut r = rng(21);
    for _ in 0..6 {
        let n = r.random_range(3..=8);
        let g = random_qsc(n, 0.3, (0.5, 2.0), &mut r);
        let base = random_delays(n, 1.0, &mut r);
        let cfg = SimConfig::new(n, T_S, 2.0, 60_000).with_c(uniform_vec(n, 0.5, 2.0, &mut r));
        let gv = uniform_vec(n, 1.0, 3.0, &mut r);
        for scale in [0.0, 0.02, 0.1] {
            let d = base.scaled(scale).unwrap();
            let traj = simulate(&g, &d, &cfg, &gv).unwrap();
            let w = predict_consensus(&g, &d.quantized(T_S), &cfg, &gv)
                .unwrap()
                .omega_star
                .unwrap();
            for v in traj.final_derivatives() {
                assert!(rel_err(*v, w) <= 1e-6, "scale {scale}: {v} vs {w}");
            }
        }
    }
}

#[test]
fn scalar_run_equals_one_dimensional_vector_run() {
    let g = ReferenceTopology::QuasiStrong3.digraph();
    let n = g.n();
    let d = DelayMatrix::uniform(n, 0.02).unwrap();
    let c: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
    let gv: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
    let cfg = SimConfig::new(n, T_S, 10.0, 3000).with_c(c.clone());
    let a = simulate(&g, &d, &cfg, &gv).unwrap();
    let q: Vec<DMatrix<f64>> = c.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect();
    let gvec: Vec<DVector<f64>> = gv.iter().map(|&x| DVector::from_element(1, x)).collect();
    let b = simulate_vector(&g, &d, &cfg, &q, &gvec).unwrap();
    for k in [0, 1, 1500, 2999] {
        assert_eq!(a.state_row(k), b.state_row(k));
        assert_eq!(a.derivative_row(k), b.derivative_row(k));
    }
}

#[test]
fn vector_run_reaches_vector_prediction() {
    let g = cycle3();
    let d = DelayMatrix::uniform(3, 0.03).unwrap();
    let q = vec![
        DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 1.5]),
        DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.9]),
    ];
    let gv = vec![
        DVector::from_vec(vec![1.0, -1.0]),
        DVector::from_vec(vec![2.0, 0.5]),
        DVector::from_vec(vec![0.5, 3.0]),
    ];
    let cfg = SimConfig::new(3, T_S, 3.0, 40_000);
    let traj = simulate_vector(&g, &d, &cfg, &q, &gv).unwrap();
    let w = predict_consensus_vector(&g, &d, 3.0, &q, &gv).unwrap().omega_star;
    let last = traj.derivative_row(traj.len() - 1);
    for i in 0..3 {
        for r in 0..2 {
            assert!((last[2 * i + r] - w[r]).abs() <= 1e-8 * w[r].abs().max(1.0));
        }
    }
    let rep = detect_sync(&traj, &SyncOptions::default());
    assert!(rep.global);
}

#[test]
fn multi_root_clusters_match_prediction() {
    let mut r = rng(22);
    let g = random_multi_root(9, 2, 0.2, (0.5, 2.0), &mut r).unwrap();
    let d = random_delays(9, 0.05, &mut r);
    let cfg = SimConfig::new(9, T_S, 3.0, 40_000);
    let gv = uniform_vec(9, 1.0, 3.0, &mut r);
    let traj = simulate(&g, &d, &cfg, &gv).unwrap();
    let rep = detect_sync(&traj, &SyncOptions::default());
    let pred = predict_clusters(&g, &d.quantized(T_S), &cfg, &gv).unwrap();
    assert!(!rep.global);
    for p in &pred.clusters {
        let cl = rep.cluster_of(p.nodes[0]).expect("root node in a cluster");
        assert!(p.nodes.iter().all(|i| cl.nodes.contains(i)));
        assert!(rel_err(cl.scalar(), p.omega_star) <= 1e-6);
    }
}

#[test]
fn delayed_reference_run_converges_exponentially() {
    let g = ReferenceTopology::StronglyConnected.digraph();
    let n = g.n();
    let d = DelayMatrix::uniform(n, 0.05).unwrap();
    let gv: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let cfg = SimConfig::new(n, T_S, 30.0, 20_000);
    let traj = simulate(&g, &d, &cfg, &gv).unwrap();
    let w = predict_consensus(&g, &d.quantized(T_S), &cfg, &gv)
        .unwrap()
        .omega_star
        .unwrap();
    let rate = empirical_rate(&traj, &vec![w; n], 1e-6).unwrap();
    assert!(!rate.degenerate);
    assert!(rate.value < 0.0);
}

#[test]
fn initial_history_does_not_move_consensus() {
    let g = cycle3();
    let d = DelayMatrix::uniform(3, 0.1).unwrap();
    let gv = [1.0, 2.0, 4.0];
    let base = SimConfig::new(3, T_S, 3.0, 40_000);
    let w = predict_consensus(&g, &d, &base, &gv).unwrap().omega_star.unwrap();
    for init in [
        InitialCondition::Constant {
            values: vec![5.0, -3.0, 0.5],
        },
        InitialCondition::Linear {
            a: vec![1.0, 2.0, 3.0],
            b: vec![0.0, -1.0, 2.0],
        },
    ] {
        let traj = simulate(&g, &d, &base.clone().with_init(init), &gv).unwrap();
        for v in traj.final_derivatives() {
            assert!(rel_err(*v, w) <= 1e-9);
        }
    }
}

#[test]
fn zero_noise_is_deterministic_and_noise_moments_match() {
    let g = SensorDigraph::empty(2);
    let d = DelayMatrix::zeros(2);
    let cfg = SimConfig::new(2, T_S, 1.0, 100_000).with_noise(0.0, 3);
    let clean = simulate(&g, &d, &cfg, &[1.0, -1.0]).unwrap();
    assert_eq!(clean.final_derivatives(), &[1.0, -1.0]);
    for (seed, std) in [(1, 0.1), (2, 0.5)] {
        let noisy = simulate_noisy(&g, &d, &cfg.clone().with_noise(0.0, seed), &[1.0, -1.0], std).unwrap();
        let xs: Vec<f64> = (0..noisy.len()).map(|k| noisy.derivative(k, 0) - 1.0).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(m.abs() < 5.0 * std / (xs.len() as f64).sqrt());
        assert!(
            (v / (std * std) - 1.0).abs() < 0.02,
            "variance ratio {}",
            v / (std * std)
        );
    }
}

#[test]
fn oversized_step_is_refused() {
    let g = cycle3();
    let cfg = SimConfig::new(3, 0.1, 30.0, 10);
    match simulate(&g, &DelayMatrix::zeros(3), &cfg, &[1.0; 3]) {
        Err(Error::UnstableStep { .. }) => {}
        other => panic!("expected UnstableStep, got {other:?}"),
    }
}

#[test]
fn csv_trace_has_header_and_rows() {
    let g = cycle3();
    let cfg = SimConfig::new(3, T_S, 1.0, 100);
    let traj = simulate(&g, &DelayMatrix::zeros(3), &cfg, &[1.0, 2.0, 3.0]).unwrap();
    let mut out = Vec::new();
    traj.write_csv(&mut out, 10).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x_1,x_2,x_3,dx_1,dx_2,dx_3");
    // every tenth sample plus the last
    assert_eq!(lines.count(), 11);
}

#[test]
fn short_run_is_not_synchronized() {
    let g = cycle3();
    let cfg = SimConfig::new(3, T_S, 0.1, 200);
    let traj = simulate(&g, &DelayMatrix::uniform(3, 0.05).unwrap(), &cfg, &[1.0, 2.0, 4.0]).unwrap();
    let rep = detect_sync(&traj, &SyncOptions::default());
    assert!(!rep.global);
    assert!(rep.clusters.is_empty());
    assert_eq!(rep.unclustered, vec![0, 1, 2]);
    assert!(!rep.settled());
}
