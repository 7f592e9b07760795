//! Independent reference computations used by the integration suites.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfsync::{ConnectivityClass, DelayMatrix, SensorDigraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `reach[r][i]`: information starting at `r` arrives at `i` (Floyd-Warshall
/// closure on `a_ir > 0` meaning `r -> i`).
pub fn reach(g: &SensorDigraph) -> Vec<Vec<bool>> {
    let n = g.n();
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for i in 0..n {
        for j in 0..n {
            if g.weight(i, j) > 0.0 {
                r[j][i] = true;
            }
        }
    }
    for k in 0..n {
        for a in 0..n {
            if r[a][k] {
                for b in 0..n {
                    if r[k][b] {
                        r[a][b] = true;
                    }
                }
            }
        }
    }
    r
}

/// Connectivity class from pairwise reachability alone.
pub fn brute_class(g: &SensorDigraph) -> ConnectivityClass {
    let n = g.n();
    let r = reach(g);
    if (0..n).all(|a| (0..n).all(|b| r[a][b])) {
        return ConnectivityClass::StronglyConnected;
    }
    if (0..n).any(|root| (0..n).all(|i| r[root][i])) {
        return ConnectivityClass::QuasiStronglyConnected;
    }
    // undirected closure
    let mut u = vec![vec![false; n]; n];
    for a in 0..n {
        u[a][a] = true;
        for b in 0..n {
            if g.weight(a, b) > 0.0 || g.weight(b, a) > 0.0 {
                u[a][b] = true;
            }
        }
    }
    for k in 0..n {
        for a in 0..n {
            if u[a][k] {
                for b in 0..n {
                    if u[k][b] {
                        u[a][b] = true;
                    }
                }
            }
        }
    }
    if (0..n).all(|b| u[0][b]) {
        ConnectivityClass::WeaklyConnected
    } else {
        ConnectivityClass::Disconnected
    }
}

/// Root components by brute force: maximal mutually reachable sets that
/// nothing outside reaches.
pub fn brute_roots(g: &SensorDigraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let r = reach(g);
    let mut roots: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let comp: Vec<usize> = (0..n).filter(|&u| r[u][v] && r[v][u]).collect();
        let reached_from_outside = (0..n).any(|u| !comp.contains(&u) && r[u][v]);
        if !reached_from_outside && !roots.contains(&comp) {
            roots.push(comp);
        }
    }
    roots.sort();
    roots
}

/// Left null vector of `L` from the SVD of `L^T`, normalized to sum 1.
pub fn svd_left_null(l: &DMatrix<f64>) -> Vec<f64> {
    let svd = l.transpose().svd(true, true);
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let v = svd.v_t.unwrap().row(idx).transpose();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Number of eigenvalues with modulus at most `tol`.
pub fn numeric_zero_count(l: &DMatrix<f64>, tol: f64) -> usize {
    l.complex_eigenvalues().iter().filter(|z| z.norm() <= tol).count()
}

/// Random delays `scale * U[0.5, 1]` on every ordered pair.
pub fn random_delays<R: Rng>(n: usize, scale: f64, rng: &mut R) -> DelayMatrix {
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            scale * rng.random_range(0.5..=1.0)
        }
    });
    DelayMatrix::new(m).unwrap()
}

pub fn uniform_vec<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Sum of random weighted cycles: balanced and strongly connected.
pub fn random_balanced<R: Rng>(n: usize, cycles: usize, rng: &mut R) -> SensorDigraph {
    let mut w = DMatrix::zeros(n, n);
    for c in 0..cycles.max(1) {
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        // the first cycle spans all nodes, later ones a random subset
        let len = if c == 0 { n } else { rng.random_range(2..=n) };
        let wt = rng.random_range(0.5..=2.0);
        for k in 0..len {
            let (from, to) = (order[k], order[(k + 1) % len]);
            w[(to, from)] += wt;
        }
    }
    SensorDigraph::new(w).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
