//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfsync::netgen::{random_sc, ReferenceTopology};
use selfsync::{DelayMatrix, SensorDigraph, SimConfig};

/// Random strongly connected digraph with `n` nodes.
pub fn random_network(n: usize, seed: u64) -> SensorDigraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_sc(n, 0.2, (0.5, 2.0), &mut rng)
}

/// The 14-node reference run: `T_s = 1e-3`, `K = 30`, 50-step delays.
pub fn reference_run(horizon: usize) -> (SensorDigraph, DelayMatrix, SimConfig, Vec<f64>) {
    let g = ReferenceTopology::StronglyConnected.digraph();
    let n = g.n();
    let d = DelayMatrix::uniform(n, 0.05).expect("valid delay");
    let cfg = SimConfig::new(n, 1e-3, 30.0, horizon);
    let gv = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    (g, d, cfg, gv)
}
