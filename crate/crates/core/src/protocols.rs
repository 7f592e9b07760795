//! Closed-form consensus prediction and the bias-removal protocols.
//!
//! The asymptotic common derivative of a network with one root component is
//!
//! `w* = sum_i g_i c_i g_i / (sum_i g_i c_i + K sum_i sum_j g_i a_ij tau_ij)`
//!
//! with `g_i` the left null vector of the Laplacian. Ratios of two such
//! values taken on the same network cancel the denominator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digraph::SensorDigraph;
use crate::error::{Error, Result};
use crate::netgen::DelayMatrix;
use crate::sim::{detect_sync, simulate, SimConfig, SyncOptions};
use crate::spectral::{cluster_gammas, gamma_left_eigenvector, GammaVector, Normalization};

/// Smallest `|w*(1)|` accepted as a ratio denominator.
pub const CONSENSUS_FLOOR: f64 = 1e-300;
/// Estimated gamma entries at or below this are treated as zero.
pub const GAMMA_TILDE_FLOOR: f64 = 1e-9;

/// Prediction for one root component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrediction {
    /// Nodes of the root component.
    pub nodes: Vec<usize>,
    pub omega_star: f64,
    pub gamma: GammaVector,
    /// `sum gamma_i c_i g_i`.
    pub numerator: f64,
    /// `sum gamma_i c_i`.
    pub gamma_c_sum: f64,
    /// `K sum_i gamma_i sum_j a_ij tau_ij`.
    pub delay_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPrediction {
    /// Network-wide value when there is exactly one root component.
    pub omega_star: Option<f64>,
    pub global: bool,
    pub clusters: Vec<ClusterPrediction>,
    /// Nodes outside every root component (no closed-form value).
    pub unpredicted: Vec<usize>,
}

fn check_inputs(g: &SensorDigraph, delays: &DelayMatrix, cfg: &SimConfig, gv: &[f64]) -> Result<()> {
    let n = g.n();
    if delays.n() != n {
        return Err(Error::Dimension(format!(
            "delays are {0}x{0}, digraph has {n} nodes",
            delays.n()
        )));
    }
    if gv.len() != n {
        return Err(Error::Dimension(format!("{} forcing terms for {n} nodes", gv.len())));
    }
    cfg.validate(n)
}

/// Weighted delay load `sum_i gamma_i sum_j a_ij tau_ij`.
fn delay_load(g: &SensorDigraph, delays: &DelayMatrix, gamma: &GammaVector) -> f64 {
    gamma
        .support
        .iter()
        .map(|&i| {
            gamma.gamma[i]
                * g.neighbors(i)
                    .iter()
                    .map(|&j| g.weight(i, j) * delays.get(i, j))
                    .sum::<f64>()
        })
        .sum()
}

fn cluster_prediction(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    gv: &[f64],
    gamma: GammaVector,
) -> ClusterPrediction {
    let c = &cfg.c_weights;
    let numerator: f64 = gamma.support.iter().map(|&i| gamma.gamma[i] * c[i] * gv[i]).sum();
    let gamma_c_sum: f64 = gamma.support.iter().map(|&i| gamma.gamma[i] * c[i]).sum();
    let delay_term = cfg.k_gain * delay_load(g, delays, &gamma);
    ClusterPrediction {
        nodes: gamma.support.clone(),
        omega_star: numerator / (gamma_c_sum + delay_term),
        gamma,
        numerator,
        gamma_c_sum,
        delay_term,
    }
}

/// Global consensus value; fails unless the digraph has one root component.
pub fn predict_consensus(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
) -> Result<ConsensusPrediction> {
    check_inputs(g, delays, cfg, g_values)?;
    let scc = g.scc_decompose();
    if !scc.class.has_spanning_tree() {
        return Err(Error::NotQuasiStronglyConnected {
            class: scc.class.to_string(),
        });
    }
    let gamma = gamma_left_eigenvector(&g.laplacian(), &scc, Normalization::SumOne)?;
    let cl = cluster_prediction(g, delays, cfg, g_values, gamma);
    let unpredicted = (0..g.n()).filter(|i| !cl.nodes.contains(i)).collect();
    Ok(ConsensusPrediction {
        omega_star: Some(cl.omega_star),
        global: true,
        clusters: vec![cl],
        unpredicted,
    })
}

/// One value per root component, each from that component's own `gamma`.
pub fn predict_clusters(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
) -> Result<ConsensusPrediction> {
    check_inputs(g, delays, cfg, g_values)?;
    let scc = g.scc_decompose();
    let gammas = cluster_gammas(&g.laplacian(), &scc, Normalization::SumOne)?;
    let clusters: Vec<ClusterPrediction> = gammas
        .into_iter()
        .map(|gm| cluster_prediction(g, delays, cfg, g_values, gm))
        .collect();
    let mut in_root = vec![false; g.n()];
    for c in &clusters {
        for &v in &c.nodes {
            in_root[v] = true;
        }
    }
    let global = clusters.len() == 1;
    Ok(ConsensusPrediction {
        omega_star: if global { Some(clusters[0].omega_star) } else { None },
        global,
        clusters,
        unpredicted: (0..g.n()).filter(|&i| !in_root[i]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorPrediction {
    pub omega_star: DVector<f64>,
    pub gamma: GammaVector,
    /// `sum gamma_i Q_i`.
    pub weight_sum: DMatrix<f64>,
    /// `sum gamma_i Q_i g_i`.
    pub numerator: DVector<f64>,
    pub delay_term: f64,
}

/// `w* = (sum gamma_i Q_i + I K sum gamma_i a_ij tau_ij)^{-1} sum gamma_i Q_i g_i`.
pub fn predict_consensus_vector(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    k_gain: f64,
    q_mats: &[DMatrix<f64>],
    g_vecs: &[DVector<f64>],
) -> Result<VectorPrediction> {
    let n = g.n();
    if delays.n() != n || q_mats.len() != n || g_vecs.len() != n {
        return Err(Error::Dimension(
            "digraph, delays, weight matrices and forcings disagree".into(),
        ));
    }
    let dim = g_vecs[0].len();
    if g_vecs.iter().any(|v| v.len() != dim) || q_mats.iter().any(|q| q.shape() != (dim, dim)) {
        return Err(Error::Dimension("inconsistent vector dimension across nodes".into()));
    }
    if !(k_gain > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gain K must be positive, got {k_gain}"
        )));
    }
    for (i, q) in q_mats.iter().enumerate() {
        if q.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { node: i });
        }
    }
    let scc = g.scc_decompose();
    if !scc.class.has_spanning_tree() {
        return Err(Error::NotQuasiStronglyConnected {
            class: scc.class.to_string(),
        });
    }
    let gamma = gamma_left_eigenvector(&g.laplacian(), &scc, Normalization::SumOne)?;
    let mut weight_sum = DMatrix::zeros(dim, dim);
    let mut numerator = DVector::zeros(dim);
    for &i in &gamma.support {
        weight_sum += &q_mats[i] * gamma.gamma[i];
        numerator += (&q_mats[i] * &g_vecs[i]) * gamma.gamma[i];
    }
    let delay_term = k_gain * delay_load(g, delays, &gamma);
    let system = &weight_sum + DMatrix::identity(dim, dim) * delay_term;
    let omega_star = system
        .lu()
        .solve(&numerator)
        .ok_or_else(|| Error::Singular("combined weight matrix".into()))?;
    Ok(VectorPrediction {
        omega_star,
        gamma,
        weight_sum,
        numerator,
        delay_term,
    })
}

/// Mismatch `g_i - w* (1 + (K / c_i) sum_j a_ij tau_ij)` of each node's
/// forcing against the common slope.
pub fn delta_omega(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
    omega_star: f64,
) -> Vec<f64> {
    (0..g.n())
        .map(|i| {
            let load: f64 = g.neighbors(i).iter().map(|&j| g.weight(i, j) * delays.get(i, j)).sum();
            g_values[i] - omega_star * (1.0 + cfg.k_gain / cfg.c_weights[i] * load)
        })
        .collect()
}

/// Minimum-norm intercepts `x0 = (1/K) L^+ D_c dw` of the synchronized
/// solution `x(t) = w* t + x0`. Only differences `x0_i - x0_j` are
/// meaningful; the common offset depends on the initial functions.
pub fn predict_intercepts(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
) -> Result<Vec<f64>> {
    let pred = predict_consensus(g, delays, cfg, g_values)?;
    let w = pred.omega_star.expect("global prediction");
    let dw = delta_omega(g, delays, cfg, g_values, w);
    let n = g.n();
    let rhs = DVector::from_fn(n, |i, _| cfg.c_weights[i] * dw[i] / cfg.k_gain);
    let l = g.laplacian().matrix().clone();
    let eps = 1e-12 * l.norm().max(1.0);
    let pinv = l
        .pseudo_inverse(eps)
        .map_err(|e| Error::Singular(format!("Laplacian pseudo-inverse: {e}")))?;
    Ok((pinv * rhs).iter().copied().collect())
}

/// How a protocol pass obtains its consensus value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PassMode {
    /// Closed form.
    Predict,
    /// Full simulation followed by synchronization detection.
    Simulate(SyncOptions),
}

/// Consensus value of one pass.
pub fn consensus_pass(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
    mode: &PassMode,
) -> Result<f64> {
    match mode {
        PassMode::Predict => Ok(predict_consensus(g, delays, cfg, g_values)?
            .omega_star
            .expect("global prediction")),
        PassMode::Simulate(opts) => {
            let traj = simulate(g, delays, cfg, g_values)?;
            let rep = detect_sync(&traj, opts);
            match rep.global_value() {
                Some(v) => Ok(v[0]),
                None => {
                    let d = traj.final_derivatives();
                    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
                    Err(Error::NotSynchronized {
                        final_error: hi - lo,
                        tolerance: rep.tolerance,
                    })
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasReport {
    /// Consensus with the true forcings.
    pub omega_y: f64,
    /// Consensus with unit forcings.
    pub omega_one: f64,
    pub ratio: f64,
    /// Sum-normalized gamma estimates (gamma protocol only).
    pub gamma_tilde: Option<Vec<f64>>,
    /// Compensated weights used in the final passes (gamma protocol only).
    pub compensated_c: Option<Vec<f64>>,
    pub passes: usize,
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if !(den.abs() > CONSENSUS_FLOOR) {
        return Err(Error::VanishingConsensus(den));
    }
    Ok(num / den)
}

/// Runs the network with the true forcings and with `g = 1` and returns the
/// ratio, in which delays and channel gains cancel.
pub fn two_step_unbias(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
    mode: &PassMode,
) -> Result<UnbiasReport> {
    let ones = vec![1.0; g.n()];
    let (y, one) = rayon::join(
        || consensus_pass(g, delays, cfg, g_values, mode),
        || consensus_pass(g, delays, cfg, &ones, mode),
    );
    let (omega_y, omega_one) = (y?, one?);
    Ok(UnbiasReport {
        omega_y,
        omega_one,
        ratio: ratio(omega_y, omega_one)?,
        gamma_tilde: None,
        compensated_c: None,
        passes: 2,
    })
}

/// Which nodes receive an indicator pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    #[default]
    RootComponent,
    AllNodes,
}

/// Estimates `gamma_i / sum gamma` from indicator passes run with `c = 1`,
/// rescales `c_i <- c_i / gamma_tilde_i`, then runs the two-step ratio so
/// the result is the plain weighted average `sum c_i g_i / sum c_i` over
/// the root component.
pub fn gamma_estimation_protocol(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
    mode: &PassMode,
    probe: Probe,
) -> Result<UnbiasReport> {
    check_inputs(g, delays, cfg, g_values)?;
    let n = g.n();
    let scc = g.scc_decompose();
    let nodes: Vec<usize> = match probe {
        Probe::AllNodes => (0..n).collect(),
        Probe::RootComponent => scc
            .unique_root()
            .ok_or(Error::NoSingleRoot {
                roots: scc.root_components.len(),
            })?
            .to_vec(),
    };
    let unit = cfg.clone().with_c(vec![1.0; n]);
    let omega_unit = consensus_pass(g, delays, &unit, &vec![1.0; n], mode)?;
    let indicator: Vec<f64> = nodes
        .par_iter()
        .map(|&i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            consensus_pass(g, delays, &unit, &e, mode)
        })
        .collect::<Result<_>>()?;
    let mut gamma_tilde = vec![0.0; n];
    for (&i, w) in nodes.iter().zip(&indicator) {
        let est = ratio(*w, omega_unit)?;
        gamma_tilde[i] = if est > GAMMA_TILDE_FLOOR { est } else { 0.0 };
    }
    let compensated: Vec<f64> = cfg
        .c_weights
        .iter()
        .zip(&gamma_tilde)
        .map(|(&c, &gt)| if gt > 0.0 { c / gt } else { c })
        .collect();
    let final_cfg = cfg.clone().with_c(compensated.clone());
    let two = two_step_unbias(g, delays, &final_cfg, g_values, mode)?;
    Ok(UnbiasReport {
        gamma_tilde: Some(gamma_tilde),
        compensated_c: Some(compensated),
        passes: 1 + nodes.len() + two.passes,
        ..two
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> SensorDigraph {
        SensorDigraph::from_edges(3, &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn balanced_zero_delay_is_plain_average() {
        let g = cycle3();
        let cfg = SimConfig::new(3, 1e-3, 1.0, 1);
        let p = predict_consensus(&g, &DelayMatrix::zeros(3), &cfg, &[1.0, 2.0, 3.0]).unwrap();
        assert!((p.omega_star.unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn delayed_cycle_value() {
        let g = cycle3();
        let cfg = SimConfig::new(3, 1e-3, 30.0, 1);
        let d = DelayMatrix::uniform(3, 0.05).unwrap();
        let gv = [1.0, 2.0, 4.5];
        let p = predict_consensus(&g, &d, &cfg, &gv).unwrap();
        assert!((p.omega_star.unwrap() - 7.5 / 7.5).abs() < 1e-14);
        let c = &p.clusters[0];
        assert!((c.delay_term - 30.0 * 0.05).abs() < 1e-14);
    }

    #[test]
    fn chain_root_dictates_the_value() {
        let g = SensorDigraph::from_edges(3, &[(1, 0, 0.3), (2, 1, 4.0)]).unwrap();
        let cfg = SimConfig::new(3, 1e-3, 7.0, 1).with_c(vec![2.0, 0.1, 5.0]);
        let d = DelayMatrix::uniform(3, 0.2).unwrap();
        let p = predict_consensus(&g, &d, &cfg, &[1.25, -9.0, 100.0]).unwrap();
        assert_eq!(p.omega_star, Some(1.25));
        assert_eq!(p.unpredicted, vec![1, 2]);
    }

    #[test]
    fn forest_needs_the_cluster_variant() {
        let g = SensorDigraph::from_edges(3, &[(2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let cfg = SimConfig::new(3, 1e-3, 1.0, 1);
        let d = DelayMatrix::zeros(3);
        assert!(matches!(
            predict_consensus(&g, &d, &cfg, &[1.0, 2.0, 3.0]),
            Err(Error::NotQuasiStronglyConnected { .. })
        ));
        let p = predict_clusters(&g, &d, &cfg, &[1.0, 2.0, 3.0]).unwrap();
        assert!(!p.global);
        let vals: Vec<f64> = p.clusters.iter().map(|c| c.omega_star).collect();
        assert_eq!(vals, vec![1.0, 2.0]);
        assert_eq!(p.unpredicted, vec![2]);
    }

    #[test]
    fn vector_reduces_to_scalar() {
        let g = SensorDigraph::from_edges(3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, 1.0), (0, 2, 1.0)]).unwrap();
        let d = DelayMatrix::uniform(3, 0.03).unwrap();
        let c = vec![0.5, 2.0, 1.5];
        let gv = [0.3, -1.0, 2.0];
        let cfg = SimConfig::new(3, 1e-3, 4.0, 1).with_c(c.clone());
        let s = predict_consensus(&g, &d, &cfg, &gv).unwrap().omega_star.unwrap();
        let q: Vec<_> = c.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect();
        let gvec: Vec<_> = gv.iter().map(|&x| DVector::from_element(1, x)).collect();
        let v = predict_consensus_vector(&g, &d, 4.0, &q, &gvec).unwrap();
        assert!((v.omega_star[0] - s).abs() < 1e-14);
    }

    #[test]
    fn intercepts_vanish_for_matched_forcing() {
        let single = SensorDigraph::empty(1);
        let cfg = SimConfig::new(1, 1e-3, 1.0, 1);
        assert_eq!(
            predict_intercepts(&single, &DelayMatrix::zeros(1), &cfg, &[3.0]).unwrap(),
            vec![0.0]
        );
        let g = cycle3();
        let cfg = SimConfig::new(3, 1e-3, 1.0, 1);
        let x0 = predict_intercepts(&g, &DelayMatrix::zeros(3), &cfg, &[2.0; 3]).unwrap();
        assert!(x0.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn two_step_on_cycle_recovers_mean() {
        let g = cycle3();
        let cfg = SimConfig::new(3, 1e-3, 30.0, 1);
        let d = DelayMatrix::uniform(3, 0.05).unwrap();
        let r = two_step_unbias(&g, &d, &cfg, &[1.0, 2.0, 4.5], &PassMode::Predict).unwrap();
        assert!((r.omega_y - 1.0).abs() < 1e-14);
        assert!((r.ratio - 2.5).abs() < 1e-14);
    }

    #[test]
    fn gamma_protocol_flags_non_root_nodes() {
        let g = SensorDigraph::from_edges(3, &[(0, 1, 1.0), (1, 0, 2.0), (2, 1, 1.0)]).unwrap();
        let cfg = SimConfig::new(3, 1e-3, 2.0, 1).with_c(vec![1.0, 3.0, 2.0]);
        let d = DelayMatrix::uniform(3, 0.1).unwrap();
        let rep =
            gamma_estimation_protocol(&g, &d, &cfg, &[1.0, 2.0, 9.0], &PassMode::Predict, Probe::AllNodes).unwrap();
        let gt = rep.gamma_tilde.unwrap();
        assert_eq!(gt[2], 0.0);
        assert!((gt[0] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(rep.compensated_c.unwrap()[2], 2.0);
        assert!((rep.ratio - (1.0 + 6.0) / 4.0).abs() < 1e-13);
    }
}
