//! Serializable report types. Field order is fixed so identical inputs give
//! identical bytes.

use serde::Serialize;

use selfsync::montecarlo::{MonteCarloConfig, MonteCarloSummary};
use selfsync::protocols::ConsensusPrediction;
use selfsync::scenario::Scenario;
use selfsync::spectral::GammaVector;
use selfsync::{ConnectivityClass, RateEstimate, SyncReport, UnbiasReport};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Digest {
    pub name: String,
    pub seed: u64,
    pub n: usize,
    pub edges: usize,
    pub class: ConnectivityClass,
    pub tau_max: f64,
    pub k_gain: f64,
    pub t_step: f64,
    pub horizon: usize,
}

impl Digest {
    pub fn of(s: &Scenario, class: ConnectivityClass, edges: usize, tau_max: f64) -> Self {
        Self {
            name: s.name.clone(),
            seed: s.sim.rng_seed,
            n: s.g_values.len(),
            edges,
            class,
            tau_max,
            k_gain: s.sim.k_gain,
            t_step: s.sim.t_step,
            horizon: s.sim.horizon,
        }
    }
}

/// Predicted versus measured value for one root component.
#[derive(Debug, Serialize)]
pub struct Comparison {
    pub nodes: Vec<usize>,
    pub predicted: f64,
    pub measured: Option<f64>,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
pub struct Rates {
    /// Slowest nonzero Laplacian mode of the delay-free network.
    pub no_delay: Option<RateEstimate>,
    /// Lower bound from the symmetrized Laplacian (strongly connected only).
    pub kappa_bound: Option<RateEstimate>,
    /// Fitted decay of the simulated trajectory.
    pub empirical: Option<RateEstimate>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub mode: String,
    pub scenario: Digest,
    /// Network-wide synchronization (measured when simulated, else predicted).
    pub global: bool,
    pub prediction: Option<ConsensusPrediction>,
    pub measured: Option<SyncReport>,
    pub comparisons: Vec<Comparison>,
    pub rates: Rates,
    pub unbias: Option<UnbiasReport>,
    /// Trace files, relative to the report.
    pub traces: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct InspectReport {
    pub schema: u32,
    pub scenario: Digest,
    pub components: Vec<Vec<usize>>,
    pub roots: Vec<Vec<usize>>,
    pub gamma: Vec<GammaVector>,
    pub rates: Rates,
    pub prediction: ConsensusPrediction,
}

#[derive(Debug, Serialize)]
pub struct MonteCarloFile {
    pub schema: u32,
    pub config: MonteCarloConfig,
    pub coupling_noise_std: f64,
    pub summary: MonteCarloSummary,
    pub curves: String,
}
