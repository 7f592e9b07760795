//! Scenario generation: node placement, channel coefficients, link delays.
//!
//! All randomness goes through ChaCha8 streams derived from a user seed.
//! Channel draws use one stream per ordered link `(i, j)`, so pruning or
//! reordering links never shifts the draws of the others.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::digraph::SensorDigraph;
use crate::error::{Error, Result};

/// Positions and physical link parameters of a sensor field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGeometry {
    pub positions: Vec<[f64; 2]>,
    /// Euclidean distances, symmetric with zero diagonal.
    pub distances: DMatrix<f64>,
    /// Transmit powers `P_j > 0`.
    pub powers: Vec<f64>,
    pub path_loss_exponent: f64,
    /// Propagation speed (length per unit time).
    pub speed: f64,
    /// Time offsets `T_ij >= 0`.
    pub offsets: DMatrix<f64>,
}

impl NodeGeometry {
    /// Builds a geometry from explicit positions with unit powers, `eta = 2`,
    /// unit speed and zero offsets.
    pub fn from_positions(positions: Vec<[f64; 2]>) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::InvalidParameter("geometry needs at least one node".into()));
        }
        let distances = DMatrix::from_fn(n, n, |i, j| {
            let (p, q) = (positions[i], positions[j]);
            (p[0] - q[0]).hypot(p[1] - q[1])
        });
        Ok(Self {
            positions,
            distances,
            powers: vec![1.0; n],
            path_loss_exponent: 2.0,
            speed: 1.0,
            offsets: DMatrix::zeros(n, n),
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn with_powers(mut self, powers: Vec<f64>) -> Result<Self> {
        if powers.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} powers for {} nodes",
                powers.len(),
                self.n()
            )));
        }
        if let Some(p) = powers.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "transmit power must be positive, got {p}"
            )));
        }
        self.powers = powers;
        Ok(self)
    }

    pub fn with_speed(mut self, speed: f64) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::InvalidParameter(format!("speed must be positive, got {speed}")));
        }
        self.speed = speed;
        Ok(self)
    }

    pub fn with_path_loss_exponent(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "path loss exponent must be positive, got {eta}"
            )));
        }
        self.path_loss_exponent = eta;
        Ok(self)
    }

    pub fn with_offsets(mut self, offsets: DMatrix<f64>) -> Result<Self> {
        if offsets.shape() != (self.n(), self.n()) {
            return Err(Error::Dimension("offset matrix shape".into()));
        }
        if offsets.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter("offsets must be finite and nonnegative".into()));
        }
        self.offsets = offsets;
        Ok(self)
    }

    /// Largest pairwise distance.
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    /// Rescales all positions about the origin so that the largest propagation
    /// delay `d_ij / speed` equals `tau_max`. Offsets must be zero.
    pub fn scale_to_max_delay(&mut self, tau_max: f64) -> Result<()> {
        if self.offsets.iter().any(|&t| t != 0.0) {
            return Err(Error::InvalidParameter(
                "cannot rescale to a target delay with nonzero offsets".into(),
            ));
        }
        let dmax = self.max_distance();
        if !(dmax > 0.0) || !(tau_max > 0.0) {
            return Err(Error::InvalidParameter(
                "need two distinct nodes and a positive target delay".into(),
            ));
        }
        let s = tau_max * self.speed / dmax;
        for p in &mut self.positions {
            p[0] *= s;
            p[1] *= s;
        }
        self.distances *= s;
        Ok(())
    }
}

/// Places `n` nodes i.i.d. uniformly on `[0, d_side]^2`.
pub fn place_nodes(n: usize, d_side: f64, seed: u64) -> Result<NodeGeometry> {
    if n == 0 {
        return Err(Error::InvalidParameter("node count must be at least 1".into()));
    }
    if !(d_side > 0.0) || !d_side.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "square side must be positive, got {d_side}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..n)
        .map(|_| [rng.random::<f64>() * d_side, rng.random::<f64>() * d_side])
        .collect();
    NodeGeometry::from_positions(positions)
}

/// How the distance-dependent "variance" of a Rayleigh amplitude is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayleighConvention {
    /// `E[a^2] = P_j / (1 + d^2)`, i.e. scale `sigma_R^2 = P_j / (2 (1 + d^2))`.
    #[default]
    SecondMoment,
    /// The underlying Gaussian components have variance `P_j / (1 + d^2)`.
    GaussianVariance,
}

/// Distance-attenuated mean-square amplitude `P_j / (1 + d_ij^2)`.
pub fn rayleigh_mean_square(power: f64, distance: f64) -> f64 {
    power / (1.0 + distance * distance)
}

fn link_rng(seed: u64, i: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((i as u64) << 32) | j as u64);
    rng
}

/// Draws one Rayleigh amplitude with the given Gaussian-component scale.
fn rayleigh_draw<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    scale * x.hypot(y)
}

/// Rayleigh scale parameter for link `(i, j)`.
pub fn rayleigh_scale(geom: &NodeGeometry, i: usize, j: usize, conv: RayleighConvention) -> f64 {
    let ms = rayleigh_mean_square(geom.powers[j], geom.distances[(i, j)]);
    match conv {
        RayleighConvention::SecondMoment => (ms / 2.0).sqrt(),
        RayleighConvention::GaussianVariance => ms.sqrt(),
    }
}

/// i.i.d. Rayleigh channel amplitudes on every ordered pair `i != j`.
pub fn channel_rayleigh(geom: &NodeGeometry, seed: u64) -> SensorDigraph {
    channel_rayleigh_with(geom, seed, RayleighConvention::default())
}

pub fn channel_rayleigh_with(geom: &NodeGeometry, seed: u64, conv: RayleighConvention) -> SensorDigraph {
    let n = geom.n();
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rayleigh_draw(&mut link_rng(seed, i, j), rayleigh_scale(geom, i, j, conv))
        }
    });
    SensorDigraph::new(w).expect("Rayleigh amplitudes are nonnegative")
}

/// Deterministic path-loss amplitudes `a_ij = sqrt(P_j |h_ij|^2 / d_ij^eta)`.
pub fn channel_pathloss(geom: &NodeGeometry, fading: &DMatrix<f64>) -> Result<SensorDigraph> {
    let n = geom.n();
    if fading.shape() != (n, n) {
        return Err(Error::Dimension("fading matrix shape".into()));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = geom.distances[(i, j)];
            if d == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "nodes {i} and {j} are co-located; path-loss amplitude is singular"
                )));
            }
            let h = fading[(i, j)];
            if !(h >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "fading magnitude |h[{i}][{j}]| must be nonnegative"
                )));
            }
            w[(i, j)] = (geom.powers[j] * h * h / d.powf(geom.path_loss_exponent)).sqrt();
        }
    }
    SensorDigraph::new(w)
}

/// Drops links whose amplitude is below `min_amplitude`.
pub fn threshold_prune(g: &SensorDigraph, min_amplitude: f64) -> Result<SensorDigraph> {
    if !(min_amplitude >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be nonnegative, got {min_amplitude}"
        )));
    }
    let w = g.weights().map(|a| if a < min_amplitude { 0.0 } else { a });
    SensorDigraph::new(w)
}

/// Per-link delays `tau_ij = T_ij + d_ij / c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMatrix {
    tau: DMatrix<f64>,
    tau_max: f64,
}

impl DelayMatrix {
    pub fn new(tau: DMatrix<f64>) -> Result<Self> {
        if tau.nrows() != tau.ncols() {
            return Err(Error::NotSquare {
                rows: tau.nrows(),
                cols: tau.ncols(),
            });
        }
        if tau.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter("delays must be finite and nonnegative".into()));
        }
        let n = tau.nrows();
        let mut tau_max: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    tau_max = tau_max.max(tau[(i, j)]);
                }
            }
        }
        Ok(Self { tau, tau_max })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            tau: DMatrix::zeros(n, n),
            tau_max: 0.0,
        }
    }

    /// The same delay on every ordered pair `i != j`.
    pub fn uniform(n: usize, tau: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { tau }))
    }

    pub fn n(&self) -> usize {
        self.tau.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.tau[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.tau
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.tau * factor)
    }

    /// Integer lags `m_ij = round(tau_ij / t_step)`.
    pub fn lags(&self, t_step: f64) -> DMatrix<usize> {
        self.tau.map(|t| (t / t_step).round() as usize)
    }

    /// Delays rounded to the integration grid, `m_ij * t_step`. This is the
    /// delay set a discrete-time run actually realizes.
    pub fn quantized(&self, t_step: f64) -> Self {
        let tau = self.lags(t_step).map(|m| m as f64 * t_step);
        Self::new(tau).expect("quantized delays are nonnegative")
    }

    /// `(i, j, tau_ij)` for every positive off-diagonal entry, row-major.
    pub fn to_table(&self) -> DelayTable {
        let n = self.n();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.tau[(i, j)] > 0.0 {
                    entries.push((i, j, self.tau[(i, j)]));
                }
            }
        }
        DelayTable { n, entries }
    }

    pub fn from_table(t: &DelayTable) -> Result<Self> {
        let mut m = DMatrix::zeros(t.n, t.n);
        for &(i, j, tau) in &t.entries {
            if i >= t.n || j >= t.n {
                return Err(Error::Dimension(format!("delay entry ({i}, {j}) out of range")));
            }
            m[(i, j)] = tau;
        }
        Self::new(m)
    }
}

/// Serialized delay matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTable {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn delays_from_geometry(geom: &NodeGeometry) -> DelayMatrix {
    let n = geom.n();
    let tau = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            geom.offsets[(i, j)] + geom.distances[(i, j)] / geom.speed
        }
    });
    DelayMatrix::new(tau).expect("geometry delays are nonnegative")
}

/// The three 14-node reference topologies: strongly connected, quasi-strongly
/// connected with three components, and a weakly connected two-root forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceTopology {
    StronglyConnected,
    QuasiStrong3,
    TwoRootForest,
}

impl ReferenceTopology {
    pub const ALL: [ReferenceTopology; 3] = [
        ReferenceTopology::StronglyConnected,
        ReferenceTopology::QuasiStrong3,
        ReferenceTopology::TwoRootForest,
    ];

    pub const NODES: usize = 14;

    pub fn name(self) -> &'static str {
        match self {
            Self::StronglyConnected => "sc",
            Self::QuasiStrong3 => "qsc3",
            Self::TwoRootForest => "wc2",
        }
    }

    pub fn digraph(self) -> SensorDigraph {
        let n = Self::NODES;
        let mut e: Vec<(usize, usize, f64)> = Vec::new();
        match self {
            Self::StronglyConnected => {
                for i in 0..n {
                    e.push(((i + 1) % n, i, 1.0 + 0.25 * (i % 3) as f64));
                    if i % 2 == 0 {
                        e.push(((i + 5) % n, i, 0.5));
                    }
                }
            }
            Self::QuasiStrong3 => {
                ring(&mut e, &[0, 1, 2, 3, 4], &[1.0, 1.2, 0.8, 1.5, 0.9]);
                e.push((0, 2, 0.7));
                ring(&mut e, &[5, 6, 7, 8, 9], &[1.1, 0.9, 1.3, 1.0, 0.6]);
                e.push((6, 1, 0.8));
                e.push((8, 3, 0.6));
                ring(&mut e, &[10, 11, 12, 13], &[0.7, 1.4, 1.0, 1.2]);
                e.push((10, 7, 0.9));
                e.push((12, 9, 0.5));
                e.push((13, 4, 1.1));
            }
            Self::TwoRootForest => {
                ring(&mut e, &[0, 1, 2, 3], &[1.0, 1.3, 0.7, 1.1]);
                ring(&mut e, &[10, 11, 12, 13], &[0.9, 1.2, 1.0, 0.8]);
                ring(&mut e, &[4, 5, 6, 7, 8, 9], &[1.0, 0.8, 1.2, 0.9, 1.1, 0.7]);
                for (m, r, w) in [
                    (4, 0, 0.7),
                    (5, 11, 0.9),
                    (6, 1, 0.4),
                    (7, 12, 1.1),
                    (8, 2, 0.6),
                    (9, 13, 0.8),
                ] {
                    e.push((m, r, w));
                }
            }
        }
        SensorDigraph::from_edges(n, &e).expect("reference topology is valid")
    }
}

/// `nodes[k]` feeds `nodes[k+1]` (cyclically) with weight `w[k]`.
fn ring(e: &mut Vec<(usize, usize, f64)>, nodes: &[usize], w: &[f64]) {
    for k in 0..nodes.len() {
        e.push((nodes[(k + 1) % nodes.len()], nodes[k], w[k]));
    }
}

fn draw_weight<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// Random digraph containing a spanning directed tree: nodes are visited in a
/// random order and each one hears some earlier node; each remaining ordered
/// pair is then linked with probability `extra_p`.
pub fn random_qsc<R: Rng + ?Sized>(n: usize, extra_p: f64, weights: (f64, f64), rng: &mut R) -> SensorDigraph {
    let order = shuffled(n, rng);
    let mut w = DMatrix::zeros(n, n);
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        w[(order[k], parent)] = draw_weight(rng, weights);
    }
    add_extra(&mut w, extra_p, weights, rng, |_, _| true);
    SensorDigraph::new(w).expect("valid weights")
}

/// Random strongly connected digraph: a random Hamiltonian cycle plus extras.
pub fn random_sc<R: Rng + ?Sized>(n: usize, extra_p: f64, weights: (f64, f64), rng: &mut R) -> SensorDigraph {
    let order = shuffled(n, rng);
    let mut w = DMatrix::zeros(n, n);
    if n > 1 {
        for k in 0..n {
            w[(order[(k + 1) % n], order[k])] = draw_weight(rng, weights);
        }
    }
    add_extra(&mut w, extra_p, weights, rng, |_, _| true);
    SensorDigraph::new(w).expect("valid weights")
}

/// Random weakly connected digraph with exactly `roots >= 2` root components.
///
/// Root groups are random cycles that hear nothing from outside. One
/// downstream node hears every root group, the rest hear random earlier nodes.
pub fn random_multi_root<R: Rng + ?Sized>(
    n: usize,
    roots: usize,
    extra_p: f64,
    weights: (f64, f64),
    rng: &mut R,
) -> Result<SensorDigraph> {
    if roots < 2 || n < roots + 1 {
        return Err(Error::InvalidParameter(format!(
            "need roots >= 2 and n > roots, got n = {n}, roots = {roots}"
        )));
    }
    let order = shuffled(n, rng);
    // at least one node per root group, at least one downstream node
    let root_nodes = rng.random_range(roots..=n - 1);
    let mut cuts: Vec<usize> = (1..root_nodes).collect();
    // choose roots-1 cut points among 1..root_nodes
    for k in 0..cuts.len() {
        let r = rng.random_range(k..cuts.len());
        cuts.swap(k, r);
    }
    let mut cuts: Vec<usize> = cuts.into_iter().take(roots - 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(root_nodes);
    let groups: Vec<Vec<usize>> = bounds.windows(2).map(|b| order[b[0]..b[1]].to_vec()).collect();
    let mut group_of = vec![usize::MAX; n];
    for (gi, grp) in groups.iter().enumerate() {
        for &v in grp {
            group_of[v] = gi;
        }
    }

    let mut w = DMatrix::zeros(n, n);
    for grp in &groups {
        if grp.len() > 1 {
            for k in 0..grp.len() {
                w[(grp[(k + 1) % grp.len()], grp[k])] = draw_weight(rng, weights);
            }
        }
    }
    let downstream = &order[root_nodes..];
    for grp in &groups {
        let src = grp[rng.random_range(0..grp.len())];
        w[(downstream[0], src)] = draw_weight(rng, weights);
    }
    for k in 1..downstream.len() {
        let src = order[rng.random_range(0..root_nodes + k)];
        w[(downstream[k], src)] = draw_weight(rng, weights);
    }
    // extras: never into a root group from outside it
    add_extra(&mut w, extra_p, weights, rng, |i, j| {
        group_of[i] == usize::MAX || group_of[i] == group_of[j]
    });
    SensorDigraph::new(w)
}

/// Erdos-Renyi digraph with uniform weights.
pub fn random_digraph<R: Rng + ?Sized>(n: usize, p: f64, weights: (f64, f64), rng: &mut R) -> SensorDigraph {
    let mut w = DMatrix::zeros(n, n);
    add_extra(&mut w, p, weights, rng, |_, _| true);
    SensorDigraph::new(w).expect("valid weights")
}

fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        let r = rng.random_range(0..=k);
        v.swap(k, r);
    }
    v
}

fn add_extra<R: Rng + ?Sized>(
    w: &mut DMatrix<f64>,
    p: f64,
    weights: (f64, f64),
    rng: &mut R,
    allowed: impl Fn(usize, usize) -> bool,
) {
    let n = w.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && w[(i, j)] == 0.0 && allowed(i, j) && rng.random::<f64>() < p {
                w[(i, j)] = draw_weight(rng, weights);
            }
        }
    }
}
