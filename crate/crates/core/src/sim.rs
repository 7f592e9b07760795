//! Forward-Euler integration of the delayed coupled integrators and
//! synchronization detection.
//!
//! Each node evolves as
//! `x_i' = g_i + G_i * sum_j a_ij (x_j(t - tau_ij) - x_i(t))`
//! with `G_i = K / c_i` in the scalar case and `G_i = K Q_i^{-1}` in the
//! vector case. Both cases run through one engine; the scalar entry point
//! builds `Q_i = [c_i]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::digraph::SensorDigraph;
use crate::error::{Error, Result};
use crate::netgen::DelayMatrix;

/// Initial functions `phi_i` on `[-tau, 0]`. Vectors are indexed
/// `node * dim + coordinate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    #[default]
    Zero,
    Constant {
        values: Vec<f64>,
    },
    /// `phi_i(t) = a_i + b_i t`.
    Linear {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Piecewise-linear table on increasing `times`, clamped at the ends.
    Sampled {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl InitialCondition {
    fn check(&self, coords: usize) -> Result<()> {
        let bad = |what: &str, len: usize| {
            Err(Error::Dimension(format!(
                "initial condition {what} has {len} entries, expected {coords}"
            )))
        };
        match self {
            Self::Zero => Ok(()),
            Self::Constant { values } if values.len() != coords => bad("values", values.len()),
            Self::Linear { a, .. } if a.len() != coords => bad("intercepts", a.len()),
            Self::Linear { b, .. } if b.len() != coords => bad("slopes", b.len()),
            Self::Sampled { times, values } => {
                if times.is_empty() || times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidParameter(
                        "sampled initial condition needs strictly increasing times".into(),
                    ));
                }
                if values.len() != coords {
                    return bad("tables", values.len());
                }
                if values.iter().any(|v| v.len() != times.len()) {
                    return Err(Error::Dimension("sampled table length differs from times".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `phi` for coordinate `idx` at time `t <= 0`.
    pub fn eval(&self, idx: usize, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { values } => values[idx],
            Self::Linear { a, b } => a[idx] + b[idx] * t,
            Self::Sampled { times, values } => {
                let v = &values[idx];
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    v[0]
                } else if k == times.len() {
                    v[k - 1]
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    v[k - 1] + (v[k] - v[k - 1]) * (t - t0) / (t1 - t0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_step: f64,
    pub k_gain: f64,
    pub c_weights: Vec<f64>,
    /// Number of recorded samples.
    pub horizon: usize,
    #[serde(default)]
    pub init: InitialCondition,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, t_step: f64, k_gain: f64, horizon: usize) -> Self {
        Self {
            t_step,
            k_gain,
            c_weights: vec![1.0; n],
            horizon,
            init: InitialCondition::Zero,
            noise_std: 0.0,
            rng_seed: 0,
        }
    }

    pub fn with_c(mut self, c: Vec<f64>) -> Self {
        self.c_weights = c;
        self
    }

    pub fn with_init(mut self, init: InitialCondition) -> Self {
        self.init = init;
        self
    }

    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Self {
        self.noise_std = noise_std;
        self.rng_seed = seed;
        self
    }

    /// Per-node gains `K / c_i`.
    pub fn gains(&self) -> Vec<f64> {
        self.c_weights.iter().map(|c| self.k_gain / c).collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.t_step > 0.0) || !self.t_step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {}",
                self.t_step
            )));
        }
        if !(self.k_gain > 0.0) || !self.k_gain.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gain K must be positive, got {}",
                self.k_gain
            )));
        }
        if self.c_weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights c_i for {n} nodes",
                self.c_weights.len()
            )));
        }
        if let Some(c) = self.c_weights.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weights c_i must be positive, got {c}"
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Sampled states and (observed) derivatives, row-major by step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    dim: usize,
    t_step: f64,
    states: Vec<f64>,
    derivatives: Vec<f64>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / (self.n * self.dim).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_step(&self) -> f64 {
        self.t_step
    }

    #[inline]
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.t_step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    #[inline]
    fn width(&self) -> usize {
        self.n * self.dim
    }

    pub fn state_row(&self, step: usize) -> &[f64] {
        let w = self.width();
        &self.states[step * w..(step + 1) * w]
    }

    pub fn derivative_row(&self, step: usize) -> &[f64] {
        let w = self.width();
        &self.derivatives[step * w..(step + 1) * w]
    }

    /// Scalar state of node `i` (first coordinate for vector runs).
    pub fn state(&self, step: usize, i: usize) -> f64 {
        self.state_row(step)[i * self.dim]
    }

    pub fn derivative(&self, step: usize, i: usize) -> f64 {
        self.derivative_row(step)[i * self.dim]
    }

    /// The last recorded derivatives.
    pub fn final_derivatives(&self) -> &[f64] {
        self.derivative_row(self.len() - 1)
    }

    /// Builds a trajectory from raw rows, mainly for tests and tooling.
    pub fn from_rows(n: usize, dim: usize, t_step: f64, states: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        if n == 0 || dim == 0 || states.len() != derivatives.len() || !states.len().is_multiple_of(n * dim) {
            return Err(Error::Dimension("trajectory rows".into()));
        }
        Ok(Self {
            n,
            dim,
            t_step,
            states,
            derivatives,
        })
    }

    /// CSV with header `t,x_1..x_n,dx_1..dx_n`, keeping every `every`-th
    /// sample and always the last one. Vector runs export `x_i_l` columns.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, every: usize) -> std::io::Result<()> {
        let every = every.max(1);
        let names: Vec<String> = (0..self.n)
            .flat_map(|i| {
                (0..self.dim).map(move |l| {
                    if self.dim == 1 {
                        format!("{}", i + 1)
                    } else {
                        format!("{}_{}", i + 1, l + 1)
                    }
                })
            })
            .collect();
        let mut header = String::from("t");
        for nm in &names {
            header.push_str(&format!(",x_{nm}"));
        }
        for nm in &names {
            header.push_str(&format!(",dx_{nm}"));
        }
        writeln!(out, "{header}")?;
        let last = self.len().saturating_sub(1);
        for k in (0..self.len()).filter(|k| k % every == 0 || *k == last) {
            let mut line = format!("{}", self.time(k));
            for v in self.state_row(k).iter().chain(self.derivative_row(k)) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

struct Link {
    src: usize,
    weight: f64,
    lag: usize,
}

struct Engine {
    n: usize,
    dim: usize,
    links: Vec<Vec<Link>>,
    gains: Vec<DMatrix<f64>>,
    forcing: Vec<f64>,
    buf_len: Vec<usize>,
}

/// Explicit Euler is refused when `T_s * ||G_i|| * in_degree(i) >= 2`.
fn check_step(g: &SensorDigraph, t_step: f64, gain_norm: &[f64]) -> Result<()> {
    for i in 0..g.n() {
        let factor = t_step * gain_norm[i] * g.in_degree(i);
        if factor >= 2.0 {
            return Err(Error::UnstableStep { node: i, factor });
        }
    }
    Ok(())
}

impl Engine {
    fn new(
        g: &SensorDigraph,
        delays: &DelayMatrix,
        cfg: &SimConfig,
        gains: Vec<DMatrix<f64>>,
        forcing: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let n = g.n();
        if delays.n() != n {
            return Err(Error::Dimension(format!(
                "delay matrix is {0}x{0}, digraph has {n} nodes",
                delays.n()
            )));
        }
        let lags = delays.lags(cfg.t_step);
        let mut buf_len = vec![1usize; n];
        let links: Vec<Vec<Link>> = (0..n)
            .map(|i| {
                g.neighbors(i)
                    .iter()
                    .map(|&j| {
                        let lag = lags[(i, j)];
                        buf_len[j] = buf_len[j].max(lag + 1);
                        Link {
                            src: j,
                            weight: g.weight(i, j),
                            lag,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            dim,
            links,
            gains,
            forcing,
            buf_len,
        })
    }

    fn run(&self, cfg: &SimConfig) -> Result<Trajectory> {
        let (n, dim) = (self.n, self.dim);
        let width = n * dim;
        cfg.init.check(width)?;
        let ts = cfg.t_step;

        // ring buffers: node j, slot s, coordinate l at offset[j] + s*dim + l
        let mut offset = Vec::with_capacity(n);
        let mut total = 0;
        for &len in &self.buf_len {
            offset.push(total);
            total += len * dim;
        }
        let mut ring = vec![0.0; total];
        for j in 0..n {
            let len = self.buf_len[j] as i64;
            for back in 0..len {
                let slot = (-back).rem_euclid(len) as usize;
                for l in 0..dim {
                    ring[offset[j] + slot * dim + l] = cfg.init.eval(j * dim + l, -(back as f64) * ts);
                }
            }
        }

        let steps = cfg.horizon;
        let mut states = Vec::with_capacity(steps * width);
        let mut derivs = Vec::with_capacity(steps * width);
        let mut x: Vec<f64> = (0..width).map(|c| cfg.init.eval(c, 0.0)).collect();
        let mut f = vec![0.0; width];
        let mut acc = vec![0.0; dim];
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

        for k in 0..steps {
            for i in 0..n {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for link in &self.links[i] {
                    let len = self.buf_len[link.src];
                    let slot = (k as i64 - link.lag as i64).rem_euclid(len as i64) as usize;
                    let base = offset[link.src] + slot * dim;
                    for l in 0..dim {
                        acc[l] += link.weight * (ring[base + l] - x[i * dim + l]);
                    }
                }
                let gi = &self.gains[i];
                for r in 0..dim {
                    let mut s = 0.0;
                    for l in 0..dim {
                        s += gi[(r, l)] * acc[l];
                    }
                    f[i * dim + r] = self.forcing[i * dim + r] + s;
                }
            }
            if cfg.noise_std > 0.0 {
                for v in f.iter_mut() {
                    let z: f64 = noise_rng.sample(StandardNormal);
                    *v += cfg.noise_std * z;
                }
            }
            states.extend_from_slice(&x);
            derivs.extend_from_slice(&f);

            for i in 0..n {
                let slot = (k + 1) % self.buf_len[i];
                for l in 0..dim {
                    let c = i * dim + l;
                    x[c] += ts * f[c];
                    if !x[c].is_finite() {
                        return Err(Error::NonFiniteState { step: k + 1, node: i });
                    }
                    ring[offset[i] + slot * dim + l] = x[c];
                }
            }
        }
        Ok(Trajectory {
            n,
            dim,
            t_step: ts,
            states,
            derivatives: derivs,
        })
    }
}

/// Scalar run. Coupling noise of std `cfg.noise_std` is added to each
/// node's derivative every step; the state integrates the noisy derivative.
pub fn simulate(g: &SensorDigraph, delays: &DelayMatrix, cfg: &SimConfig, g_values: &[f64]) -> Result<Trajectory> {
    let n = g.n();
    cfg.validate(n)?;
    if g_values.len() != n {
        return Err(Error::Dimension(format!(
            "{} forcing terms for {n} nodes",
            g_values.len()
        )));
    }
    let q: Vec<DMatrix<f64>> = cfg.c_weights.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect();
    let gains = gain_matrices(cfg.k_gain, &q)?;
    let norms: Vec<f64> = gains.iter().map(|m| m[(0, 0)]).collect();
    check_step(g, cfg.t_step, &norms)?;
    Engine::new(g, delays, cfg, gains, g_values.to_vec(), 1)?.run(cfg)
}

/// Same as [`simulate`] with the noise level overridden.
pub fn simulate_noisy(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    g_values: &[f64],
    noise_std: f64,
) -> Result<Trajectory> {
    let mut cfg = cfg.clone();
    cfg.noise_std = noise_std;
    simulate(g, delays, &cfg, g_values)
}

/// `K * Q_i^{-1}` via Cholesky; fails on a matrix that is not SPD.
fn gain_matrices(k: f64, q: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            if qi.nrows() != qi.ncols() || (qi - qi.transpose()).amax() > 1e-12 * qi.amax().max(1.0) {
                return Err(Error::NotPositiveDefinite { node: i });
            }
            let inv = qi
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { node: i })?
                .inverse();
            Ok(inv * k)
        })
        .collect()
}

/// Vector run with per-node SPD weight matrices `Q_i` (the `c_weights` of
/// `cfg` are ignored).
pub fn simulate_vector(
    g: &SensorDigraph,
    delays: &DelayMatrix,
    cfg: &SimConfig,
    q_mats: &[DMatrix<f64>],
    g_vecs: &[DVector<f64>],
) -> Result<Trajectory> {
    let n = g.n();
    if q_mats.len() != n || g_vecs.len() != n {
        return Err(Error::Dimension(format!(
            "{} weight matrices and {} forcing vectors for {n} nodes",
            q_mats.len(),
            g_vecs.len()
        )));
    }
    let dim = g_vecs.first().map_or(1, |v| v.len());
    if dim == 0 || g_vecs.iter().any(|v| v.len() != dim) || q_mats.iter().any(|q| q.shape() != (dim, dim)) {
        return Err(Error::Dimension("inconsistent vector dimension across nodes".into()));
    }
    let mut base = cfg.clone();
    base.c_weights = vec![1.0; n];
    base.validate(n)?;
    let gains = gain_matrices(cfg.k_gain, q_mats)?;
    let norms: Vec<f64> = gains.iter().map(|m| m.clone().symmetric_eigenvalues().amax()).collect();
    check_step(g, cfg.t_step, &norms)?;
    let forcing: Vec<f64> = g_vecs.iter().flat_map(|v| v.iter().copied()).collect();
    Engine::new(g, delays, cfg, gains, forcing, dim)?.run(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SyncTolerance {
    /// Multiple of the largest window-mean magnitude.
    Relative(f64),
    Absolute(f64),
}

impl Default for SyncTolerance {
    fn default() -> Self {
        SyncTolerance::Relative(DEFAULT_REL_TOL)
    }
}

pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Absolute floor applied to relative tolerances when every mean is ~0.
pub const TOL_FLOOR: f64 = 1e-12;
/// Default detection window as a fraction of the horizon.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    pub tol: SyncTolerance,
    /// Samples at the end of the run; `None` means 10% of the horizon.
    pub window: Option<usize>,
    /// Groups smaller than this are reported as unclustered.
    pub min_cluster_size: usize,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            tol: SyncTolerance::default(),
            window: None,
            min_cluster_size: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub nodes: Vec<usize>,
    /// Window-mean derivative (one entry per coordinate).
    pub value: Vec<f64>,
    /// First time after which every member stays within tolerance of `value`.
    pub detection_time: f64,
}

impl Cluster {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub clusters: Vec<Cluster>,
    /// Nodes outside every cluster, stationary or not.
    pub unclustered: Vec<usize>,
    /// Nodes whose derivative still moves by more than the tolerance.
    pub non_stationary: Vec<usize>,
    pub global: bool,
    pub tolerance: f64,
    pub window: usize,
}

impl SyncReport {
    /// Every node is stationary and at least one cluster formed.
    pub fn settled(&self) -> bool {
        self.non_stationary.is_empty() && !self.clusters.is_empty()
    }

    pub fn global_value(&self) -> Option<&[f64]> {
        if self.global {
            Some(&self.clusters[0].value)
        } else {
            None
        }
    }

    pub fn cluster_of(&self, node: usize) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.nodes.contains(&node))
    }
}

/// Groups nodes whose derivatives over the final window are stationary and
/// pairwise within tolerance.
pub fn detect_sync(traj: &Trajectory, opts: &SyncOptions) -> SyncReport {
    let (n, dim, steps) = (traj.n(), traj.dim(), traj.len());
    let window = opts
        .window
        .unwrap_or(((steps as f64) * DEFAULT_WINDOW_FRACTION).ceil() as usize)
        .clamp(1, steps.max(1));
    if steps == 0 {
        return SyncReport {
            clusters: vec![],
            unclustered: (0..n).collect(),
            non_stationary: (0..n).collect(),
            global: false,
            tolerance: 0.0,
            window: 0,
        };
    }
    let first = steps - window;
    let width = n * dim;
    let mut mean = vec![0.0; width];
    for k in first..steps {
        for (m, d) in mean.iter_mut().zip(traj.derivative_row(k)) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= window as f64);

    let tol = match opts.tol {
        SyncTolerance::Absolute(t) => t,
        SyncTolerance::Relative(r) => (r * mean.iter().fold(0.0_f64, |a, m| a.max(m.abs()))).max(TOL_FLOOR),
    };

    let dev = |i: usize, target: &[f64], from: usize| -> f64 {
        (from..steps)
            .flat_map(|k| {
                let row = &traj.derivative_row(k)[i * dim..(i + 1) * dim];
                row.iter().zip(target).map(|(d, m)| (d - m).abs())
            })
            .fold(0.0, f64::max)
    };

    let node_mean = |i: usize| &mean[i * dim..(i + 1) * dim];
    let mut stationary: Vec<usize> = (0..n).filter(|&i| dev(i, node_mean(i), first) <= tol).collect();
    stationary.sort_by(|&a, &b| node_mean(a)[0].total_cmp(&node_mean(b)[0]).then(a.cmp(&b)));

    let dist = |a: usize, b: usize| -> f64 {
        node_mean(a)
            .iter()
            .zip(node_mean(b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &stationary {
        match groups.iter_mut().find(|grp| grp.iter().all(|&j| dist(i, j) <= tol)) {
            Some(grp) => grp.push(i),
            None => groups.push(vec![i]),
        }
    }

    let mut clusters = Vec::new();
    let non_stationary: Vec<usize> = (0..n).filter(|i| !stationary.contains(i)).collect();
    let mut unclustered = non_stationary.clone();
    for mut grp in groups {
        if grp.len() < opts.min_cluster_size && grp.len() < n {
            unclustered.extend(grp);
            continue;
        }
        grp.sort_unstable();
        let mut value = vec![0.0; dim];
        for &i in &grp {
            for (v, m) in value.iter_mut().zip(node_mean(i)) {
                *v += m;
            }
        }
        value.iter_mut().for_each(|v| *v /= grp.len() as f64);
        // walk back from the end while every member stays within tol
        let mut settle = steps;
        while settle > 0 {
            let row = traj.derivative_row(settle - 1);
            let ok = grp.iter().all(|&i| {
                row[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(&value)
                    .all(|(d, v)| (d - v).abs() <= tol)
            });
            if !ok {
                break;
            }
            settle -= 1;
        }
        clusters.push(Cluster {
            nodes: grp,
            value,
            detection_time: traj.time(settle.min(steps - 1)),
        });
    }
    clusters.sort_by(|a, b| a.nodes[0].cmp(&b.nodes[0]));
    unclustered.sort_unstable();
    let global = clusters.len() == 1 && clusters[0].nodes.len() == n;
    SyncReport {
        clusters,
        unclustered,
        non_stationary,
        global,
        tolerance: tol,
        window,
    }
}
