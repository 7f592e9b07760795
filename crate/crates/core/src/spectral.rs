//! Laplacian eigenstructure, rate bounds and the delayed characteristic function.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::digraph::{ConnectivityClass, Laplacian, SccDecomposition, SensorDigraph};
use crate::error::{Error, Result};
use crate::netgen::DelayMatrix;
use crate::sim::Trajectory;

/// Relative residual tolerance for `gamma^T L = 0`.
pub const GAMMA_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    SumOne,
    InfNormOne,
}

/// Left null vector of a Laplacian, supported on one root component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaVector {
    pub gamma: Vec<f64>,
    pub support: Vec<usize>,
    pub normalization: Normalization,
    /// `||gamma^T L||_inf` at the time of computation.
    pub residual: f64,
}

impl GammaVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn normalized(&self, norm: Normalization) -> GammaVector {
        let scale = match norm {
            Normalization::SumOne => self.gamma.iter().sum::<f64>(),
            Normalization::InfNormOne => self.gamma.iter().copied().fold(0.0, f64::max),
        };
        GammaVector {
            gamma: self.gamma.iter().map(|g| g / scale).collect(),
            support: self.support.clone(),
            normalization: norm,
            residual: self.residual / scale,
        }
    }
}

/// Multiplicity of the zero eigenvalue, read off the condensation: one per
/// root component.
pub fn zero_eigen_multiplicity(l: &Laplacian) -> usize {
    l.to_digraph().scc_decompose().root_components.len()
}

/// Left null vector of `L` restricted to the node set of one root component,
/// padded with exact zeros elsewhere.
///
/// The root block `L1` has zero row sums and no inflow from outside, so
/// `gamma_1^T L1 = 0` is solved as `L1^T gamma_1 = 0` with the last equation
/// replaced by `sum(gamma_1) = 1`.
pub fn root_block_gamma(l: &Laplacian, nodes: &[usize], norm: Normalization) -> Result<GammaVector> {
    let n = l.n();
    let r = nodes.len();
    if r == 0 || nodes.iter().any(|&v| v >= n) {
        return Err(Error::Dimension("root node set empty or out of range".into()));
    }
    let lm = l.matrix();
    let mut sys = DMatrix::from_fn(r, r, |a, b| lm[(nodes[b], nodes[a])]);
    let mut rhs = DVector::zeros(r);
    for b in 0..r {
        sys[(r - 1, b)] = 1.0;
    }
    rhs[r - 1] = 1.0;
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("root block left null space is not one-dimensional".into()))?;

    let mut gamma = vec![0.0; n];
    for (a, &v) in nodes.iter().enumerate() {
        gamma[v] = sol[a];
    }
    let residual = left_residual(lm, &gamma);
    let min_entry = sol.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = l.norm().max(1.0);
    if !(residual <= GAMMA_RESIDUAL_TOL * scale) || !(min_entry > 0.0) {
        return Err(Error::DegenerateGamma { residual, min_entry });
    }
    let mut support = nodes.to_vec();
    support.sort_unstable();
    let out = GammaVector {
        gamma,
        support,
        normalization: Normalization::SumOne,
        residual,
    };
    Ok(match norm {
        Normalization::SumOne => out,
        other => out.normalized(other),
    })
}

fn left_residual(l: &DMatrix<f64>, gamma: &[f64]) -> f64 {
    let n = l.nrows();
    (0..n)
        .map(|j| (0..n).map(|i| gamma[i] * l[(i, j)]).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Global `gamma` for a digraph with exactly one root component.
pub fn gamma_left_eigenvector(l: &Laplacian, scc: &SccDecomposition, norm: Normalization) -> Result<GammaVector> {
    match scc.unique_root() {
        Some(nodes) => root_block_gamma(l, nodes, norm),
        None => Err(Error::NoSingleRoot {
            roots: scc.root_components.len(),
        }),
    }
}

/// One `gamma` per root component, in component order.
pub fn cluster_gammas(l: &Laplacian, scc: &SccDecomposition, norm: Normalization) -> Result<Vec<GammaVector>> {
    scc.root_node_sets()
        .into_iter()
        .map(|nodes| root_block_gamma(l, nodes, norm))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    NoDelaySpectrum,
    KappaBound,
    EmpiricalFit,
}

/// Exponential convergence rate (`value < 0` means decay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub value: f64,
    pub method: RateMethod,
    /// RMS residual of the log-linear fit (empirical method only).
    pub residual: Option<f64>,
    /// Set when the input carried no transient to fit.
    pub degenerate: bool,
}

impl RateEstimate {
    fn exact(value: f64, method: RateMethod) -> Self {
        Self {
            value,
            method,
            residual: None,
            degenerate: false,
        }
    }
}

/// Eigenvalues of `L`, sorted by modulus.
pub fn laplacian_spectrum(l: &Laplacian) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = l.matrix().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    ev
}

/// `r = -min Re(lambda)` over the nonzero eigenvalues of `L`.
///
/// Pass `L.row_scaled(K/c)` to get the rate of the coupled system rather
/// than of the bare graph.
pub fn rate_no_delay(l: &Laplacian) -> Result<RateEstimate> {
    let class = l.to_digraph().connectivity();
    if !class.has_spanning_tree() {
        return Err(Error::NotQuasiStronglyConnected {
            class: class.to_string(),
        });
    }
    if l.n() < 2 {
        return Err(Error::InvalidParameter("rate undefined for a single node".into()));
    }
    // QSC: exactly one zero eigenvalue, the smallest in modulus
    let ev = laplacian_spectrum(l);
    let min_re = ev[1..].iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    Ok(RateEstimate::exact(-min_re, RateMethod::NoDelaySpectrum))
}

/// `kappa = -lambda_2( (D_g L + L^T D_g) / 2 )` with `||gamma||_inf = 1`.
pub fn rate_kappa_bound(l: &Laplacian, gamma: &GammaVector) -> Result<RateEstimate> {
    let class = l.to_digraph().connectivity();
    if class != ConnectivityClass::StronglyConnected {
        return Err(Error::NotStronglyConnected {
            class: class.to_string(),
        });
    }
    let n = l.n();
    if gamma.gamma.len() != n {
        return Err(Error::Dimension("gamma length".into()));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("rate undefined for a single node".into()));
    }
    let g = gamma.normalized(Normalization::InfNormOne);
    let dg = DMatrix::from_diagonal(&DVector::from_column_slice(&g.gamma));
    let lm = l.matrix();
    let sym = (&dg * lm + lm.transpose() * &dg) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(RateEstimate::exact(-eig[1], RateMethod::KappaBound))
}

fn check_gains(g: &SensorDigraph, delays: &DelayMatrix, k: &[f64]) -> Result<()> {
    let n = g.n();
    if delays.n() != n || k.len() != n {
        return Err(Error::Dimension(format!(
            "digraph has {n} nodes, delays {}, gains {}",
            delays.n(),
            k.len()
        )));
    }
    if let Some(bad) = k.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::InvalidParameter(format!("gain k_i must be positive, got {bad}")));
    }
    Ok(())
}

/// `sI + Delta - H(s)`.
pub fn characteristic_matrix(
    s: Complex64,
    g: &SensorDigraph,
    delays: &DelayMatrix,
    k: &[f64],
) -> Result<DMatrix<Complex64>> {
    check_gains(g, delays, k)?;
    let n = g.n();
    let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        m[(i, i)] = s + k[i] * g.in_degree(i);
        for &j in g.neighbors(i) {
            m[(i, j)] = -(k[i] * g.weight(i, j)) * (-s * delays.get(i, j)).exp();
        }
    }
    Ok(m)
}

/// `p(s) = det(sI + Delta - H(s))`, `Delta = diag(k_i d_i)`,
/// `H_ij(s) = k_i a_ij exp(-s tau_ij)`.
pub fn characteristic_function(s: Complex64, g: &SensorDigraph, delays: &DelayMatrix, k: &[f64]) -> Result<Complex64> {
    Ok(characteristic_matrix(s, g, delays, k)?.determinant())
}

/// `||(j w I + Delta)^{-1} H(j w)||_inf`. Rows of nodes with no inflow are zero.
pub fn row_sum_bound(omega: f64, g: &SensorDigraph, delays: &DelayMatrix, k: &[f64]) -> Result<f64> {
    check_gains(g, delays, k)?;
    let s = Complex64::new(0.0, omega);
    let mut best: f64 = 0.0;
    for i in 0..g.n() {
        if g.neighbors(i).is_empty() {
            continue;
        }
        let diag = s + k[i] * g.in_degree(i);
        let row: f64 = g
            .neighbors(i)
            .iter()
            .map(|&j| ((k[i] * g.weight(i, j)) * (-s * delays.get(i, j)).exp() / diag).norm())
            .sum();
        best = best.max(row);
    }
    Ok(best)
}

/// Relative error floor at which the fit stops (round-off takes over).
pub const FIT_FLOOR: f64 = 1e-10;
/// Fraction of the decades between the error peak and the floor that is fitted.
pub const FIT_TAIL: f64 = 1.0 / 3.0;

/// Least-squares slope of `ln ||x'(t) - omega*||_inf` after the transient.
///
/// The fit covers the last `FIT_TAIL` of the decades between the error peak
/// and `FIT_FLOOR` times the error scale, where the slowest mode dominates,
/// and uses the upper hull of the log error as the envelope. `tol` is the
/// synchronization tolerance on the final error.
pub fn empirical_rate(traj: &Trajectory, omega_star: &[f64], tol: f64) -> Result<RateEstimate> {
    if omega_star.len() != traj.n() * traj.dim() {
        return Err(Error::Dimension(format!(
            "omega* has {} entries, trajectory has {} node coordinates",
            omega_star.len(),
            traj.n() * traj.dim()
        )));
    }
    let steps = traj.len();
    if steps == 0 {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let err: Vec<f64> = (0..steps)
        .map(|k| {
            traj.derivative_row(k)
                .iter()
                .zip(omega_star)
                .map(|(d, w)| (d - w).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let final_error = err[steps - 1];
    if !(final_error <= tol) {
        return Err(Error::NotSynchronized {
            final_error,
            tolerance: tol,
        });
    }
    let peak = err.iter().copied().fold(0.0, f64::max);
    let scale = omega_star
        .iter()
        .fold(peak, |m, w| m.max(w.abs()))
        .max(f64::MIN_POSITIVE);
    let floor = FIT_FLOOR * scale;
    if peak <= floor {
        return Ok(RateEstimate {
            value: 0.0,
            method: RateMethod::EmpiricalFit,
            residual: Some(0.0),
            degenerate: true,
        });
    }
    let level = floor * (peak / floor).powf(FIT_TAIL);
    let start = err.iter().position(|&e| e <= level).unwrap_or(0);
    let stop = err[start..]
        .iter()
        .position(|&e| e <= floor)
        .map_or(steps, |p| start + p);
    if stop < start + 2 {
        return Ok(RateEstimate {
            value: 0.0,
            method: RateMethod::EmpiricalFit,
            residual: Some(0.0),
            degenerate: true,
        });
    }
    let (t, y): (Vec<f64>, Vec<f64>) = (start..stop).map(|k| (traj.time(k), err[k].ln())).unzip();
    // oscillating modes dip far below their envelope; fit the upper hull
    let hull = upper_hull(&t, &y);
    let (ht, hy): (Vec<f64>, Vec<f64>) = hull.iter().map(|&k| (t[k], y[k])).unzip();
    let (slope, intercept) = least_squares_line(&ht, &hy);
    let rms = (t
        .iter()
        .zip(&y)
        .map(|(ti, yi)| (yi - slope * ti - intercept).powi(2))
        .sum::<f64>()
        / t.len() as f64)
        .sqrt();
    Ok(RateEstimate {
        value: slope,
        method: RateMethod::EmpiricalFit,
        residual: Some(rms),
        degenerate: false,
    })
}

/// Indices of the upper convex hull of points sorted by `x`.
fn upper_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    for k in 0..x.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (x[b] - x[a]) * (y[k] - y[a]) - (y[b] - y[a]) * (x[k] - x[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull
}

fn least_squares_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> SensorDigraph {
        SensorDigraph::from_edges(3, &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap()
    }

    /// Left null vector by SVD of `L^T`, sign-fixed and sum-normalized.
    fn svd_null_left(l: &DMatrix<f64>) -> Vec<f64> {
        let svd = l.transpose().svd(true, true);
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let v = svd.v_t.unwrap().row(idx).transpose();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    #[test]
    fn multiplicity_examples() {
        assert_eq!(zero_eigen_multiplicity(&cycle3().laplacian()), 1);
        let two = SensorDigraph::from_edges(
            6,
            &[
                (0, 2, 1.0),
                (1, 0, 1.0),
                (2, 1, 1.0),
                (3, 5, 1.0),
                (4, 3, 1.0),
                (5, 4, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(zero_eigen_multiplicity(&two.laplacian()), 2);
    }

    #[test]
    fn gamma_examples() {
        let g = cycle3();
        let gm = gamma_left_eigenvector(&g.laplacian(), &g.scc_decompose(), Normalization::SumOne).unwrap();
        for v in &gm.gamma {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let chain = SensorDigraph::from_edges(3, &[(1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let gm = gamma_left_eigenvector(&chain.laplacian(), &chain.scc_decompose(), Normalization::SumOne).unwrap();
        assert_eq!(gm.gamma, vec![1.0, 0.0, 0.0]);
        assert_eq!(gm.support, vec![0]);

        let forest = SensorDigraph::from_edges(3, &[(2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert!(matches!(
            gamma_left_eigenvector(&forest.laplacian(), &forest.scc_decompose(), Normalization::SumOne),
            Err(Error::NoSingleRoot { roots: 2 })
        ));
    }

    #[test]
    fn gamma_matches_svd_oracle_on_unbalanced_graph() {
        let g = SensorDigraph::from_edges(3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, 1.0), (0, 2, 1.0)]).unwrap();
        let l = g.laplacian();
        let gm = gamma_left_eigenvector(&l, &g.scc_decompose(), Normalization::SumOne).unwrap();
        let oracle = svd_null_left(l.matrix());
        for (a, b) in gm.gamma.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let inf = gm.normalized(Normalization::InfNormOne);
        assert_eq!(inf.gamma.iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn balanced_gamma_is_uniform() {
        let g = SensorDigraph::from_edges(
            4,
            &[
                (1, 0, 2.0),
                (2, 1, 2.0),
                (3, 2, 2.0),
                (0, 3, 2.0),
                (0, 2, 1.0),
                (2, 0, 1.0),
            ],
        )
        .unwrap();
        assert!(g.is_balanced());
        let gm = gamma_left_eigenvector(&g.laplacian(), &g.scc_decompose(), Normalization::SumOne).unwrap();
        for v in &gm.gamma {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn rate_examples() {
        let k3 = SensorDigraph::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert!((rate_no_delay(&k3.laplacian()).unwrap().value + 3.0).abs() < 1e-12);
        let p2 = SensorDigraph::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert!((rate_no_delay(&p2.laplacian()).unwrap().value + 2.0).abs() < 1e-12);
        assert!((rate_no_delay(&cycle3().laplacian()).unwrap().value + 1.5).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        let c = cycle3();
        let l = c.laplacian();
        let gm = gamma_left_eigenvector(&l, &c.scc_decompose(), Normalization::InfNormOne).unwrap();
        let k = rate_kappa_bound(&l, &gm).unwrap();
        assert!((k.value + 1.5).abs() < 1e-12);
        assert!(rate_no_delay(&l).unwrap().value <= k.value + 1e-12);

        // undirected path: algebraic connectivity of P3 is 1
        let p3 = SensorDigraph::from_edges(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        let l = p3.laplacian();
        let gm = gamma_left_eigenvector(&l, &p3.scc_decompose(), Normalization::InfNormOne).unwrap();
        assert!((rate_kappa_bound(&l, &gm).unwrap().value + 1.0).abs() < 1e-12);

        let chain = SensorDigraph::from_edges(2, &[(1, 0, 1.0)]).unwrap();
        let gm = GammaVector {
            gamma: vec![1.0, 0.0],
            support: vec![0],
            normalization: Normalization::InfNormOne,
            residual: 0.0,
        };
        assert!(rate_kappa_bound(&chain.laplacian(), &gm).is_err());
    }

    #[test]
    fn characteristic_examples() {
        let single = SensorDigraph::empty(1);
        let s = Complex64::new(0.3, -1.7);
        let p = characteristic_function(s, &single, &DelayMatrix::zeros(1), &[1.0]).unwrap();
        assert!((p - s).norm() < 1e-15);

        let pair = SensorDigraph::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let p = characteristic_function(s, &pair, &DelayMatrix::zeros(2), &[1.0, 1.0]).unwrap();
        assert!((p - s * (s + 2.0)).norm() < 1e-12);

        let c = cycle3();
        let d = DelayMatrix::uniform(3, 0.05).unwrap();
        let p0 = characteristic_function(Complex64::new(0.0, 0.0), &c, &d, &[30.0; 3]).unwrap();
        assert!(p0.norm() < 1e-10 * 30f64.powi(3));
    }

    #[test]
    fn row_sum_bound_is_one_at_dc_and_below_elsewhere() {
        let c = cycle3();
        let d = DelayMatrix::uniform(3, 0.05).unwrap();
        let k = [2.0, 1.0, 0.5];
        assert!((row_sum_bound(0.0, &c, &d, &k).unwrap() - 1.0).abs() < 1e-15);
        for w in [-3.0, 0.01, 10.0] {
            assert!(row_sum_bound(w, &c, &d, &k).unwrap() < 1.0);
        }
    }

    #[test]
    fn isolated_rows_do_not_count() {
        let chain = SensorDigraph::from_edges(2, &[(1, 0, 1.0)]).unwrap();
        let d = DelayMatrix::zeros(2);
        assert_eq!(row_sum_bound(0.0, &chain, &d, &[1.0, 1.0]).unwrap(), 1.0);
    }
}
