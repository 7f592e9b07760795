//! Local decision statistics `g_i` and their centralized references.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for declaring `A_i` rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// `y_i = A_i xi + w_i`, `w_i ~ N(0, R_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearObsModel {
    pub a_mat: DMatrix<f64>,
    pub r_cov: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl LinearObsModel {
    pub fn new(a_mat: DMatrix<f64>, r_cov: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let m = a_mat.nrows();
        if r_cov.shape() != (m, m) || y.len() != m {
            return Err(Error::Dimension(format!(
                "A is {}x{}, R is {}x{}, y has {}",
                m,
                a_mat.ncols(),
                r_cov.nrows(),
                r_cov.ncols(),
                y.len()
            )));
        }
        Ok(Self { a_mat, r_cov, y })
    }

    /// Scalar model `y = a xi + w`, `var(w) = sigma2`.
    pub fn scalar(a: f64, sigma2: f64, y: f64) -> Self {
        Self {
            a_mat: DMatrix::from_element(1, 1, a),
            r_cov: DMatrix::from_element(1, 1, sigma2),
            y: DVector::from_element(1, y),
        }
    }

    pub fn dim(&self) -> usize {
        self.a_mat.ncols()
    }
}

/// Per-node statistic `g_i` and its weight `C_i = A_i^T R_i^{-1} A_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlueLocal {
    pub g: DVector<f64>,
    pub c: DMatrix<f64>,
}

fn relabel(e: Error, node: usize) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { node },
        Error::RankDeficient { .. } => Error::RankDeficient { node },
        other => other,
    }
}

/// `C_i = A^T R^{-1} A`, `g_i = C_i^{-1} A^T R^{-1} y`, by Cholesky whitening.
pub fn blue_local(m: &LinearObsModel) -> Result<BlueLocal> {
    let sv = m.a_mat.singular_values();
    let smax = sv.max();
    if m.a_mat.nrows() < m.a_mat.ncols() || sv.iter().any(|&s| !(s > RANK_TOL * smax)) {
        return Err(Error::RankDeficient { node: 0 });
    }
    if (&m.r_cov - m.r_cov.transpose()).amax() > 1e-12 * m.r_cov.amax() {
        return Err(Error::NotPositiveDefinite { node: 0 });
    }
    let chol = m
        .r_cov
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { node: 0 })?;
    let lower = chol.l();
    let w = lower
        .solve_lower_triangular(&m.a_mat)
        .ok_or(Error::NotPositiveDefinite { node: 0 })?;
    let z = lower
        .solve_lower_triangular(&m.y)
        .ok_or(Error::NotPositiveDefinite { node: 0 })?;
    let c = w.transpose() * &w;
    let b = w.transpose() * z;
    let g = c.clone().cholesky().ok_or(Error::RankDeficient { node: 0 })?.solve(&b);
    Ok(BlueLocal { g, c })
}

/// `xi_hat = (sum C_i)^{-1} sum C_i g_i`.
pub fn centralized_blue(models: &[LinearObsModel]) -> Result<DVector<f64>> {
    let locals: Vec<BlueLocal> = models
        .iter()
        .enumerate()
        .map(|(i, m)| blue_local(m).map_err(|e| relabel(e, i)))
        .collect::<Result<_>>()?;
    let (c, g): (Vec<_>, Vec<_>) = locals.into_iter().map(|b| (b.c, b.g)).unzip();
    consensus_function_vector(&c, &g)
}

/// Energy-detector data for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlrtModel {
    pub samples: Vec<f64>,
    pub sigma_w2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlrtLocal {
    /// Clamped power estimate `max(0, mean(y^2) - sigma_w2)`.
    pub power_hat: f64,
    pub g: f64,
}

pub fn glrt_local(m: &GlrtModel) -> Result<GlrtLocal> {
    if !(m.sigma_w2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {}",
            m.sigma_w2
        )));
    }
    if m.samples.is_empty() {
        return Err(Error::InvalidParameter("GLRT needs at least one sample".into()));
    }
    let s2 = m.sigma_w2;
    let m2 = m.samples.iter().map(|y| y * y).sum::<f64>() / m.samples.len() as f64;
    let p = (m2 - s2).max(0.0);
    let g = m2 * (1.0 / s2 - 1.0 / (p + s2)) - ((p + s2) / s2).ln();
    Ok(GlrtLocal { power_hat: p, g })
}

/// Network GLRT statistic `sum_i g_i` (all `c_i = 1`).
pub fn glrt_network(models: &[GlrtModel]) -> Result<f64> {
    models.iter().map(|m| glrt_local(m).map(|l| l.g)).sum()
}

/// `h(sum c_i g_i / sum c_i)`.
pub fn consensus_function(h: impl Fn(f64) -> f64, g_values: &[f64], c: &[f64]) -> Result<f64> {
    if g_values.len() != c.len() || c.is_empty() {
        return Err(Error::Dimension(format!(
            "{} statistics, {} weights",
            g_values.len(),
            c.len()
        )));
    }
    if let Some(bad) = c.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {bad}")));
    }
    let num: f64 = g_values.iter().zip(c).map(|(g, c)| g * c).sum();
    let den: f64 = c.iter().sum();
    Ok(h(num / den))
}

/// `(sum C_i)^{-1} sum C_i g_i`.
pub fn consensus_function_vector(c: &[DMatrix<f64>], g: &[DVector<f64>]) -> Result<DVector<f64>> {
    let dim = g
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::Dimension("no nodes".into()))?;
    if c.len() != g.len() || c.iter().any(|m| m.shape() != (dim, dim)) || g.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("weight matrices and statistics disagree".into()));
    }
    let mut sum_c = DMatrix::zeros(dim, dim);
    let mut sum_cg = DVector::zeros(dim);
    for (ci, gi) in c.iter().zip(g) {
        sum_c += ci;
        sum_cg += ci * gi;
    }
    sum_c
        .cholesky()
        .map(|ch| ch.solve(&sum_cg))
        .ok_or_else(|| Error::Singular("sum of weight matrices".into()))
}

/// Scalar linear model statistics `g_i = y_i / A_i`, `c_i = A_i^2 / sigma_i^2`.
pub fn scalar_ml_statistics(a: &[f64], sigma2: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != y.len() || sigma2.len() != y.len() {
        return Err(Error::Dimension(
            "amplitudes, variances and observations differ in length".into(),
        ));
    }
    for (i, (&ai, &si)) in a.iter().zip(sigma2).enumerate() {
        if ai == 0.0 {
            return Err(Error::RankDeficient { node: i });
        }
        if !(si > 0.0) {
            return Err(Error::NotPositiveDefinite { node: i });
        }
    }
    let g = y.iter().zip(a).map(|(y, a)| y / a).collect();
    let c = a.iter().zip(sigma2).map(|(a, s)| a * a / s).collect();
    Ok((g, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_identity_model() {
        let b = blue_local(&LinearObsModel::scalar(1.0, 0.25, 3.0)).unwrap();
        assert!((b.c[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((b.g[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn noise_free_observation_recovers_xi() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let xi = DVector::from_row_slice(&[1.5, -0.5]);
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let m = LinearObsModel::new(a.clone(), r, &a * &xi).unwrap();
        let b = blue_local(&m).unwrap();
        assert!((b.g - xi).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_and_non_pd_are_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let m = LinearObsModel::new(a, DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(blue_local(&m), Err(Error::RankDeficient { .. })));
        let bad_r = LinearObsModel::scalar(1.0, -1.0, 0.0);
        assert!(matches!(blue_local(&bad_r), Err(Error::NotPositiveDefinite { .. })));
        let ok = LinearObsModel::scalar(1.0, 1.0, 0.0);
        assert!(matches!(
            centralized_blue(&[ok, bad_r]),
            Err(Error::NotPositiveDefinite { node: 1 })
        ));
    }

    #[test]
    fn centralized_examples() {
        let same: Vec<_> = [1.0, 2.0, 6.0]
            .iter()
            .map(|&y| LinearObsModel::scalar(1.0, 1.0, y))
            .collect();
        assert!((centralized_blue(&same).unwrap()[0] - 3.0).abs() < 1e-15);
        let two = [
            LinearObsModel::scalar(1.0, 1.0, 1.0),
            LinearObsModel::scalar(1.0, 4.0, 5.0),
        ];
        assert!((centralized_blue(&two).unwrap()[0] - 1.8).abs() < 1e-14);
    }

    #[test]
    fn scalar_ml_statistics_match_generic_form() {
        let a = [0.6, 1.2, 1.4];
        let s2 = [0.01, 0.02, 0.015];
        let y = [0.7, 1.1, 1.5];
        let (g, c) = scalar_ml_statistics(&a, &s2, &y).unwrap();
        let direct = consensus_function(|x| x, &g, &c).unwrap();
        let models: Vec<_> = (0..3).map(|i| LinearObsModel::scalar(a[i], s2[i], y[i])).collect();
        assert!((centralized_blue(&models).unwrap()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn glrt_examples() {
        let zero = glrt_local(&GlrtModel {
            samples: vec![0.0; 8],
            sigma_w2: 1.0,
        })
        .unwrap();
        assert_eq!((zero.power_hat, zero.g), (0.0, 0.0));
        let edge = glrt_local(&GlrtModel {
            samples: vec![1.0, -1.0],
            sigma_w2: 1.0,
        })
        .unwrap();
        assert_eq!((edge.power_hat, edge.g), (0.0, 0.0));
        let s = 2f64.sqrt();
        let two = glrt_local(&GlrtModel {
            samples: vec![s, -s, s, -s],
            sigma_w2: 1.0,
        })
        .unwrap();
        assert!((two.power_hat - 1.0).abs() < 1e-15);
        assert!((two.g - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((two.g - 0.306853).abs() < 1e-6);
        assert!(glrt_local(&GlrtModel {
            samples: vec![1.0],
            sigma_w2: 0.0
        })
        .is_err());
    }

    #[test]
    fn consensus_function_examples() {
        assert_eq!(consensus_function(|x| x, &[1.0, 2.0, 3.0], &[1.0; 3]).unwrap(), 2.0);
        let y: [f64; 3] = [1.0, 4.0, 16.0];
        let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let geo = consensus_function(f64::exp, &logs, &[1.0; 3]).unwrap();
        assert!((geo - 4.0).abs() < 1e-12);
        let w = consensus_function(|x| x, &[1.0, 3.0], &[3.0, 1.0]).unwrap();
        assert_eq!(w, 1.5);
    }
}
