//! Time-series models for period and cohort indices.

mod arima;
mod sim;

pub use arima::{fit_arima, forecast_arima, ArimaModel};
pub use sim::{derive_seed, path_rng, simulate_index, IndexModel, IndexPaths};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Univariate random walk with drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwdModel {
    pub drift: f64,
    pub innovation_var: f64,
    pub last_value: f64,
    pub n: usize,
}

pub fn fit_rwd(series: &[f64]) -> Result<RwdModel> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid(format!("random walk needs at least 2 points, got {n}")));
    }
    let drift = (series[n - 1] - series[0]) / (n - 1) as f64;
    let innovation_var = if n > 2 {
        let ss: f64 = series
            .windows(2)
            .map(|w| (w[1] - w[0] - drift).powi(2))
            .sum();
        ss / (n - 2) as f64
    } else {
        0.0
    };
    Ok(RwdModel {
        drift,
        innovation_var,
        last_value: series[n - 1],
        n,
    })
}

/// Forecast means and variances for horizons `1..=h`.
pub fn forecast_rwd(model: &RwdModel, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = (1..=h).map(|j| model.last_value + j as f64 * model.drift).collect();
    let var = (1..=h).map(|j| j as f64 * model.innovation_var).collect();
    (mean, var)
}

/// Multivariate random walk with drift.
#[derive(Debug, Clone, PartialEq)]
pub struct MrwdModel {
    pub drift: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub last_value: DVector<f64>,
}

/// Fits a multivariate random walk with drift to a `years × q` matrix.
pub fn fit_mrwd(series: &DMatrix<f64>) -> Result<MrwdModel> {
    let (n, q) = series.shape();
    if n < 3 || q == 0 {
        return Err(Error::invalid(format!(
            "multivariate random walk needs ≥ 3 rows and ≥ 1 column, got {n}×{q}"
        )));
    }
    let drift = DVector::from_fn(q, |k, _| (series[(n - 1, k)] - series[(0, k)]) / (n - 1) as f64);
    let mut cov = DMatrix::zeros(q, q);
    for t in 1..n {
        let dev = DVector::from_fn(q, |k, _| series[(t, k)] - series[(t - 1, k)] - drift[k]);
        cov += &dev * dev.transpose();
    }
    cov /= (n - 2) as f64;
    // exact symmetry
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(MrwdModel {
        drift,
        innovation_cov: cov,
        last_value: series.row(n - 1).transpose(),
    })
}

/// Forecast means (`h × q`) and covariances `j·Σ` for `j = 1..=h`.
pub fn forecast_mrwd(model: &MrwdModel, h: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let q = model.drift.len();
    let mean = DMatrix::from_fn(h, q, |j, k| model.last_value[k] + (j + 1) as f64 * model.drift[k]);
    let covs = (1..=h).map(|j| &model.innovation_cov * j as f64).collect();
    (mean, covs)
}

/// Symmetric square root factor `L` with `L Lᵀ = Σ`, tolerating semidefinite input.
pub(crate) fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_series_has_unit_drift_and_no_noise() {
        let m = fit_rwd(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m.drift, 1.0);
        assert_eq!(m.innovation_var, 0.0);
    }

    #[test]
    fn hand_computed_variance() {
        let series = [0.0, 2.0, 1.0, 3.0];
        let m = fit_rwd(&series).unwrap();
        assert_eq!(m.drift, 1.0);
        assert!((m.innovation_var - 3.0).abs() < 1e-15);
        // least-squares oracle: the drift minimizing Σ(Δ − c)² is the mean difference
        let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
        let ls_drift = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let resid_ss: f64 = diffs.iter().map(|d| (d - ls_drift).powi(2)).sum();
        assert!((m.drift - ls_drift).abs() < 1e-15);
        assert!((m.innovation_var - resid_ss / (diffs.len() - 1) as f64).abs() < 1e-15);
    }

    #[test]
    fn constant_series() {
        let m = fit_rwd(&[4.0; 6]).unwrap();
        assert_eq!((m.drift, m.innovation_var), (0.0, 0.0));
    }

    #[test]
    fn too_short_series() {
        assert!(fit_rwd(&[1.0]).is_err());
        assert_eq!(fit_rwd(&[1.0, 3.0]).unwrap().innovation_var, 0.0);
    }

    #[test]
    fn rwd_forecasts() {
        let m = RwdModel {
            drift: 1.0,
            innovation_var: 2.0,
            last_value: 5.0,
            n: 10,
        };
        let (mean, var) = forecast_rwd(&m, 3);
        assert_eq!(mean, vec![6.0, 7.0, 8.0]);
        assert_eq!(var, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn mrwd_with_one_column_matches_rwd() {
        let s = [0.3, 1.1, 0.7, 2.5, 2.2, 3.9];
        let m = fit_mrwd(&DMatrix::from_column_slice(6, 1, &s)).unwrap();
        let r = fit_rwd(&s).unwrap();
        assert_eq!(m.drift[0], r.drift);
        assert!((m.innovation_cov[(0, 0)] - r.innovation_var).abs() < 1e-15);
    }

    #[test]
    fn mrwd_linear_coordinates_have_zero_covariance() {
        let s = DMatrix::from_fn(8, 2, |t, k| (k as f64 + 1.0) * t as f64 - 3.0);
        let m = fit_mrwd(&s).unwrap();
        assert!(m.innovation_cov.iter().all(|v| v.abs() < 1e-24));
        let (_, covs) = forecast_mrwd(&m, 3);
        assert_eq!(covs.len(), 3);
    }

    #[test]
    fn mrwd_needs_three_rows() {
        assert!(fit_mrwd(&DMatrix::zeros(2, 2)).is_err());
    }
}
