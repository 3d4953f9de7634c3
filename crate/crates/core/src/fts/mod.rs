//! Functional principal component models of log-rate curves.

mod multi;

pub use multi::{
    multilevel_fts_fit, multivariate_fts_fit, product_ratio_fit, stack_curves, CoherentFit, MultilevelFit,
    StackedFit,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::LogRateSurface;
use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 6;
pub const DEFAULT_MULTILEVEL_COMPONENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtsFit {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub mu: Vec<f64>,
    /// ages × K, orthonormal under the trapezoid inner product.
    #[serde(with = "matrix_rows")]
    pub components: DMatrix<f64>,
    /// years × K
    #[serde(with = "matrix_rows")]
    pub scores: DMatrix<f64>,
    pub k: usize,
    pub obs_weights: Vec<f64>,
    pub residual_var: Vec<f64>,
    /// Quadrature weights of the age grid.
    pub quad: Vec<f64>,
}

impl FtsFit {
    pub fn n_points(&self) -> usize {
        self.mu.len()
    }

    /// `μ + Σ_k φ_k β_k` for one score vector.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        (0..self.n_points())
            .map(|i| self.mu[i] + (0..self.k).map(|c| self.components[(i, c)] * scores[c]).sum::<f64>())
            .collect()
    }

    pub fn fitted(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_points(), self.years.len());
        for t in 0..self.years.len() {
            let s: Vec<f64> = self.scores.row(t).iter().copied().collect();
            out.set_column(t, &nalgebra::DVector::from_vec(self.reconstruct(&s)));
        }
        out
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

/// Unit-spaced trapezoid weights.
pub fn trapezoid_weights(n: usize) -> Vec<f64> {
    let mut q = vec![1.0; n];
    if n > 1 {
        q[0] = 0.5;
        q[n - 1] = 0.5;
    }
    q
}

pub(crate) fn check_k(k: usize, n_points: usize, n_years: usize) -> Result<()> {
    let max = n_points.min(n_years).saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::invalid(format!("number of components must be in 1..={max}, got {k}")));
    }
    Ok(())
}

fn require_finite(values: &DMatrix<f64>) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "functional models need a complete surface; smooth the log rates first",
        ));
    }
    Ok(())
}

fn fix_sign(phi: &mut [f64], quad: &[f64]) {
    let dot: f64 = phi.iter().zip(quad).map(|(p, q)| p * q).sum();
    let mass: f64 = phi.iter().zip(quad).map(|(p, q)| (p * q).abs()).sum();
    let flip = if dot.abs() > 1e-10 * mass {
        dot < 0.0
    } else {
        phi.iter().find(|p| p.abs() > 1e-12).is_some_and(|p| *p < 0.0)
    };
    if flip {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

/// Leading `k` directions of the columns of `z` (already centered), weighted by
/// `col_w`, orthonormal under `quad`.
fn principal_directions(z: &DMatrix<f64>, quad: &[f64], col_w: &[f64], k: usize) -> DMatrix<f64> {
    let (np, ny) = z.shape();
    let a = DMatrix::from_fn(np, ny, |i, t| quad[i].sqrt() * z[(i, t)] * col_w[t].sqrt());
    let svd = a.svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]).then(x.cmp(&y)));
    let mut comps = DMatrix::zeros(np, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut phi: Vec<f64> = (0..np).map(|i| u[(i, idx)] / quad[i].sqrt()).collect();
        fix_sign(&mut phi, quad);
        for i in 0..np {
            comps[(i, c)] = phi[i];
        }
    }
    comps
}

fn project(z: &DMatrix<f64>, comps: &DMatrix<f64>, quad: &[f64]) -> DMatrix<f64> {
    let (np, ny) = z.shape();
    DMatrix::from_fn(ny, comps.ncols(), |t, c| (0..np).map(|i| quad[i] * z[(i, t)] * comps[(i, c)]).sum())
}

/// FPCA of the columns of `values` with the given quadrature and year weights.
pub(crate) fn fpca_matrix(
    values: &DMatrix<f64>,
    ages: &[u32],
    years: &[i32],
    quad: Vec<f64>,
    obs_weights: Vec<f64>,
    k: usize,
) -> Result<FtsFit> {
    let (np, ny) = values.shape();
    check_k(k, np, ny)?;
    require_finite(values)?;
    let wsum: f64 = obs_weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::DegenerateContamination);
    }
    let mu: Vec<f64> = (0..np)
        .map(|i| (0..ny).map(|t| obs_weights[t] * values[(i, t)]).sum::<f64>() / wsum)
        .collect();
    let z = DMatrix::from_fn(np, ny, |i, t| values[(i, t)] - mu[i]);
    let components = principal_directions(&z, &quad, &obs_weights, k);
    let scores = project(&z, &components, &quad);
    let residual_var = (0..np)
        .map(|i| {
            (0..ny)
                .map(|t| {
                    let fit: f64 = (0..k).map(|c| components[(i, c)] * scores[(t, c)]).sum();
                    obs_weights[t] * (z[(i, t)] - fit).powi(2)
                })
                .sum::<f64>()
                / wsum
        })
        .collect();
    Ok(FtsFit {
        ages: ages.to_vec(),
        years: years.to_vec(),
        mu,
        components,
        scores,
        k,
        obs_weights,
        residual_var,
        quad,
    })
}

pub fn fpca(surface: &LogRateSurface, k: usize) -> Result<FtsFit> {
    let ny = surface.years.len();
    fpca_matrix(
        &surface.values,
        &surface.ages,
        &surface.years,
        trapezoid_weights(surface.ages.len()),
        vec![1.0; ny],
        k,
    )
}

/// Weiszfeld iteration for the spatial median of the columns under `quad`.
fn spatial_median(values: &DMatrix<f64>, quad: &[f64]) -> Vec<f64> {
    let (np, ny) = values.shape();
    let mut m: Vec<f64> = (0..np)
        .map(|i| {
            let mut row: Vec<f64> = values.row(i).iter().copied().collect();
            row.sort_by(f64::total_cmp);
            if ny % 2 == 1 {
                row[ny / 2]
            } else {
                0.5 * (row[ny / 2 - 1] + row[ny / 2])
            }
        })
        .collect();
    for _ in 0..500 {
        let mut num = vec![0.0; np];
        let mut den = 0.0;
        for t in 0..ny {
            let dist = (0..np)
                .map(|i| quad[i] * (values[(i, t)] - m[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist < 1e-12 {
                continue;
            }
            for i in 0..np {
                num[i] += values[(i, t)] / dist;
            }
            den += 1.0 / dist;
        }
        if den == 0.0 {
            break;
        }
        let next: Vec<f64> = num.iter().map(|v| v / den).collect();
        let step = next.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        m = next;
        if step < 1e-13 {
            break;
        }
    }
    m
}

/// Integrated squared residual of each year after a spherical principal
/// component pass, which is not pulled toward gross outliers.
fn robust_residuals(values: &DMatrix<f64>, quad: &[f64], k: usize) -> (Vec<f64>, f64) {
    let (np, ny) = values.shape();
    let m = spatial_median(values, quad);
    let z = DMatrix::from_fn(np, ny, |i, t| values[(i, t)] - m[i]);
    let norms: Vec<f64> = (0..ny)
        .map(|t| (0..np).map(|i| quad[i] * z[(i, t)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let unit = DMatrix::from_fn(np, ny, |i, t| if norms[t] > 0.0 { z[(i, t)] / norms[t] } else { 0.0 });
    let comps = principal_directions(&unit, quad, &vec![1.0; ny], k);
    let scores = project(&z, &comps, quad);
    let v = (0..ny)
        .map(|t| {
            (0..np)
                .map(|i| {
                    let fit: f64 = (0..k).map(|c| comps[(i, c)] * scores[(t, c)]).sum();
                    quad[i] * (z[(i, t)] - fit).powi(2)
                })
                .sum()
        })
        .collect();
    let max_norm = norms.iter().fold(0.0f64, |a, b| a.max(*b));
    (v, max_norm * max_norm)
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn integrated_residuals(values: &DMatrix<f64>, fit: &FtsFit) -> Vec<f64> {
    let (np, ny) = values.shape();
    (0..ny)
        .map(|t| {
            (0..np)
                .map(|i| {
                    let z = values[(i, t)] - fit.mu[i];
                    let f: f64 = (0..fit.k).map(|c| fit.components[(i, c)] * fit.scores[(t, c)]).sum();
                    fit.quad[i] * (z - f).powi(2)
                })
                .sum()
        })
        .collect()
}

/// Indices of years whose integrated squared error exceeds the chi-squared
/// critical value after median scaling. Starts from a spherical pass, then
/// alternates weighted refits and reflagging until the flagged set is stable.
pub fn flag_outlier_years(values: &DMatrix<f64>, quad: &[f64], k: usize, chi_sq_level: f64) -> Result<Vec<usize>> {
    if !(chi_sq_level > 0.0 && chi_sq_level < 1.0) {
        return Err(Error::invalid(format!("chi-squared level must be in (0, 1), got {chi_sq_level}")));
    }
    let (np, ny) = values.shape();
    check_k(k, np, ny)?;
    require_finite(values)?;
    let df = (np - k) as f64;
    let chi = ChiSquared::new(df).map_err(|e| Error::Numerical(e.to_string()))?;
    let critical = chi.inverse_cdf(chi_sq_level);
    let chi_median = chi.inverse_cdf(0.5);
    let (v0, spread) = robust_residuals(values, quad, k);
    let floor = 1e-12 * (1.0 + spread);
    let classify = |v: &[f64]| {
        let scale = (median(v) / chi_median).max(floor);
        (0..ny).filter(|&t| v[t] / scale > critical).collect::<Vec<usize>>()
    };
    let mut flagged = classify(&v0);
    let years: Vec<i32> = (0..ny as i32).collect();
    let ages: Vec<u32> = (0..np as u32).collect();
    for _ in 0..20 {
        if ny - flagged.len() <= k + 1 {
            break;
        }
        let mut w = vec![1.0; ny];
        for &t in &flagged {
            w[t] = 0.0;
        }
        // every year is scored against a fit that excludes it
        let held_out = integrated_residuals(values, &fpca_matrix(values, &ages, &years, quad.to_vec(), w.clone(), k)?);
        let mut v = vec![0.0; ny];
        for t in 0..ny {
            v[t] = if w[t] == 0.0 {
                held_out[t]
            } else {
                let mut wt = w.clone();
                wt[t] = 0.0;
                let fit = fpca_matrix(values, &ages, &years, quad.to_vec(), wt, k)?;
                (0..np)
                    .map(|i| {
                        let z = values[(i, t)] - fit.mu[i];
                        let f: f64 = (0..k).map(|c| fit.components[(i, c)] * fit.scores[(t, c)]).sum();
                        quad[i] * (z - f).powi(2)
                    })
                    .sum()
            };
        }
        let next = classify(&v);
        if next == flagged {
            break;
        }
        flagged = next;
    }
    Ok(flagged)
}

/// FPCA refitted with zero weight on years flagged as outliers.
pub fn robust_fpca(surface: &LogRateSurface, k: usize, chi_sq_level: f64) -> Result<FtsFit> {
    let quad = trapezoid_weights(surface.ages.len());
    let flagged = flag_outlier_years(&surface.values, &quad, k, chi_sq_level)?;
    let ny = surface.years.len();
    if flagged.len() == ny {
        return Err(Error::DegenerateContamination);
    }
    if !flagged.is_empty() {
        let years: Vec<i32> = flagged.iter().map(|&t| surface.years[t]).collect();
        log::info!("robust FPCA down-weights years {years:?}");
    }
    let mut w = vec![1.0; ny];
    for &t in &flagged {
        w[t] = 0.0;
    }
    if ny - flagged.len() <= k {
        return Err(Error::DegenerateContamination);
    }
    fpca_matrix(&surface.values, &surface.ages, &surface.years, quad, w, k)
}
