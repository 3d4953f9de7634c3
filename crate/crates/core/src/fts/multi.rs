use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fpca_matrix, trapezoid_weights, FtsFit};
use crate::data::LogRateSurface;
use crate::error::{Error, Result};

/// Product and ratio functions of two sex-specific surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherentFit {
    pub product_fit: FtsFit,
    pub ratio_fit: FtsFit,
}

impl CoherentFit {
    pub fn male_curve(&self, product: &[f64], ratio: &[f64]) -> Vec<f64> {
        product.iter().zip(ratio).map(|(p, r)| p + r).collect()
    }

    pub fn female_curve(&self, product: &[f64], ratio: &[f64]) -> Vec<f64> {
        product.iter().zip(ratio).map(|(p, r)| p - r).collect()
    }
}

fn same_grid(a: &LogRateSurface, b: &LogRateSurface, years_only: bool) -> Result<()> {
    if a.years != b.years || (!years_only && a.ages != b.ages) {
        return Err(Error::dims("surfaces do not share the same age and year grid"));
    }
    Ok(())
}

pub fn product_ratio_fit(female: &LogRateSurface, male: &LogRateSurface, k: usize) -> Result<CoherentFit> {
    same_grid(female, male, false)?;
    let product = (&male.values + &female.values) * 0.5;
    let ratio = (&male.values - &female.values) * 0.5;
    let quad = trapezoid_weights(female.ages.len());
    let ny = female.years.len();
    Ok(CoherentFit {
        product_fit: fpca_matrix(&product, &female.ages, &female.years, quad.clone(), vec![1.0; ny], k)?,
        ratio_fit: fpca_matrix(&ratio, &female.ages, &female.years, quad, vec![1.0; ny], k)?,
    })
}

/// FPCA of curves from several populations stacked into one long curve per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedFit {
    pub fit: FtsFit,
    /// Number of ages contributed by each population, in stacking order.
    pub segments: Vec<usize>,
}

impl StackedFit {
    pub fn unstack(&self, long: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut start = 0;
        for &len in &self.segments {
            out.push(long[start..start + len].to_vec());
            start += len;
        }
        out
    }
}

pub fn stack_curves(curves: &[Vec<f64>]) -> Vec<f64> {
    curves.iter().flatten().copied().collect()
}

pub fn multivariate_fts_fit(surfaces: &[LogRateSurface], k: usize) -> Result<StackedFit> {
    if surfaces.len() < 2 {
        return Err(Error::invalid("stacking needs at least two surfaces"));
    }
    for s in &surfaces[1..] {
        same_grid(&surfaces[0], s, true)?;
    }
    let segments: Vec<usize> = surfaces.iter().map(|s| s.ages.len()).collect();
    let total: usize = segments.iter().sum();
    let ny = surfaces[0].years.len();
    let mut values = DMatrix::zeros(total, ny);
    let mut quad = Vec::with_capacity(total);
    let ages: Vec<u32> = surfaces.iter().flat_map(|s| s.ages.iter().copied()).collect();
    let mut row = 0;
    for s in surfaces {
        values.rows_mut(row, s.ages.len()).copy_from(&s.values);
        quad.extend(trapezoid_weights(s.ages.len()));
        row += s.ages.len();
    }
    Ok(StackedFit {
        fit: fpca_matrix(&values, &ages, &surfaces[0].years, quad, vec![1.0; ny], k)?,
        segments,
    })
}

/// Population means, a common trend, and population-specific residual trends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelFit {
    pub mus: Vec<Vec<f64>>,
    pub common: FtsFit,
    pub specific: Vec<FtsFit>,
}

impl MultilevelFit {
    /// Per-age measurement-error variance of population `j`.
    pub fn sigma2(&self, j: usize) -> &[f64] {
        &self.specific[j].residual_var
    }

    pub fn curve(&self, j: usize, common_scores: &[f64], specific_scores: &[f64]) -> Vec<f64> {
        let r = self.common.reconstruct(common_scores);
        let u = self.specific[j].reconstruct(specific_scores);
        (0..self.mus[j].len()).map(|i| self.mus[j][i] + r[i] + u[i]).collect()
    }
}

pub fn multilevel_fts_fit(surfaces: &[LogRateSurface], k_common: usize, k_specific: usize) -> Result<MultilevelFit> {
    if surfaces.len() < 2 {
        return Err(Error::invalid("multilevel model needs at least two surfaces"));
    }
    for s in &surfaces[1..] {
        same_grid(&surfaces[0], s, false)?;
    }
    let (np, ny) = surfaces[0].values.shape();
    let years = &surfaces[0].years;
    let ages = &surfaces[0].ages;
    let quad = trapezoid_weights(np);
    let mus: Vec<Vec<f64>> = surfaces
        .iter()
        .map(|s| (0..np).map(|i| s.values.row(i).sum() / ny as f64).collect())
        .collect();
    let centered: Vec<DMatrix<f64>> = surfaces
        .iter()
        .zip(&mus)
        .map(|(s, mu)| DMatrix::from_fn(np, ny, |i, t| s.values[(i, t)] - mu[i]))
        .collect();
    let mut average = DMatrix::zeros(np, ny);
    for c in &centered {
        average += c;
    }
    average /= surfaces.len() as f64;
    let common = fpca_matrix(&average, ages, years, quad.clone(), vec![1.0; ny], k_common)?;
    let common_fitted = common.fitted();
    let specific = centered
        .iter()
        .map(|c| fpca_matrix(&(c - &common_fitted), ages, years, quad.clone(), vec![1.0; ny], k_specific))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultilevelFit { mus, common, specific })
}
