//! Lee-Carter model under Gaussian errors, fitted by SVD of centered log rates,
//! with the classical second-stage adjustments of the period index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MortalityDataset;
use crate::error::{Error, Result};

/// Second-stage re-estimation of the period index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaAdjustment {
    None,
    /// Match observed total deaths per year.
    RefitTotalDeaths,
    /// Match observed period life expectancy at the youngest modeled age.
    FitE0,
    /// Minimize the Poisson deviance of the age distribution of deaths.
    FitDeathDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcFit {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// SVD scores, summing to zero.
    pub kappa: Vec<f64>,
    pub kappa_adjusted: Vec<f64>,
    pub adjustment: KappaAdjustment,
    /// Mean squared residual per age.
    pub residual_var: Vec<f64>,
    pub beta_sq: Vec<f64>,
}

impl LcFit {
    pub fn fitted_log_rate(&self, age_idx: usize, kappa: f64) -> f64 {
        self.alpha[age_idx] + self.beta[age_idx] * kappa
    }
}

const IMPUTATION_ROUNDS: usize = 10;
const BRACKET_WIDENINGS: usize = 5;

struct RankOne {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    kappa: Vec<f64>,
}

fn rank_one(y: &DMatrix<f64>) -> Result<RankOne> {
    let (na, ny) = y.shape();
    let alpha: Vec<f64> = (0..na).map(|i| y.row(i).sum() / ny as f64).collect();
    let z = DMatrix::from_fn(na, ny, |i, j| y[(i, j)] - alpha[i]);
    let scale = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let level = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // rounding noise from exp/ln round trips is treated as a constant surface
    if scale <= 1e-13 * (1.0 + level) {
        return Ok(RankOne {
            alpha,
            beta: vec![1.0 / na as f64; na],
            kappa: vec![0.0; ny],
        });
    }
    let svd = z.svd(true, true);
    let (k, s) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let u = svd.u.as_ref().unwrap().column(k).into_owned();
    let v = svd.v_t.as_ref().unwrap().row(k).transpose();
    let su = u.sum();
    if su.abs() < 1e-12 {
        return Err(Error::Numerical(
            "leading age component sums to zero; cannot impose Σβ = 1".into(),
        ));
    }
    Ok(RankOne {
        alpha,
        beta: u.iter().map(|b| b / su).collect(),
        kappa: v.iter().map(|kv| kv * s * su).collect(),
    })
}

/// Period life expectancy at the first age of `rates` with uniform deaths within
/// each age and an open last age group.
pub fn life_expectancy(rates: &[f64]) -> f64 {
    let mut l = 1.0;
    let mut total = 0.0;
    let last = rates.len() - 1;
    for (i, &m) in rates.iter().enumerate() {
        if i == last {
            total += l / m.max(1e-12);
        } else {
            let q = (m / (1.0 + 0.5 * m)).min(1.0);
            let d = l * q;
            total += l - 0.5 * d;
            l -= d;
        }
    }
    total
}

fn bisect(f: impl Fn(f64) -> f64, center: f64, half_width: f64, year: i32) -> Result<f64> {
    let mut w = half_width;
    for _ in 0..=BRACKET_WIDENINGS {
        let (mut lo, mut hi) = (center - w, center + w);
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            return Ok(lo);
        }
        if fhi == 0.0 {
            return Ok(hi);
        }
        if flo.signum() != fhi.signum() && flo.is_finite() && fhi.is_finite() {
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid);
                if fm == 0.0 {
                    return Ok(mid);
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        w *= 10.0;
    }
    Err(Error::BracketFailure { year })
}

fn golden_min(f: impl Fn(f64) -> f64, center: f64, half_width: f64, year: i32) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut w = half_width;
    for _ in 0..=BRACKET_WIDENINGS {
        let (mut a, mut b) = (center - w, center + w);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if (b - a).abs() <= 1e-13 * (1.0 + a.abs() + b.abs()) {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        let x = 0.5 * (a + b);
        let edge = 1e-6 * w;
        if x - (center - w) > edge && (center + w) - x > edge {
            return Ok(x);
        }
        w *= 10.0;
    }
    Err(Error::BracketFailure { year })
}

fn poisson_deviance(d: &[f64], mu: &[f64]) -> f64 {
    d.iter()
        .zip(mu)
        .map(|(&d, &m)| {
            let t = if d > 0.0 { d * (d / m).ln() } else { 0.0 };
            2.0 * (t - (d - m))
        })
        .sum()
}

pub fn fit_lc(ds: &MortalityDataset, adjustment: KappaAdjustment) -> Result<LcFit> {
    let (na, ny) = (ds.n_ages(), ds.n_years());
    if na < 2 || ny < 2 {
        return Err(Error::invalid("Lee-Carter needs at least 2 ages and 2 years"));
    }
    for j in 0..ny {
        for i in 0..na {
            if ds.weights[(i, j)] > 0.0 && !(ds.rates[(i, j)] > 0.0) {
                return Err(Error::NonPositiveRate {
                    age: ds.ages[i],
                    year: ds.years[j],
                });
            }
        }
    }
    let observed = |i: usize, j: usize| ds.weights[(i, j)] > 0.0;
    let mut y = DMatrix::from_fn(na, ny, |i, j| {
        if observed(i, j) {
            ds.rates[(i, j)].ln()
        } else {
            f64::NAN
        }
    });
    let complete = (0..na).all(|i| (0..ny).all(|j| observed(i, j)));
    let fit = if complete {
        rank_one(&y)?
    } else {
        for i in 0..na {
            let obs: Vec<f64> = (0..ny).filter(|&j| observed(i, j)).map(|j| y[(i, j)]).collect();
            if obs.is_empty() {
                return Err(Error::invalid(format!("age {} has no usable cells", ds.ages[i])));
            }
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            for j in 0..ny {
                if !observed(i, j) {
                    y[(i, j)] = mean;
                }
            }
        }
        let mut fit = rank_one(&y)?;
        for _ in 0..IMPUTATION_ROUNDS {
            for i in 0..na {
                for j in 0..ny {
                    if !observed(i, j) {
                        y[(i, j)] = fit.alpha[i] + fit.beta[i] * fit.kappa[j];
                    }
                }
            }
            fit = rank_one(&y)?;
        }
        fit
    };

    let spread = fit.kappa.iter().map(|k| k.abs()).fold(0.0, f64::max);
    let half_width = 1.0 + spread;
    let mut kappa_adjusted = fit.kappa.clone();
    for j in 0..ny {
        let year = ds.years[j];
        let cells: Vec<usize> = (0..na).filter(|&i| ds.exposures[(i, j)] > 0.0).collect();
        let k0 = fit.kappa[j];
        kappa_adjusted[j] = match adjustment {
            KappaAdjustment::None => k0,
            KappaAdjustment::RefitTotalDeaths => {
                let total: f64 = cells.iter().map(|&i| ds.deaths[(i, j)]).sum();
                let f = |k: f64| {
                    cells
                        .iter()
                        .map(|&i| ds.exposures[(i, j)] * (fit.alpha[i] + fit.beta[i] * k).exp())
                        .sum::<f64>()
                        - total
                };
                bisect(f, k0, half_width, year)?
            }
            KappaAdjustment::FitE0 => {
                let obs: Vec<f64> = (0..na)
                    .map(|i| {
                        let m = ds.rates[(i, j)];
                        if m.is_finite() {
                            m
                        } else {
                            (fit.alpha[i] + fit.beta[i] * k0).exp()
                        }
                    })
                    .collect();
                let target = life_expectancy(&obs);
                let f = |k: f64| {
                    let m: Vec<f64> = (0..na).map(|i| (fit.alpha[i] + fit.beta[i] * k).exp()).collect();
                    life_expectancy(&m) - target
                };
                bisect(f, k0, half_width, year)?
            }
            KappaAdjustment::FitDeathDistribution => {
                let d: Vec<f64> = cells.iter().map(|&i| ds.deaths[(i, j)]).collect();
                let f = |k: f64| {
                    let mu: Vec<f64> = cells
                        .iter()
                        .map(|&i| ds.exposures[(i, j)] * (fit.alpha[i] + fit.beta[i] * k).exp())
                        .collect();
                    poisson_deviance(&d, &mu)
                };
                golden_min(f, k0, half_width, year)?
            }
        };
    }

    let residual_var: Vec<f64> = (0..na)
        .map(|i| {
            let res: Vec<f64> = (0..ny)
                .filter(|&j| observed(i, j))
                .map(|j| ds.rates[(i, j)].ln() - fit.alpha[i] - fit.beta[i] * kappa_adjusted[j])
                .collect();
            if res.is_empty() {
                0.0
            } else {
                res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64
            }
        })
        .collect();
    let beta_sq = fit.beta.iter().map(|b| b * b).collect();
    Ok(LcFit {
        ages: ds.ages.clone(),
        years: ds.years.clone(),
        alpha: fit.alpha,
        beta: fit.beta,
        kappa: fit.kappa,
        kappa_adjusted,
        adjustment,
        residual_var,
        beta_sq,
    })
}

/// `b_x² u_h + v_x` for every age and horizon.
pub fn lc_forecast_variance(fit: &LcFit, u: &[f64]) -> Result<DMatrix<f64>> {
    if u.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("index forecast variances must be non-negative"));
    }
    Ok(DMatrix::from_fn(fit.alpha.len(), u.len(), |i, h| {
        fit.beta_sq[i] * u[h] + fit.residual_var[i]
    }))
}
