//! Point forecasts and prediction intervals for log mortality rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fts::{matrix_rows, CoherentFit, FtsFit, MultilevelFit, StackedFit};
use crate::gapc::GapcFit;
use crate::index::{
    derive_seed, fit_arima, fit_mrwd, fit_rwd, forecast_arima, forecast_mrwd, forecast_rwd, simulate_index,
    IndexModel,
};
use crate::lc::{lc_forecast_variance, LcFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub model_label: u32,
    pub ages: Vec<u32>,
    pub horizons: Vec<usize>,
    /// ages × horizons, log scale
    #[serde(with = "matrix_rows")]
    pub point: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub lower: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub upper: DMatrix<f64>,
    pub alpha: f64,
    pub metadata: BTreeMap<String, String>,
}

impl ForecastResult {
    pub fn with_label(mut self, label: u32) -> Self {
        self.model_label = label;
        self
    }

    /// Forecast curve at horizon `h` (1-based).
    pub fn point_at(&self, h: usize) -> Vec<f64> {
        self.point.column(h - 1).iter().copied().collect()
    }

    pub fn lower_at(&self, h: usize) -> Vec<f64> {
        self.lower.column(h - 1).iter().copied().collect()
    }

    pub fn upper_at(&self, h: usize) -> Vec<f64> {
        self.upper.column(h - 1).iter().copied().collect()
    }
}

pub const FORECAST_CSV_HEADER: &str = "model,age,horizon,point,lower,upper";

pub fn forecast_csv(results: &[ForecastResult]) -> String {
    let mut out = String::from(FORECAST_CSV_HEADER);
    out.push('\n');
    for r in results {
        for (i, age) in r.ages.iter().enumerate() {
            for (c, h) in r.horizons.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.model_label,
                    age,
                    h,
                    r.point[(i, c)],
                    r.lower[(i, c)],
                    r.upper[(i, c)]
                );
            }
        }
    }
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_horizon(h: usize) -> Result<()> {
    if h == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok(())
}

/// Standard normal quantile `z_{1−α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Symmetric Gaussian interval around `point` with the given variances.
pub fn gaussian_result(ages: Vec<u32>, point: DMatrix<f64>, var: &DMatrix<f64>, alpha: f64) -> Result<ForecastResult> {
    check_alpha(alpha)?;
    if point.shape() != var.shape() {
        return Err(Error::dims("point and variance matrices differ in shape"));
    }
    let z = normal_quantile(alpha);
    let half = var.map(|v| z * v.max(0.0).sqrt());
    let mut metadata = BTreeMap::new();
    metadata.insert("interval_method".to_string(), "gaussian".to_string());
    Ok(ForecastResult {
        model_label: 0,
        ages,
        horizons: (1..=point.ncols()).collect(),
        lower: &point - &half,
        upper: &point + &half,
        point,
        alpha,
        metadata,
    })
}

pub fn forecast_lc(fit: &LcFit, h: usize, alpha: f64) -> Result<ForecastResult> {
    check_alpha(alpha)?;
    check_horizon(h)?;
    let rwd = fit_rwd(&fit.kappa_adjusted)?;
    let (kappa, u) = forecast_rwd(&rwd, h);
    let point = DMatrix::from_fn(fit.alpha.len(), h, |i, s| fit.alpha[i] + fit.beta[i] * kappa[s]);
    let var = lc_forecast_variance(fit, &u)?;
    gaussian_result(fit.ages.clone(), point, &var, alpha)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Period indices by a multivariate random walk with drift and the cohort
/// index by ARIMA(1,1,0) with drift; intervals are empirical quantiles of the
/// predictor over simulated index paths.
pub fn forecast_gapc(fit: &GapcFit, h: usize, alpha: f64, n_sim: usize, seed: u64) -> Result<ForecastResult> {
    check_alpha(alpha)?;
    check_horizon(h)?;
    if n_sim < 100 {
        return Err(Error::invalid(format!("n_sim must be at least 100, got {n_sim}")));
    }
    let (k, n, q) = (fit.n_ages(), fit.n_years(), fit.spec.n_terms());
    let series = fit.kappas.transpose();
    let period = IndexModel::Mrwd(fit_mrwd(&series)?);
    let IndexModel::Mrwd(pm) = &period else { unreachable!() };
    let (kappa_mean, _) = forecast_mrwd(pm, h);

    let mut metadata = BTreeMap::new();
    metadata.insert("interval_method".to_string(), "index_simulation".to_string());

    // cohort index: observed up to the last included cohort, forecast beyond
    let last_included = fit.cohort_included.iter().rposition(|&b| b);
    let max_cohort = (n - 1 + h) + (k - 1);
    let mut cohort_model = None;
    let mut cohort_steps = 0;
    if fit.spec.has_cohort() {
        if let Some(last) = last_included {
            let first = fit.cohort_included.iter().position(|&b| b).unwrap();
            let gamma: Vec<f64> = fit.gamma[first..=last].to_vec();
            cohort_steps = max_cohort - last;
            let model = fit_arima(&gamma, 1, 0, true).or_else(|_| fit_arima(&gamma, 0, 0, true));
            match model {
                Ok(m) => cohort_model = Some(m),
                Err(e) => {
                    log::warn!("cohort index not forecastable ({e}); later cohorts set to zero");
                }
            }
            let extrapolated: Vec<String> = ((last + 1)..=max_cohort)
                .filter(|&c| (0..k).any(|i| (n..n + h).any(|j| j + k - 1 - i == c)))
                .map(|c| (fit.cohorts[0] + c as i32).to_string())
                .collect();
            metadata.insert("extrapolated_cohorts".to_string(), extrapolated.join(" "));
        }
    }
    let cohort_mean: Vec<f64> = match &cohort_model {
        Some(m) => forecast_arima(m, cohort_steps).0,
        None => vec![0.0; cohort_steps],
    };
    let gamma_at = |c: usize, path: Option<&[f64]>| -> f64 {
        match last_included {
            Some(last) if c > last => {
                let step = c - last - 1;
                match path {
                    Some(p) => p[step],
                    None => cohort_mean.get(step).copied().unwrap_or(0.0),
                }
            }
            _ => fit.gamma.get(c).copied().unwrap_or(0.0),
        }
    };

    let point = DMatrix::from_fn(k, h, |i, s| {
        let kappa: Vec<f64> = (0..q).map(|r| kappa_mean[(s, r)]).collect();
        fit.predictor(i, &kappa, gamma_at(n + s + k - 1 - i, None))
    });

    let period_paths = simulate_index(&period, h, n_sim, derive_seed(seed, &[1]))?;
    let cohort_paths = match &cohort_model {
        Some(m) if cohort_steps > 0 => Some(simulate_index(
            &IndexModel::Arima(m.clone()),
            cohort_steps,
            n_sim,
            derive_seed(seed, &[2]),
        )?),
        _ => None,
    };
    let mut lower = DMatrix::zeros(k, h);
    let mut upper = DMatrix::zeros(k, h);
    let mut draws = vec![0.0; n_sim];
    let mut kappa = vec![0.0; q];
    let mut cpath = vec![0.0; cohort_steps];
    for s in 0..h {
        for i in 0..k {
            let c = n + s + k - 1 - i;
            for (p, slot) in draws.iter_mut().enumerate() {
                for (r, kv) in kappa.iter_mut().enumerate() {
                    *kv = period_paths.get(p, s, r);
                }
                let g = match &cohort_paths {
                    Some(cp) => {
                        for (st, v) in cpath.iter_mut().enumerate() {
                            *v = cp.get(p, st, 0);
                        }
                        gamma_at(c, Some(&cpath))
                    }
                    None => gamma_at(c, None),
                };
                *slot = fit.predictor(i, &kappa, g);
            }
            draws.sort_by(f64::total_cmp);
            let pt = point[(i, s)];
            lower[(i, s)] = quantile_sorted(&draws, alpha / 2.0).min(pt);
            upper[(i, s)] = quantile_sorted(&draws, 1.0 - alpha / 2.0).max(pt);
        }
    }
    Ok(ForecastResult {
        model_label: 0,
        ages: fit.ages.clone(),
        horizons: (1..=h).collect(),
        point,
        lower,
        upper,
        alpha,
        metadata,
    })
}

/// Score series with down-weighted years replaced by linear interpolation
/// between the nearest kept years (held constant beyond the ends).
fn fill_flagged(series: &[f64], weights: &[f64]) -> Vec<f64> {
    let kept: Vec<usize> = (0..series.len()).filter(|&t| weights[t] > 0.0).collect();
    if kept.len() == series.len() || kept.is_empty() {
        return series.to_vec();
    }
    (0..series.len())
        .map(|t| {
            if weights[t] > 0.0 {
                return series[t];
            }
            let prev = kept.iter().rev().find(|&&s| s < t);
            let next = kept.iter().find(|&&s| s > t);
            match (prev, next) {
                (Some(&a), Some(&b)) => {
                    let f = (t - a) as f64 / (b - a) as f64;
                    series[a] + f * (series[b] - series[a])
                }
                (Some(&a), None) => series[a],
                (None, Some(&b)) => series[b],
                (None, None) => series[t],
            }
        })
        .collect()
}

/// Forecast mean and variance of `μ + Σ φ_k β_k` with independent random
/// walks on the scores; `with_residual` adds the per-age residual variance.
pub fn fts_moments(fit: &FtsFit, h: usize, with_residual: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_horizon(h)?;
    let np = fit.n_points();
    let mut point = DMatrix::from_fn(np, h, |i, _| fit.mu[i]);
    let mut var = DMatrix::from_fn(np, h, |i, _| if with_residual { fit.residual_var[i] } else { 0.0 });
    for c in 0..fit.k {
        let raw: Vec<f64> = fit.scores.column(c).iter().copied().collect();
        let series = fill_flagged(&raw, &fit.obs_weights);
        let (mean, u) = forecast_rwd(&fit_rwd(&series)?, h);
        for i in 0..np {
            let phi = fit.components[(i, c)];
            for s in 0..h {
                point[(i, s)] += phi * mean[s];
                var[(i, s)] += phi * phi * u[s];
            }
        }
    }
    Ok((point, var))
}

pub fn forecast_fts(fit: &FtsFit, h: usize, alpha: f64) -> Result<ForecastResult> {
    let (point, var) = fts_moments(fit, h, true)?;
    gaussian_result(fit.ages.clone(), point, &var, alpha)
}

/// Female and male forecasts from product and ratio fits.
pub fn forecast_coherent(fit: &CoherentFit, h: usize, alpha: f64) -> Result<(ForecastResult, ForecastResult)> {
    let (pp, pv) = fts_moments(&fit.product_fit, h, true)?;
    let (rp, rv) = fts_moments(&fit.ratio_fit, h, true)?;
    let var = &pv + &rv;
    let ages = fit.product_fit.ages.clone();
    let female = gaussian_result(ages.clone(), &pp - &rp, &var, alpha)?;
    let male = gaussian_result(ages, &pp + &rp, &var, alpha)?;
    Ok((female, male))
}

/// One forecast per stacked population.
pub fn forecast_stacked(fit: &StackedFit, h: usize, alpha: f64) -> Result<Vec<ForecastResult>> {
    let (point, var) = fts_moments(&fit.fit, h, true)?;
    let mut out = Vec::with_capacity(fit.segments.len());
    let mut start = 0;
    for &len in &fit.segments {
        let ages = fit.fit.ages[start..start + len].to_vec();
        out.push(gaussian_result(
            ages,
            point.rows(start, len).into_owned(),
            &var.rows(start, len).into_owned(),
            alpha,
        )?);
        start += len;
    }
    Ok(out)
}

/// One forecast per population: mean + common trend + specific trend, with the
/// variances of the independent parts added.
pub fn forecast_multilevel(fit: &MultilevelFit, h: usize, alpha: f64) -> Result<Vec<ForecastResult>> {
    let (cp, cv) = fts_moments(&fit.common, h, false)?;
    fit.specific
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let (sp, sv) = fts_moments(spec, h, true)?;
            let point = DMatrix::from_fn(cp.nrows(), h, |i, s| fit.mus[j][i] + cp[(i, s)] + sp[(i, s)]);
            gaussian_result(spec.ages.clone(), point, &(&cv + &sv), alpha)
        })
        .collect()
}
