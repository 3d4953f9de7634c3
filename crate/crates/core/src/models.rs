//! The numbered model pool: data preparation, fitting and forecasting for
//! labels 1–17, plus the names of the two combined models 18–19.

use serde::{Deserialize, Serialize};

use crate::data::{smooth_log_rates, truncate_ages, LogRateSurface, MortalityDataset, Sex, SmoothingPenalty};
use crate::error::{Error, Result};
use crate::forecast::{
    forecast_coherent, forecast_fts, forecast_gapc, forecast_lc, forecast_multilevel, forecast_stacked,
    ForecastResult,
};
use crate::fts::{
    fpca, multilevel_fts_fit, multivariate_fts_fit, product_ratio_fit, robust_fpca, DEFAULT_COMPONENTS,
    DEFAULT_MULTILEVEL_COMPONENTS,
};
use crate::gapc::{fit_gapc, GapcModel, GapcSpec};
use crate::index::derive_seed;
use crate::lc::{fit_lc, KappaAdjustment};

pub const MCS_TMAX_LABEL: u32 = 18;
pub const MCS_TR_LABEL: u32 = 19;
/// Inverse-validation-error weighted pool; reported apart from the 19-row table.
pub const INVERSE_ERROR_LABEL: u32 = 20;

pub const POOL_LABELS: [u32; 17] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17];

pub fn model_name(label: u32) -> Option<&'static str> {
    Some(match label {
        1 => "LC (Poisson)",
        2 => "RH",
        3 => "APC",
        4 => "CBD",
        5 => "M6",
        6 => "M7",
        7 => "M8",
        8 => "Plat",
        9 => "LC (Gaussian, total deaths)",
        10 => "BMS",
        11 => "LM",
        12 => "LC (no adjustment)",
        13 => "FDM",
        14 => "Robust FDM",
        15 => "Product-ratio",
        16 => "Multivariate FDM",
        17 => "Multilevel FDM",
        18 => "MCS (T_max) equal weights",
        19 => "MCS (T_R) equal weights",
        20 => "Inverse-error weights",
        _ => return None,
    })
}

fn gapc_model(label: u32) -> Option<GapcModel> {
    match label {
        1..=8 => Some(GapcModel::ALL[label as usize - 1]),
        _ => None,
    }
}

fn lc_adjustment(label: u32) -> Option<KappaAdjustment> {
    match label {
        9 => Some(KappaAdjustment::RefitTotalDeaths),
        10 => Some(KappaAdjustment::FitDeathDistribution),
        11 => Some(KappaAdjustment::FitE0),
        12 => Some(KappaAdjustment::None),
        _ => None,
    }
}

/// Tuning shared by every model in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub min_age: u32,
    pub max_age: u32,
    pub fts_components: usize,
    pub multilevel_components: usize,
    pub outlier_level: f64,
    /// Fixed smoothing penalty; generalized cross-validation when absent.
    pub smoothing_penalty: Option<f64>,
    pub monotone: bool,
    pub gapc_tol: f64,
    pub gapc_max_iter: usize,
    pub n_sim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            min_age: 60,
            max_age: 100,
            fts_components: DEFAULT_COMPONENTS,
            multilevel_components: DEFAULT_MULTILEVEL_COMPONENTS,
            outlier_level: 0.99,
            smoothing_penalty: None,
            monotone: true,
            gapc_tol: 1e-6,
            gapc_max_iter: 500,
            n_sim: 1000,
        }
    }
}

impl ModelSettings {
    fn penalty(&self) -> SmoothingPenalty {
        match self.smoothing_penalty {
            Some(l) => SmoothingPenalty::Fixed(l),
            None => SmoothingPenalty::Gcv,
        }
    }
}

/// Female and male data for one population, on the raw age range.
#[derive(Debug, Clone)]
pub struct PopulationData {
    pub label: String,
    pub female: MortalityDataset,
    pub male: MortalityDataset,
}

impl PopulationData {
    pub fn new(label: impl Into<String>, female: MortalityDataset, male: MortalityDataset) -> Result<Self> {
        if female.ages != male.ages || female.years != male.years {
            return Err(Error::dims("female and male data must share ages and years"));
        }
        Ok(PopulationData {
            label: label.into(),
            female,
            male,
        })
    }
}

fn sex_index(sex: Sex) -> Result<usize> {
    match sex {
        Sex::Female => Ok(0),
        Sex::Male => Ok(1),
        Sex::Total => Err(Error::invalid("the model pool forecasts female or male rates")),
    }
}

/// Age-truncated raw data and smoothed log-rate surfaces for both sexes.
#[derive(Debug, Clone)]
pub struct PreparedPopulation {
    pub label: String,
    /// `[female, male]`, truncated to the model age window.
    pub raw: [MortalityDataset; 2],
    /// `[female, male]`, smoothed over the full age range, then truncated.
    pub smooth: [LogRateSurface; 2],
}

impl PreparedPopulation {
    pub fn raw(&self, sex: Sex) -> Result<&MortalityDataset> {
        Ok(&self.raw[sex_index(sex)?])
    }

    pub fn years(&self) -> &[i32] {
        &self.raw[0].years
    }

    /// Observed log rates in `year`; NaN where the cell carries no weight.
    pub fn actual(&self, sex: Sex, year: i32) -> Option<Vec<f64>> {
        let ds = self.raw(sex).ok()?;
        let j = ds.year_index(year)?;
        Some(
            (0..ds.n_ages())
                .map(|i| {
                    if ds.weights[(i, j)] > 0.0 {
                        ds.rates[(i, j)].ln()
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        )
    }
}

fn smoothed_surface(ds: &MortalityDataset, settings: &ModelSettings) -> Result<LogRateSurface> {
    let full = truncate_ages(ds, ds.ages[0].min(settings.min_age), settings.max_age)?;
    let mut s = smooth_log_rates(&full, settings.penalty(), false)?.select_ages(settings.min_age, settings.max_age)?;
    if settings.monotone {
        s.project_monotone();
    }
    Ok(s)
}

pub fn prepare_population(data: &PopulationData, settings: &ModelSettings) -> Result<PreparedPopulation> {
    let raw_f = truncate_ages(&data.female, settings.min_age, settings.max_age)?;
    let raw_m = truncate_ages(&data.male, settings.min_age, settings.max_age)?;
    let (sf, sm) = rayon::join(
        || smoothed_surface(&data.female, settings),
        || smoothed_surface(&data.male, settings),
    );
    Ok(PreparedPopulation {
        label: data.label.clone(),
        raw: [raw_f, raw_m],
        smooth: [sf?, sm?],
    })
}

/// Fits model `label` on years `first_year..=last_year` and forecasts `h` steps.
#[allow(clippy::too_many_arguments)]
pub fn forecast_model(
    label: u32,
    prep: &PreparedPopulation,
    target: Sex,
    first_year: i32,
    last_year: i32,
    h: usize,
    alpha: f64,
    settings: &ModelSettings,
    seed: u64,
) -> Result<ForecastResult> {
    let t = sex_index(target)?;
    let raw = || prep.raw[t].slice_years(first_year, last_year);
    let surfaces = || -> Result<[LogRateSurface; 2]> {
        Ok([
            prep.smooth[0].slice_years(first_year, last_year)?,
            prep.smooth[1].slice_years(first_year, last_year)?,
        ])
    };
    let k = settings.fts_components;
    let result = if let Some(model) = gapc_model(label) {
        let fit = fit_gapc(&GapcSpec::new(model), &raw()?, settings.gapc_tol, settings.gapc_max_iter)?;
        if !fit.converged {
            log::warn!("{} {}: model {label} did not converge by {last_year}", prep.label, target.as_str());
        }
        forecast_gapc(&fit, h, alpha, settings.n_sim, derive_seed(seed, &[label as u64]))?
    } else if let Some(adj) = lc_adjustment(label) {
        forecast_lc(&fit_lc(&raw()?, adj)?, h, alpha)?
    } else {
        match label {
            13 => forecast_fts(&fpca(&surfaces()?[t], k)?, h, alpha)?,
            14 => forecast_fts(&robust_fpca(&surfaces()?[t], k, settings.outlier_level)?, h, alpha)?,
            15 => {
                let [f, m] = surfaces()?;
                let (fem, mal) = forecast_coherent(&product_ratio_fit(&f, &m, k)?, h, alpha)?;
                if t == 0 {
                    fem
                } else {
                    mal
                }
            }
            16 => forecast_stacked(&multivariate_fts_fit(&surfaces()?, k)?, h, alpha)?.swap_remove(t),
            17 => {
                let kc = settings.multilevel_components;
                forecast_multilevel(&multilevel_fts_fit(&surfaces()?, kc, kc)?, h, alpha)?.swap_remove(t)
            }
            _ => return Err(Error::invalid(format!("unknown model label {label}"))),
        }
    };
    Ok(result.with_label(label))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    /// Poisson deaths from a Lee-Carter-like surface with a sex offset.
    pub(crate) fn synthetic_population(ages: std::ops::RangeInclusive<u32>, years: std::ops::RangeInclusive<i32>, seed: u64) -> PopulationData {
        let ages: Vec<u32> = ages.collect();
        let years: Vec<i32> = years.collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |sex: Sex, offset: f64| {
            let e = DMatrix::from_fn(ages.len(), years.len(), |i, _| 2e5 * (-0.04 * i as f64).exp() + 500.0);
            let d = DMatrix::from_fn(ages.len(), years.len(), |i, j| {
                let x = ages[i] as f64;
                let ln_m = -10.0 + offset + 0.1 * x - (0.015 - 0.0001 * (x - 60.0)) * j as f64;
                let lambda = e[(i, j)] * ln_m.exp().min(0.9);
                Poisson::new(lambda).unwrap().sample(&mut rng).max(1.0)
            });
            MortalityDataset::new("synth", sex, ages.clone(), years.clone(), d, e).unwrap()
        };
        let female = make(Sex::Female, 0.0);
        let male = make(Sex::Male, 0.4);
        PopulationData::new("synth", female, male).unwrap()
    }

    fn small_settings() -> ModelSettings {
        ModelSettings {
            min_age: 60,
            max_age: 70,
            fts_components: 3,
            n_sim: 200,
            gapc_max_iter: 300,
            ..ModelSettings::default()
        }
    }

    #[test]
    fn every_pool_model_forecasts() {
        let data = synthetic_population(50..=75, 1980..=2000, 3);
        let settings = small_settings();
        let prep = prepare_population(&data, &settings).unwrap();
        assert_eq!(prep.raw[0].ages.len(), 11);
        assert!(prep.raw[0].open_age);
        for label in POOL_LABELS {
            for sex in [Sex::Female, Sex::Male] {
                let r = forecast_model(label, &prep, sex, 1980, 1995, 2, 0.2, &settings, 4)
                    .unwrap_or_else(|e| panic!("model {label}: {e}"));
                assert_eq!(r.model_label, label);
                assert_eq!(r.point.shape(), (11, 2));
                for ((l, p), u) in r.lower.iter().zip(r.point.iter()).zip(r.upper.iter()) {
                    assert!(l <= p && p <= u, "model {label}");
                }
                let actual = prep.actual(sex, 1996).unwrap();
                let err: f64 = actual.iter().zip(r.point.column(0).iter()).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
                assert!(err < 0.5, "model {label} {sex:?}: max error {err}");
            }
        }
    }

    #[test]
    fn smoothed_surface_is_monotone_on_window() {
        let data = synthetic_population(50..=75, 1980..=1990, 8);
        let prep = prepare_population(&data, &small_settings()).unwrap();
        let s = &prep.smooth[1];
        assert_eq!(s.ages, (60..=70).collect::<Vec<_>>());
        for j in 0..s.n_years() {
            for i in 1..s.n_ages() {
                assert!(s.values[(i, j)] >= s.values[(i - 1, j)]);
            }
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let data = synthetic_population(60..=72, 1980..=1990, 1);
        let settings = small_settings();
        let prep = prepare_population(&data, &settings).unwrap();
        assert!(forecast_model(21, &prep, Sex::Female, 1980, 1990, 1, 0.2, &settings, 0).is_err());
        assert!(forecast_model(13, &prep, Sex::Total, 1980, 1990, 1, 0.2, &settings, 0).is_err());
    }

    #[test]
    fn names_cover_table() {
        assert!((1..=20).all(|l| model_name(l).is_some()));
        assert!(model_name(0).is_none());
    }
}
