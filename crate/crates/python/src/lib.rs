//! Python bindings for mortcast-core.

use std::path::PathBuf;

use mortcast_core::combine::{self, CombinationWeights};
use mortcast_core::data::{self, LogRateSurface, MortalityDataset, Sex, SmoothingPenalty};
use mortcast_core::eval::{self, LossKind, LossPanel};
use mortcast_core::forecast::{self, ForecastResult};
use mortcast_core::fts::{self, FtsFit};
use mortcast_core::gapc::{self, GapcFit, GapcModel, GapcSpec};
use mortcast_core::lc::{self, KappaAdjustment, LcFit};
use mortcast_core::mcs::{self, McsConfig, McsResult, McsStatistic};
use mortcast_core::pipeline::{self, PipelineConfig, Stage};
use mortcast_core::Error;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingArtifact { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!("{what}: rows differ in length")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn parse_sex(s: &str) -> PyResult<Sex> {
    match s {
        "female" => Ok(Sex::Female),
        "male" => Ok(Sex::Male),
        "total" => Ok(Sex::Total),
        _ => Err(PyValueError::new_err(format!("unknown sex `{s}`"))),
    }
}

fn parse_gapc_model(s: &str) -> PyResult<GapcModel> {
    Ok(match s.to_ascii_uppercase().as_str() {
        "LC" | "LC_POISSON" => GapcModel::LcPoisson,
        "RH" => GapcModel::Rh,
        "APC" => GapcModel::Apc,
        "CBD" => GapcModel::Cbd,
        "M6" => GapcModel::M6,
        "M7" => GapcModel::M7,
        "M8" => GapcModel::M8,
        "PLAT" => GapcModel::Plat,
        _ => return Err(PyValueError::new_err(format!("unknown model `{s}`"))),
    })
}

fn parse_adjustment(s: &str) -> PyResult<KappaAdjustment> {
    Ok(match s {
        "none" => KappaAdjustment::None,
        "total_deaths" => KappaAdjustment::RefitTotalDeaths,
        "e0" => KappaAdjustment::FitE0,
        "death_distribution" => KappaAdjustment::FitDeathDistribution,
        _ => return Err(PyValueError::new_err(format!("unknown adjustment `{s}`"))),
    })
}

fn parse_loss_kind(s: &str) -> PyResult<LossKind> {
    match s {
        "rmsfe" => Ok(LossKind::Rmsfe),
        "interval_score" => Ok(LossKind::MeanIntervalScore),
        _ => Err(PyValueError::new_err(format!("unknown loss kind `{s}`"))),
    }
}

#[pyclass(name = "Dataset", module = "mortcast", frozen)]
struct PyDataset(MortalityDataset);

#[pymethods]
impl PyDataset {
    #[new]
    fn new(
        label: &str,
        sex: &str,
        ages: Vec<u32>,
        years: Vec<i32>,
        deaths: Vec<Vec<f64>>,
        exposures: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let d = matrix(&deaths, "deaths")?;
        let e = matrix(&exposures, "exposures")?;
        MortalityDataset::new(label, parse_sex(sex)?, ages, years, d, e)
            .map(PyDataset)
            .map_err(py_err)
    }

    /// Reads a deaths/exposures pair of HMD period tables.
    #[staticmethod]
    fn from_hmd(deaths_text: &str, exposures_text: &str, label: &str, sex: &str) -> PyResult<Self> {
        data::load_hmd_table(deaths_text, exposures_text, label, parse_sex(sex)?)
            .map(PyDataset)
            .map_err(py_err)
    }

    #[getter]
    fn ages(&self) -> Vec<u32> {
        self.0.ages.clone()
    }

    #[getter]
    fn years(&self) -> Vec<i32> {
        self.0.years.clone()
    }

    #[getter]
    fn rates(&self) -> Vec<Vec<f64>> {
        rows(&self.0.rates)
    }

    #[getter]
    fn log_rates(&self) -> Vec<Vec<f64>> {
        rows(&self.0.log_rates())
    }

    fn truncate_ages(&self, min_age: u32, max_age: u32) -> PyResult<Self> {
        data::truncate_ages(&self.0, min_age, max_age)
            .map(PyDataset)
            .map_err(py_err)
    }

    fn slice_years(&self, first: i32, last: i32) -> PyResult<Self> {
        self.0.slice_years(first, last).map(PyDataset).map_err(py_err)
    }

    /// Smoothed log-rate surface. `penalty=None` selects it by GCV.
    #[pyo3(signature = (penalty=None, monotone=true))]
    fn smooth(&self, penalty: Option<f64>, monotone: bool) -> PyResult<PySurface> {
        let p = penalty.map_or(SmoothingPenalty::Gcv, SmoothingPenalty::Fixed);
        data::smooth_log_rates(&self.0, p, monotone)
            .map(PySurface)
            .map_err(py_err)
    }

    fn surface(&self) -> PySurface {
        PySurface(LogRateSurface::from_dataset(&self.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({}, {}, ages {}..={}, years {}..={})",
            self.0.population_label,
            self.0.sex.as_str(),
            self.0.ages[0],
            self.0.ages[self.0.ages.len() - 1],
            self.0.years[0],
            self.0.years[self.0.years.len() - 1]
        )
    }
}

#[pyclass(name = "Surface", module = "mortcast", frozen)]
struct PySurface(LogRateSurface);

#[pymethods]
impl PySurface {
    #[new]
    fn new(ages: Vec<u32>, years: Vec<i32>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        LogRateSurface::from_values(ages, years, matrix(&values, "values")?)
            .map(PySurface)
            .map_err(py_err)
    }

    #[getter]
    fn ages(&self) -> Vec<u32> {
        self.0.ages.clone()
    }

    #[getter]
    fn years(&self) -> Vec<i32> {
        self.0.years.clone()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows(&self.0.values)
    }
}

#[pyclass(name = "Forecast", module = "mortcast", frozen, from_py_object)]
#[derive(Clone)]
struct PyForecast(ForecastResult);

#[pymethods]
impl PyForecast {
    #[getter]
    fn model_label(&self) -> u32 {
        self.0.model_label
    }

    #[getter]
    fn ages(&self) -> Vec<u32> {
        self.0.ages.clone()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    /// ages × horizons, log scale
    #[getter]
    fn point(&self) -> Vec<Vec<f64>> {
        rows(&self.0.point)
    }

    #[getter]
    fn lower(&self) -> Vec<Vec<f64>> {
        rows(&self.0.lower)
    }

    #[getter]
    fn upper(&self) -> Vec<Vec<f64>> {
        rows(&self.0.upper)
    }

    fn to_csv(&self) -> String {
        forecast::forecast_csv(std::slice::from_ref(&self.0))
    }
}

#[pyclass(name = "LcFit", module = "mortcast", frozen)]
struct PyLcFit(LcFit);

#[pymethods]
impl PyLcFit {
    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.0.alpha.clone()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.0.beta.clone()
    }

    #[getter]
    fn kappa(&self) -> Vec<f64> {
        self.0.kappa.clone()
    }

    #[getter]
    fn kappa_adjusted(&self) -> Vec<f64> {
        self.0.kappa_adjusted.clone()
    }

    #[pyo3(signature = (h, alpha=0.2))]
    fn forecast(&self, h: usize, alpha: f64) -> PyResult<PyForecast> {
        forecast::forecast_lc(&self.0, h, alpha).map(PyForecast).map_err(py_err)
    }
}

#[pyclass(name = "GapcFit", module = "mortcast", frozen)]
struct PyGapcFit(GapcFit);

#[pymethods]
impl PyGapcFit {
    #[getter]
    fn alpha(&self) -> Option<Vec<f64>> {
        self.0.alpha.clone()
    }

    /// ages × terms
    #[getter]
    fn betas(&self) -> Vec<Vec<f64>> {
        rows(&self.0.betas)
    }

    /// terms × years
    #[getter]
    fn kappas(&self) -> Vec<Vec<f64>> {
        rows(&self.0.kappas)
    }

    #[getter]
    fn cohorts(&self) -> Vec<i32> {
        self.0.cohorts.clone()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.0.gamma.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn deviance_trace(&self) -> Vec<f64> {
        self.0.deviance_trace.clone()
    }

    fn deviance(&self) -> f64 {
        self.0.deviance()
    }

    fn fitted_log_rates(&self) -> Vec<Vec<f64>> {
        rows(&self.0.fitted_log_rates)
    }

    /// Largest absolute violation among the identifiability constraints.
    fn max_constraint_residual(&self) -> f64 {
        gapc::constraint_residuals(&self.0)
            .iter()
            .map(|(_, r)| r.abs())
            .fold(0.0, f64::max)
    }

    #[pyo3(signature = (h, alpha=0.2, n_sim=1000, seed=1))]
    fn forecast(&self, h: usize, alpha: f64, n_sim: usize, seed: u64) -> PyResult<PyForecast> {
        forecast::forecast_gapc(&self.0, h, alpha, n_sim, seed)
            .map(PyForecast)
            .map_err(py_err)
    }
}

#[pyclass(name = "FtsFit", module = "mortcast", frozen)]
struct PyFtsFit(FtsFit);

#[pymethods]
impl PyFtsFit {
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.0.mu.clone()
    }

    /// ages × components
    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        rows(&self.0.components)
    }

    /// years × components
    #[getter]
    fn scores(&self) -> Vec<Vec<f64>> {
        rows(&self.0.scores)
    }

    #[getter]
    fn obs_weights(&self) -> Vec<f64> {
        self.0.obs_weights.clone()
    }

    #[pyo3(signature = (h, alpha=0.2))]
    fn forecast(&self, h: usize, alpha: f64) -> PyResult<PyForecast> {
        forecast::forecast_fts(&self.0, h, alpha).map(PyForecast).map_err(py_err)
    }
}

#[pyclass(name = "LossPanel", module = "mortcast", frozen)]
struct PyLossPanel(LossPanel);

#[pymethods]
impl PyLossPanel {
    /// `losses` is models × periods.
    #[new]
    #[pyo3(signature = (model_labels, periods, losses, loss_kind="rmsfe"))]
    fn new(model_labels: Vec<u32>, periods: Vec<i32>, losses: Vec<Vec<f64>>, loss_kind: &str) -> PyResult<Self> {
        LossPanel::new(model_labels, periods, matrix(&losses, "losses")?, parse_loss_kind(loss_kind)?)
            .map(PyLossPanel)
            .map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (text, loss_kind="rmsfe"))]
    fn from_csv(text: &str, loss_kind: &str) -> PyResult<Self> {
        LossPanel::from_csv(text, parse_loss_kind(loss_kind)?)
            .map(PyLossPanel)
            .map_err(py_err)
    }

    #[getter]
    fn model_labels(&self) -> Vec<u32> {
        self.0.model_labels.clone()
    }

    #[getter]
    fn periods(&self) -> Vec<i32> {
        self.0.periods.clone()
    }

    fn mean_losses(&self) -> Vec<f64> {
        self.0.mean_losses()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

#[pyclass(name = "McsResult", module = "mortcast", frozen)]
struct PyMcsResult(McsResult);

#[pymethods]
impl PyMcsResult {
    #[getter]
    fn superior_set(&self) -> Vec<u32> {
        self.0.superior_set.clone()
    }

    #[getter]
    fn block_length(&self) -> usize {
        self.0.block_length
    }

    /// `(model, p_value)` pairs: eliminated models first, in order, then survivors.
    #[getter]
    fn p_values(&self) -> Vec<(u32, f64)> {
        self.0.mcs_p_values.iter().map(|p| (p.model, p.p_value)).collect()
    }

    /// `(model, statistic, p_value)` per elimination round.
    #[getter]
    fn elimination_trace(&self) -> Vec<(u32, f64, f64)> {
        self.0
            .elimination_trace
            .iter()
            .map(|s| (s.model, s.statistic, s.p_value))
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (ds, adjustment="none"))]
fn fit_lc(ds: &PyDataset, adjustment: &str) -> PyResult<PyLcFit> {
    lc::fit_lc(&ds.0, parse_adjustment(adjustment)?)
        .map(PyLcFit)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (ds, model, tol=1e-6, max_iter=500))]
fn fit_gapc(ds: &PyDataset, model: &str, tol: f64, max_iter: usize) -> PyResult<PyGapcFit> {
    let spec = GapcSpec::new(parse_gapc_model(model)?);
    gapc::fit_gapc(&spec, &ds.0, tol, max_iter)
        .map(PyGapcFit)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (surface, k, robust=false, outlier_level=0.99))]
fn fpca(surface: &PySurface, k: usize, robust: bool, outlier_level: f64) -> PyResult<PyFtsFit> {
    let fit = if robust {
        fts::robust_fpca(&surface.0, k, outlier_level)
    } else {
        fts::fpca(&surface.0, k)
    };
    fit.map(PyFtsFit).map_err(py_err)
}

/// Coherent female and male forecasts from product and ratio functions.
#[pyfunction]
#[pyo3(signature = (female, male, k, h, alpha=0.2))]
fn forecast_product_ratio(
    female: &PySurface,
    male: &PySurface,
    k: usize,
    h: usize,
    alpha: f64,
) -> PyResult<(PyForecast, PyForecast)> {
    let fit = fts::product_ratio_fit(&female.0, &male.0, k).map_err(py_err)?;
    let (f, m) = forecast::forecast_coherent(&fit, h, alpha).map_err(py_err)?;
    Ok((PyForecast(f), PyForecast(m)))
}

#[pyfunction]
fn rmsfe(actual: Vec<f64>, forecast: Vec<f64>) -> PyResult<f64> {
    eval::rmsfe(&actual, &forecast).map_err(py_err)
}

#[pyfunction]
fn interval_score(lower: f64, upper: f64, y: f64, alpha: f64) -> PyResult<f64> {
    eval::interval_score(lower, upper, y, alpha).map_err(py_err)
}

#[pyfunction]
fn mean_interval_score(lower: Vec<f64>, upper: Vec<f64>, actual: Vec<f64>, alpha: f64) -> PyResult<f64> {
    eval::mean_interval_score(&lower, &upper, &actual, alpha).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (panel, statistic="T_MAX", confidence=0.9, n_bootstrap=5000, block_length=None, seed=1))]
fn run_mcs(
    panel: &PyLossPanel,
    statistic: &str,
    confidence: f64,
    n_bootstrap: usize,
    block_length: Option<usize>,
    seed: u64,
) -> PyResult<PyMcsResult> {
    let stat = match statistic {
        "T_MAX" => McsStatistic::TMax,
        "T_R" => McsStatistic::TR,
        _ => return Err(PyValueError::new_err(format!("unknown statistic `{statistic}`"))),
    };
    let config = McsConfig {
        confidence,
        n_bootstrap,
        block_length,
        ..McsConfig::new(stat, seed)
    };
    mcs::run_mcs(&panel.0, &config).map(PyMcsResult).map_err(py_err)
}

fn weight_pairs(w: CombinationWeights) -> Vec<(u32, f64)> {
    w.model_labels.into_iter().zip(w.weights).collect()
}

#[pyfunction]
fn equal_weights(superior_set: Vec<u32>) -> PyResult<Vec<(u32, f64)>> {
    combine::equal_weights(&superior_set)
        .map(weight_pairs)
        .map_err(py_err)
}

#[pyfunction]
fn inverse_error_weights(labels: Vec<u32>, mean_losses: Vec<f64>) -> PyResult<Vec<(u32, f64)>> {
    combine::inverse_error_weights(&labels, &mean_losses)
        .map(weight_pairs)
        .map_err(py_err)
}

/// Weighted average of forecasts; `weights` pairs model labels with weights.
#[pyfunction]
fn combine_forecasts(forecasts: Vec<PyForecast>, weights: Vec<(u32, f64)>, label: u32) -> PyResult<PyForecast> {
    let (labels, ws): (Vec<u32>, Vec<f64>) = weights.into_iter().unzip();
    let w = CombinationWeights {
        model_labels: labels,
        weights: ws,
        provenance: combine::WeightProvenance::InverseError,
    };
    let results: Vec<ForecastResult> = forecasts.into_iter().map(|f| f.0).collect();
    combine::combine_forecasts(&results, &w, label)
        .map(PyForecast)
        .map_err(py_err)
}

/// Runs pipeline stages from a TOML config and returns the written paths.
#[pyfunction]
#[pyo3(signature = (config_path, stage="all", population="both", seed=None))]
fn run_pipeline(config_path: PathBuf, stage: &str, population: &str, seed: Option<u64>) -> PyResult<Vec<String>> {
    let mut config = PipelineConfig::from_file(&config_path).map_err(py_err)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let stage: Stage = stage.parse().map_err(py_err)?;
    let sexes = pipeline::parse_sexes(population).map_err(py_err)?;
    let files = pipeline::run(&config, stage, &sexes).map_err(py_err)?;
    Ok(files.into_iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn mortcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySurface>()?;
    m.add_class::<PyForecast>()?;
    m.add_class::<PyLcFit>()?;
    m.add_class::<PyGapcFit>()?;
    m.add_class::<PyFtsFit>()?;
    m.add_class::<PyLossPanel>()?;
    m.add_class::<PyMcsResult>()?;
    m.add_function(wrap_pyfunction!(fit_lc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gapc, m)?)?;
    m.add_function(wrap_pyfunction!(fpca, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_product_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(rmsfe, m)?)?;
    m.add_function(wrap_pyfunction!(interval_score, m)?)?;
    m.add_function(wrap_pyfunction!(mean_interval_score, m)?)?;
    m.add_function(wrap_pyfunction!(run_mcs, m)?)?;
    m.add_function(wrap_pyfunction!(equal_weights, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_error_weights, m)?)?;
    m.add_function(wrap_pyfunction!(combine_forecasts, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
