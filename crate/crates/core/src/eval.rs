//! Loss functions and the expanding-window forecast exercise.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sex;
use crate::error::{Error, Result};
use crate::forecast::ForecastResult;
use crate::index::derive_seed;
use crate::models::{forecast_model, ModelSettings, PreparedPopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Rmsfe,
    MeanIntervalScore,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Rmsfe => "rmsfe",
            LossKind::MeanIntervalScore => "interval_score",
        }
    }
}

pub fn rmsfe(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    if actual.len() != forecast.len() {
        return Err(Error::dims(format!(
            "actual has {} ages, forecast has {}",
            actual.len(),
            forecast.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("no ages to score"));
    }
    let sse: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn interval_score(lower: f64, upper: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if lower > upper {
        return Err(Error::invalid(format!("lower bound {lower} exceeds upper bound {upper}")));
    }
    let mut s = upper - lower;
    if y < lower {
        s += 2.0 / alpha * (lower - y);
    }
    if y > upper {
        s += 2.0 / alpha * (y - upper);
    }
    Ok(s)
}

pub fn mean_interval_score(lower: &[f64], upper: &[f64], actual: &[f64], alpha: f64) -> Result<f64> {
    if lower.len() != actual.len() || upper.len() != actual.len() {
        return Err(Error::dims("bounds and actual values differ in length"));
    }
    if actual.is_empty() {
        return Err(Error::invalid("no ages to score"));
    }
    let mut total = 0.0;
    for ((&l, &u), &y) in lower.iter().zip(upper).zip(actual) {
        total += interval_score(l, u, y, alpha)?;
    }
    Ok(total / actual.len() as f64)
}

/// Loss of the horizon-`h` forecast against `actual`; ages with a NaN actual
/// value are left out.
pub fn forecast_loss(result: &ForecastResult, h: usize, actual: &[f64], kind: LossKind) -> Result<f64> {
    if actual.len() != result.ages.len() {
        return Err(Error::dims("actual curve does not match forecast ages"));
    }
    if h == 0 || h > result.horizons.len() {
        return Err(Error::invalid(format!("horizon {h} not in forecast")));
    }
    let keep: Vec<usize> = (0..actual.len()).filter(|&i| actual[i].is_finite()).collect();
    let pick = |v: Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let y = pick(actual.to_vec());
    match kind {
        LossKind::Rmsfe => rmsfe(&y, &pick(result.point_at(h))),
        LossKind::MeanIntervalScore => {
            mean_interval_score(&pick(result.lower_at(h)), &pick(result.upper_at(h)), &y, result.alpha)
        }
    }
}

/// Losses of each model (rows) at each forecast origin (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPanel {
    pub model_labels: Vec<u32>,
    pub periods: Vec<i32>,
    #[serde(with = "crate::fts::matrix_rows")]
    pub losses: DMatrix<f64>,
    pub loss_kind: LossKind,
}

pub const PANEL_CSV_HEADER: &str = "model,origin_year,loss";

impl LossPanel {
    pub fn new(model_labels: Vec<u32>, periods: Vec<i32>, losses: DMatrix<f64>, loss_kind: LossKind) -> Result<Self> {
        if losses.shape() != (model_labels.len(), periods.len()) {
            return Err(Error::dims(format!(
                "loss matrix {:?} does not match {} models × {} periods",
                losses.shape(),
                model_labels.len(),
                periods.len()
            )));
        }
        let mut seen = model_labels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != model_labels.len() {
            return Err(Error::invalid("duplicate model label in panel"));
        }
        Ok(LossPanel {
            model_labels,
            periods,
            losses,
            loss_kind,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_labels.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn row_of(&self, label: u32) -> Option<usize> {
        self.model_labels.iter().position(|&l| l == label)
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        (0..self.n_models()).map(|r| self.losses.row(r).mean()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(PANEL_CSV_HEADER);
        out.push('\n');
        for (r, label) in self.model_labels.iter().enumerate() {
            for (c, period) in self.periods.iter().enumerate() {
                let _ = writeln!(out, "{label},{period},{}", self.losses[(r, c)]);
            }
        }
        out
    }

    /// Parses the long CSV layout. Cells absent from the file become NaN.
    pub fn from_csv(text: &str, loss_kind: LossKind) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == PANEL_CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    row: 1,
                    message: format!("expected header `{PANEL_CSV_HEADER}`"),
                })
            }
        }
        let mut cells = BTreeMap::new();
        let mut labels = Vec::new();
        let mut periods = Vec::new();
        for (n, line) in lines {
            let parse_err = |message: String| Error::Parse { row: n + 1, message };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", f.len())));
            }
            let label: u32 = f[0].parse().map_err(|_| parse_err(format!("bad model label `{}`", f[0])))?;
            let period: i32 = f[1].parse().map_err(|_| parse_err(format!("bad origin year `{}`", f[1])))?;
            let loss: f64 = f[2].parse().map_err(|_| parse_err(format!("bad loss `{}`", f[2])))?;
            if !labels.contains(&label) {
                labels.push(label);
            }
            if !periods.contains(&period) {
                periods.push(period);
            }
            cells.insert((label, period), loss);
        }
        periods.sort_unstable();
        let losses = DMatrix::from_fn(labels.len(), periods.len(), |r, c| {
            cells.get(&(labels[r], periods[c])).copied().unwrap_or(f64::NAN)
        });
        LossPanel::new(labels, periods, losses, loss_kind)
    }
}

/// Forecast origins and training span of an expanding-window exercise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalWindow {
    pub first_year: i32,
    pub train_end: i32,
    pub eval_end: i32,
    pub horizon: usize,
    pub alpha: f64,
}

impl EvalWindow {
    pub fn validate(&self, last_year: i32) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.train_end >= self.eval_end || self.eval_end > last_year {
            return Err(Error::invalid(format!(
                "need train_end < eval_end <= last data year, got {} / {} / {last_year}",
                self.train_end, self.eval_end
            )));
        }
        if self.first_year >= self.train_end {
            return Err(Error::invalid("first training year must precede train_end"));
        }
        if self.origins().is_empty() {
            return Err(Error::invalid("horizon leaves no forecast origin in the window"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Origins `train_end..=eval_end - horizon`.
    pub fn origins(&self) -> Vec<i32> {
        (self.train_end..=self.eval_end - self.horizon as i32).collect()
    }
}

/// Forecasts of every surviving model at every origin.
#[derive(Debug, Clone)]
pub struct OriginForecasts {
    pub origins: Vec<i32>,
    pub horizon: usize,
    pub forecasts: BTreeMap<u32, Vec<ForecastResult>>,
    /// Models removed because a fit failed, with the first error.
    pub dropped: Vec<(u32, String)>,
}

/// Runs `forecaster(label, origin)` over the model × origin grid in parallel.
/// A model that fails at any origin is dropped with a warning.
pub fn forecast_origins<F>(labels: &[u32], origins: &[i32], horizon: usize, forecaster: F) -> OriginForecasts
where
    F: Fn(u32, i32) -> Result<ForecastResult> + Sync,
{
    let grid: Vec<(u32, i32)> = labels
        .iter()
        .flat_map(|&l| origins.iter().map(move |&o| (l, o)))
        .collect();
    let results: Vec<Result<ForecastResult>> = grid.par_iter().map(|&(l, o)| forecaster(l, o)).collect();
    let mut forecasts = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut iter = results.into_iter();
    for &label in labels {
        let row: Vec<Result<ForecastResult>> = iter.by_ref().take(origins.len()).collect();
        let mut kept = Vec::with_capacity(origins.len());
        let mut failure = None;
        for (r, origin) in row.into_iter().zip(origins) {
            match r {
                Ok(f) => kept.push(f),
                Err(e) => {
                    failure = Some(format!("origin {origin}: {e}"));
                    break;
                }
            }
        }
        match failure {
            None => {
                forecasts.insert(label, kept);
            }
            Some(msg) => {
                log::warn!("model {label} dropped from the panel ({msg})");
                dropped.push((label, msg));
            }
        }
    }
    OriginForecasts {
        origins: origins.to_vec(),
        horizon,
        forecasts,
        dropped,
    }
}

impl OriginForecasts {
    /// Scores each forecast against `actual(origin + horizon)`. Models with a
    /// non-finite loss are dropped with a warning.
    pub fn loss_panel<A>(&self, actual: A, kind: LossKind) -> Result<LossPanel>
    where
        A: Fn(i32) -> Option<Vec<f64>>,
    {
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (&label, results) in &self.forecasts {
            let mut row = Vec::with_capacity(self.origins.len());
            for (r, &origin) in results.iter().zip(&self.origins) {
                let target = origin + self.horizon as i32;
                let y = actual(target).ok_or_else(|| Error::invalid(format!("no observed curve for year {target}")))?;
                row.push(forecast_loss(r, self.horizon, &y, kind)?);
            }
            if row.iter().all(|v| v.is_finite()) {
                labels.push(label);
                rows.push(row);
            } else {
                log::warn!("model {label} dropped from the {} panel: non-finite loss", kind.as_str());
            }
        }
        let losses = DMatrix::from_fn(labels.len(), self.origins.len(), |r, c| rows[r][c]);
        LossPanel::new(labels, self.origins.clone(), losses, kind)
    }
}

/// Fits every model at every origin of `window` on `prep` and returns the
/// forecasts with both loss panels.
pub fn expanding_window_panels(
    prep: &PreparedPopulation,
    target: Sex,
    models: &[u32],
    settings: &ModelSettings,
    window: &EvalWindow,
    seed: u64,
) -> Result<(OriginForecasts, LossPanel, LossPanel)> {
    window.validate(*prep.years().last().unwrap())?;
    if window.first_year < prep.years()[0] {
        return Err(Error::invalid(format!(
            "first training year {} precedes the data",
            window.first_year
        )));
    }
    let origins = window.origins();
    let forecasts = forecast_origins(models, &origins, window.horizon, |label, origin| {
        let s = derive_seed(seed, &[label as u64, origin as u64]);
        forecast_model(
            label,
            prep,
            target,
            window.first_year,
            origin,
            window.horizon,
            window.alpha,
            settings,
            s,
        )
    });
    let actual = |year| prep.actual(target, year);
    let point = forecasts.loss_panel(actual, LossKind::Rmsfe)?;
    let interval = forecasts.loss_panel(actual, LossKind::MeanIntervalScore)?;
    Ok((forecasts, point, interval))
}

pub fn expanding_window(
    prep: &PreparedPopulation,
    target: Sex,
    models: &[u32],
    settings: &ModelSettings,
    window: &EvalWindow,
    kind: LossKind,
    seed: u64,
) -> Result<LossPanel> {
    let (_, point, interval) = expanding_window_panels(prep, target, models, settings, window, seed)?;
    Ok(match kind {
        LossKind::Rmsfe => point,
        LossKind::MeanIntervalScore => interval,
    })
}
