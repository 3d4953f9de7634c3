//! Mortality data: death counts, exposures and central rates on an age × year grid.
//!
//! Datasets are loaded from HMD-style period tables (`Year Age Female Male Total`),
//! truncated to an age window with an aggregated open age group, and smoothed on
//! the log scale for the functional models.

mod hmd;
mod smooth;

pub use hmd::{load_hmd_table, write_hmd_sexes, write_hmd_table, HmdQuantity};
pub use smooth::{pava_non_decreasing, smooth_curve, smooth_log_rates, SmoothingPenalty};

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        }
    }

    /// Column heading used in HMD tables.
    pub fn column(self) -> &'static str {
        match self {
            Sex::Female => "Female",
            Sex::Male => "Male",
            Sex::Total => "Total",
        }
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            "total" | "t" => Ok(Sex::Total),
            other => Err(Error::invalid(format!("unknown sex '{other}'"))),
        }
    }
}

/// Deaths, exposures and central death rates for one population.
///
/// All matrices are indexed `[age, year]`. A cell with non-positive exposure
/// carries a NaN rate; a cell with zero deaths keeps rate 0. Both get weight 0.
#[derive(Debug, Clone)]
pub struct MortalityDataset {
    pub population_label: String,
    pub sex: Sex,
    pub ages: Vec<u32>,
    /// The last age row is an open group (`x+`).
    pub open_age: bool,
    pub years: Vec<i32>,
    pub deaths: DMatrix<f64>,
    pub exposures: DMatrix<f64>,
    pub rates: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl MortalityDataset {
    pub fn new(
        population_label: impl Into<String>,
        sex: Sex,
        ages: Vec<u32>,
        years: Vec<i32>,
        deaths: DMatrix<f64>,
        exposures: DMatrix<f64>,
    ) -> Result<Self> {
        let (na, ny) = (ages.len(), years.len());
        if na == 0 || ny == 0 {
            return Err(Error::invalid("dataset needs at least one age and one year"));
        }
        if deaths.shape() != (na, ny) || exposures.shape() != (na, ny) {
            return Err(Error::dims(format!(
                "deaths {:?} / exposures {:?} do not match {na} ages × {ny} years",
                deaths.shape(),
                exposures.shape()
            )));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("ages must be strictly increasing"));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::invalid("years must be consecutive"));
        }
        let mut ds = MortalityDataset {
            population_label: population_label.into(),
            sex,
            ages,
            open_age: false,
            years,
            rates: DMatrix::zeros(na, ny),
            weights: DMatrix::zeros(na, ny),
            deaths,
            exposures,
            warnings: Vec::new(),
        };
        ds.derive_rates()?;
        Ok(ds)
    }

    fn derive_rates(&mut self) -> Result<()> {
        for j in 0..self.years.len() {
            for i in 0..self.ages.len() {
                let d = self.deaths[(i, j)];
                let e = self.exposures[(i, j)];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative or non-finite deaths at age {}, year {}",
                        self.ages[i], self.years[j]
                    )));
                }
                if e > 0.0 && e.is_finite() {
                    self.rates[(i, j)] = d / e;
                    self.weights[(i, j)] = if d > 0.0 { 1.0 } else { 0.0 };
                } else {
                    self.rates[(i, j)] = f64::NAN;
                    self.weights[(i, j)] = 0.0;
                    let msg = format!(
                        "non-positive exposure at age {}, year {}: cell treated as missing",
                        self.ages[i], self.years[j]
                    );
                    log::warn!("{msg}");
                    self.warnings.push(msg);
                }
            }
        }
        Ok(())
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        let first = *self.years.first()?;
        let idx = year - first;
        (idx >= 0 && (idx as usize) < self.years.len()).then_some(idx as usize)
    }

    /// Log central rates; cells with zero weight are NaN.
    pub fn log_rates(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_ages(), self.n_years(), |i, j| {
            if self.weights[(i, j)] > 0.0 {
                self.rates[(i, j)].ln()
            } else {
                f64::NAN
            }
        })
    }

    /// Restricts the dataset to the inclusive year range.
    pub fn slice_years(&self, first: i32, last: i32) -> Result<Self> {
        let (a, b) = match (self.year_index(first), self.year_index(last)) {
            (Some(a), Some(b)) if a <= b => (a, b),
            _ => {
                return Err(Error::invalid(format!(
                    "years {first}..={last} not within {}..={}",
                    self.years[0],
                    self.years[self.n_years() - 1]
                )))
            }
        };
        let cols = b - a + 1;
        Ok(MortalityDataset {
            population_label: self.population_label.clone(),
            sex: self.sex,
            ages: self.ages.clone(),
            open_age: self.open_age,
            years: self.years[a..=b].to_vec(),
            deaths: self.deaths.columns(a, cols).into_owned(),
            exposures: self.exposures.columns(a, cols).into_owned(),
            rates: self.rates.columns(a, cols).into_owned(),
            weights: self.weights.columns(a, cols).into_owned(),
            warnings: self.warnings.clone(),
        })
    }
}

/// Drops ages below `min_age` and aggregates all ages at or above `max_age`
/// into an open group at `max_age` (deaths and exposures summed, rate re-derived).
pub fn truncate_ages(ds: &MortalityDataset, min_age: u32, max_age: u32) -> Result<MortalityDataset> {
    if min_age >= max_age {
        return Err(Error::invalid(format!(
            "min_age {min_age} must be below max_age {max_age}"
        )));
    }
    let first = ds.ages[0];
    let last = ds.ages[ds.n_ages() - 1];
    if min_age < first || max_age > last {
        return Err(Error::invalid(format!(
            "age window {min_age}..={max_age} outside data range {first}..={last}"
        )));
    }
    let keep: Vec<usize> = (0..ds.n_ages())
        .filter(|&i| ds.ages[i] >= min_age && ds.ages[i] <= max_age)
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("empty age range after truncation"));
    }
    let top = *keep.last().unwrap();
    if ds.ages[top] != max_age {
        return Err(Error::invalid(format!("age {max_age} not present in data")));
    }
    let aggregated: Vec<usize> = (0..ds.n_ages()).filter(|&i| ds.ages[i] >= max_age).collect();
    let ny = ds.n_years();
    let mut deaths = DMatrix::zeros(keep.len(), ny);
    let mut exposures = DMatrix::zeros(keep.len(), ny);
    for (r, &i) in keep.iter().enumerate() {
        if i == top {
            for j in 0..ny {
                deaths[(r, j)] = aggregated.iter().map(|&k| ds.deaths[(k, j)]).sum();
                exposures[(r, j)] = aggregated.iter().map(|&k| ds.exposures[(k, j)]).sum();
            }
        } else {
            deaths.set_row(r, &ds.deaths.row(i));
            exposures.set_row(r, &ds.exposures.row(i));
        }
    }
    let ages = keep.iter().map(|&i| ds.ages[i]).collect();
    let mut out = MortalityDataset::new(
        ds.population_label.clone(),
        ds.sex,
        ages,
        ds.years.clone(),
        deaths,
        exposures,
    )?;
    out.open_age = aggregated.len() > 1 || (ds.open_age && top == ds.n_ages() - 1);
    Ok(out)
}

/// Log mortality rates over an age × year grid with per-cell trust weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRateSurface {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub values: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub smoothed: bool,
}

impl LogRateSurface {
    /// Unsmoothed log rates. Zero-weight cells hold NaN.
    pub fn from_dataset(ds: &MortalityDataset) -> Self {
        LogRateSurface {
            ages: ds.ages.clone(),
            years: ds.years.clone(),
            values: ds.log_rates(),
            weights: ds.weights.clone(),
            smoothed: false,
        }
    }

    /// Fully trusted surface from a complete matrix of log rates.
    pub fn from_values(ages: Vec<u32>, years: Vec<i32>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (ages.len(), years.len()) {
            return Err(Error::dims(format!(
                "values {:?} vs {} ages × {} years",
                values.shape(),
                ages.len(),
                years.len()
            )));
        }
        let weights = DMatrix::from_element(ages.len(), years.len(), 1.0);
        Ok(LogRateSurface {
            ages,
            years,
            values,
            weights,
            smoothed: false,
        })
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Keeps only rows with `min_age <= age <= max_age`.
    pub fn select_ages(&self, min_age: u32, max_age: u32) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n_ages())
            .filter(|&i| self.ages[i] >= min_age && self.ages[i] <= max_age)
            .collect();
        if rows.is_empty() {
            return Err(Error::invalid("empty age selection"));
        }
        Ok(LogRateSurface {
            ages: rows.iter().map(|&i| self.ages[i]).collect(),
            years: self.years.clone(),
            values: self.values.select_rows(rows.iter()),
            weights: self.weights.select_rows(rows.iter()),
            smoothed: self.smoothed,
        })
    }

    pub fn slice_years(&self, first: i32, last: i32) -> Result<Self> {
        let start = self.years[0];
        if first < start || last < first || (last - start) as usize >= self.n_years() {
            return Err(Error::invalid(format!("years {first}..={last} out of range")));
        }
        let a = (first - start) as usize;
        let cols = (last - first + 1) as usize;
        Ok(LogRateSurface {
            ages: self.ages.clone(),
            years: self.years[a..a + cols].to_vec(),
            values: self.values.columns(a, cols).into_owned(),
            weights: self.weights.columns(a, cols).into_owned(),
            smoothed: self.smoothed,
        })
    }

    /// Projects every year's curve onto the non-decreasing cone in age.
    pub fn project_monotone(&mut self) {
        for j in 0..self.n_years() {
            let col: Vec<f64> = self.values.column(j).iter().copied().collect();
            if col.iter().all(|v| v.is_finite()) {
                let proj = pava_non_decreasing(&col);
                for (i, v) in proj.into_iter().enumerate() {
                    self.values[(i, j)] = v;
                }
            }
        }
    }
}

/// `age,year,value` CSV for any age × year matrix.
pub fn surface_csv(ages: &[u32], years: &[i32], values: &DMatrix<f64>) -> String {
    let mut out = String::from("age,year,value\n");
    for (j, year) in years.iter().enumerate() {
        for (i, age) in ages.iter().enumerate() {
            let _ = writeln!(out, "{age},{year},{}", values[(i, j)]);
        }
    }
    out
}
