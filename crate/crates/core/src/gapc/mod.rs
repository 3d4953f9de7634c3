//! Poisson generalized age-period-cohort models with log link.

mod identify;

pub use identify::{apply_identifiability, constraint_residuals};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MortalityDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GapcModel {
    LcPoisson,
    Rh,
    Apc,
    Cbd,
    M6,
    M7,
    M8,
    Plat,
}

impl GapcModel {
    pub const ALL: [GapcModel; 8] = [
        GapcModel::LcPoisson,
        GapcModel::Rh,
        GapcModel::Apc,
        GapcModel::Cbd,
        GapcModel::M6,
        GapcModel::M7,
        GapcModel::M8,
        GapcModel::Plat,
    ];
}

/// Age modulation of a period index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeModulation {
    Free,
    ConstantOne,
    XMinusXbar,
    XbarMinusX,
    /// `(x − x̄)² − σ̂²`
    QuadraticCentered,
    /// `max(x̄ − x, 0)`
    HingeXbar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortTerm {
    None,
    FreeBeta0,
    Constant,
    /// `(x_c − x) γ`
    LinearXc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Constraint {
    SumBeta { term: usize },
    SumKappa { term: usize },
    SumBeta0,
    SumGamma,
    SumCohortGamma,
    SumCohortSqGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapcSpec {
    pub name: GapcModel,
    pub has_static_age: bool,
    pub age_terms: Vec<AgeModulation>,
    pub cohort_term: CohortTerm,
    pub constraints: Vec<Constraint>,
}

impl GapcSpec {
    pub fn new(name: GapcModel) -> Self {
        use AgeModulation::*;
        use Constraint::*;
        let (has_static_age, age_terms, cohort_term, constraints) = match name {
            GapcModel::LcPoisson => (
                true,
                vec![Free],
                CohortTerm::None,
                vec![SumBeta { term: 0 }, SumKappa { term: 0 }],
            ),
            GapcModel::Rh => (
                true,
                vec![Free],
                CohortTerm::FreeBeta0,
                vec![SumBeta { term: 0 }, SumKappa { term: 0 }, SumBeta0, SumGamma],
            ),
            GapcModel::Apc => (
                true,
                vec![ConstantOne],
                CohortTerm::Constant,
                vec![SumKappa { term: 0 }, SumGamma, SumCohortGamma],
            ),
            GapcModel::Cbd => (false, vec![ConstantOne, XMinusXbar], CohortTerm::None, vec![]),
            GapcModel::M6 => (
                false,
                vec![ConstantOne, XMinusXbar],
                CohortTerm::Constant,
                vec![SumGamma, SumCohortGamma],
            ),
            GapcModel::M7 => (
                false,
                vec![ConstantOne, XMinusXbar, QuadraticCentered],
                CohortTerm::Constant,
                vec![SumGamma, SumCohortGamma, SumCohortSqGamma],
            ),
            GapcModel::M8 => (false, vec![ConstantOne, XMinusXbar], CohortTerm::LinearXc, vec![SumGamma]),
            GapcModel::Plat => (
                true,
                vec![ConstantOne, XbarMinusX, HingeXbar],
                CohortTerm::Constant,
                vec![
                    SumKappa { term: 0 },
                    SumKappa { term: 1 },
                    SumKappa { term: 2 },
                    SumGamma,
                    SumCohortGamma,
                    SumCohortSqGamma,
                ],
            ),
        };
        GapcSpec {
            name,
            has_static_age,
            age_terms,
            cohort_term,
            constraints,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.age_terms.len()
    }

    pub fn has_cohort(&self) -> bool {
        self.cohort_term != CohortTerm::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapcFit {
    pub spec: GapcSpec,
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub alpha: Option<Vec<f64>>,
    /// ages × terms
    pub betas: DMatrix<f64>,
    /// terms × years
    pub kappas: DMatrix<f64>,
    /// Free cohort modulation (RH only).
    pub beta0: Option<Vec<f64>>,
    /// Birth years from `t₁ − x_k` to `tₙ − x₁`.
    pub cohorts: Vec<i32>,
    pub gamma: Vec<f64>,
    /// Cohorts with at least three observed cells; the others are held at zero
    /// during fitting and their cells are left out of the likelihood.
    pub cohort_included: Vec<bool>,
    pub xc: Option<f64>,
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub fitted_log_rates: DMatrix<f64>,
    /// 1 for cells in the likelihood, 0 otherwise.
    pub cell_weights: DMatrix<f64>,
}

const MIN_COHORT_CELLS: usize = 3;

pub(crate) fn age_mean_and_spread(ages: &[u32]) -> (f64, f64) {
    let k = ages.len() as f64;
    let xbar = ages.iter().map(|&a| a as f64).sum::<f64>() / k;
    let s2 = ages.iter().map(|&a| (a as f64 - xbar).powi(2)).sum::<f64>() / k;
    (xbar, s2)
}

/// Value of a fixed age modulation; `None` for free terms.
pub(crate) fn fixed_modulation(m: AgeModulation, x: f64, xbar: f64, s2: f64) -> Option<f64> {
    match m {
        AgeModulation::Free => None,
        AgeModulation::ConstantOne => Some(1.0),
        AgeModulation::XMinusXbar => Some(x - xbar),
        AgeModulation::XbarMinusX => Some(xbar - x),
        AgeModulation::QuadraticCentered => Some((x - xbar).powi(2) - s2),
        AgeModulation::HingeXbar => Some((xbar - x).max(0.0)),
    }
}

impl GapcFit {
    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn cohort_index(&self, age_idx: usize, year_idx: usize) -> usize {
        year_idx + self.n_ages() - 1 - age_idx
    }

    /// Multiplier of `γ` at an age.
    pub fn cohort_modulation(&self, age_idx: usize) -> f64 {
        match self.spec.cohort_term {
            CohortTerm::None => 0.0,
            CohortTerm::Constant => 1.0,
            CohortTerm::FreeBeta0 => self.beta0.as_ref().map_or(0.0, |b| b[age_idx]),
            CohortTerm::LinearXc => self.xc.unwrap_or(0.0) - self.ages[age_idx] as f64,
        }
    }

    /// Predictor at one age for given period indices and cohort effect.
    pub fn predictor(&self, age_idx: usize, kappa: &[f64], gamma: f64) -> f64 {
        let mut eta = self.alpha.as_ref().map_or(0.0, |a| a[age_idx]);
        for (r, k) in kappa.iter().enumerate() {
            eta += self.betas[(age_idx, r)] * k;
        }
        eta + self.cohort_modulation(age_idx) * gamma
    }

    pub fn compute_log_rates(&self) -> DMatrix<f64> {
        let q = self.spec.n_terms();
        DMatrix::from_fn(self.n_ages(), self.n_years(), |i, j| {
            let kappa: Vec<f64> = (0..q).map(|r| self.kappas[(r, j)]).collect();
            self.predictor(i, &kappa, self.gamma[self.cohort_index(i, j)])
        })
    }

    pub fn deviance(&self) -> f64 {
        *self.deviance_trace.last().unwrap_or(&f64::NAN)
    }

    /// JSON document with keys `spec, alpha, betas, kappas, gamma, xc, deviance,
    /// converged`. For RH the free cohort modulation is the last column of `betas`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut betas: Vec<Vec<f64>> = (0..self.n_ages())
            .map(|i| self.betas.row(i).iter().copied().collect())
            .collect();
        if let Some(b0) = &self.beta0 {
            for (row, b) in betas.iter_mut().zip(b0) {
                row.push(*b);
            }
        }
        let kappas: Vec<Vec<f64>> = (0..self.spec.n_terms())
            .map(|r| self.kappas.row(r).iter().copied().collect())
            .collect();
        serde_json::json!({
            "spec": self.spec,
            "alpha": self.alpha,
            "betas": betas,
            "kappas": kappas,
            "gamma": self.gamma,
            "xc": self.xc,
            "deviance": self.deviance(),
            "converged": self.converged,
        })
    }
}

struct Problem<'a> {
    spec: &'a GapcSpec,
    ages: Vec<f64>,
    d: &'a DMatrix<f64>,
    e: &'a DMatrix<f64>,
    mask: DMatrix<bool>,
    included: Vec<bool>,
}

#[derive(Clone)]
struct Params {
    alpha: Vec<f64>,
    beta: Vec<Vec<f64>>,
    kappa: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    beta0: Vec<f64>,
    xc: f64,
}

impl Problem<'_> {
    fn k(&self) -> usize {
        self.ages.len()
    }

    fn n(&self) -> usize {
        self.d.ncols()
    }

    fn cohort(&self, i: usize, j: usize) -> usize {
        j + self.k() - 1 - i
    }

    fn cohort_mod(&self, p: &Params, i: usize) -> f64 {
        match self.spec.cohort_term {
            CohortTerm::None => 0.0,
            CohortTerm::Constant => 1.0,
            CohortTerm::FreeBeta0 => p.beta0[i],
            CohortTerm::LinearXc => p.xc - self.ages[i],
        }
    }

    fn eta(&self, p: &Params, i: usize, j: usize) -> f64 {
        let mut v = p.alpha[i];
        for r in 0..p.beta.len() {
            v += p.beta[r][i] * p.kappa[r][j];
        }
        v + self.cohort_mod(p, i) * p.gamma[self.cohort(i, j)]
    }

    fn deviance(&self, p: &Params) -> f64 {
        let mut dev = 0.0;
        for j in 0..self.n() {
            for i in 0..self.k() {
                if !self.mask[(i, j)] {
                    continue;
                }
                let d = self.d[(i, j)];
                let mu = self.e[(i, j)] * self.eta(p, i, j).exp();
                let t = if d > 0.0 { d * (d / mu).ln() } else { 0.0 };
                dev += 2.0 * (t - (d - mu));
            }
        }
        dev
    }

    /// Newton step with step-halving for one scalar parameter whose derivative
    /// of the predictor is `z` on the listed cells. Never decreases the
    /// log-likelihood of those cells.
    fn scalar_step(&self, cells: &[(f64, f64, f64, f64)]) -> f64 {
        let ll = |delta: f64| {
            cells
                .iter()
                .map(|&(eta, d, e, z)| {
                    let v = eta + delta * z;
                    d * v - e * v.exp()
                })
                .sum::<f64>()
        };
        let (mut g, mut h) = (0.0, 0.0);
        for &(eta, d, e, z) in cells {
            let mu = e * eta.exp();
            g += (d - mu) * z;
            h += mu * z * z;
        }
        if !(h > 0.0) || g == 0.0 || !g.is_finite() {
            return 0.0;
        }
        let base = ll(0.0);
        let mut step = g / h;
        for _ in 0..50 {
            let v = ll(step);
            if v.is_finite() && v >= base {
                return step;
            }
            step *= 0.5;
        }
        0.0
    }

    fn obs(&self, p: &Params, i: usize, j: usize, z: f64) -> (f64, f64, f64, f64) {
        (self.eta(p, i, j), self.d[(i, j)], self.e[(i, j)], z)
    }

    fn update_alpha(&self, p: &mut Params) {
        for i in 0..self.k() {
            let cells: Vec<_> = (0..self.n())
                .filter(|&j| self.mask[(i, j)])
                .map(|j| self.obs(p, i, j, 1.0))
                .collect();
            p.alpha[i] += self.scalar_step(&cells);
        }
    }

    fn update_beta(&self, p: &mut Params, r: usize) {
        for i in 0..self.k() {
            let cells: Vec<_> = (0..self.n())
                .filter(|&j| self.mask[(i, j)])
                .map(|j| self.obs(p, i, j, p.kappa[r][j]))
                .collect();
            p.beta[r][i] += self.scalar_step(&cells);
        }
    }

    /// Joint Newton step over all period indices of each year.
    fn update_kappa(&self, p: &mut Params) {
        let q = p.beta.len();
        for j in 0..self.n() {
            let rows: Vec<usize> = (0..self.k()).filter(|&i| self.mask[(i, j)]).collect();
            if rows.is_empty() {
                continue;
            }
            let etas: Vec<f64> = rows.iter().map(|&i| self.eta(p, i, j)).collect();
            let mut g = DVector::<f64>::zeros(q);
            let mut h = DMatrix::<f64>::zeros(q, q);
            for (n, &i) in rows.iter().enumerate() {
                let mu = self.e[(i, j)] * etas[n].exp();
                for a in 0..q {
                    g[a] += (self.d[(i, j)] - mu) * p.beta[a][i];
                    for b in 0..q {
                        h[(a, b)] += mu * p.beta[a][i] * p.beta[b][i];
                    }
                }
            }
            let ridge = 1e-12 * (h.trace().abs() + 1e-300);
            for a in 0..q {
                h[(a, a)] += ridge;
            }
            let Some(step) = h.cholesky().map(|c| c.solve(&g)) else {
                continue;
            };
            let ll = |s: f64| {
                rows.iter()
                    .enumerate()
                    .map(|(n, &i)| {
                        let dz: f64 = (0..q).map(|a| step[a] * p.beta[a][i]).sum();
                        let v = etas[n] + s * dz;
                        self.d[(i, j)] * v - self.e[(i, j)] * v.exp()
                    })
                    .sum::<f64>()
            };
            let base = ll(0.0);
            let mut s = 1.0;
            for _ in 0..50 {
                let v = ll(s);
                if v.is_finite() && v >= base {
                    for a in 0..q {
                        p.kappa[a][j] += s * step[a];
                    }
                    break;
                }
                s *= 0.5;
            }
        }
    }

    fn update_gamma(&self, p: &mut Params) {
        let (k, n) = (self.k(), self.n());
        for c in 0..self.included.len() {
            if !self.included[c] {
                continue;
            }
            let cells: Vec<_> = (0..k)
                .filter_map(|i| {
                    let j = (c + i + 1).checked_sub(k)?;
                    (j < n && self.mask[(i, j)]).then(|| self.obs(p, i, j, self.cohort_mod(p, i)))
                })
                .collect();
            p.gamma[c] += self.scalar_step(&cells);
        }
    }

    fn update_beta0(&self, p: &mut Params) {
        for i in 0..self.k() {
            let cells: Vec<_> = (0..self.n())
                .filter(|&j| self.mask[(i, j)])
                .map(|j| self.obs(p, i, j, p.gamma[self.cohort(i, j)]))
                .collect();
            p.beta0[i] += self.scalar_step(&cells);
        }
    }

    /// Golden-section search for the cohort pivot age with everything else fixed.
    fn update_xc(&self, p: &mut Params) {
        let (lo, hi) = (self.ages[0], self.ages[self.k() - 1]);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let dev_at = |xc: f64| {
            let mut q = p.clone();
            q.xc = xc;
            self.deviance(&q)
        };
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (dev_at(c), dev_at(d));
        for _ in 0..60 {
            if b - a < 1e-9 * (1.0 + hi.abs()) {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = dev_at(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = dev_at(d);
            }
        }
        let cand = 0.5 * (a + b);
        if dev_at(cand) < self.deviance(p) {
            p.xc = cand;
        }
    }

    /// Runs one block and reverts it if the total deviance went up through
    /// rounding.
    fn guarded(&self, p: &mut Params, dev: &mut f64, block: impl FnOnce(&Self, &mut Params)) {
        let saved = p.clone();
        block(self, p);
        let next = self.deviance(p);
        if next.is_finite() && next <= *dev {
            *dev = next;
        } else {
            *p = saved;
        }
    }
}

/// Maximum-likelihood fit by blockwise Newton updates, followed by the
/// identifiability transform of the spec.
pub fn fit_gapc(spec: &GapcSpec, ds: &MortalityDataset, tol: f64, max_iter: usize) -> Result<GapcFit> {
    if *spec != GapcSpec::new(spec.name) {
        return Err(Error::UnidentifiableSpec(format!(
            "{:?} must use its canonical predictor and constraint set",
            spec.name
        )));
    }
    let (k, n) = (ds.n_ages(), ds.n_years());
    if k < 3 || n < 3 {
        return Err(Error::invalid(format!("GAPC models need at least 3 ages and 3 years, got {k}×{n}")));
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::invalid("max_iter must be ≥ 1 and tol positive"));
    }
    let ages: Vec<f64> = ds.ages.iter().map(|&a| a as f64).collect();
    let (xbar, s2) = age_mean_and_spread(&ds.ages);
    let n_coh = n + k - 1;
    let mut counts = vec![0usize; n_coh];
    for j in 0..n {
        for i in 0..k {
            if ds.exposures[(i, j)] > 0.0 {
                counts[j + k - 1 - i] += 1;
            }
        }
    }
    let included: Vec<bool> = if spec.has_cohort() {
        counts.iter().map(|&c| c >= MIN_COHORT_CELLS).collect()
    } else {
        vec![false; n_coh]
    };
    let mask = DMatrix::from_fn(k, n, |i, j| {
        ds.exposures[(i, j)] > 0.0 && (!spec.has_cohort() || included[j + k - 1 - i])
    });
    let problem = Problem {
        spec,
        ages: ages.clone(),
        d: &ds.deaths,
        e: &ds.exposures,
        mask: mask.clone(),
        included: included.clone(),
    };

    let q = spec.n_terms();
    let free: Vec<bool> = spec.age_terms.iter().map(|m| *m == AgeModulation::Free).collect();
    let beta: Vec<Vec<f64>> = spec
        .age_terms
        .iter()
        .map(|&m| {
            ages.iter()
                .map(|&x| fixed_modulation(m, x, xbar, s2).unwrap_or(1.0 / k as f64))
                .collect()
        })
        .collect();
    let crude = |sd: f64, se: f64| (sd.max(0.5) / se).ln();
    let mut alpha = vec![0.0; k];
    let mut kappa = vec![vec![0.0; n]; q];
    if spec.has_static_age {
        for (i, a) in alpha.iter_mut().enumerate() {
            let (sd, se) = (0..n)
                .filter(|&j| mask[(i, j)])
                .fold((0.0, 0.0), |(a, b), j| (a + ds.deaths[(i, j)], b + ds.exposures[(i, j)]));
            *a = if se > 0.0 { crude(sd, se) } else { 0.0 };
        }
    } else if let Some(level) = spec.age_terms.iter().position(|m| *m == AgeModulation::ConstantOne) {
        for (j, kv) in kappa[level].iter_mut().enumerate() {
            let (sd, se) = (0..k)
                .filter(|&i| mask[(i, j)])
                .fold((0.0, 0.0), |(a, b), i| (a + ds.deaths[(i, j)], b + ds.exposures[(i, j)]));
            *kv = if se > 0.0 { crude(sd, se) } else { 0.0 };
        }
    }
    let mut p = Params {
        alpha,
        beta,
        kappa,
        gamma: vec![0.0; n_coh],
        beta0: vec![1.0 / k as f64; k],
        xc: xbar,
    };

    let mut dev = problem.deviance(&p);
    if !dev.is_finite() {
        return Err(Error::Numerical("initial deviance is not finite".into()));
    }
    let mut trace = vec![dev];
    let mut converged = false;
    for _ in 0..max_iter {
        let prev = dev;
        if spec.has_static_age {
            problem.guarded(&mut p, &mut dev, |pr, p| pr.update_alpha(p));
        }
        for r in 0..q {
            if free[r] {
                problem.guarded(&mut p, &mut dev, |pr, p| pr.update_beta(p, r));
            }
        }
        problem.guarded(&mut p, &mut dev, |pr, p| pr.update_kappa(p));
        if spec.has_cohort() {
            problem.guarded(&mut p, &mut dev, |pr, p| pr.update_gamma(p));
            match spec.cohort_term {
                CohortTerm::FreeBeta0 => problem.guarded(&mut p, &mut dev, |pr, p| pr.update_beta0(p)),
                CohortTerm::LinearXc => problem.guarded(&mut p, &mut dev, |pr, p| pr.update_xc(p)),
                _ => {}
            }
        }
        trace.push(dev);
        if (prev - dev).abs() / (dev.abs() + 0.1) < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("{:?} did not converge in {max_iter} iterations (deviance {dev})", spec.name);
    }

    let first_cohort = ds.years[0] - ds.ages[k - 1] as i32;
    let mut fit = GapcFit {
        spec: spec.clone(),
        ages: ds.ages.clone(),
        years: ds.years.clone(),
        alpha: spec.has_static_age.then(|| p.alpha.clone()),
        betas: DMatrix::from_fn(k, q, |i, r| p.beta[r][i]),
        kappas: DMatrix::from_fn(q, n, |r, j| p.kappa[r][j]),
        beta0: (spec.cohort_term == CohortTerm::FreeBeta0).then(|| p.beta0.clone()),
        cohorts: (0..n_coh as i32).map(|c| first_cohort + c).collect(),
        gamma: p.gamma.clone(),
        cohort_included: included,
        xc: (spec.cohort_term == CohortTerm::LinearXc).then_some(p.xc),
        deviance_trace: trace,
        converged,
        fitted_log_rates: DMatrix::zeros(k, n),
        cell_weights: mask.map(|m| if m { 1.0 } else { 0.0 }),
    };
    fit.fitted_log_rates = fit.compute_log_rates();
    Ok(apply_identifiability(&fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    pub(crate) fn dataset(d: DMatrix<f64>, e: DMatrix<f64>, first_age: u32) -> MortalityDataset {
        let (k, n) = d.shape();
        MortalityDataset::new(
            "t",
            Sex::Female,
            (first_age..first_age + k as u32).collect(),
            (1980..1980 + n as i32).collect(),
            d,
            e,
        )
        .unwrap()
    }

    fn cbd_truth(k: usize, n: usize) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let k1: Vec<f64> = (0..n).map(|t| -3.5 - 0.02 * t as f64).collect();
        let k2: Vec<f64> = (0..n).map(|t| 0.1 + 0.0005 * t as f64).collect();
        let xbar = 60.0 + (k - 1) as f64 / 2.0;
        let eta = DMatrix::from_fn(k, n, |i, j| k1[j] + (60.0 + i as f64 - xbar) * k2[j]);
        (k1, k2, eta)
    }

    #[test]
    fn cbd_recovers_known_indices() {
        let (k, n) = (41, 31);
        let (k1, k2, eta) = cbd_truth(k, n);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = DMatrix::from_element(k, n, 1e6);
        let d = DMatrix::from_fn(k, n, |i, j| Poisson::new(1e6 * eta[(i, j)].exp()).unwrap().sample(&mut rng));
        let fit = fit_gapc(&GapcSpec::new(GapcModel::Cbd), &dataset(d, e, 60), 1e-10, 500).unwrap();
        assert!(fit.converged);
        for j in 0..n {
            assert!((fit.kappas[(0, j)] - k1[j]).abs() < 1e-2);
            assert!((fit.kappas[(1, j)] - k2[j]).abs() < 1e-2);
        }
    }

    #[test]
    fn apc_without_period_or_cohort_effects() {
        let (k, n) = (6, 10);
        let d = DMatrix::from_fn(k, n, |i, _| 1e6 * (-4.0 + 0.1 * i as f64).exp());
        let e = DMatrix::from_element(k, n, 1e6);
        let fit = fit_gapc(&GapcSpec::new(GapcModel::Apc), &dataset(d.clone(), e, 60), 1e-12, 500).unwrap();
        for i in 0..k {
            let target = (d.row(i).sum() / (1e6 * n as f64)).ln();
            for j in 0..n {
                if fit.cell_weights[(i, j)] > 0.0 {
                    assert!((fit.fitted_log_rates[(i, j)] - target).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn deviance_trace_is_monotone_for_every_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = DMatrix::from_element(5, 8, 5000.0);
        let d = DMatrix::from_fn(5, 8, |i, j| {
            Poisson::new(5000.0 * (-3.0 + 0.2 * i as f64 - 0.03 * j as f64).exp())
                .unwrap()
                .sample(&mut rng)
        });
        let ds = dataset(d, e, 70);
        for m in GapcModel::ALL {
            let fit = fit_gapc(&GapcSpec::new(m), &ds, 1e-6, 200).unwrap();
            assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0]), "{m:?}");
            assert!(fit.deviance_trace[1] <= fit.deviance_trace[0]);
        }
    }

    #[test]
    fn altered_spec_is_rejected() {
        let mut spec = GapcSpec::new(GapcModel::Apc);
        spec.constraints.pop();
        let e = DMatrix::from_element(4, 4, 100.0);
        let ds = dataset(e.clone() * 0.01, e, 60);
        assert!(matches!(fit_gapc(&spec, &ds, 1e-6, 10), Err(Error::UnidentifiableSpec(_))));
    }

    #[test]
    fn corner_cohorts_are_excluded() {
        let e = DMatrix::from_element(5, 6, 100.0);
        let ds = dataset(e.clone() * 0.02, e, 60);
        let fit = fit_gapc(&GapcSpec::new(GapcModel::M6), &ds, 1e-6, 50).unwrap();
        let excluded: Vec<usize> = (0..fit.cohorts.len()).filter(|&c| !fit.cohort_included[c]).collect();
        assert_eq!(excluded, vec![0, 1, 8, 9]);
        assert_eq!(fit.cell_weights[(4, 0)], 0.0);
        assert_eq!(fit.cell_weights[(0, 5)], 0.0);
    }

    #[test]
    fn json_has_expected_keys() {
        let e = DMatrix::from_element(4, 5, 100.0);
        let ds = dataset(e.clone() * 0.02, e, 60);
        let fit = fit_gapc(&GapcSpec::new(GapcModel::Rh), &ds, 1e-6, 20).unwrap();
        let v = fit.to_json();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["alpha", "betas", "converged", "deviance", "gamma", "kappas", "spec", "xc"]);
        assert_eq!(v["spec"]["name"], "RH");
        assert_eq!(v["betas"][0].as_array().unwrap().len(), 2);
    }
}
