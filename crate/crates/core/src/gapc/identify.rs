use nalgebra::{DMatrix, DVector};

use super::{age_mean_and_spread, Constraint, GapcFit, GapcModel};

/// Least-squares polynomial in centered birth year fitted to `γ` over the
/// included cohorts. Returns `(a, b, d, c̄)` for `a + b·c' + d·c'²`.
fn cohort_trend(fit: &GapcFit, degree: usize) -> (f64, f64, f64, f64) {
    let idx: Vec<usize> = (0..fit.gamma.len()).filter(|&c| fit.cohort_included[c]).collect();
    if idx.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let cbar = idx.iter().map(|&c| fit.cohorts[c] as f64).sum::<f64>() / idx.len() as f64;
    let deg = degree.min(idx.len() - 1);
    let x = DMatrix::from_fn(idx.len(), deg + 1, |r, p| (fit.cohorts[idx[r]] as f64 - cbar).powi(p as i32));
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&c| fit.gamma[c]));
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(deg + 1));
    let get = |p: usize| if p <= deg { coef[p] } else { 0.0 };
    (get(0), get(1), get(2), cbar)
}

fn center_kappa_into_alpha(fit: &mut GapcFit, term: usize) {
    let n = fit.n_years();
    let m = fit.kappas.row(term).sum() / n as f64;
    for j in 0..n {
        fit.kappas[(term, j)] -= m;
    }
    if let Some(alpha) = fit.alpha.as_mut() {
        for (i, a) in alpha.iter_mut().enumerate() {
            *a += fit.betas[(i, term)] * m;
        }
    }
}

fn normalize_free_term(fit: &mut GapcFit, term: usize) {
    let s = fit.betas.column(term).sum();
    if s != 0.0 && s.is_finite() {
        fit.betas.column_mut(term).scale_mut(1.0 / s);
        fit.kappas.row_mut(term).scale_mut(s);
    }
    center_kappa_into_alpha(fit, term);
}

fn normalize_rh_cohort(fit: &mut GapcFit) {
    let Some(beta0) = fit.beta0.as_mut() else { return };
    let s: f64 = beta0.iter().sum();
    if s != 0.0 && s.is_finite() {
        beta0.iter_mut().for_each(|b| *b /= s);
        fit.gamma.iter_mut().for_each(|g| *g *= s);
    }
    let (m, _, _, _) = cohort_trend(fit, 0);
    fit.gamma.iter_mut().for_each(|g| *g -= m);
    let beta0 = fit.beta0.as_ref().unwrap();
    if let Some(alpha) = fit.alpha.as_mut() {
        for (a, b) in alpha.iter_mut().zip(beta0) {
            *a += b * m;
        }
    }
}

fn remove_cohort_trend(fit: &mut GapcFit, a: f64, b: f64, d: f64, cbar: f64) {
    for (g, &c) in fit.gamma.iter_mut().zip(&fit.cohorts) {
        let cc = c as f64 - cbar;
        *g -= a + b * cc + d * cc * cc;
    }
}

/// Moves the predictor onto the constraint surface of its spec without
/// changing any fitted log rate.
pub fn apply_identifiability(fit: &GapcFit) -> GapcFit {
    let mut f = fit.clone();
    let (xbar, s2) = age_mean_and_spread(&f.ages);
    let n = f.n_years();
    let years: Vec<f64> = f.years.iter().map(|&t| t as f64).collect();
    let ages: Vec<f64> = f.ages.iter().map(|&x| x as f64).collect();
    match f.spec.name {
        GapcModel::LcPoisson => normalize_free_term(&mut f, 0),
        GapcModel::Rh => {
            normalize_free_term(&mut f, 0);
            normalize_rh_cohort(&mut f);
        }
        GapcModel::Apc => {
            let (a, b, _, cbar) = cohort_trend(&f, 1);
            remove_cohort_trend(&mut f, a, b, 0.0, cbar);
            let tbar = years.iter().sum::<f64>() / n as f64;
            for j in 0..n {
                f.kappas[(0, j)] += a + b * (years[j] - tbar);
            }
            if let Some(alpha) = f.alpha.as_mut() {
                for (al, x) in alpha.iter_mut().zip(&ages) {
                    *al += b * (tbar - cbar) - b * x;
                }
            }
            center_kappa_into_alpha(&mut f, 0);
        }
        GapcModel::Cbd => {}
        GapcModel::M6 => {
            let (a, b, _, cbar) = cohort_trend(&f, 1);
            remove_cohort_trend(&mut f, a, b, 0.0, cbar);
            for j in 0..n {
                f.kappas[(0, j)] += a + b * (years[j] - cbar - xbar);
                f.kappas[(1, j)] -= b;
            }
        }
        GapcModel::M7 => {
            let (a, b, d, cbar) = cohort_trend(&f, 2);
            remove_cohort_trend(&mut f, a, b, d, cbar);
            for j in 0..n {
                let s = years[j] - xbar - cbar;
                f.kappas[(0, j)] += a + b * s + d * s * s + d * s2;
                f.kappas[(1, j)] -= b + 2.0 * d * s;
                f.kappas[(2, j)] += d;
            }
        }
        GapcModel::M8 => {
            let (a, _, _, _) = cohort_trend(&f, 0);
            f.gamma.iter_mut().for_each(|g| *g -= a);
            let xc = f.xc.unwrap_or(xbar);
            for j in 0..n {
                f.kappas[(0, j)] += a * (xc - xbar);
                f.kappas[(1, j)] -= a;
            }
        }
        GapcModel::Plat => {
            let (a, b, d, cbar) = cohort_trend(&f, 2);
            remove_cohort_trend(&mut f, a, b, d, cbar);
            for j in 0..n {
                let s = years[j] - xbar - cbar;
                f.kappas[(0, j)] += a + b * s + d * s * s;
                f.kappas[(1, j)] += b + 2.0 * d * s;
            }
            if let Some(alpha) = f.alpha.as_mut() {
                for (al, x) in alpha.iter_mut().zip(&ages) {
                    *al += d * (xbar - x).powi(2);
                }
            }
            for r in 0..3 {
                center_kappa_into_alpha(&mut f, r);
            }
        }
    }
    f.fitted_log_rates = f.compute_log_rates();
    f
}

fn relative(sum: f64, scale: f64) -> f64 {
    sum.abs() / scale.max(1.0)
}

/// Residual of each constraint of the spec, relative to the magnitude of the
/// summed terms (so birth-year moments are comparable with index sums).
pub fn constraint_residuals(fit: &GapcFit) -> Vec<(Constraint, f64)> {
    let cohort_moment = |power: i32| {
        let terms: Vec<f64> = (0..fit.gamma.len())
            .filter(|&c| fit.cohort_included[c])
            .map(|c| (fit.cohorts[c] as f64).powi(power) * fit.gamma[c])
            .collect();
        relative(terms.iter().sum(), terms.iter().map(|v| v.abs()).sum())
    };
    fit.spec
        .constraints
        .iter()
        .map(|&con| {
            let r = match con {
                Constraint::SumBeta { term } => {
                    let col = fit.betas.column(term);
                    relative(col.sum() - 1.0, col.iter().map(|v| v.abs()).sum())
                }
                Constraint::SumKappa { term } => {
                    let row = fit.kappas.row(term);
                    relative(row.sum(), row.iter().map(|v| v.abs()).sum())
                }
                Constraint::SumBeta0 => {
                    let b = fit.beta0.as_deref().unwrap_or(&[]);
                    relative(b.iter().sum::<f64>() - 1.0, b.iter().map(|v| v.abs()).sum())
                }
                Constraint::SumGamma => cohort_moment(0),
                Constraint::SumCohortGamma => cohort_moment(1),
                Constraint::SumCohortSqGamma => cohort_moment(2),
            };
            (con, r)
        })
        .collect()
}
