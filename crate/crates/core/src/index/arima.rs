use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STATIONARITY_MARGIN: f64 = 1e-8;

/// ARIMA(p, 1, q) with `p ≤ 2`, `q ≤ 1`, estimated by conditional sum of squares
/// on the first differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub p: usize,
    pub q: usize,
    /// Mean of the differenced series (the drift), when fitted.
    pub drift: Option<f64>,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub innovation_var: f64,
    pub last_value: f64,
    /// Most recent differences, oldest first (length `p`).
    pub recent_diffs: Vec<f64>,
    pub last_residual: f64,
    /// Set when estimation fell back to a random walk with drift.
    pub fallback: bool,
}

fn is_stationary(phi: &[f64]) -> bool {
    let m = STATIONARITY_MARGIN;
    match phi.len() {
        0 => true,
        1 => phi[0].abs() < 1.0 - m,
        2 => {
            let (a, b) = (phi[0], phi[1]);
            b.abs() < 1.0 - m && a + b < 1.0 - m && b - a < 1.0 - m
        }
        _ => false,
    }
}

/// Conditional residuals for given parameters; returns (sum of squares, residuals).
fn css(w: &[f64], c: f64, phi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let p = phi.len();
    let mut e = vec![0.0; w.len()];
    let mut ss = 0.0;
    for t in p..w.len() {
        let mut pred = c;
        for (i, ph) in phi.iter().enumerate() {
            pred += ph * (w[t - 1 - i] - c);
        }
        if let (Some(th), true) = (theta.first(), t > 0) {
            pred += th * e[t - 1];
        }
        e[t] = w[t] - pred;
        ss += e[t] * e[t];
    }
    (ss, e)
}

fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..5000 {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() <= 1e-14 * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = (0..n).map(|k| best[k] + 0.5 * (simplex[i][k] - best[k])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    simplex[best].clone()
}

struct Estimate {
    c: f64,
    phi: Vec<f64>,
    theta: Vec<f64>,
}

fn ols_ar(w: &[f64], p: usize, with_drift: bool) -> Option<Estimate> {
    let rows = w.len() - p;
    let cols = p + usize::from(with_drift);
    if cols == 0 {
        return Some(Estimate {
            c: 0.0,
            phi: vec![],
            theta: vec![],
        });
    }
    let x = DMatrix::from_fn(rows, cols, |r, k| {
        let t = r + p;
        if with_drift && k == 0 {
            1.0
        } else {
            let lag = k + 1 - usize::from(with_drift);
            w[t - lag]
        }
    });
    let y = DVector::from_fn(rows, |r, _| w[r + p]);
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y))?;
    let offset = usize::from(with_drift);
    let phi: Vec<f64> = (0..p).map(|i| beta[i + offset]).collect();
    let c = if with_drift {
        let denom = 1.0 - phi.iter().sum::<f64>();
        if denom.abs() < 1e-12 {
            return None;
        }
        beta[0] / denom
    } else {
        0.0
    };
    Some(Estimate {
        c,
        phi,
        theta: vec![],
    })
}

fn unpack(v: &[f64], p: usize, q: usize, with_drift: bool) -> Estimate {
    let offset = usize::from(with_drift);
    Estimate {
        c: if with_drift { v[0] } else { 0.0 },
        phi: v[offset..offset + p].to_vec(),
        theta: v[offset + p..offset + p + q].to_vec(),
    }
}

fn optimize(w: &[f64], p: usize, q: usize, with_drift: bool, start: &Estimate, constrained: bool) -> Estimate {
    let mut x0 = Vec::new();
    if with_drift {
        x0.push(start.c);
    }
    x0.extend_from_slice(&start.phi);
    x0.extend(start.theta.iter().copied().chain(std::iter::repeat(0.0)).take(q));
    if x0.is_empty() {
        return Estimate {
            c: 0.0,
            phi: vec![],
            theta: vec![],
        };
    }
    let objective = |v: &[f64]| {
        let est = unpack(v, p, q, with_drift);
        if est.theta.iter().any(|t| t.abs() >= 1.0) {
            return f64::INFINITY;
        }
        if constrained && !is_stationary(&est.phi) {
            return f64::INFINITY;
        }
        css(w, est.c, &est.phi, &est.theta).0
    };
    let sol = nelder_mead(objective, &x0, 0.1);
    unpack(&sol, p, q, with_drift)
}

fn finish(y: &[f64], w: &[f64], est: Estimate, p: usize, q: usize, with_drift: bool, fallback: bool) -> ArimaModel {
    let (ss, e) = css(w, est.c, &est.phi, &est.theta);
    let n_used = w.len() - p;
    let n_params = p + q + usize::from(with_drift);
    let innovation_var = if n_used > n_params {
        ss / (n_used - n_params) as f64
    } else {
        0.0
    };
    ArimaModel {
        p,
        q,
        drift: with_drift.then_some(est.c),
        ar_coeffs: est.phi,
        ma_coeffs: est.theta,
        innovation_var,
        last_value: y[y.len() - 1],
        recent_diffs: w[w.len() - p..].to_vec(),
        last_residual: e.last().copied().unwrap_or(0.0),
        fallback,
    }
}

pub fn fit_arima(series: &[f64], p: usize, q: usize, with_drift: bool) -> Result<ArimaModel> {
    if p > 2 || q > 1 {
        return Err(Error::invalid(format!("ARIMA({p},1,{q}) not supported; need p ≤ 2, q ≤ 1")));
    }
    if series.len() < p + q + 3 {
        return Err(Error::invalid(format!(
            "ARIMA({p},1,{q}) needs at least {} observations, got {}",
            p + q + 3,
            series.len()
        )));
    }
    let w: Vec<f64> = series.windows(2).map(|s| s[1] - s[0]).collect();

    if p == 0 && q == 0 {
        // endpoints drift, identical to the random walk with drift
        let n = series.len();
        let c = if with_drift {
            (series[n - 1] - series[0]) / (n - 1) as f64
        } else {
            0.0
        };
        let est = Estimate {
            c,
            phi: vec![],
            theta: vec![],
        };
        return Ok(finish(series, &w, est, 0, 0, with_drift, false));
    }

    let mean_w = w.iter().sum::<f64>() / w.len() as f64;
    let ols = ols_ar(&w, p, with_drift).unwrap_or(Estimate {
        c: mean_w,
        phi: vec![0.0; p],
        theta: vec![],
    });
    let first = if q == 0 {
        ols
    } else {
        optimize(&w, p, q, with_drift, &ols, false)
    };
    if is_stationary(&first.phi) && first.phi.iter().chain(&first.theta).all(|v| v.is_finite()) {
        return Ok(finish(series, &w, first, p, q, with_drift, false));
    }

    let perturbed = [0.0, 0.5, -0.5];
    let mut best: Option<(f64, Estimate)> = None;
    for &s in &perturbed {
        let start = Estimate {
            c: mean_w,
            phi: (0..p).map(|i| if i == 0 { s } else { 0.0 }).collect(),
            theta: vec![0.0; q],
        };
        let est = optimize(&w, p, q, with_drift, &start, true);
        if !is_stationary(&est.phi) {
            continue;
        }
        let ss = css(&w, est.c, &est.phi, &est.theta).0;
        if best.as_ref().is_none_or(|(b, _)| ss < *b) {
            best = Some((ss, est));
        }
    }
    if let Some((_, est)) = best {
        return Ok(finish(series, &w, est, p, q, with_drift, false));
    }
    log::warn!("ARIMA({p},1,{q}) estimate non-stationary; falling back to (0,1,0) with drift");
    let mut m = fit_arima(series, 0, 0, true)?;
    m.fallback = true;
    Ok(m)
}

/// ψ-weights of the integrated process, `Ψ_0 ..= Ψ_{h-1}`.
fn integrated_psi(model: &ArimaModel, h: usize) -> Vec<f64> {
    let mut psi = vec![0.0; h];
    for j in 0..h {
        let mut v = if j == 0 { 1.0 } else { 0.0 };
        if j == 1 {
            v += model.ma_coeffs.first().copied().unwrap_or(0.0);
        }
        for (i, ph) in model.ar_coeffs.iter().enumerate() {
            if j > i {
                v += ph * psi[j - 1 - i];
            }
        }
        psi[j] = v;
    }
    let mut acc = 0.0;
    psi.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

pub fn forecast_arima(model: &ArimaModel, h: usize) -> (Vec<f64>, Vec<f64>) {
    let c = model.drift.unwrap_or(0.0);
    let mut hist = model.recent_diffs.clone();
    let mut level = model.last_value;
    let mut mean = Vec::with_capacity(h);
    for j in 0..h {
        let mut w = c;
        for (i, ph) in model.ar_coeffs.iter().enumerate() {
            w += ph * (hist[hist.len() - 1 - i] - c);
        }
        if j == 0 {
            if let Some(th) = model.ma_coeffs.first() {
                w += th * model.last_residual;
            }
        }
        hist.push(w);
        level += w;
        mean.push(level);
    }
    let psi = integrated_psi(model, h);
    let mut acc = 0.0;
    let var = psi
        .iter()
        .map(|p| {
            acc += p * p;
            acc * model.innovation_var
        })
        .collect();
    (mean, var)
}
