use nalgebra::{DMatrix, DVector};

use super::{LogRateSurface, MortalityDataset};
use crate::error::{Error, Result};

/// Roughness penalty for the log-rate smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingPenalty {
    Fixed(f64),
    /// Per-year generalized cross-validation over `10^-2 ..= 10^4`.
    Gcv,
}

const GCV_GRID: [f64; 7] = [1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4];
const MIN_WEIGHTED_CELLS: usize = 4;

/// Pool-adjacent-violators projection onto non-decreasing sequences (unit weights).
pub fn pava_non_decreasing(y: &[f64]) -> Vec<f64> {
    // blocks of (mean, size)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

struct PenalizedFit {
    fitted: Vec<f64>,
    trace: f64,
}

/// Minimizes Σ w (y − g)² + λ Σ (Δ²g)² by QR on the augmented system.
fn penalized_fit(y: &[f64], w: &[f64], lambda: f64, want_trace: bool) -> Result<PenalizedFit> {
    let n = y.len();
    let weighted: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let n_pen = n.saturating_sub(2);
    let m = weighted.len() + n_pen;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, &i) in weighted.iter().enumerate() {
        let s = w[i].sqrt();
        a[(r, i)] = s;
        b[r] = s * y[i];
    }
    let s = lambda.sqrt();
    for k in 0..n_pen {
        let r = weighted.len() + k;
        a[(r, k)] = s;
        a[(r, k + 1)] = -2.0 * s;
        a[(r, k + 2)] = s;
    }
    let qr = a.qr();
    let r = qr.r();
    if r.diagonal().iter().any(|d| d.abs() < 1e-300) {
        return Err(Error::Numerical("singular smoothing system".into()));
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, n).into_owned();
    let g = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numerical("singular smoothing system".into()))?;
    let trace = if want_trace {
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Numerical("singular smoothing system".into()))?;
        // diag((R'R)^{-1}) = row norms of R^{-1}
        (0..n)
            .map(|i| w[i] * rinv.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum()
    } else {
        0.0
    };
    Ok(PenalizedFit {
        fitted: g.iter().copied().collect(),
        trace,
    })
}

/// Smooths one curve. Cells with zero weight are filled by the smoother; with
/// a zero penalty and all weights positive the input is returned unchanged.
pub fn smooth_curve(y: &[f64], w: &[f64], penalty: SmoothingPenalty, monotone: bool) -> Result<Vec<f64>> {
    if y.len() != w.len() {
        return Err(Error::dims("curve and weights differ in length"));
    }
    if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("smoothing weights must be finite and non-negative"));
    }
    let n_weighted = w.iter().filter(|v| **v > 0.0).count();
    if y.iter().zip(w).any(|(v, wt)| *wt > 0.0 && !v.is_finite()) {
        return Err(Error::invalid("weighted cell with non-finite value"));
    }
    let fitted = match penalty {
        SmoothingPenalty::Fixed(lambda) => {
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(Error::invalid(format!("penalty must be non-negative, got {lambda}")));
            }
            if lambda == 0.0 && n_weighted == y.len() {
                y.to_vec()
            } else {
                // a vanishing penalty interpolates the unweighted cells
                let lambda = if lambda == 0.0 { 1e-10 } else { lambda };
                penalized_fit(y, w, lambda, false)?.fitted
            }
        }
        SmoothingPenalty::Gcv => {
            let nw = n_weighted as f64;
            let mut best: Option<(f64, Vec<f64>)> = None;
            for &lambda in &GCV_GRID {
                let fit = penalized_fit(y, w, lambda, true)?;
                let rss: f64 = (0..y.len())
                    .filter(|&i| w[i] > 0.0)
                    .map(|i| w[i] * (y[i] - fit.fitted[i]).powi(2))
                    .sum();
                let denom = nw - fit.trace;
                if denom <= 1e-12 {
                    continue;
                }
                let score = nw * rss / (denom * denom);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, fit.fitted));
                }
            }
            match best {
                Some((_, g)) => g,
                None => penalized_fit(y, w, GCV_GRID[GCV_GRID.len() - 1], false)?.fitted,
            }
        }
    };
    Ok(if monotone { pava_non_decreasing(&fitted) } else { fitted })
}

/// Smooths each year's log-rate curve with deaths-proportional weights.
pub fn smooth_log_rates(ds: &MortalityDataset, penalty: SmoothingPenalty, monotone: bool) -> Result<LogRateSurface> {
    if ds.n_ages() < MIN_WEIGHTED_CELLS {
        return Err(Error::invalid("smoothing needs at least 4 ages"));
    }
    if let SmoothingPenalty::Fixed(l) = penalty {
        if l < 0.0 || !l.is_finite() {
            return Err(Error::invalid(format!("penalty must be non-negative, got {l}")));
        }
    }
    let raw = LogRateSurface::from_dataset(ds);
    let mut values = raw.values.clone();
    let mut weights = DMatrix::zeros(ds.n_ages(), ds.n_years());
    for j in 0..ds.n_years() {
        let max_d = (0..ds.n_ages())
            .filter(|&i| ds.weights[(i, j)] > 0.0)
            .map(|i| ds.deaths[(i, j)])
            .fold(0.0, f64::max);
        let w: Vec<f64> = (0..ds.n_ages())
            .map(|i| {
                if ds.weights[(i, j)] > 0.0 && max_d > 0.0 {
                    ds.deaths[(i, j)] / max_d
                } else {
                    0.0
                }
            })
            .collect();
        let y: Vec<f64> = raw.values.column(j).iter().copied().collect();
        let n_weighted = w.iter().filter(|v| **v > 0.0).count();
        if n_weighted < MIN_WEIGHTED_CELLS {
            log::warn!(
                "{} {}: year {} has {n_weighted} weighted cells; left unsmoothed",
                ds.population_label,
                ds.sex.as_str(),
                ds.years[j]
            );
            for i in 0..ds.n_ages() {
                weights[(i, j)] = w[i];
            }
            continue;
        }
        let g = smooth_curve(&y, &w, penalty, monotone)?;
        for i in 0..ds.n_ages() {
            values[(i, j)] = g[i];
            weights[(i, j)] = w[i];
        }
    }
    Ok(LogRateSurface {
        ages: ds.ages.clone(),
        years: ds.years.clone(),
        values,
        weights,
        smoothed: true,
    })
}
