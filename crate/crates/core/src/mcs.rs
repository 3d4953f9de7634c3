//! Model confidence set: sequential equal-predictive-ability tests with
//! moving-block bootstrap null distributions.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LossPanel;
use crate::index::{derive_seed, path_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum McsStatistic {
    #[serde(rename = "T_MAX")]
    TMax,
    #[serde(rename = "T_R")]
    TR,
}

impl McsStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            McsStatistic::TMax => "T_MAX",
            McsStatistic::TR => "T_R",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsConfig {
    pub statistic: McsStatistic,
    pub confidence: f64,
    pub n_bootstrap: usize,
    pub block_length: Option<usize>,
    pub seed: u64,
}

impl McsConfig {
    pub fn new(statistic: McsStatistic, seed: u64) -> Self {
        McsConfig {
            statistic,
            confidence: 0.90,
            n_bootstrap: 5000,
            block_length: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!("confidence must be in (0, 1), got {}", self.confidence)));
        }
        if self.n_bootstrap < 100 {
            return Err(Error::invalid(format!("n_bootstrap must be at least 100, got {}", self.n_bootstrap)));
        }
        if self.block_length == Some(0) {
            return Err(Error::invalid("block_length must be at least 1"));
        }
        Ok(())
    }
}

/// JSON has no infinities; they are written as the strings "inf" / "-inf".
mod extended_f64 {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(D::Error::custom(format!("unexpected number `{t}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub model: u32,
    #[serde(with = "extended_f64")]
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPValue {
    pub model: u32,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub superior_set: Vec<u32>,
    pub elimination_trace: Vec<EliminationStep>,
    /// Eliminated models in elimination order, then the survivors.
    pub mcs_p_values: Vec<ModelPValue>,
    pub block_length: usize,
    pub config: McsConfig,
}

impl McsResult {
    pub fn p_value(&self, model: u32) -> Option<f64> {
        self.mcs_p_values.iter().find(|p| p.model == model).map(|p| p.p_value)
    }

    pub fn p_values_csv(&self) -> String {
        let mut out = String::from("model,mcs_p_value\n");
        for p in &self.mcs_p_values {
            let _ = writeln!(out, "{},{}", p.model, p.p_value);
        }
        out
    }
}

/// Pairwise and average-relative loss differentials over a model subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Differentials {
    pub members: Vec<u32>,
    /// `m·m` series of length N, pair `(ρ, ξ)` at `ρ·m + ξ`.
    pub pairwise: Vec<DVector<f64>>,
    /// `m × N`; row ρ is the mean of `d_{ρξ}` over ξ, including ξ = ρ.
    pub relative: DMatrix<f64>,
}

impl Differentials {
    pub fn pair(&self, rho: usize, xi: usize) -> &DVector<f64> {
        &self.pairwise[rho * self.members.len() + xi]
    }
}

fn member_rows(panel: &LossPanel, members: &[u32]) -> Result<Vec<usize>> {
    if members.len() < 2 {
        return Err(Error::invalid("loss differentials need at least two models"));
    }
    let rows = members
        .iter()
        .map(|&m| {
            panel
                .row_of(m)
                .ok_or_else(|| Error::invalid(format!("model {m} not in panel")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_complete(panel, &rows)?;
    Ok(rows)
}

fn check_complete(panel: &LossPanel, rows: &[usize]) -> Result<()> {
    for &r in rows {
        for c in 0..panel.n_periods() {
            if !panel.losses[(r, c)].is_finite() {
                return Err(Error::MissingLoss {
                    model: panel.model_labels[r],
                    period: panel.periods[c],
                });
            }
        }
    }
    Ok(())
}

pub fn loss_differentials(panel: &LossPanel, members: &[u32]) -> Result<Differentials> {
    let rows = member_rows(panel, members)?;
    let m = rows.len();
    let n = panel.n_periods();
    let mut pairwise = Vec::with_capacity(m * m);
    for &a in &rows {
        for &b in &rows {
            pairwise.push(DVector::from_fn(n, |l, _| panel.losses[(a, l)] - panel.losses[(b, l)]));
        }
    }
    let relative = DMatrix::from_fn(m, n, |rho, l| {
        (0..m).map(|xi| pairwise[rho * m + xi][l]).sum::<f64>() / m as f64
    });
    Ok(Differentials {
        members: members.to_vec(),
        pairwise,
        relative,
    })
}

/// Least-squares AR(p) fit with intercept over observations `start..N`.
/// Returns the residual variance and the lag-coefficient t-statistics.
fn ar_fit(y: &[f64], p: usize, start: usize) -> Option<(f64, Vec<f64>)> {
    let rows = y.len() - start;
    let cols = p + 1;
    if rows <= cols {
        return None;
    }
    let x = DMatrix::from_fn(rows, cols, |r, c| if c == 0 { 1.0 } else { y[start + r - c] });
    let target = DVector::from_fn(rows, |r, _| y[start + r]);
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse()?;
    let coef = &inv * x.transpose() * &target;
    let resid = &target - &x * &coef;
    let rss = resid.norm_squared();
    let s2 = rss / (rows - cols) as f64;
    let t = (1..cols)
        .map(|c| {
            let se = (s2 * inv[(c, c)]).sqrt();
            if se > 0.0 {
                coef[c] / se
            } else {
                0.0
            }
        })
        .collect();
    Some((rss / rows as f64, t))
}

const AR_T_CRITICAL: f64 = 1.96;

/// Significant AR lags of one differential series: the AR order is chosen
/// by BIC over `0..=min(10, N/3)` on a common sample, and the lags of that fit
/// with `|t| > 1.96` are counted.
fn significant_lags(y: &[f64]) -> usize {
    let n = y.len();
    let p_max = (n / 3).min(10);
    let mean = y.iter().sum::<f64>() / n as f64;
    let scale = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if p_max == 0 || scale <= 1e-12 * (1.0 + mean.abs()) {
        return 0;
    }
    let rows = (n - p_max) as f64;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for p in 0..=p_max {
        let Some((s2, t)) = ar_fit(y, p, p_max) else { continue };
        if s2 <= 0.0 {
            continue;
        }
        let bic = rows * s2.ln() + (p + 1) as f64 * rows.ln();
        if best.as_ref().is_none_or(|b| bic < b.0) {
            best = Some((bic, p, t));
        }
    }
    best.map_or(0, |(_, _, t)| t.iter().filter(|v| v.abs() > AR_T_CRITICAL).count())
}

/// Block length: one more than the largest count of significant AR lags over
/// all pairwise differential series.
pub fn auto_block_length(diffs: &Differentials) -> usize {
    let m = diffs.members.len();
    let mut most = 0;
    for rho in 0..m {
        for xi in (rho + 1)..m {
            most = most.max(significant_lags(diffs.pair(rho, xi).as_slice()));
        }
    }
    most + 1
}

/// Moving-block resample indices with wrap-around; resample `b` draws from
/// its own stream so the set does not depend on scheduling.
fn bootstrap_indices(n: usize, block: usize, n_boot: usize, seed: u64) -> Vec<Vec<usize>> {
    let base = derive_seed(seed, &[0x6d_6373]);
    (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = path_rng(base, b as u64);
            let mut idx = Vec::with_capacity(n);
            while idx.len() < n {
                let start = rng.random_range(0..n);
                for j in 0..block {
                    if idx.len() == n {
                        break;
                    }
                    idx.push((start + j) % n);
                }
            }
            idx
        })
        .collect()
}

/// t-ratio with the zero-variance convention: 0 when the mean is 0, else a
/// signed infinity.
fn t_ratio(mean: f64, var: f64) -> f64 {
    if var > 0.0 {
        mean / var.sqrt()
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    }
}

fn centred_ratio(dev: f64, var: f64) -> f64 {
    if var > 0.0 {
        dev / var.sqrt()
    } else {
        0.0
    }
}

struct Step {
    statistic: f64,
    p_value: f64,
    worst: usize,
}

/// One EPA test over `set` (indices into the panel rows).
fn epa_step(set: &[usize], mean: &[f64], boot_means: &[Vec<f64>], stat: McsStatistic) -> Step {
    let m = set.len();
    let n_boot = boot_means.len();
    match stat {
        McsStatistic::TMax => {
            // d_ρ· = (1/m) Σ_ξ (l_ρ − l_ξ), summed pairwise so equal rows give exact zeros
            let rel = |vals: &[f64], r: usize| set.iter().map(|&q| vals[r] - vals[q]).sum::<f64>() / m as f64;
            let dbar: Vec<f64> = set.iter().map(|&r| rel(mean, r)).collect();
            let mut var = vec![0.0; m];
            let devs: Vec<Vec<f64>> = boot_means
                .iter()
                .map(|bm| set.iter().enumerate().map(|(k, &r)| rel(bm, r) - dbar[k]).collect())
                .collect();
            for d in &devs {
                for k in 0..m {
                    var[k] += d[k] * d[k];
                }
            }
            var.iter_mut().for_each(|v| *v /= n_boot as f64);
            let t: Vec<f64> = (0..m).map(|k| t_ratio(dbar[k], var[k])).collect();
            let (worst, &observed) = argmax(&t);
            let exceed = devs
                .iter()
                .filter(|d| {
                    let tb = (0..m).map(|k| centred_ratio(d[k], var[k])).fold(f64::NEG_INFINITY, f64::max);
                    tb >= observed
                })
                .count();
            Step {
                statistic: observed,
                p_value: exceed as f64 / n_boot as f64,
                worst,
            }
        }
        McsStatistic::TR => {
            let mut var = vec![0.0; m * m];
            let dbar: Vec<f64> = (0..m * m).map(|k| mean[set[k / m]] - mean[set[k % m]]).collect();
            let devs: Vec<Vec<f64>> = boot_means
                .iter()
                .map(|bm| {
                    (0..m * m)
                        .map(|k| bm[set[k / m]] - bm[set[k % m]] - dbar[k])
                        .collect()
                })
                .collect();
            for d in &devs {
                for k in 0..m * m {
                    var[k] += d[k] * d[k];
                }
            }
            var.iter_mut().for_each(|v| *v /= n_boot as f64);
            let t: Vec<f64> = (0..m * m).map(|k| t_ratio(dbar[k], var[k])).collect();
            let observed = t.iter().map(|v| v.abs()).fold(0.0, f64::max);
            // e_R: the model with the largest t against any other
            let row_max: Vec<f64> = (0..m)
                .map(|r| (0..m).map(|c| t[r * m + c]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let (worst, _) = argmax(&row_max);
            let exceed = devs
                .iter()
                .filter(|d| {
                    let tb = (0..m * m).map(|k| centred_ratio(d[k], var[k]).abs()).fold(0.0, f64::max);
                    tb >= observed
                })
                .count();
            Step {
                statistic: observed,
                p_value: exceed as f64 / n_boot as f64,
                worst,
            }
        }
    }
}

/// First index of the maximum; callers order candidates by label so ties go
/// to the lowest label.
fn argmax(v: &[f64]) -> (usize, &f64) {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    (best, &v[best])
}

pub fn run_mcs(panel: &LossPanel, config: &McsConfig) -> Result<McsResult> {
    config.validate()?;
    if panel.n_models() == 0 {
        return Err(Error::invalid("MCS needs at least one model"));
    }
    let n = panel.n_periods();
    if n < 5 {
        return Err(Error::invalid(format!("MCS needs at least 5 periods, got {n}")));
    }
    let mut order: Vec<usize> = (0..panel.n_models()).collect();
    order.sort_by_key(|&r| panel.model_labels[r]);
    check_complete(panel, &order)?;

    if order.len() == 1 {
        let label = panel.model_labels[0];
        return Ok(McsResult {
            superior_set: vec![label],
            elimination_trace: Vec::new(),
            mcs_p_values: vec![ModelPValue { model: label, p_value: 1.0 }],
            block_length: config.block_length.unwrap_or(1),
            config: config.clone(),
        });
    }

    let block = match config.block_length {
        Some(b) => b,
        None => {
            let labels: Vec<u32> = order.iter().map(|&r| panel.model_labels[r]).collect();
            auto_block_length(&loss_differentials(panel, &labels)?)
        }
    }
    .min(n);

    let indices = bootstrap_indices(n, block, config.n_bootstrap, config.seed);
    let mean: Vec<f64> = (0..panel.n_models()).map(|r| panel.losses.row(r).mean()).collect();
    let boot_means: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|idx| {
            (0..panel.n_models())
                .map(|r| idx.iter().map(|&l| panel.losses[(r, l)]).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();

    let threshold = 1.0 - config.confidence;
    let mut set = order;
    let mut trace = Vec::new();
    let mut p_values = Vec::new();
    let mut running = 0.0f64;
    let superior_p;
    loop {
        if set.len() == 1 {
            superior_p = 1.0;
            break;
        }
        let step = epa_step(&set, &mean, &boot_means, config.statistic);
        running = running.max(step.p_value);
        if step.p_value >= threshold {
            superior_p = running;
            break;
        }
        let row = set.remove(step.worst);
        let label = panel.model_labels[row];
        trace.push(EliminationStep {
            model: label,
            statistic: step.statistic,
            p_value: step.p_value,
        });
        p_values.push(ModelPValue {
            model: label,
            p_value: running,
        });
    }
    let superior_set: Vec<u32> = set.iter().map(|&r| panel.model_labels[r]).collect();
    p_values.extend(superior_set.iter().map(|&model| ModelPValue {
        model,
        p_value: superior_p,
    }));
    Ok(McsResult {
        superior_set,
        elimination_trace: trace,
        mcs_p_values: p_values,
        block_length: block,
        config: config.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::eval::LossKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn panel_from(rows: &[Vec<f64>]) -> LossPanel {
        let n = rows[0].len();
        let losses = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        LossPanel::new(
            (1..=rows.len() as u32).collect(),
            (0..n as i32).map(|t| 1990 + t).collect(),
            losses,
            LossKind::Rmsfe,
        )
        .unwrap()
    }

    /// `l = μ_ρ + ε` with unit-variance Gaussian noise.
    pub(crate) fn gaussian_panel(means: &[f64], n: usize, seed: u64) -> LossPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = means
            .iter()
            .map(|&mu| {
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        mu + e
                    })
                    .collect()
            })
            .collect();
        panel_from(&rows)
    }

    fn config(stat: McsStatistic, seed: u64) -> McsConfig {
        McsConfig {
            n_bootstrap: 1000,
            ..McsConfig::new(stat, seed)
        }
    }

    #[test]
    fn differential_examples() {
        let p = panel_from(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        let d = loss_differentials(&p, &[1, 2]).unwrap();
        assert_eq!(d.pair(0, 1).as_slice(), &[-2.0, -2.0]);
        assert_eq!(d.relative.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
        let same = panel_from(&[vec![0.3, 0.7], vec![0.3, 0.7]]);
        let d = loss_differentials(&same, &[1, 2]).unwrap();
        assert!(d.pairwise.iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(loss_differentials(&p, &[1]).is_err());
    }

    #[test]
    fn missing_loss_named() {
        let p = panel_from(&[vec![1.0, f64::NAN], vec![3.0, 3.0]]);
        match loss_differentials(&p, &[1, 2]) {
            Err(Error::MissingLoss { model: 1, period: 1991 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn block_length_zero_series() {
        let p = panel_from(&[vec![1.0; 20], vec![1.0; 20], vec![1.0; 20]]);
        assert_eq!(auto_block_length(&loss_differentials(&p, &[1, 2, 3]).unwrap()), 1);
    }

    #[test]
    fn block_length_white_noise() {
        let ones = (0..100)
            .filter(|&s| {
                let p = gaussian_panel(&[0.0, 0.0, 0.0], 200, 1000 + s);
                auto_block_length(&loss_differentials(&p, &[1, 2, 3]).unwrap()) == 1
            })
            .count();
        assert!(ones >= 90, "{ones} of 100");
    }

    #[test]
    fn block_length_ar1() {
        let hits = (0..100)
            .filter(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(5000 + s);
                let mut d = vec![0.0f64; 500];
                for t in 1..500 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    d[t] = 0.9 * d[t - 1] + e;
                }
                let p = panel_from(&[d, vec![0.0; 500]]);
                auto_block_length(&loss_differentials(&p, &[1, 2]).unwrap()) >= 2
            })
            .count();
        assert!(hits >= 90, "{hits} of 100");
    }

    #[test]
    fn singleton_panel() {
        let p = panel_from(&[vec![0.1, 0.2, 0.3, 0.4, 0.5]]);
        let r = run_mcs(&p, &config(McsStatistic::TMax, 1)).unwrap();
        assert_eq!(r.superior_set, vec![1]);
        assert!(r.elimination_trace.is_empty());
        assert_eq!(r.p_value(1), Some(1.0));
    }

    #[test]
    fn identical_losses_keep_everything() {
        let row: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).sin().abs()).collect();
        let p = panel_from(&[row.clone(), row.clone(), row]);
        for stat in [McsStatistic::TMax, McsStatistic::TR] {
            let r = run_mcs(&p, &config(stat, 2)).unwrap();
            assert_eq!(r.superior_set, vec![1, 2, 3]);
            assert!(r.mcs_p_values.iter().all(|p| p.p_value == 1.0));
        }
    }

    #[test]
    fn deterministic_dominance_eliminates() {
        let p = panel_from(&[vec![1.0; 10], vec![2.0; 10]]);
        for stat in [McsStatistic::TMax, McsStatistic::TR] {
            let r = run_mcs(&p, &config(stat, 3)).unwrap();
            assert_eq!(r.superior_set, vec![1]);
            assert_eq!(r.elimination_trace[0].model, 2);
            assert_eq!(r.elimination_trace[0].statistic, f64::INFINITY);
            assert_eq!(r.elimination_trace[0].p_value, 0.0);
        }
    }

    #[test]
    fn single_superior_model_found() {
        for stat in [McsStatistic::TMax, McsStatistic::TR] {
            let hits = (0..50)
                .filter(|&s| {
                    let p = gaussian_panel(&[0.0, 1.0, 1.0, 1.0], 200, 300 + s);
                    run_mcs(&p, &config(stat, s)).unwrap().superior_set == vec![1]
                })
                .count();
            assert!(hits >= 48, "{stat:?}: {hits} of 50");
        }
    }

    #[test]
    fn json_round_trip_with_infinity() {
        let p = panel_from(&[vec![1.0; 10], vec![2.0; 10], vec![1.5, 1.4, 1.6, 1.5, 1.5, 1.4, 1.6, 1.5, 1.5, 1.5]]);
        let r = run_mcs(&p, &config(McsStatistic::TR, 9)).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<McsResult>(&text).unwrap(), r);
        assert!(text.contains("\"T_R\""));
    }

    #[test]
    fn config_validation() {
        let p = panel_from(&[vec![0.0; 10], vec![1.0; 10]]);
        let mut c = config(McsStatistic::TMax, 0);
        c.n_bootstrap = 99;
        assert!(run_mcs(&p, &c).is_err());
        c.n_bootstrap = 100;
        c.block_length = Some(0);
        assert!(run_mcs(&p, &c).is_err());
        let short = panel_from(&[vec![0.0; 4], vec![1.0; 4]]);
        assert!(run_mcs(&short, &config(McsStatistic::TMax, 0)).is_err());
    }

    fn check_invariants(r: &McsResult, confidence: f64) {
        assert!(!r.superior_set.is_empty());
        for w in r.mcs_p_values.windows(2) {
            assert!(w[0].p_value <= w[1].p_value);
        }
        for &m in &r.superior_set {
            assert!(r.p_value(m).unwrap() >= 1.0 - confidence);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn antisymmetric_differentials(rows in prop::collection::vec(prop::collection::vec(0.0f64..5.0, 8), 2..5)) {
            let p = panel_from(&rows);
            let labels = p.model_labels.clone();
            let d = loss_differentials(&p, &labels).unwrap();
            let m = labels.len();
            for a in 0..m {
                for b in 0..m {
                    prop_assert_eq!(d.pair(a, b).clone(), -d.pair(b, a).clone());
                }
            }
        }

        #[test]
        fn result_invariants(seed in 0u64..1000, gap in 0.0f64..1.0, tr in any::<bool>()) {
            let p = gaussian_panel(&[0.0, gap, gap, 0.5 * gap], 40, seed);
            let stat = if tr { McsStatistic::TR } else { McsStatistic::TMax };
            let c = McsConfig { n_bootstrap: 200, ..McsConfig::new(stat, seed) };
            let r = run_mcs(&p, &c).unwrap();
            check_invariants(&r, c.confidence);
            prop_assert_eq!(r.clone(), run_mcs(&p, &c).unwrap());
        }

        #[test]
        fn scale_invariance(seed in 0u64..1000, c_big in any::<bool>()) {
            let p = gaussian_panel(&[0.0, 0.3, 0.6, 0.1], 60, seed);
            let c = if c_big { 100.0 } else { 0.1 };
            let mut scaled = p.clone();
            scaled.losses *= c;
            for stat in [McsStatistic::TMax, McsStatistic::TR] {
                let cfg = McsConfig { n_bootstrap: 200, ..McsConfig::new(stat, seed) };
                let a = run_mcs(&p, &cfg).unwrap();
                let b = run_mcs(&scaled, &cfg).unwrap();
                prop_assert_eq!(&a.superior_set, &b.superior_set);
                let order = |r: &McsResult| r.elimination_trace.iter().map(|s| s.model).collect::<Vec<_>>();
                prop_assert_eq!(order(&a), order(&b));
            }
        }
    }
}
