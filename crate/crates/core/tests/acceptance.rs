//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mortcast_core::combine::{combine_forecasts, equal_weights, inverse_error_weights};
use mortcast_core::data::{write_hmd_sexes, HmdQuantity, LogRateSurface, MortalityDataset, Sex};
use mortcast_core::eval::{interval_score, mean_interval_score, rmsfe, LossKind, LossPanel};
use mortcast_core::forecast::{forecast_coherent, forecast_fts, forecast_lc, gaussian_result, ForecastResult};
use mortcast_core::fts::product_ratio_fit;
use mortcast_core::gapc::{apply_identifiability, constraint_residuals, fit_gapc, GapcModel, GapcSpec};
use mortcast_core::lc::{fit_lc, KappaAdjustment};
use mortcast_core::mcs::{run_mcs, McsConfig, McsResult, McsStatistic};
use mortcast_core::pipeline::{cmd_evaluate, cmd_forecast, cmd_mcs, mcs_path, panel_path, PipelineConfig, PopulationSource};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dataset(d: DMatrix<f64>, e: DMatrix<f64>, first_age: u32, first_year: i32) -> MortalityDataset {
    let (k, n) = d.shape();
    MortalityDataset::new(
        "synthetic",
        Sex::Female,
        (first_age..first_age + k as u32).collect(),
        (first_year..first_year + n as i32).collect(),
        d,
        e,
    )
    .unwrap()
}

fn from_log_rates(y: &DMatrix<f64>, exposure: f64) -> MortalityDataset {
    let e = DMatrix::from_element(y.nrows(), y.ncols(), exposure);
    let d = y.map(|v| exposure * v.exp());
    dataset(d, e, 60, 1975)
}

fn lc_recovery() -> Check {
    let (na, ny) = (41, 31);
    let alpha: Vec<f64> = (0..na).map(|i| -5.2 + 0.085 * i as f64).collect();
    let raw_b: Vec<f64> = (0..na).map(|i| 1.2 - 0.4 * (i as f64 / 9.0).sin()).collect();
    let sb: f64 = raw_b.iter().sum();
    let beta: Vec<f64> = raw_b.iter().map(|b| b / sb).collect();
    let raw_k: Vec<f64> = (0..ny).map(|t| -1.2 * t as f64 + 3.0 * (0.7 * t as f64).cos()).collect();
    let mk = raw_k.iter().sum::<f64>() / ny as f64;
    let kappa: Vec<f64> = raw_k.iter().map(|k| k - mk).collect();
    let y = DMatrix::from_fn(na, ny, |i, j| alpha[i] + beta[i] * kappa[j]);
    let ds = from_log_rates(&y, 1e5);

    let start = Instant::now();
    let fit = fit_lc(&ds, KappaAdjustment::None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let err = max_abs_diff(&fit.alpha, &alpha)
        .max(max_abs_diff(&fit.beta, &beta))
        .max(max_abs_diff(&fit.kappa, &kappa));
    ensure(err < 1e-8, format!("max parameter error {err:e}"))?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("max error {err:.1e}, {elapsed:?}"))
}

fn gapc_correctness() -> Check {
    let (k, n) = (41, 31);
    let xbar = 60.0 + (k - 1) as f64 / 2.0;
    let eta = DMatrix::from_fn(k, n, |i, j| {
        let k1 = -3.6 - 0.018 * j as f64;
        let k2 = 0.095 + 0.0004 * j as f64;
        k1 + (60.0 + i as f64 - xbar) * k2
    });
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let e = DMatrix::from_element(k, n, 1e6);
    let d = DMatrix::from_fn(k, n, |i, j| Poisson::new(1e6 * eta[(i, j)].exp()).unwrap().sample(&mut rng));
    let start = Instant::now();
    let fit = fit_gapc(&GapcSpec::new(GapcModel::Cbd), &dataset(d, e, 60, 1975), 1e-8, 500).map_err(|e| e.to_string())?;
    let sq: f64 = fit.fitted_log_rates.iter().zip(eta.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let rmse = (sq / (k * n) as f64).sqrt();
    ensure(rmse < 1e-2, format!("CBD log-rate RMSE {rmse:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut fits = 0;
    for rep in 0..50 {
        let (na, ny) = (rng.random_range(5..=10), rng.random_range(8..=14));
        let slope = rng.random_range(0.05..0.12);
        let drift = rng.random_range(-0.03..0.0);
        let exposure = rng.random_range(2e3..5e4);
        let e = DMatrix::from_element(na, ny, exposure);
        let d = DMatrix::from_fn(na, ny, |i, j| {
            let lam = exposure * (-4.0 + slope * i as f64 + drift * j as f64).exp();
            Poisson::new(lam).unwrap().sample(&mut rng)
        });
        let ds = dataset(d, e, 65, 1990);
        for m in GapcModel::ALL {
            let fit = fit_gapc(&GapcSpec::new(m), &ds, 1e-6, 200).map_err(|e| format!("{m:?} rep {rep}: {e}"))?;
            let trace = &fit.deviance_trace;
            let bad = trace.windows(2).find(|w| w[1] > w[0] + 1e-9 * w[0].abs());
            ensure(bad.is_none(), format!("{m:?} rep {rep}: deviance rose {bad:?}"))?;
            fits += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("CBD RMSE {rmse:.2e}, {fits} monotone traces, {elapsed:?}"))
}

fn constraint_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (k, n) = (12, 16);
    let e = DMatrix::from_element(k, n, 2e4);
    let d = DMatrix::from_fn(k, n, |i, j| {
        let cohort = (j as f64 - i as f64) * 0.01;
        let lam = 2e4 * (-4.2 + 0.09 * i as f64 - 0.02 * j as f64 + 0.05 * cohort.sin()).exp();
        Poisson::new(lam).unwrap().sample(&mut rng)
    });
    let ds = dataset(d, e, 60, 1985);
    let mut worst_constraint = 0.0f64;
    let mut worst_eta = 0.0f64;
    for m in GapcModel::ALL {
        let fit = fit_gapc(&GapcSpec::new(m), &ds, 1e-8, 500).map_err(|e| e.to_string())?;
        for (c, r) in constraint_residuals(&fit) {
            ensure(r < 1e-8, format!("{m:?} fitted {c:?} residual {r:e}"))?;
            worst_constraint = worst_constraint.max(r);
        }
        // push the parameters off the constraint surface, then restore
        let mut moved = fit.clone();
        let cbar = 1950.0;
        for (g, &c) in moved.gamma.iter_mut().zip(&moved.cohorts) {
            let cc = c as f64 - cbar;
            *g += 0.3 - 0.01 * cc + 1e-4 * cc * cc;
        }
        for r in 0..moved.kappas.nrows() {
            for j in 0..n {
                moved.kappas[(r, j)] += 0.2 * (r + 1) as f64;
            }
        }
        if m == GapcModel::LcPoisson || m == GapcModel::Rh {
            moved.betas.column_mut(0).scale_mut(1.7);
            moved.kappas.row_mut(0).scale_mut(1.0 / 1.7);
        }
        if let Some(b0) = moved.beta0.as_mut() {
            b0.iter_mut().for_each(|b| *b *= 0.5);
            moved.gamma.iter_mut().for_each(|g| *g *= 2.0);
        }
        let before = moved.compute_log_rates();
        let restored = apply_identifiability(&moved);
        let after = restored.compute_log_rates();
        let drift = before
            .iter()
            .zip(after.iter())
            .zip(fit.cell_weights.iter())
            .filter(|(_, w)| **w > 0.0)
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(drift < 1e-10, format!("{m:?} predictor moved by {drift:e}"))?;
        worst_eta = worst_eta.max(drift);
        for (c, r) in constraint_residuals(&restored) {
            ensure(r < 1e-8, format!("{m:?} restored {c:?} residual {r:e}"))?;
        }
    }
    let lc = fit_lc(&ds, KappaAdjustment::None).map_err(|e| e.to_string())?;
    let sb = (lc.beta.iter().sum::<f64>() - 1.0).abs();
    let sk = lc.kappa.iter().sum::<f64>().abs();
    ensure(sb < 1e-8 && sk < 1e-8, format!("LC sums beta {sb:e}, kappa {sk:e}"))?;
    Ok(format!("worst constraint {worst_constraint:.1e}, predictor drift {worst_eta:.1e}"))
}

fn scoring_oracles() -> Check {
    let cases = [(0.5, 1.0), (1.5, 6.0), (-0.2, 3.0)];
    for (y, want) in cases {
        let got = interval_score(0.0, 1.0, y, 0.2).map_err(|e| e.to_string())?;
        ensure(got == want, format!("interval_score(0, 1, {y}, 0.2) = {got}, want {want}"))?;
    }
    let y = [-4.1, -3.7, -2.2];
    let mis = mean_interval_score(&y, &y, &y, 0.2).map_err(|e| e.to_string())?;
    ensure(mis == 0.0, format!("zero-width truthful mean score {mis}"))?;
    let r = rmsfe(&y, &y).map_err(|e| e.to_string())?;
    ensure(r == 0.0, format!("perfect-forecast RMSFE {r}"))?;
    Ok("3 tabulated cases exact, zero cases 0".into())
}

fn normal_panel(means: &[f64], n: usize, common: f64, seed: u64) -> LossPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let shared: Vec<f64> = (0..n).map(|_| common * z.sample(&mut rng)).collect();
    let mut losses = DMatrix::zeros(means.len(), n);
    for (r, mu) in means.iter().enumerate() {
        for t in 0..n {
            losses[(r, t)] = mu + shared[t] + z.sample(&mut rng);
        }
    }
    LossPanel::new(
        (1..=means.len() as u32).collect(),
        (2000..2000 + n as i32).collect(),
        losses,
        LossKind::Rmsfe,
    )
    .unwrap()
}

fn mcs_config(stat: McsStatistic, seed: u64) -> McsConfig {
    McsConfig {
        n_bootstrap: 1000,
        ..McsConfig::new(stat, seed)
    }
}

fn mcs_power() -> Check {
    let start = Instant::now();
    let mut summary = Vec::new();
    for stat in [McsStatistic::TMax, McsStatistic::TR] {
        let hits: Result<Vec<bool>, String> = (0..50u64)
            .into_par_iter()
            .map(|rep| {
                let panel = normal_panel(&[0.0, 1.0, 1.0, 1.0], 200, 0.0, 500 + rep);
                let res = run_mcs(&panel, &mcs_config(stat, 900 + rep)).map_err(|e| e.to_string())?;
                Ok(res.superior_set == vec![1])
            })
            .collect();
        let hits = hits?.iter().filter(|h| **h).count();
        ensure(hits >= 48, format!("{}: singleton in {hits}/50", stat.as_str()))?;
        summary.push(format!("{} {hits}/50", stat.as_str()));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("{}, {elapsed:?}", summary.join(", ")))
}

fn mcs_size() -> Check {
    let mut summary = Vec::new();
    for stat in [McsStatistic::TMax, McsStatistic::TR] {
        let kept: Result<Vec<bool>, String> = (0..200u64)
            .into_par_iter()
            .map(|rep| {
                let panel = normal_panel(&[1.0; 5], 200, 0.5, 7000 + rep);
                let res = run_mcs(&panel, &mcs_config(stat, 8000 + rep)).map_err(|e| e.to_string())?;
                Ok(res.superior_set.len() == 5)
            })
            .collect();
        let freq = kept?.iter().filter(|k| **k).count() as f64 / 200.0;
        ensure(freq >= 0.85, format!("{}: all retained in {freq}", stat.as_str()))?;
        summary.push(format!("{} {freq:.3}", stat.as_str()));
    }
    Ok(summary.join(", "))
}

fn elimination_order(r: &McsResult) -> Vec<u32> {
    r.elimination_trace.iter().map(|s| s.model).collect()
}

fn mcs_invariance() -> Check {
    let panel = normal_panel(&[1.0, 1.15, 1.3, 1.6, 2.0], 120, 0.3, 71);
    for stat in [McsStatistic::TMax, McsStatistic::TR] {
        let config = mcs_config(stat, 5);
        let base = run_mcs(&panel, &config).map_err(|e| e.to_string())?;
        for c in [0.1, 100.0] {
            let mut scaled = panel.clone();
            scaled.losses *= c;
            let r = run_mcs(&scaled, &config).map_err(|e| e.to_string())?;
            ensure(
                r.superior_set == base.superior_set && elimination_order(&r) == elimination_order(&base),
                format!("{}: scale {c} changed the outcome", stat.as_str()),
            )?;
        }
        let on = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_mcs(&panel, &config))
                .map_err(|e| e.to_string())
        };
        ensure(on(1)? == on(8)?, format!("{}: 1 and 8 threads differ", stat.as_str()))?;
    }
    Ok("scale 0.1 and 100 unchanged, 1 vs 8 threads identical".into())
}

fn lc_coverage() -> Check {
    let (na, ny) = (20usize, 31usize);
    let alpha: Vec<f64> = (0..na).map(|i| -4.8 + 0.1 * i as f64).collect();
    let raw_b: Vec<f64> = (0..na).map(|i| 1.5 - 0.04 * i as f64).collect();
    let sb: f64 = raw_b.iter().sum();
    let beta: Vec<f64> = raw_b.iter().map(|b| b / sb).collect();
    let results: Result<Vec<(usize, usize)>, String> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(40_000 + rep);
            let step = Normal::new(-1.0, 1.0).unwrap();
            let noise = Normal::new(0.0, 0.02).unwrap();
            let mut kappa = vec![10.0];
            for _ in 1..ny {
                let last = *kappa.last().unwrap();
                kappa.push(last + step.sample(&mut rng));
            }
            let y = DMatrix::from_fn(na, ny, |i, j| alpha[i] + beta[i] * kappa[j] + noise.sample(&mut rng));
            let train = y.columns(0, ny - 1).into_owned();
            let fit = fit_lc(&from_log_rates(&train, 1e6), KappaAdjustment::None).map_err(|e| e.to_string())?;
            let f = forecast_lc(&fit, 1, 0.2).map_err(|e| e.to_string())?;
            let covered = (0..na)
                .filter(|&i| f.lower[(i, 0)] <= y[(i, ny - 1)] && y[(i, ny - 1)] <= f.upper[(i, 0)])
                .count();
            Ok((covered, na))
        })
        .collect();
    let (hit, total) = results?.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let cov = hit as f64 / total as f64;
    ensure((0.76..=0.84).contains(&cov), format!("coverage {cov:.4}"))?;
    Ok(format!("coverage {cov:.4} over 500 surfaces"))
}

fn product_ratio_coherence() -> Check {
    let (na, ny) = (25, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let z = Normal::new(0.0, 0.03).unwrap();
    let mut surface = |shift: f64| {
        let v = DMatrix::from_fn(na, ny, |i, j| -5.0 + shift + 0.09 * i as f64 - 0.015 * j as f64 + z.sample(&mut rng));
        LogRateSurface::from_values((60..60 + na as u32).collect(), (1980..1980 + ny as i32).collect(), v).unwrap()
    };
    let female = surface(0.0);
    let male = surface(0.4);
    let fit = product_ratio_fit(&female, &male, 3).map_err(|e| e.to_string())?;
    let h = 10;
    let (f, m) = forecast_coherent(&fit, h, 0.2).map_err(|e| e.to_string())?;
    let ratio = forecast_fts(&fit.ratio_fit, h, 0.2).map_err(|e| e.to_string())?;
    let product = forecast_fts(&fit.product_fit, h, 0.2).map_err(|e| e.to_string())?;
    let mut worst_ulps = 0.0f64;
    for i in 0..na {
        for s in 0..h {
            let diff = m.point[(i, s)] - f.point[(i, s)];
            let want = 2.0 * ratio.point[(i, s)];
            let ulp = f64::EPSILON * product.point[(i, s)].abs().max(ratio.point[(i, s)].abs());
            let ulps = (diff - want).abs() / ulp;
            worst_ulps = worst_ulps.max(ulps);
        }
    }
    ensure(worst_ulps <= 4.0, format!("male - female off 2 x ratio by {worst_ulps} ulps"))?;
    Ok(format!("worst deviation {worst_ulps:.1} ulps over {na} ages x {h} horizons"))
}

/// Poisson deaths for both sexes on ages 50-100 and years 1975-2015.
fn write_population(dir: &std::path::Path, seed: u64) -> PopulationSource {
    let ages: Vec<u32> = (50..=100).collect();
    let years: Vec<i32> = (1975..=2015).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |sex: Sex, offset: f64| {
        let e = DMatrix::from_fn(ages.len(), years.len(), |i, _| 3e5 * (-0.05 * i as f64).exp() + 200.0);
        let d = DMatrix::from_fn(ages.len(), years.len(), |i, j| {
            let x = ages[i] as f64;
            let ln_m = -9.8 + offset + 0.095 * x - (0.018 - 0.00015 * (x - 50.0)) * j as f64;
            Poisson::new(e[(i, j)] * ln_m.exp().min(0.8)).unwrap().sample(&mut rng).max(1.0)
        });
        MortalityDataset::new("synth", sex, ages.clone(), years.clone(), d, e).unwrap()
    };
    let female = make(Sex::Female, 0.0);
    let male = make(Sex::Male, 0.45);
    let deaths = dir.join("Deaths_1x1.txt");
    let exposures = dir.join("Exposures_1x1.txt");
    fs::write(&deaths, write_hmd_sexes(&female, &male, HmdQuantity::Deaths).unwrap()).unwrap();
    fs::write(&exposures, write_hmd_sexes(&female, &male, HmdQuantity::Exposures).unwrap()).unwrap();
    PopulationSource {
        label: "synth".into(),
        deaths,
        exposures,
    }
}

fn pipeline_shape() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = write_population(dir.path(), 3);
    let text = format!(
        "output_dir = {:?}\n[[populations]]\nlabel = \"synth\"\ndeaths = {:?}\nexposures = {:?}\n",
        dir.path().join("out"),
        source.deaths,
        source.exposures
    );
    let config = PipelineConfig::from_toml(&text).map_err(|e| e.to_string())?;
    let sexes = [Sex::Female, Sex::Male];
    let start = Instant::now();
    cmd_evaluate(&config, &sexes).map_err(|e| e.to_string())?;
    for sex in sexes {
        for kind in [LossKind::Rmsfe, LossKind::MeanIntervalScore] {
            let text = fs::read_to_string(config.output_dir.join(panel_path("synth", sex, kind))).map_err(|e| e.to_string())?;
            let panel = LossPanel::from_csv(&text, kind).map_err(|e| e.to_string())?;
            ensure(
                panel.periods == (1995..=2004).collect::<Vec<_>>(),
                format!("{} {} panel periods {:?}", sex.as_str(), kind.as_str(), panel.periods),
            )?;
            ensure(panel.n_models() == 17, format!("{} panel has {} models", sex.as_str(), panel.n_models()))?;
        }
    }
    cmd_mcs(&config, &sexes).map_err(|e| e.to_string())?;
    for sex in sexes {
        for kind in [LossKind::Rmsfe, LossKind::MeanIntervalScore] {
            for stat in [McsStatistic::TMax, McsStatistic::TR] {
                let path = config.output_dir.join(mcs_path("synth", sex, kind, stat));
                let r: McsResult = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
                ensure(!r.superior_set.is_empty(), format!("empty superior set in {}", path.display()))?;
            }
        }
    }
    let sets = fs::read_to_string(config.output_dir.join("mcs/superior_sets.csv")).map_err(|e| e.to_string())?;
    ensure(sets.lines().count() == 1 + 2 * 2 * 2, format!("superior_sets.csv has {} lines", sets.lines().count()))?;

    cmd_forecast(&config, &sexes).map_err(|e| e.to_string())?;
    let summary = fs::read_to_string(config.output_dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = summary.lines().collect();
    ensure(lines.len() == 20, format!("summary has {} data rows", lines.len() - 1))?;
    let labels: Vec<u32> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    ensure(labels == (1..=19).collect::<Vec<_>>(), format!("summary labels {labels:?}"))?;

    let test_panel = fs::read_to_string(config.output_dir.join("test_panels/synth_female_rmsfe.csv")).map_err(|e| e.to_string())?;
    let panel = LossPanel::from_csv(&test_panel, LossKind::Rmsfe).map_err(|e| e.to_string())?;
    ensure(panel.periods == (2005..=2014).collect::<Vec<_>>(), format!("test origins {:?}", panel.periods))?;
    let row = panel.row_of(9).ok_or("model 9 missing from test panel")?;
    let want = 100.0 * panel.mean_losses()[row];
    let cell: f64 = lines[9]
        .rsplit(',')
        .nth(3)
        .and_then(|v| v.parse().ok())
        .ok_or("unparseable summary cell")?;
    ensure((cell - want).abs() <= 1e-6, format!("summary {cell} vs 100 x mean loss {want}"))?;
    Ok(format!("10-origin panels, 8 superior sets, 19-row summary (x100), {:?}", start.elapsed()))
}

fn combination_sanity() -> Check {
    let w = inverse_error_weights(&[1, 2], &[1.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(w.weights == vec![0.75, 0.25], format!("inverse weights {:?}", w.weights))?;

    // model 1 tracks the truth, the others are biased and noisy
    let (na, n_orig) = (15, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let z = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<u32> = (1..=5).collect();
    let mut truths = Vec::new();
    let mut forecasts: Vec<Vec<ForecastResult>> = Vec::new();
    for t in 0..n_orig {
        let truth: Vec<f64> = (0..na).map(|i| -5.0 + 0.1 * i as f64 - 0.01 * t as f64).collect();
        let per_model: Vec<ForecastResult> = labels
            .iter()
            .map(|&l| {
                let (bias, sd) = if l == 1 { (0.0, 0.01) } else { (0.02 * l as f64, 0.05 * l as f64) };
                let p = DMatrix::from_fn(na, 1, |i, _| truth[i] + bias + sd * z.sample(&mut rng));
                gaussian_result((60..60 + na as u32).collect(), p, &DMatrix::from_element(na, 1, 0.01), 0.2)
                    .unwrap()
                    .with_label(l)
            })
            .collect();
        truths.push(truth);
        forecasts.push(per_model);
    }
    let loss = |f: &ForecastResult, truth: &[f64]| rmsfe(truth, f.point.column(0).as_slice()).unwrap();
    let losses = DMatrix::from_fn(labels.len(), n_orig, |r, t| loss(&forecasts[t][r], &truths[t]));
    let panel = LossPanel::new(labels.clone(), (1995..1995 + n_orig as i32).collect(), losses, LossKind::Rmsfe)
        .map_err(|e| e.to_string())?;
    let mcs = run_mcs(&panel, &mcs_config(McsStatistic::TMax, 3)).map_err(|e| e.to_string())?;
    let weights = equal_weights(&mcs.superior_set).map_err(|e| e.to_string())?;
    let pool = equal_weights(&labels).map_err(|e| e.to_string())?;
    let (mut combined, mut pooled) = (0.0, 0.0);
    for t in 0..n_orig {
        combined += loss(&combine_forecasts(&forecasts[t], &weights, 18).unwrap(), &truths[t]);
        pooled += loss(&combine_forecasts(&forecasts[t], &pool, 99).unwrap(), &truths[t]);
    }
    combined /= n_orig as f64;
    pooled /= n_orig as f64;
    let individual = panel.mean_losses().iter().sum::<f64>() / labels.len() as f64;
    ensure(
        combined <= pooled && combined <= individual,
        format!("MCS combination {combined:.4} vs pool average {pooled:.4} (mean single {individual:.4})"),
    )?;
    Ok(format!(
        "weights (0.75, 0.25); superior set {:?}, RMSFE {combined:.4} <= pool {pooled:.4}",
        mcs.superior_set
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("LC exact recovery", lc_recovery),
        ("GAPC correctness", gapc_correctness),
        ("constraint suite", constraint_suite),
        ("scoring oracles", scoring_oracles),
        ("MCS power", mcs_power),
        ("MCS size", mcs_size),
        ("MCS invariances", mcs_invariance),
        ("coverage calibration", lc_coverage),
        ("product-ratio coherence", product_ratio_coherence),
        ("pipeline shape", pipeline_shape),
        ("combination sanity", combination_sanity),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
