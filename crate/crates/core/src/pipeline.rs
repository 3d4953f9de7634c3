//! File-based pipeline: validation panels, model confidence sets, and
//! test-window forecasts with their accuracy summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::combine::{combine_forecasts, equal_weights, inverse_error_weights, CombinationWeights};
use crate::data::{load_hmd_table, Sex};
use crate::error::{Error, Result};
use crate::eval::{expanding_window_panels, forecast_loss, forecast_origins, EvalWindow, LossKind, LossPanel};
use crate::forecast::{forecast_csv, ForecastResult};
use crate::index::derive_seed;
use crate::mcs::{run_mcs, McsConfig, McsResult, McsStatistic};
use crate::models::{
    forecast_model, model_name, prepare_population, ModelSettings, PopulationData, PreparedPopulation,
    INVERSE_ERROR_LABEL, MCS_TMAX_LABEL, MCS_TR_LABEL, POOL_LABELS,
};

pub const DEATHS_FILE: &str = "Deaths_1x1.txt";
pub const EXPOSURES_FILE: &str = "Exposures_1x1.txt";

const LOSS_KINDS: [LossKind; 2] = [LossKind::Rmsfe, LossKind::MeanIntervalScore];
const STATISTICS: [(McsStatistic, u32); 2] = [(McsStatistic::TMax, MCS_TMAX_LABEL), (McsStatistic::TR, MCS_TR_LABEL)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSource {
    pub label: String,
    pub deaths: PathBuf,
    pub exposures: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsSettings {
    pub confidence: f64,
    pub n_bootstrap: usize,
    pub block_length: Option<usize>,
}

impl Default for McsSettings {
    fn default() -> Self {
        McsSettings {
            confidence: 0.90,
            n_bootstrap: 5000,
            block_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub populations: Vec<PopulationSource>,
    /// Directory whose subdirectories each hold one population's
    /// `Deaths_1x1.txt` and `Exposures_1x1.txt`.
    pub populations_dir: Option<PathBuf>,
    /// First training year; the first data year when absent.
    pub first_year: Option<i32>,
    pub train_end: i32,
    pub validation_end: i32,
    pub test_end: i32,
    pub horizon: usize,
    pub alpha: f64,
    pub models: Vec<u32>,
    pub seed: u64,
    pub mcs: McsSettings,
    pub model: ModelSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("output"),
            populations: Vec::new(),
            populations_dir: None,
            first_year: None,
            train_end: 1995,
            validation_end: 2005,
            test_end: 2015,
            horizon: 1,
            alpha: 0.2,
            models: POOL_LABELS.to_vec(),
            seed: 1,
            mcs: McsSettings::default(),
            model: ModelSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are taken from the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        for s in &mut cfg.populations {
            resolve(&mut s.deaths);
            resolve(&mut s.exposures);
        }
        if let Some(d) = cfg.populations_dir.as_mut() {
            resolve(d);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_end < self.validation_end && self.validation_end < self.test_end) {
            return Err(Error::Config(format!(
                "need train_end < validation_end < test_end, got {} / {} / {}",
                self.train_end, self.validation_end, self.test_end
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Config("model set is empty".into()));
        }
        if let Some(m) = self.models.iter().find(|m| !POOL_LABELS.contains(m)) {
            return Err(Error::Config(format!("model {m} is not one of the labels 1-17")));
        }
        let mut sorted = self.models.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.models.len() {
            return Err(Error::Config("model set lists a label twice".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        for s in &self.populations {
            check_label(&s.label)?;
        }
        self.mcs_config(McsStatistic::TMax, 0).validate()
    }

    pub fn mcs_config(&self, statistic: McsStatistic, seed: u64) -> McsConfig {
        McsConfig {
            statistic,
            confidence: self.mcs.confidence,
            n_bootstrap: self.mcs.n_bootstrap,
            block_length: self.mcs.block_length,
            seed,
        }
    }

    /// Configured populations followed by those found in `populations_dir`
    /// (sorted by directory name).
    pub fn population_sources(&self) -> Result<Vec<PopulationSource>> {
        let mut out = self.populations.clone();
        if let Some(dir) = &self.populations_dir {
            let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let mut found = Vec::new();
            for entry in entries {
                let path = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
                if path.join(DEATHS_FILE).is_file() && path.join(EXPOSURES_FILE).is_file() {
                    let label = path.file_name().unwrap().to_string_lossy().into_owned();
                    check_label(&label)?;
                    found.push(PopulationSource {
                        label,
                        deaths: path.join(DEATHS_FILE),
                        exposures: path.join(EXPOSURES_FILE),
                    });
                }
            }
            found.sort_by(|a, b| a.label.cmp(&b.label));
            out.extend(found);
        }
        if out.is_empty() {
            return Err(Error::Config("no populations configured".into()));
        }
        let mut labels: Vec<&str> = out.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("population labels must be unique".into()));
        }
        Ok(out)
    }

    fn window(&self, data_start: i32, train_end: i32, eval_end: i32) -> EvalWindow {
        EvalWindow {
            first_year: self.first_year.unwrap_or(data_start),
            train_end,
            eval_end,
            horizon: self.horizon,
            alpha: self.alpha,
        }
    }
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::Config(format!(
            "population label `{label}` must be non-empty ASCII letters, digits, '-' or '_'"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Evaluate,
    Mcs,
    Forecast,
    All,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evaluate" => Ok(Stage::Evaluate),
            "mcs" => Ok(Stage::Mcs),
            "forecast" => Ok(Stage::Forecast),
            "all" => Ok(Stage::All),
            _ => Err(Error::invalid(format!("unknown stage `{s}`"))),
        }
    }
}

/// Which sexes to run: `female`, `male` or `both`.
pub fn parse_sexes(s: &str) -> Result<Vec<Sex>> {
    match s {
        "female" => Ok(vec![Sex::Female]),
        "male" => Ok(vec![Sex::Male]),
        "both" => Ok(vec![Sex::Female, Sex::Male]),
        _ => Err(Error::invalid(format!("unknown population `{s}`"))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_artifact(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
        });
    }
    read_text(path)
}

pub fn load_population(source: &PopulationSource) -> Result<PopulationData> {
    let deaths = read_text(&source.deaths)?;
    let exposures = read_text(&source.exposures)?;
    let female = load_hmd_table(&deaths, &exposures, &source.label, Sex::Female)?;
    let male = load_hmd_table(&deaths, &exposures, &source.label, Sex::Male)?;
    PopulationData::new(source.label.clone(), female, male)
}

/// Files written by a stage go to a staging directory and are moved into
/// place only when the whole stage succeeds.
struct StageOutput {
    root: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl StageOutput {
    fn new(root: &Path, stage: &str) -> Result<Self> {
        let staging = root.join(format!(".{stage}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(staging.display().to_string(), e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(staging.display().to_string(), e))?;
        Ok(StageOutput {
            root: root.to_path_buf(),
            staging,
            files: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.staging.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let dest = self.root.join(rel);
            if let Some(dir) = dest.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            }
            fs::rename(self.staging.join(rel), &dest).map_err(|e| Error::io(dest.display().to_string(), e))?;
            out.push(dest);
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.staging);
        Ok(out)
    }
}

impl Drop for StageOutput {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn stem(population: &str, sex: Sex) -> String {
    format!("{population}_{}", sex.as_str())
}

pub fn panel_path(population: &str, sex: Sex, kind: LossKind) -> String {
    format!("panels/{}_{}.csv", stem(population, sex), kind.as_str())
}

pub fn mcs_path(population: &str, sex: Sex, kind: LossKind, stat: McsStatistic) -> String {
    format!("mcs/{}_{}_{}.json", stem(population, sex), kind.as_str(), stat.as_str())
}

fn sex_code(sex: Sex) -> u64 {
    match sex {
        Sex::Female => 0,
        Sex::Male => 1,
        Sex::Total => 2,
    }
}

fn kind_code(kind: LossKind) -> u64 {
    match kind {
        LossKind::Rmsfe => 0,
        LossKind::MeanIntervalScore => 1,
    }
}

/// Validation-window loss panels for every population and sex.
pub fn cmd_evaluate(config: &PipelineConfig, sexes: &[Sex]) -> Result<Vec<PathBuf>> {
    let sources = config.population_sources()?;
    let mut out = StageOutput::new(&config.output_dir, "evaluate")?;
    for (p, source) in sources.iter().enumerate() {
        let data = load_population(source)?;
        let prep = prepare_population(&data, &config.model)?;
        let window = config.window(prep.years()[0], config.train_end, config.validation_end);
        for &sex in sexes {
            let seed = derive_seed(config.seed, &[1, p as u64, sex_code(sex)]);
            let (_, point, interval) = expanding_window_panels(&prep, sex, &config.models, &config.model, &window, seed)?;
            for panel in [point, interval] {
                if panel.n_models() == 0 {
                    return Err(Error::Numerical(format!(
                        "{} {}: every model failed in the validation window",
                        source.label,
                        sex.as_str()
                    )));
                }
                out.write(&panel_path(&source.label, sex, panel.loss_kind), &panel.to_csv())?;
            }
        }
    }
    out.commit()
}

/// One model confidence set per population, sex, loss and statistic.
pub fn cmd_mcs(config: &PipelineConfig, sexes: &[Sex]) -> Result<Vec<PathBuf>> {
    let sources = config.population_sources()?;
    let mut out = StageOutput::new(&config.output_dir, "mcs")?;
    let mut table = String::from("population,sex,loss,statistic,superior_set\n");
    for (p, source) in sources.iter().enumerate() {
        for &sex in sexes {
            for kind in LOSS_KINDS {
                let path = config.output_dir.join(panel_path(&source.label, sex, kind));
                let panel = LossPanel::from_csv(&read_artifact(&path)?, kind)?;
                for (stat, _) in STATISTICS {
                    let seed = derive_seed(config.seed, &[3, p as u64, sex_code(sex), kind_code(kind)]);
                    let result = run_mcs(&panel, &config.mcs_config(stat, seed))?;
                    let rel = mcs_path(&source.label, sex, kind, stat);
                    out.write(&rel, &(serde_json::to_string_pretty(&result)? + "\n"))?;
                    out.write(&rel.replace(".json", "_pvalues.csv"), &result.p_values_csv())?;
                    let set: Vec<String> = result.superior_set.iter().map(u32::to_string).collect();
                    let _ = writeln!(
                        table,
                        "{},{},{},{},{}",
                        source.label,
                        sex.as_str(),
                        kind.as_str(),
                        stat.as_str(),
                        set.join(" ")
                    );
                }
            }
        }
    }
    out.write("mcs/superior_sets.csv", &table)?;
    out.commit()
}

/// Mean test-window loss of each reported label, per loss kind.
type Scores = BTreeMap<u32, [Option<f64>; 2]>;

struct CombinedRun {
    /// `(label, weights)` for 18, 19 and 20.
    weights: Vec<(u32, CombinationWeights)>,
    /// Combined forecasts per origin, labels 18, 19, 20.
    forecasts: Vec<Vec<ForecastResult>>,
    losses: Vec<(u32, f64)>,
}

fn combine_at_origins(
    members: &BTreeMap<u32, Vec<ForecastResult>>,
    weights: &CombinationWeights,
    label: u32,
    n_origins: usize,
) -> Result<Vec<ForecastResult>> {
    (0..n_origins)
        .map(|o| {
            let pool: Vec<ForecastResult> = weights
                .model_labels
                .iter()
                .map(|l| members[l][o].clone())
                .collect();
            combine_forecasts(&pool, weights, label)
        })
        .collect()
}

fn restrict_to_available(w: CombinationWeights, available: &[u32], label: u32) -> Result<CombinationWeights> {
    let missing: Vec<u32> = w.model_labels.iter().copied().filter(|l| !available.contains(l)).collect();
    if missing.is_empty() {
        return Ok(w);
    }
    log::warn!("model {label}: members {missing:?} have no test forecasts; weights renormalized");
    w.restrict(available)
}

#[allow(clippy::too_many_arguments)]
fn run_combinations(
    config: &PipelineConfig,
    source: &PopulationSource,
    sex: Sex,
    kind: LossKind,
    members: &BTreeMap<u32, Vec<ForecastResult>>,
    origins: &[i32],
    actual: &dyn Fn(i32) -> Option<Vec<f64>>,
) -> Result<CombinedRun> {
    let available: Vec<u32> = members.keys().copied().collect();
    let mut weights = Vec::new();
    for (stat, label) in STATISTICS {
        let path = config.output_dir.join(mcs_path(&source.label, sex, kind, stat));
        let result: McsResult = serde_json::from_str(&read_artifact(&path)?)?;
        weights.push((label, restrict_to_available(equal_weights(&result.superior_set)?, &available, label)?));
    }
    let panel_file = config.output_dir.join(panel_path(&source.label, sex, kind));
    let panel = LossPanel::from_csv(&read_artifact(&panel_file)?, kind)?;
    let pool: Vec<(u32, f64)> = panel
        .model_labels
        .iter()
        .zip(panel.mean_losses())
        .filter(|(l, _)| available.contains(l))
        .map(|(&l, m)| (l, m))
        .collect();
    let (labels, means): (Vec<u32>, Vec<f64>) = pool.into_iter().unzip();
    weights.push((INVERSE_ERROR_LABEL, inverse_error_weights(&labels, &means)?));

    let mut per_label = Vec::new();
    let mut losses = Vec::new();
    for (label, w) in &weights {
        let combined = combine_at_origins(members, w, *label, origins.len())?;
        let mut total = 0.0;
        for (r, &o) in combined.iter().zip(origins) {
            let target = o + config.horizon as i32;
            let y = actual(target).ok_or_else(|| Error::invalid(format!("no observed curve for {target}")))?;
            total += forecast_loss(r, config.horizon, &y, kind)?;
        }
        losses.push((*label, total / origins.len() as f64));
        per_label.push(combined);
    }
    let forecasts = (0..origins.len())
        .map(|o| per_label.iter().map(|c| c[o].clone()).collect())
        .collect();
    Ok(CombinedRun {
        weights,
        forecasts,
        losses,
    })
}

fn fmt_score(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.6}", 100.0 * x),
        None => "NA".to_string(),
    }
}

fn summary_csv(rows: &[u32], columns: &[(String, Scores)], sexes: &[Sex], with_means: bool) -> String {
    let mut out = String::from("model,name");
    for (stem, _) in columns {
        let _ = write!(out, ",{stem}_rmsfe,{stem}_mean_interval_score");
    }
    if with_means {
        for sex in sexes {
            let _ = write!(out, ",mean_{0}_rmsfe,mean_{0}_mean_interval_score", sex.as_str());
        }
    }
    out.push('\n');
    for &label in rows {
        let _ = write!(out, "{label},\"{}\"", model_name(label).unwrap_or(""));
        for (_, scores) in columns {
            let s = scores.get(&label).copied().unwrap_or([None, None]);
            let _ = write!(out, ",{},{}", fmt_score(s[0]), fmt_score(s[1]));
        }
        if with_means {
            for sex in sexes {
                let suffix = format!("_{}", sex.as_str());
                for k in 0..2 {
                    let vals: Vec<f64> = columns
                        .iter()
                        .filter(|(stem, _)| stem.ends_with(&suffix))
                        .filter_map(|(_, s)| s.get(&label).and_then(|v| v[k]))
                        .collect();
                    let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                    let _ = write!(out, ",{}", fmt_score(mean));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Test-window forecasts of every model and of the combined models, with the
/// accuracy summary (errors × 100).
pub fn cmd_forecast(config: &PipelineConfig, sexes: &[Sex]) -> Result<Vec<PathBuf>> {
    let sources = config.population_sources()?;
    // fail early when an earlier stage has not run
    for source in &sources {
        for &sex in sexes {
            for kind in LOSS_KINDS {
                read_artifact(&config.output_dir.join(panel_path(&source.label, sex, kind)))?;
                for (stat, _) in STATISTICS {
                    read_artifact(&config.output_dir.join(mcs_path(&source.label, sex, kind, stat)))?;
                }
            }
        }
    }
    let mut out = StageOutput::new(&config.output_dir, "forecast")?;
    let mut columns: Vec<(String, Scores)> = Vec::new();
    for (p, source) in sources.iter().enumerate() {
        let data = load_population(source)?;
        let prep = prepare_population(&data, &config.model)?;
        for &sex in sexes {
            let scores = forecast_population(config, source, p, &prep, sex, &mut out)?;
            columns.push((stem(&source.label, sex), scores));
        }
    }
    let mut rows: Vec<u32> = config.models.clone();
    rows.sort_unstable();
    rows.extend([MCS_TMAX_LABEL, MCS_TR_LABEL]);
    let multi = sources.len() > 1;
    out.write("summary.csv", &summary_csv(&rows, &columns, sexes, multi))?;
    out.write("baseline_summary.csv", &summary_csv(&[INVERSE_ERROR_LABEL], &columns, sexes, multi))?;
    out.commit()
}

fn forecast_population(
    config: &PipelineConfig,
    source: &PopulationSource,
    p: usize,
    prep: &PreparedPopulation,
    sex: Sex,
    out: &mut StageOutput,
) -> Result<Scores> {
    let window = config.window(prep.years()[0], config.validation_end, config.test_end);
    window.validate(*prep.years().last().unwrap())?;
    let origins = window.origins();
    let seed = derive_seed(config.seed, &[2, p as u64, sex_code(sex)]);
    let of = forecast_origins(&config.models, &origins, config.horizon, |label, origin| {
        forecast_model(
            label,
            prep,
            sex,
            window.first_year,
            origin,
            window.horizon,
            window.alpha,
            &config.model,
            derive_seed(seed, &[label as u64, origin as u64]),
        )
    });
    if of.forecasts.is_empty() {
        return Err(Error::Numerical(format!(
            "{} {}: every model failed in the test window",
            source.label,
            sex.as_str()
        )));
    }
    let actual = |year: i32| prep.actual(sex, year);
    let name = stem(&source.label, sex);
    let mut scores: Scores = BTreeMap::new();
    for kind in LOSS_KINDS {
        let panel = of.loss_panel(actual, kind)?;
        for (label, mean) in panel.model_labels.iter().zip(panel.mean_losses()) {
            scores.entry(*label).or_insert([None, None])[kind_code(kind) as usize] = Some(mean);
        }
        out.write(&format!("test_panels/{name}_{}.csv", kind.as_str()), &panel.to_csv())?;
    }
    let mut sidecar = BTreeMap::new();
    for kind in LOSS_KINDS {
        let run = run_combinations(config, source, sex, kind, &of.forecasts, &origins, &actual)?;
        for (label, loss) in &run.losses {
            scores.entry(*label).or_insert([None, None])[kind_code(kind) as usize] = Some(*loss);
        }
        for (combined, o) in run.forecasts.iter().zip(&origins) {
            out.write(&format!("combined/{name}_{}_{o}.csv", kind.as_str()), &forecast_csv(combined))?;
        }
        let w: BTreeMap<String, CombinationWeights> =
            run.weights.into_iter().map(|(l, w)| (l.to_string(), w)).collect();
        sidecar.insert(kind.as_str().to_string(), w);
    }
    out.write(
        &format!("combined/{name}_weights.json"),
        &(serde_json::to_string_pretty(&sidecar)? + "\n"),
    )?;
    for (i, o) in origins.iter().enumerate() {
        let results: Vec<ForecastResult> = of.forecasts.values().map(|v| v[i].clone()).collect();
        out.write(&format!("forecasts/{name}_{o}.csv"), &forecast_csv(&results))?;
    }
    Ok(scores)
}

/// Runs `stage` (or every stage in order for [`Stage::All`]).
pub fn run(config: &PipelineConfig, stage: Stage, sexes: &[Sex]) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Evaluate => cmd_evaluate(config, sexes),
        Stage::Mcs => cmd_mcs(config, sexes),
        Stage::Forecast => cmd_forecast(config, sexes),
        Stage::All => {
            let mut files = cmd_evaluate(config, sexes)?;
            files.extend(cmd_mcs(config, sexes)?);
            files.extend(cmd_forecast(config, sexes)?);
            Ok(files)
        }
    }
}
