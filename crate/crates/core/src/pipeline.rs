//! End-to-end experiment: smooth, segment, split, tune, fit, predict and
//! evaluate, plus the run-directory layout the command line reads and
//! writes.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, ScoreRule};
use crate::error::{Error, Result};
use crate::gp::{self, FitOptions, GpHyperparams, GpModel};
use crate::index::{Metric, PointIndex};
use crate::kernel::{
    cross_validate, CvGrid, CvScore, KernelConfig, KernelKind, KernelModel, RegionParams,
    DEFAULT_CS, DEFAULT_KS,
};
use crate::metrics::{
    classify_service, evaluate_records, format_report, tier_accuracy, write_predictions,
    write_report_csv, write_tiers, MetricsReport, PredictionRecord, ServiceTier, TierRecord,
};
use crate::preprocess::{
    knn_average_with, segment_grid, split, stratified_downsample, GridSegmentation, Split,
    DEFAULT_GRID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gp,
    Fbkr,
    Stbkr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gp, Method::Fbkr, Method::Stbkr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::Fbkr => "fbkr",
            Method::Stbkr => "stbkr",
        }
    }

    pub fn kernel_kind(self) -> Option<KernelKind> {
        match self {
            Method::Gp => None,
            Method::Fbkr => Some(KernelKind::Fixed),
            Method::Stbkr => Some(KernelKind::SelfTuning),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gp" => Ok(Method::Gp),
            "fbkr" => Ok(Method::Fbkr),
            "stbkr" => Ok(Method::Stbkr),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Every experiment setting; serialized as a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub w_down: f64,
    pub w_up: f64,
    /// Neighbors averaged into each score before anything else.
    pub smooth_k: usize,
    /// Neighbors averaged into the speeds; defaults to `smooth_k`.
    pub smooth_k_speeds: Option<usize>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cv_folds: usize,
    pub cv_seed: u64,
    pub c_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub gp_fraction: f64,
    pub gp_restarts: usize,
    pub gp_seed: u64,
    pub gp_max_evals: usize,
    /// Train the GP on the whole training side instead of a subset.
    pub gp_full: bool,
    pub methods: Vec<Method>,
    pub metric: Metric,
    /// Also predict speeds and score service tiers.
    pub classify: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: None,
            output_dir: PathBuf::from("run"),
            w_down: 1.0,
            w_up: 1.0,
            smooth_k: 5,
            smooth_k_speeds: None,
            split_ratio: 0.8,
            split_seed: 0,
            grid_rows: DEFAULT_GRID,
            grid_cols: DEFAULT_GRID,
            cv_folds: 5,
            cv_seed: 0,
            c_grid: DEFAULT_CS.to_vec(),
            k_grid: DEFAULT_KS.to_vec(),
            gp_fraction: 0.1,
            gp_restarts: 4,
            gp_seed: 0,
            gp_max_evals: 800,
            gp_full: false,
            methods: Method::ALL.to_vec(),
            metric: Metric::Planar,
            classify: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn score_rule(&self) -> Result<ScoreRule> {
        ScoreRule::new(self.w_down, self.w_up)
    }

    pub fn cv_grid(&self) -> CvGrid {
        CvGrid {
            cs: self.c_grid.clone(),
            ks: self.k_grid.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.score_rule()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.smooth_k < 1 || self.smooth_k_speeds == Some(0) {
            return bad("smoothing k must be at least 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} not in (0, 1)", self.split_ratio));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid needs at least one row and column".into());
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds = {} (need >= 2)", self.cv_folds));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("c_grid must be non-empty and positive".into());
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return bad("k_grid must be non-empty with k >= 1".into());
        }
        if !(self.gp_fraction > 0.0 && self.gp_fraction <= 1.0) {
            return bad(format!("gp_fraction {} not in (0, 1]", self.gp_fraction));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        Ok(())
    }
}

/// Smoothed data with its segmentation and split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub smoothed: Dataset,
    pub segmentation: GridSegmentation,
    pub split: Split,
}

impl Prepared {
    pub fn locations(&self, ids: &[usize]) -> Vec<[f64; 2]> {
        ids.iter()
            .map(|&i| self.smoothed.points[i].location())
            .collect()
    }

    fn values(&self, ids: &[usize], target: Target) -> Vec<f64> {
        ids.iter()
            .map(|&i| target.of(&self.smoothed.points[i]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Score,
    Download,
    Upload,
}

impl Target {
    fn of(self, p: &data::SamplePoint) -> f64 {
        match self {
            Target::Score => p.score,
            Target::Download => p.download_kbps,
            Target::Upload => p.upload_kbps,
        }
    }
}

/// Smooths every point (before splitting), segments the full extent and
/// draws the train/test split.
pub fn prepare(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let index = PointIndex::build_with(&dataset.locations(), cfg.metric)
        .map_err(|e| e.in_stage("index"))?;
    let smoothed = knn_average_with(
        dataset,
        &index,
        cfg.smooth_k,
        cfg.smooth_k_speeds.unwrap_or(cfg.smooth_k),
    )
    .map_err(|e| e.in_stage("smooth"))?;
    let segmentation = segment_grid(&smoothed.locations(), cfg.grid_rows, cfg.grid_cols)
        .map_err(|e| e.in_stage("segment"))?;
    let split =
        split(smoothed.len(), cfg.split_ratio, cfg.split_seed).map_err(|e| e.in_stage("split"))?;
    Ok(Prepared {
        smoothed,
        segmentation,
        split,
    })
}

/// Fitted parameters of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodParams {
    Kernel(RegionParams),
    Gp(GpSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub hyper: GpHyperparams,
    pub lml: f64,
    pub subset_size: usize,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub params: MethodParams,
    pub cv_scores: Vec<CvScore>,
    pub gp_subset: Vec<usize>,
    pub predictions: Vec<PredictionRecord>,
    pub tiers: Option<Vec<TierRecord>>,
    pub reports: Vec<MetricsReport>,
}

impl MethodOutcome {
    pub fn report(&self, scope: crate::metrics::Scope) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.scope == scope)
    }
}

fn tier_of(down_kbps: f64, up_kbps: f64) -> Result<ServiceTier> {
    classify_service(down_kbps.max(0.0) / 1000.0, up_kbps.max(0.0) / 1000.0)
}

fn truth_tiers(prep: &Prepared) -> Result<Vec<ServiceTier>> {
    prep.split
        .test_ids
        .iter()
        .map(|&i| {
            let p = &prep.smoothed.points[i];
            tier_of(p.download_kbps, p.upload_kbps)
        })
        .collect()
}

fn tier_records(
    prep: &Prepared,
    truth: &[ServiceTier],
    down: &[f64],
    up: &[f64],
) -> Result<Vec<TierRecord>> {
    prep.split
        .test_ids
        .iter()
        .enumerate()
        .map(|(j, &id)| {
            Ok(TierRecord {
                id,
                region: prep
                    .segmentation
                    .region_of(prep.smoothed.points[id].location()),
                truth: truth[j],
                predicted: tier_of(down[j], up[j])?,
            })
        })
        .collect()
}

fn run_kernel(prep: &Prepared, kind: KernelKind, cfg: &ExperimentConfig) -> Result<MethodOutcome> {
    let train = &prep.split.train_ids;
    let test = &prep.split.test_ids;
    let train_locs = prep.locations(train);
    let test_locs = prep.locations(test);
    let scores = prep.values(train, Target::Score);

    let grid = cfg.cv_grid();
    let (params, cv_scores) = if grid.cs.len() == 1 && grid.ks.len() == 1 {
        let cfg1 = KernelConfig::new(kind, grid.cs[0], grid.ks[0])?;
        (RegionParams::uniform(cfg1), Vec::new())
    } else {
        let out = cross_validate(
            &train_locs,
            &scores,
            kind,
            &grid,
            cfg.cv_folds,
            cfg.cv_seed,
            &prep.segmentation,
            cfg.metric,
        )
        .map_err(|e| e.in_stage("cross-validate"))?;
        (out.params, out.scores)
    };

    let fit = |targets: &[f64]| {
        KernelModel::fit(
            &train_locs,
            targets,
            params,
            prep.segmentation.clone(),
            cfg.metric,
        )
        .map_err(|e| e.in_stage("fit"))
    };
    let model = fit(&scores)?;
    let preds = model.predict_many(&test_locs);
    let predictions: Vec<PredictionRecord> = test
        .iter()
        .zip(&test_locs)
        .zip(&preds)
        .map(|((&id, &loc), p)| {
            PredictionRecord::from_kernel(
                id,
                loc,
                prep.smoothed.points[id].score,
                p.value,
                model.region(loc),
                p.fallback,
            )
        })
        .collect();

    let tiers = if cfg.classify {
        let down = fit(&prep.values(train, Target::Download))?.predict_many(&test_locs);
        let up = fit(&prep.values(train, Target::Upload))?.predict_many(&test_locs);
        let down: Vec<f64> = down.iter().map(|p| p.value).collect();
        let up: Vec<f64> = up.iter().map(|p| p.value).collect();
        Some(tier_records(prep, &truth_tiers(prep)?, &down, &up)?)
    } else {
        None
    };
    finish(
        Method::from_str(kind.method_name())?,
        MethodParams::Kernel(params),
        cv_scores,
        Vec::new(),
        predictions,
        tiers,
    )
}

fn finish(
    method: Method,
    params: MethodParams,
    cv_scores: Vec<CvScore>,
    gp_subset: Vec<usize>,
    predictions: Vec<PredictionRecord>,
    tiers: Option<Vec<TierRecord>>,
) -> Result<MethodOutcome> {
    let acc = tiers.as_deref().map(tier_accuracy).transpose()?;
    let reports =
        evaluate_records(&predictions, None, acc.as_ref()).map_err(|e| e.in_stage("evaluate"))?;
    Ok(MethodOutcome {
        method,
        params,
        cv_scores,
        gp_subset,
        predictions,
        tiers,
        reports,
    })
}

/// Training ids the GP is fitted on.
pub fn gp_subset(prep: &Prepared, cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    if cfg.gp_full {
        return Ok(prep.split.train_ids.clone());
    }
    stratified_downsample(
        &prep.split.train_ids,
        &prep.smoothed.locations(),
        &prep.segmentation,
        cfg.gp_fraction,
        cfg.gp_seed,
    )
    .map_err(|e| e.in_stage("downsample"))
}

fn gp_options(cfg: &ExperimentConfig, salt: u64) -> FitOptions {
    FitOptions {
        init_grid: Vec::new(),
        restarts: cfg.gp_restarts,
        seed: cfg.gp_seed.wrapping_add(salt),
        max_evals: cfg.gp_max_evals,
    }
}

fn run_gp(prep: &Prepared, cfg: &ExperimentConfig) -> Result<MethodOutcome> {
    let subset = gp_subset(prep, cfg)?;
    let x = prep.locations(&subset);
    let test = &prep.split.test_ids;
    let test_locs = prep.locations(test);

    let fit_on = |target: Target, salt: u64| {
        gp::fit(&x, &prep.values(&subset, target), &gp_options(cfg, salt))
            .map_err(|e| e.in_stage("gp-fit"))
    };
    let fit = fit_on(Target::Score, 0)?;
    let pred = fit.model.predict(&test_locs);
    let predictions = test
        .iter()
        .zip(&test_locs)
        .enumerate()
        .map(|(j, (&id, &loc))| PredictionRecord {
            id,
            lon: loc[0],
            lat: loc[1],
            y_true: prep.smoothed.points[id].score,
            y_pred: pred.mean[j],
            region: prep.segmentation.region_of(loc),
            fallback: u8::from(pred.clamped[j]),
            var: Some(pred.var[j]),
        })
        .collect();

    let tiers = if cfg.classify {
        let down = fit_on(Target::Download, 1)?.model.predict(&test_locs).mean;
        let up = fit_on(Target::Upload, 2)?.model.predict(&test_locs).mean;
        Some(tier_records(prep, &truth_tiers(prep)?, &down, &up)?)
    } else {
        None
    };
    let summary = GpSummary {
        hyper: fit.model.hyper,
        lml: fit.model.lml,
        subset_size: subset.len(),
    };
    finish(
        Method::Gp,
        MethodParams::Gp(summary),
        Vec::new(),
        subset,
        predictions,
        tiers,
    )
}

pub fn run_method(
    prep: &Prepared,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<MethodOutcome> {
    match method.kernel_kind() {
        Some(kind) => run_kernel(prep, kind, cfg),
        None => run_gp(prep, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub prepared: Prepared,
    pub outcomes: Vec<MethodOutcome>,
}

impl Experiment {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Runs every configured method on `dataset` (raw, unsmoothed scores).
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Experiment> {
    let prepared = prepare(dataset, cfg)?;
    let mut methods = cfg.methods.clone();
    methods.sort_by_key(|m| Method::ALL.iter().position(|x| x == m));
    methods.dedup();
    let outcomes = methods
        .iter()
        .map(|&m| run_method(&prepared, m, cfg))
        .collect::<Result<_>>()?;
    Ok(Experiment { prepared, outcomes })
}

/// Everything needed to rebuild the fitted models of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub segmentation: GridSegmentation,
    pub metric: Metric,
    pub fbkr: Option<RegionParams>,
    pub stbkr: Option<RegionParams>,
    pub gp: Option<GpSummary>,
}

impl RunParams {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(PARAMS_FILE))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{PARAMS_FILE}: {e}")))
    }
}

pub const CONFIG_FILE: &str = "config.toml";
pub const PARAMS_FILE: &str = "params.toml";
pub const SMOOTHED_FILE: &str = "smoothed.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const SEGMENTATION_FILE: &str = "segmentation.csv";
pub const GP_SUBSET_FILE: &str = "gp_subset.csv";
pub const REPORT_FILE: &str = "report.txt";

pub fn predictions_file(m: Method) -> String {
    format!("predictions_{m}.csv")
}

pub fn tiers_file(m: Method) -> String {
    format!("tiers_{m}.csv")
}

pub fn report_csv_file(m: Method) -> String {
    format!("report_{m}.csv")
}

pub fn cv_file(m: Method) -> String {
    format!("cv_{m}.csv")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Text of the combined report over all methods.
pub fn render_report(exp: &Experiment) -> String {
    let mut s = String::new();
    for o in &exp.outcomes {
        s.push_str(&format_report(&format!("[{}]", o.method), &o.reports));
        s.push('\n');
    }
    s
}

/// Writes the run directory. Output is a pure function of the experiment.
pub fn write_artifacts(exp: &Experiment, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let prep = &exp.prepared;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    prep.smoothed.write_csv(create(dir, SMOOTHED_FILE)?)?;
    prep.split.write_csv(create(dir, SPLIT_FILE)?)?;
    prep.segmentation
        .write_labels_csv(&prep.smoothed.locations(), create(dir, SEGMENTATION_FILE)?)?;

    let mut params = RunParams {
        segmentation: prep.segmentation.clone(),
        metric: cfg.metric,
        fbkr: None,
        stbkr: None,
        gp: None,
    };
    for o in &exp.outcomes {
        match (&o.params, o.method) {
            (MethodParams::Kernel(p), Method::Fbkr) => params.fbkr = Some(*p),
            (MethodParams::Kernel(p), Method::Stbkr) => params.stbkr = Some(*p),
            (MethodParams::Gp(g), _) => {
                params.gp = Some(g.clone());
                let mut w = create(dir, GP_SUBSET_FILE)?;
                writeln!(w, "id")?;
                for id in &o.gp_subset {
                    writeln!(w, "{id}")?;
                }
                w.flush()?;
            }
            _ => {}
        }
        write_predictions(&o.predictions, create(dir, &predictions_file(o.method))?)?;
        if let Some(t) = &o.tiers {
            write_tiers(t, create(dir, &tiers_file(o.method))?)?;
        }
        write_report_csv(&o.reports, create(dir, &report_csv_file(o.method))?)?;
        if !o.cv_scores.is_empty() {
            let mut w = create(dir, &cv_file(o.method))?;
            writeln!(w, "region,k,c,mse,folds")?;
            for s in &o.cv_scores {
                writeln!(w, "{},{},{},{},{}", s.region, s.k, s.c, s.mse, s.folds_used)?;
            }
            w.flush()?;
        }
    }
    let text = toml::to_string(&params).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(PARAMS_FILE), text)?;
    fs::write(dir.join(REPORT_FILE), render_report(exp))?;
    Ok(())
}

/// A model rebuilt from a run directory, ready to evaluate anywhere.
pub enum RunModel {
    Kernel(KernelModel),
    Gp(GpModel),
}

impl RunModel {
    pub fn predict(&self, xs: &[[f64; 2]]) -> Vec<f64> {
        match self {
            RunModel::Kernel(m) => m.predict_many(xs).into_iter().map(|p| p.value).collect(),
            RunModel::Gp(m) => m.predict(xs).mean,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn read_ids(path: &Path, wanted: Option<&str>) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut ids = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(data::csv_err)?;
        if let Some(set) = wanted {
            if rec.get(1) != Some(set) {
                continue;
            }
        }
        let raw = rec.get(0).unwrap_or("");
        ids.push(
            raw.parse()
                .map_err(|_| Error::Schema(format!("bad id {raw:?}")))?,
        );
    }
    Ok(ids)
}

/// Rebuilds the fitted model of `method` from a run directory.
pub fn load_model(dir: &Path, method: Method) -> Result<(RunModel, RunParams, Vec<[f64; 2]>)> {
    let params = RunParams::load(dir)?;
    let smoothed = data::read_canonical(open(&dir.join(SMOOTHED_FILE))?)?;
    let train = read_ids(&dir.join(SPLIT_FILE), Some("train"))?;
    let train_locs: Vec<[f64; 2]> = train
        .iter()
        .map(|&i| smoothed.points[i].location())
        .collect();
    let missing = || Error::Config(format!("run has no fitted {method} model"));
    let model = match method {
        Method::Fbkr | Method::Stbkr => {
            let rp = if method == Method::Fbkr {
                params.fbkr
            } else {
                params.stbkr
            }
            .ok_or_else(missing)?;
            let y: Vec<f64> = train.iter().map(|&i| smoothed.points[i].score).collect();
            RunModel::Kernel(KernelModel::fit(
                &train_locs,
                &y,
                rp,
                params.segmentation.clone(),
                params.metric,
            )?)
        }
        Method::Gp => {
            let g = params.gp.as_ref().ok_or_else(missing)?;
            let subset = read_ids(&dir.join(GP_SUBSET_FILE), None)?;
            let x: Vec<[f64; 2]> = subset
                .iter()
                .map(|&i| smoothed.points[i].location())
                .collect();
            let y: Vec<f64> = subset.iter().map(|&i| smoothed.points[i].score).collect();
            RunModel::Gp(GpModel::condition(&x, &y, g.hyper)?)
        }
    };
    Ok((model, params, train_locs))
}

/// Loads a raw dataset from the configured input.
pub fn load_input(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file configured".into()))?;
    data::parse_records(open(path)?, &cfg.score_rule()?).map_err(|e| e.in_stage("ingest"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthParams};

    fn small() -> Dataset {
        let p = SynthParams {
            n_dense: 300,
            n_sparse: 60,
            seed: 5,
            ..SynthParams::default()
        };
        generate(&p, &ScoreRule::default()).unwrap()
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("cv_folds = 1").is_err());
        assert!(ExperimentConfig::from_toml("bogus_key = 3").is_err());
        let c = ExperimentConfig::from_toml("methods = [\"stbkr\"]\nsplit_seed = 9").unwrap();
        assert_eq!(c.methods, vec![Method::Stbkr]);
        assert_eq!(c.split_seed, 9);
    }

    #[test]
    fn single_candidate_skips_search() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Fbkr],
            c_grid: vec![0.05],
            k_grid: vec![5],
            ..ExperimentConfig::default()
        };
        let exp = run_experiment(&small(), &cfg).unwrap();
        let o = exp.outcome(Method::Fbkr).unwrap();
        assert!(o.cv_scores.is_empty());
        assert_eq!(
            o.params,
            MethodParams::Kernel(RegionParams::uniform(
                KernelConfig::new(KernelKind::Fixed, 0.05, 5).unwrap()
            ))
        );
        assert_eq!(o.predictions.len(), exp.prepared.split.test_ids.len());
    }

    #[test]
    fn all_methods_share_test_ids() {
        let cfg = ExperimentConfig {
            gp_restarts: 1,
            gp_max_evals: 150,
            ..ExperimentConfig::default()
        };
        let exp = run_experiment(&small(), &cfg).unwrap();
        assert_eq!(exp.outcomes.len(), 3);
        let ids = |m| {
            exp.outcome(m)
                .unwrap()
                .predictions
                .iter()
                .map(|p| p.id)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(Method::Gp), ids(Method::Fbkr));
        assert_eq!(ids(Method::Fbkr), ids(Method::Stbkr));
        assert!(exp.outcomes.iter().all(|o| o.tiers.is_some()));
    }
}
