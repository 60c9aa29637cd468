//! Run directories: preparing data, training, and everything written to disk.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use paced_forest_core::backbone::BackboneParams;
use paced_forest_core::data::{self, Dataset};
use paced_forest_core::forest::Forest;
use paced_forest_core::trainer::{self, EvalReport, PaceRecord, TrainObserver, TrainOutcome};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::csvio::{self, fmt_f64};
use crate::error::{CliError, Result};

pub const RUN_SCHEMA: &str = "paced-forest/run/v1";
pub const DATA_SCHEMA: &str = "paced-forest/data/v1";
/// Environment variable overriding the default output root.
pub const OUT_ENV: &str = "PACED_FOREST_OUT";

/// `--out` if given, else `$PACED_FOREST_OUT`, else `./runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(CliError::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Runs `f` on a rayon pool of `threads` workers; 1 runs it directly.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(CliError::Config("--parallel needs at least one thread".into()));
    }
    if threads == 1 {
        return Ok(f());
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = f;
        Err(CliError::Config("this build has no parallel support".into()))
    }
}

/// Training and evaluation sets for one configuration.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub eval: Dataset,
    /// True when `test_fraction` is 0 and the model is evaluated on its training data.
    pub eval_is_train: bool,
    pub noisy_ids: Vec<u64>,
    pub noise_sigma: Option<f64>,
}

pub fn load_source(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.source {
        DataSource::Synthetic(s) => Ok(data::generate_synthetic(&s.spec(cfg.data.group_width), s.n, cfg.seed)?),
        DataSource::Csv(c) => csvio::load_csv(&c.path, &c.target_column, cfg.data.group_width),
    }
}

/// Loads or generates the data, splits it, and corrupts training labels when configured.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let full = load_source(cfg)?;
    let (train, eval, eval_is_train) = if cfg.data.test_fraction == 0.0 {
        (full.clone(), full, true)
    } else {
        let (tr, te) = data::train_test_split(&full, cfg.data.test_fraction, cfg.seed)?;
        if te.is_empty() {
            return Err(CliError::Config("test fraction leaves no evaluation samples".into()));
        }
        (tr, te, false)
    };
    let (train, noisy_ids, noise_sigma) = match cfg.data.label_noise {
        None => (train, Vec::new(), None),
        Some(noise) => {
            let sigma = match noise.sigma {
                Some(s) => s,
                None => 2.0 * std_dev(&train.targets()),
            };
            let (noisy, ids) = data::inject_label_noise(&train, noise.fraction, sigma, cfg.seed ^ 0x6e_6f69_7365)?;
            (noisy, ids, Some(sigma))
        }
    };
    let eval = if eval_is_train { train.clone() } else { eval };
    Ok(PreparedData {
        train,
        eval,
        eval_is_train,
        noisy_ids,
        noise_sigma,
    })
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub mode: String,
    pub seed: u64,
    /// The resolved configuration; training from it reproduces the run.
    pub config: RunConfig,
    pub threads: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub eval_is_train: bool,
    pub eval_group_edges: Vec<f64>,
    pub noisy_ids: Vec<u64>,
    pub noise_sigma: Option<f64>,
    pub artifacts: Vec<String>,
    pub created_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub n: usize,
    pub dim: usize,
    pub target_column: String,
    pub group_edges: Vec<f64>,
    pub group_histogram: Vec<usize>,
    pub artifacts: Vec<String>,
    pub created_unix: u64,
}

/// Per-pace evaluation as written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub pace: usize,
    pub mae_overall: f64,
    pub cs_at_l: f64,
    pub cs_level: f64,
    pub per_group_mae: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
    pub group_edges: Vec<f64>,
    pub fair: Option<f64>,
}

impl MetricsReport {
    pub fn new(pace: usize, r: &EvalReport, edges: &[f64]) -> Self {
        MetricsReport {
            pace,
            mae_overall: r.mae,
            cs_at_l: r.cs,
            cs_level: r.cs_level,
            per_group_mae: r.per_group_mae.clone(),
            group_counts: r.group_counts.clone(),
            group_edges: edges.to_vec(),
            fair: r.fair,
        }
    }
}

/// Writes `data.csv` and `manifest.json` into `dir`.
pub fn generate(cfg: &RunConfig, dir: &Path) -> Result<DataManifest> {
    if !matches!(cfg.data.source, DataSource::Synthetic(_)) {
        return Err(CliError::Config("generate needs a synthetic data source".into()));
    }
    let ds = load_source(cfg)?;
    create_dir(dir)?;
    csvio::write_csv(&ds, &dir.join("data.csv"), "y")?;
    let mut histogram = vec![0; ds.num_groups()];
    for g in data::group_indices(&ds)? {
        histogram[g] += 1;
    }
    let manifest = DataManifest {
        schema: DATA_SCHEMA.into(),
        command: "generate".into(),
        seed: cfg.seed,
        config: cfg.clone(),
        n: ds.len(),
        dim: ds.dim(),
        target_column: "y".into(),
        group_edges: ds.group_edges().to_vec(),
        group_histogram: histogram,
        artifacts: vec!["data.csv".into()],
        created_unix: unix_now(),
    };
    checkpoint::write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes per-pace checkpoints as training goes; keeps the first IO error.
struct RunWriter {
    dir: PathBuf,
    clock: Instant,
    error: Option<CliError>,
}

impl TrainObserver for RunWriter {
    fn now(&mut self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }

    fn pace_finished(&mut self, record: &PaceRecord, backbone: &BackboneParams, forest: &Forest) {
        if self.error.is_some() {
            return;
        }
        let dir = self.dir.join(format!("pace-{}", record.log.pace));
        let res = create_dir(&dir)
            .and_then(|_| checkpoint::save_backbone(backbone, &dir.join("backbone.json")))
            .and_then(|_| checkpoint::save_forest(forest, &dir.join("forest.json")));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub data: PreparedData,
    pub outcome: TrainOutcome,
}

impl RunResult {
    pub fn final_log(&self) -> &trainer::PaceLog {
        &self.outcome.paces.last().expect("at least one pace").log
    }

    /// Ids excluded by the cap at the last pace.
    pub fn excluded_ids(&self) -> BTreeSet<u64> {
        let sel = &self.outcome.paces.last().expect("at least one pace").selection;
        sel.ids.iter().zip(&sel.excluded).filter(|(_, &e)| e).map(|(&id, _)| id).collect()
    }
}

/// Trains `cfg` and writes the run directory `root/run-{seed}`.
pub fn train_run(cfg: &RunConfig, root: &Path, threads: usize, command: &str) -> Result<RunResult> {
    let created = unix_now();
    let tc = cfg.train_config(threads > 1)?;
    let prepared = prepare_data(cfg)?;
    let dir = root.join(format!("run-{}", cfg.seed));
    create_dir(&dir)?;
    let mut writer = RunWriter {
        dir: dir.clone(),
        clock: Instant::now(),
        error: None,
    };
    let outcome = with_threads(threads, || trainer::train_with(&prepared.train, &prepared.eval, &tc, &mut writer))??;
    if let Some(e) = writer.error {
        return Err(e);
    }

    let eval_edges = prepared.eval.group_edges().to_vec();
    write_text(&dir.join("paces.csv"), &paces_csv(&outcome))?;
    write_text(&dir.join("timing.csv"), &timing_csv(&outcome))?;
    write_text(&dir.join("selection.csv"), &selection_csv(&outcome))?;
    write_text(&dir.join("grouprank.csv"), &group_rank_csv(&outcome, prepared.train.group_edges())?)?;
    let reports: Vec<MetricsReport> = outcome.paces.iter().map(|p| MetricsReport::new(p.log.pace, &p.report, &eval_edges)).collect();
    checkpoint::write_json(&reports, &dir.join("metrics.json"))?;
    csvio::write_csv(&prepared.eval, &dir.join("test.csv"), "y")?;

    let mut artifacts: Vec<String> = ["paces.csv", "timing.csv", "selection.csv", "grouprank.csv", "metrics.json", "test.csv"]
        .map(String::from)
        .to_vec();
    for p in &outcome.paces {
        artifacts.push(format!("pace-{}/backbone.json", p.log.pace));
        artifacts.push(format!("pace-{}/forest.json", p.log.pace));
    }
    let manifest = RunManifest {
        schema: RUN_SCHEMA.into(),
        command: command.into(),
        mode: cfg.mode.name().into(),
        seed: cfg.seed,
        config: cfg.clone(),
        threads,
        train_size: prepared.train.len(),
        eval_size: prepared.eval.len(),
        eval_is_train: prepared.eval_is_train,
        eval_group_edges: eval_edges,
        noisy_ids: prepared.noisy_ids.clone(),
        noise_sigma: prepared.noise_sigma,
        artifacts,
        created_unix: created,
        finished_unix: unix_now(),
    };
    checkpoint::write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(RunResult {
        dir,
        manifest,
        data: prepared,
        outcome,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const PACES_HEADER: &str =
    "pace,pool_size,selected_count,excluded_by_cap_count,augmented_count,lambda,lambda_prime,gamma,epsilon,learning_rate,mae,cs,fair";

pub fn paces_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from(PACES_HEADER);
    s.push('\n');
    for p in &outcome.paces {
        let l = &p.log;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            l.pace,
            l.pool_size,
            l.selected_count,
            l.excluded_by_cap_count,
            l.augmented_count,
            fmt_f64(l.lambda),
            fmt_f64(l.lambda_prime),
            fmt_f64(l.gamma),
            opt(l.epsilon),
            fmt_f64(l.learning_rate),
            fmt_f64(l.mae),
            fmt_f64(l.cs),
            opt(l.fair)
        );
    }
    s
}

fn timing_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("pace,wall_time_secs\n");
    for p in &outcome.paces {
        let _ = writeln!(s, "{},{}", p.log.pace, fmt_f64(p.log.wall_time_secs));
    }
    s
}

fn selection_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("pace,id,log_lik,entropy,score,v,excluded_by_cap\n");
    for p in &outcome.paces {
        let sel = &p.selection;
        for (i, c) in p.candidates.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                p.log.pace,
                c.id,
                fmt_f64(c.log_lik),
                fmt_f64(c.entropy),
                fmt_f64(sel.scores[i]),
                fmt_f64(sel.weights[i]),
                u8::from(sel.excluded[i])
            );
        }
    }
    s
}

fn group_rank_csv(outcome: &TrainOutcome, edges: &[f64]) -> Result<String> {
    let num_groups = edges.len() - 1;
    let mut s = String::from("pace,group,lower,upper,count,mean_rank\n");
    for p in &outcome.paces {
        let ranks = trainer::group_rank_trace(&p.selection.scores, &p.candidate_groups, num_groups)?;
        for (g, r) in ranks.iter().enumerate() {
            let count = p.candidate_groups.iter().filter(|&&x| x == g).count();
            let _ = writeln!(s, "{},{},{},{},{},{}", p.log.pace, g, fmt_f64(edges[g]), fmt_f64(edges[g + 1]), count, opt(*r));
        }
    }
    Ok(s)
}

/// Re-evaluates the checkpoint of `pace` (default: the last) on `data`
/// (default: the run's `test.csv`) with the run's group edges and CS level.
pub fn evaluate_run(run_dir: &Path, pace: Option<usize>, data: Option<(&Path, &str)>) -> Result<MetricsReport> {
    let manifest: RunManifest = checkpoint::read_json(&run_dir.join("manifest.json"))?;
    let pace = pace.unwrap_or(manifest.config.train_config(false)?.schedule.paces - 1);
    let pace_dir = run_dir.join(format!("pace-{pace}"));
    let backbone = checkpoint::load_backbone(&pace_dir.join("backbone.json"))?;
    let forest = checkpoint::load_forest(&pace_dir.join("forest.json"))?;
    let test_csv = run_dir.join("test.csv");
    let (path, target) = data.unwrap_or((&test_csv, "y"));
    let ds = csvio::load_csv(path, target, manifest.config.data.group_width)?;
    let edges = manifest.eval_group_edges.clone();
    let report = trainer::evaluate(&backbone, &forest, &ds, &edges, manifest.config.evaluation.cs_level)?;
    Ok(MetricsReport::new(pace, &report, &edges))
}

/// One row of a long-format report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub pace: usize,
    pub metric: String,
    pub value: f64,
}

/// Merges `paces.csv` and `metrics.json` of every run into (run, pace, metric, value) rows.
pub fn report(run_dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let missing: Vec<PathBuf> = run_dirs
        .iter()
        .flat_map(|d| [d.join("paces.csv"), d.join("metrics.json")])
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        let run = dir.display().to_string();
        let paces_path = dir.join("paces.csv");
        let mut reader = csv::Reader::from_path(&paces_path).map_err(|e| CliError::Input(format!("{}: {e}", paces_path.display())))?;
        let headers = reader.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Input(format!("{}: row {row}: {e}", paces_path.display())))?;
            let pace: usize = rec[0]
                .parse()
                .map_err(|_| CliError::Input(format!("{}: row {row}: bad pace", paces_path.display())))?;
            for (h, cell) in headers.iter().zip(rec.iter()).skip(1) {
                if cell.is_empty() {
                    continue;
                }
                let value = cell
                    .parse()
                    .map_err(|_| CliError::Input(format!("{}: row {row}, column {h}: not a number", paces_path.display())))?;
                rows.push(ReportRow {
                    run: run.clone(),
                    pace,
                    metric: h.to_string(),
                    value,
                });
            }
        }
        let metrics: Vec<MetricsReport> = checkpoint::read_json(&dir.join("metrics.json"))?;
        for m in metrics {
            for (g, v) in m.per_group_mae.iter().enumerate() {
                if let Some(v) = v {
                    rows.push(ReportRow {
                        run: run.clone(),
                        pace: m.pace,
                        metric: format!("mae_group_{g}"),
                        value: *v,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("run,pace,metric,value\n");
    for r in rows {
        let run = if r.run.contains([',', '"', '\n']) { format!("\"{}\"", r.run.replace('"', "\"\"")) } else { r.run.clone() };
        let _ = writeln!(s, "{},{},{},{}", run, r.pace, r.metric, fmt_f64(r.value));
    }
    s
}

/// One row of the cap-proportion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CapRow {
    pub proportion: f64,
    pub seed: u64,
    pub mae: f64,
    pub cs: f64,
    pub fair: Option<f64>,
    pub excluded: usize,
    pub noisy_excluded: usize,
    pub noisy: usize,
}

/// Trains `spu-robust` once per (proportion, seed) into `root/cap-{proportion}/run-{seed}`.
pub fn sweep_cap(cfg: &RunConfig, proportions: &[f64], seeds: &[u64], root: &Path, threads: usize) -> Result<Vec<CapRow>> {
    if cfg.data.label_noise.is_none() {
        return Err(CliError::Config("sweep-cap needs data.label_noise settings".into()));
    }
    if proportions.is_empty() {
        return Err(CliError::Config("no cap proportions given".into()));
    }
    let mut rows = Vec::new();
    for &q in proportions {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.mode = crate::config::ModeName::SpuRobust;
            c.schedule.cap_quantile = q;
            let res = train_run(&c, &root.join(format!("cap-{q}")), threads, "sweep-cap")?;
            let excluded = res.excluded_ids();
            let noisy: BTreeSet<u64> = res.data.noisy_ids.iter().copied().collect();
            let l = res.final_log();
            rows.push(CapRow {
                proportion: q,
                seed,
                mae: l.mae,
                cs: l.cs,
                fair: l.fair,
                excluded: excluded.len(),
                noisy_excluded: excluded.intersection(&noisy).count(),
                noisy: noisy.len(),
            });
        }
    }
    Ok(rows)
}

pub fn cap_csv(rows: &[CapRow]) -> String {
    let mut s = String::from("proportion,seed,mae,cs,fair,excluded_count,noisy_excluded,noisy_count\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.proportion,
            r.seed,
            fmt_f64(r.mae),
            fmt_f64(r.cs),
            opt(r.fair),
            r.excluded,
            r.noisy_excluded,
            r.noisy
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRow {
    pub scheme: &'static str,
    pub seed: u64,
    pub mae: f64,
    pub cs: f64,
    pub fair: Option<f64>,
}

/// Trains once per weighting scheme and seed into `root/{scheme}/run-{seed}`.
pub fn sweep_schemes(cfg: &RunConfig, seeds: &[u64], root: &Path, threads: usize) -> Result<Vec<SchemeRow>> {
    let mut rows = Vec::new();
    for scheme in crate::config::SchemeName::ALL {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.schedule.scheme = scheme;
            let name = scheme.scheme().name();
            let res = train_run(&c, &root.join(name), threads, "sweep-schemes")?;
            let l = res.final_log();
            rows.push(SchemeRow {
                scheme: name,
                seed,
                mae: l.mae,
                cs: l.cs,
                fair: l.fair,
            });
        }
    }
    Ok(rows)
}

pub fn scheme_csv(rows: &[SchemeRow]) -> String {
    let mut s = String::from("scheme,seed,mae,cs,fair\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.scheme, r.seed, fmt_f64(r.mae), fmt_f64(r.cs), opt(r.fair));
    }
    s
}
