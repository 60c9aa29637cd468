//! The paced training loop and model evaluation.
//!
//! Each pace: score every sample in the pool with the model as it stood at
//! the end of the previous pace, select and weight samples, optionally
//! duplicate high-entropy samples, then run weighted gradient ascent on the
//! feature extractor with a leaf update after every epoch (or every
//! `leaf_update_interval` steps).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Activation, BackboneGradients, BackboneParams};
use crate::data::{self, Dataset};
use crate::forest::{Forest, SampleEval};
use crate::leafopt::{self, LeafUpdateConfig};
use crate::metrics::{self, GroupLosses};
use crate::par;
use crate::spl::{self, BetaPolicy, Candidate, PaceSchedule, SelectionState, WeightScheme};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub trees: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            feature_dim: 32,
            activation: Activation::Relu,
            trees: 5,
            depth: 4,
        }
    }
}

/// When high-entropy samples are duplicated relative to the pace's update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AugmentTiming {
    /// Use the entropies that drove selection; copies train in this pace.
    #[default]
    BeforeUpdate,
    /// Recompute entropies after the update; copies join from the next pace.
    AfterUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One pace over all data, no entropy term.
    Drf,
    /// Paced, no entropy term.
    Sp,
    /// Paced with the entropy term and augmentation.
    Spu,
    /// As `Spu`, plus likelihood capping.
    SpuRobust,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Drf, Mode::Sp, Mode::Spu, Mode::SpuRobust];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Drf => "drf",
            Mode::Sp => "sp",
            Mode::Spu => "spu",
            Mode::SpuRobust => "spu-robust",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Overrides the fields that define the mode.
    pub fn apply(self, config: &mut TrainConfig) -> Result<()> {
        match self {
            Mode::Drf => {
                config.schedule.paces = 1;
                config.schedule.first_fraction = 1.0;
                config.schedule.gamma0 = 0.0;
                config.augmentation = false;
                config.capping = false;
            }
            Mode::Sp => {
                config.schedule.gamma0 = 0.0;
                config.augmentation = false;
                config.capping = false;
            }
            Mode::Spu | Mode::SpuRobust => {
                if !(config.schedule.gamma0 > 0.0) {
                    return Err(Error::config(format!("mode {} needs gamma0 > 0", self.name())));
                }
                config.augmentation = true;
                config.capping = self == Mode::SpuRobust;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: PaceSchedule,
    pub scheme: WeightScheme,
    /// Epochs over all samples with unit weights before the first pace.
    pub warmup_epochs: usize,
    pub epochs_per_pace: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every pace.
    pub lr_decay: f64,
    pub leaf: LeafUpdateConfig,
    /// Gradient steps between leaf updates; `None` updates once per epoch.
    pub leaf_update_interval: Option<usize>,
    pub augmentation: bool,
    pub copies: usize,
    pub augment_timing: AugmentTiming,
    pub capping: bool,
    /// Error level of the cumulative score.
    pub cs_level: f64,
    pub seed: u64,
    /// Evaluate samples on the rayon pool (needs the `parallel` feature).
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            schedule: PaceSchedule::default(),
            scheme: WeightScheme::Hard,
            warmup_epochs: 10,
            epochs_per_pace: 5,
            batch_size: 32,
            learning_rate: 0.05,
            lr_decay: 1.0,
            leaf: LeafUpdateConfig::default(),
            leaf_update_interval: None,
            augmentation: false,
            copies: 2,
            augment_timing: AugmentTiming::BeforeUpdate,
            capping: false,
            cs_level: 1.0,
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.leaf.validate()?;
        if self.epochs_per_pace == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs per pace and batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0) || !self.lr_decay.is_finite() {
            return Err(Error::config("learning-rate decay must be positive"));
        }
        if self.model.feature_dim == 0 || self.model.trees == 0 || self.model.hidden.contains(&0) {
            return Err(Error::config("model widths and tree count must be positive"));
        }
        if self.augmentation && self.copies == 0 {
            return Err(Error::config("augmentation needs at least one copy"));
        }
        if self.leaf_update_interval == Some(0) {
            return Err(Error::config("leaf update interval must be positive"));
        }
        if !(self.cs_level >= 0.0) {
            return Err(Error::config("CS error level must be non-negative"));
        }
        if let BetaPolicy::Quantile(q) = self.schedule.beta {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::config("beta quantile must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Per-pace summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PaceLog {
    pub pace: usize,
    pub pool_size: usize,
    pub selected_count: usize,
    pub excluded_by_cap_count: usize,
    /// Augmented copies in the pool after this pace's augmentation.
    pub augmented_count: usize,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub gamma: f64,
    pub epsilon: Option<f64>,
    pub learning_rate: f64,
    pub mae: f64,
    pub cs: f64,
    pub fair: Option<f64>,
    pub wall_time_secs: f64,
}

/// Metrics of a model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub cs_level: f64,
    pub cs: f64,
    /// Mean absolute error per group; `None` for empty groups.
    pub per_group_mae: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
    /// `None` when fewer than two groups are populated.
    pub fair: Option<f64>,
}

/// Everything recorded about one pace.
#[derive(Debug, Clone)]
pub struct PaceRecord {
    pub log: PaceLog,
    /// Model outputs of the original samples that drove selection, aligned
    /// with `selection.ids`.
    pub candidates: Vec<Candidate>,
    /// Group of every candidate under the training pool's edges.
    pub candidate_groups: Vec<usize>,
    pub selection: SelectionState,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub backbone: BackboneParams,
    pub forest: Forest,
    pub paces: Vec<PaceRecord>,
}

impl TrainOutcome {
    pub fn logs(&self) -> Vec<PaceLog> {
        self.paces.iter().map(|p| p.log.clone()).collect()
    }
}

/// Hooks into the loop: a clock for wall time and a callback per finished pace.
pub trait TrainObserver {
    /// Seconds on any monotone clock.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn pace_finished(&mut self, _record: &PaceRecord, _backbone: &BackboneParams, _forest: &Forest) {}
}

/// Observer that records nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl TrainObserver for Silent {}

/// Trains on `dataset` and evaluates every pace on `dataset` itself.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, dataset, config, &mut Silent)
}

/// Trains on `train_set`, evaluating after every pace on `eval_set` with its group edges.
pub fn train_with(train_set: &Dataset, eval_set: &Dataset, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::precondition("training and evaluation sets must be non-empty"));
    }
    if train_set.dim() != eval_set.dim() {
        return Err(Error::Shape {
            what: "evaluation features",
            expected: train_set.dim(),
            found: eval_set.dim(),
        });
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let backbone_seed: u64 = seeds.random();
    let forest_seed: u64 = seeds.random();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seeds.random());

    let mut sizes = vec![train_set.dim()];
    sizes.extend(&config.model.hidden);
    sizes.push(config.model.feature_dim);
    let backbone = BackboneParams::init(&sizes, config.model.activation, backbone_seed)?;
    let forest = Forest::init(config.model.trees, config.model.depth, config.model.feature_dim, &train_set.targets(), forest_seed)?;
    let mut state = Model {
        backbone,
        forest,
        parallel: config.parallel,
    };

    let all = vec![1.0; train_set.len()];
    state.fit_leaves(train_set, &all, &config.leaf).map_err(|e| context(e, "initial leaf fit"))?;
    for epoch in 0..config.warmup_epochs {
        state
            .epoch(train_set, &all, config, config.learning_rate, &mut batch_rng)
            .map_err(|e| context(e, &format!("warm-up epoch {epoch}")))?;
    }

    let mut pool = train_set.clone();
    let mut kept = BTreeSet::new();
    let mut capped = BTreeSet::new();
    let mut lr = config.learning_rate;
    let mut records = Vec::with_capacity(config.schedule.paces);
    for pace in 0..config.schedule.paces {
        let started = observer.now();
        let evals = state.evaluate_samples(&pool).map_err(|e| context(e, &format!("pace {pace} scoring")))?;
        // Selection ranks original samples only; copies follow their origin.
        let originals: Vec<usize> = (0..pool.len()).filter(|&i| pool.samples()[i].is_original()).collect();
        let candidates: Vec<Candidate> = originals
            .iter()
            .map(|&i| Candidate {
                id: pool.samples()[i].id,
                log_lik: evals[i].log_density,
                entropy: evals[i].entropy,
            })
            .collect();
        let all_groups = data::group_indices(&pool)?;
        let candidate_groups = originals.iter().map(|&i| all_groups[i]).collect();
        let selection = spl::schedule_pace_sticky(&candidates, &config.schedule, pace, &kept, &capped, config.scheme, config.capping)?;
        capped = selection.ids.iter().zip(&selection.excluded).filter(|(_, &e)| e).map(|(&id, _)| id).collect();
        if selection.selected_count() == 0 {
            return Err(Error::config(format!("pace {pace} selected no samples")));
        }

        if config.augmentation && config.augment_timing == AugmentTiming::BeforeUpdate {
            let entropies: Vec<f64> = evals.iter().map(|e| e.entropy).collect();
            pool = augment(&pool, &entropies, config)?;
        }
        let weights = pool_weights(&pool, &selection);
        kept = selection.selected_ids();

        for epoch in 0..config.epochs_per_pace {
            state
                .epoch(&pool, &weights, config, lr, &mut batch_rng)
                .map_err(|e| context(e, &format!("pace {pace} epoch {epoch}")))?;
        }

        if config.augmentation && config.augment_timing == AugmentTiming::AfterUpdate {
            let entropies: Vec<f64> = state.evaluate_samples(&pool)?.iter().map(|e| e.entropy).collect();
            pool = augment(&pool, &entropies, config)?;
        }

        let report = state.evaluate(eval_set, eval_set.group_edges(), config.cs_level)?;
        let log = PaceLog {
            pace,
            pool_size: pool.len(),
            selected_count: weights.iter().filter(|&&v| v > 0.0).count(),
            excluded_by_cap_count: selection.excluded_count(),
            augmented_count: pool.augmented_count(),
            lambda: selection.lambda,
            lambda_prime: selection.lambda_prime,
            gamma: selection.gamma,
            epsilon: selection.epsilon,
            learning_rate: lr,
            mae: report.mae,
            cs: report.cs,
            fair: report.fair,
            wall_time_secs: observer.now() - started,
        };
        let record = PaceRecord {
            log,
            candidates,
            candidate_groups,
            selection,
            report,
        };
        observer.pace_finished(&record, &state.backbone, &state.forest);
        records.push(record);
        lr *= config.lr_decay;
    }
    Ok(TrainOutcome {
        backbone: state.backbone,
        forest: state.forest,
        paces: records,
    })
}

fn context(e: Error, at: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{at}: {m}")),
        other => other,
    }
}

/// Duplicates originals whose entropy exceeds the configured threshold.
fn augment(pool: &Dataset, entropies: &[f64], config: &TrainConfig) -> Result<Dataset> {
    let original_entropies: Vec<f64> = pool
        .samples()
        .iter()
        .zip(entropies)
        .filter(|(s, _)| s.is_original())
        .map(|(_, &h)| h)
        .collect();
    let beta = config.schedule.beta.resolve(&original_entropies)?;
    data::augment_underrepresented(pool, entropies, beta, config.copies)
}

/// Weight of every pool sample; copies take their origin's weight.
fn pool_weights(pool: &Dataset, selection: &SelectionState) -> Vec<f64> {
    let weight_of: BTreeMap<u64, f64> = selection.ids.iter().copied().zip(selection.weights.iter().copied()).collect();
    pool.samples()
        .iter()
        .map(|s| {
            let origin = match s.origin {
                data::Origin::Original => s.id,
                data::Origin::AugmentedCopyOf(src) => src,
            };
            weight_of.get(&origin).copied().unwrap_or(0.0)
        })
        .collect()
}

struct Model {
    backbone: BackboneParams,
    forest: Forest,
    parallel: bool,
}

impl Model {
    fn features(&self, ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        par::map_indexed(indices.len(), self.parallel, |a| self.backbone.features(&ds.samples()[indices[a]].x))
            .into_iter()
            .collect()
    }

    fn evaluate_samples(&self, ds: &Dataset) -> Result<Vec<SampleEval>> {
        par::map_indexed(ds.len(), self.parallel, |i| {
            let s = &ds.samples()[i];
            let f = self.backbone.features(&s.x)?;
            self.forest.evaluate(&f, s.y)
        })
        .into_iter()
        .collect()
    }

    fn fit_leaves(&mut self, ds: &Dataset, weights: &[f64], leaf: &LeafUpdateConfig) -> Result<()> {
        let active: Vec<usize> = (0..ds.len()).filter(|&i| weights[i] > 0.0).collect();
        let feats = self.features(ds, &active)?;
        let ys: Vec<f64> = active.iter().map(|&i| ds.samples()[i].y).collect();
        let vs: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
        self.forest = leafopt::update_leaves_with(&self.forest, &feats, &ys, &vs, leaf, self.parallel)?.forest;
        Ok(())
    }

    /// One pass over the weighted samples in seeded random mini-batches.
    fn epoch(&mut self, ds: &Dataset, weights: &[f64], config: &TrainConfig, lr: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut order: Vec<usize> = (0..ds.len()).filter(|&i| weights[i] > 0.0).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let grads = self
                .batch_gradient(ds, weights, batch)
                .map_err(|e| context(e, &format!("step {step}")))?;
            self.backbone
                .sgd_step(&grads, lr)
                .map_err(|e| context(e, &format!("step {step}")))?;
            if let Some(k) = config.leaf_update_interval {
                if (step + 1) % k == 0 {
                    self.fit_leaves(ds, weights, &config.leaf)?;
                }
            }
        }
        if config.leaf_update_interval.is_none() {
            self.fit_leaves(ds, weights, &config.leaf)?;
        }
        Ok(())
    }

    /// `(1/|B|) sum_{i in B} v_i d ln p_F(y_i | x_i) / d theta`.
    fn batch_gradient(&self, ds: &Dataset, weights: &[f64], batch: &[usize]) -> Result<BackboneGradients> {
        let per_sample = par::map_indexed(batch.len(), self.parallel, |a| {
            let i = batch[a];
            let s = &ds.samples()[i];
            let cache = self.backbone.forward(&s.x)?;
            let mut upstream = self.forest.loglik_feature_grad(cache.features(), s.y)?;
            upstream.iter_mut().for_each(|g| *g *= weights[i]);
            self.backbone.backward(&cache, &upstream)
        });
        let mut total = BackboneGradients::zeros_like(&self.backbone);
        for g in per_sample {
            total.add_scaled(&g?, 1.0);
        }
        total.scale(1.0 / batch.len() as f64);
        Ok(total)
    }

    fn evaluate(&self, ds: &Dataset, group_edges: &[f64], level: f64) -> Result<EvalReport> {
        evaluate_with(&self.backbone, &self.forest, ds, group_edges, level, self.parallel)
    }
}

/// Analytic `d (sum_i v_i ln p_F(y_i | x_i)) / d theta` over all samples.
pub fn weighted_loglik_gradient(backbone: &BackboneParams, forest: &Forest, ds: &Dataset, weights: &[f64]) -> Result<BackboneGradients> {
    if weights.len() != ds.len() {
        return Err(Error::Shape {
            what: "sample weights",
            expected: ds.len(),
            found: weights.len(),
        });
    }
    let mut total = BackboneGradients::zeros_like(backbone);
    for (s, &v) in ds.samples().iter().zip(weights) {
        if v == 0.0 {
            continue;
        }
        let cache = backbone.forward(&s.x)?;
        let upstream = forest.loglik_feature_grad(cache.features(), s.y)?;
        total.add_scaled(&backbone.backward(&cache, &upstream)?, v);
    }
    Ok(total)
}

/// `sum_i v_i ln p_F(y_i | x_i)` through the feature extractor.
pub fn weighted_loglik(backbone: &BackboneParams, forest: &Forest, ds: &Dataset, weights: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (s, &v) in ds.samples().iter().zip(weights) {
        if v != 0.0 {
            total += v * forest.log_density(&backbone.features(&s.x)?, s.y)?;
        }
    }
    Ok(total)
}

/// MAE, CS at `level`, per-group MAE and FAIR of the model on `ds`.
pub fn evaluate(backbone: &BackboneParams, forest: &Forest, ds: &Dataset, group_edges: &[f64], level: f64) -> Result<EvalReport> {
    evaluate_with(backbone, forest, ds, group_edges, level, false)
}

pub fn evaluate_with(
    backbone: &BackboneParams,
    forest: &Forest,
    ds: &Dataset,
    group_edges: &[f64],
    level: f64,
    parallel: bool,
) -> Result<EvalReport> {
    let predictions = par::map_indexed(ds.len(), parallel, |i| forest.predict(&backbone.features(&ds.samples()[i].x)?))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let targets = ds.targets();
    let groups = targets
        .iter()
        .zip(ds.samples())
        .map(|(&y, s)| {
            data::group_of(group_edges, y).ok_or(Error::Range {
                id: s.id,
                y,
                lo: group_edges.first().copied().unwrap_or(f64::NAN),
                hi: group_edges.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let num_groups = group_edges.len().saturating_sub(1);
    let losses = GroupLosses::from_predictions(&predictions, &targets, &groups, num_groups)?;
    let fair = if losses.losses().len() >= 2 { Some(metrics::fair(&losses)?) } else { None };
    Ok(EvalReport {
        mae: metrics::mae(&predictions, &targets)?,
        cs_level: level,
        cs: metrics::cs(&predictions, &targets, level)?,
        per_group_mae: losses.per_group.iter().map(|g| g.map(|(m, _)| m)).collect(),
        group_counts: losses.per_group.iter().map(|g| g.map_or(0, |(_, c)| c)).collect(),
        fair,
    })
}

/// Mean 1-based position of each group's samples when sorted by descending
/// score; tied scores share the average of their positions. `None` for
/// groups without samples.
pub fn group_rank_trace(scores: &[f64], groups: &[usize], num_groups: usize) -> Result<Vec<Option<f64>>> {
    if scores.len() != groups.len() {
        return Err(Error::Shape {
            what: "group labels",
            expected: scores.len(),
            found: groups.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("ranking scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut rank = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Positions start + 1 ..= end share their mean.
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            rank[i] = shared;
        }
        start = end;
    }
    let mut sum = vec![(0.0, 0usize); num_groups];
    for (&g, r) in groups.iter().zip(rank) {
        let slot = sum.get_mut(g).ok_or(Error::Shape {
            what: "group index",
            expected: num_groups,
            found: g,
        })?;
        slot.0 += r;
        slot.1 += 1;
    }
    Ok(sum.into_iter().map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None }).collect())
}

/// Short human-readable description of a configuration's mode-defining fields.
pub fn describe(config: &TrainConfig) -> String {
    format!(
        "paces={} first_fraction={} gamma0={} scheme={} augmentation={} capping={}",
        config.schedule.paces,
        config.schedule.first_fraction,
        config.schedule.gamma0,
        config.scheme.name(),
        config.augmentation,
        config.capping
    )
}
