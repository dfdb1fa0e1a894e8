//! The dynamic-pruning epoch loop.
//!
//! Every epoch starts by picking a subset of the training set, then trains
//! on it in shuffled mini-batches, recording each trained sample's loss into
//! the score state's cache. Selection strategies:
//!
//! - `dual`       — step the learnable scores on the cached task losses and
//!                  the fixed consistency signal, then take the k scores
//!                  nearest the median.
//! - `loss_only`  — top-k by cached task loss (highest first).
//! - `random_dynamic` — a fresh seeded uniform k-subset each epoch.
//! - `full_data`  — no pruning.
//!
//! Epoch 0..warmup always trains on the full dataset so the loss cache holds
//! a real value for every sample before pruning begins. Samples pruned out
//! afterwards keep their last-known loss; an optional full refresh every
//! `refresh_every` epochs bounds that staleness and is charged to the
//! forward-pass counters like any other loss evaluation. Evaluation-only
//! passes (the per-epoch accuracy metric) are not counted as training cost.
//!
//! Per-epoch RNG streams are derived from `(rng_seed, epoch)`, so extending
//! a run never perturbs the epochs before the extension point.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scorer::{
    init_scores, median, score_step, select_median_band, ScoreState, SelectionResult,
};
use crate::trainer::{
    batch_gradient, evaluate, init_model, per_sample_losses, sgd_step, ClassifierModel,
    CostCounters,
};
use crate::xmodal::{consistency_scores, AdapterPair};

/// Subset-selection strategy for each post-warmup epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dual,
    LossOnly,
    RandomDynamic,
    FullData,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dual => "dual",
            Strategy::LossOnly => "loss_only",
            Strategy::RandomDynamic => "random_dynamic",
            Strategy::FullData => "full_data",
        }
    }

    fn needs_loss_cache(&self) -> bool {
        matches!(self, Strategy::Dual | Strategy::LossOnly)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Strategy::Dual),
            "loss_only" => Ok(Strategy::LossOnly),
            "random_dynamic" => Ok(Strategy::RandomDynamic),
            "full_data" => Ok(Strategy::FullData),
            other => Err(Error::validation(format!(
                "unknown strategy {other:?}; expected dual, loss_only, random_dynamic, or full_data"
            ))),
        }
    }
}

/// Everything one experiment run needs beyond its data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub selection_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub lr_decay: f64,
    pub lambda: f64,
    pub score_learn_rate: f64,
    pub steps_per_epoch: usize,
    pub refresh_every: usize,
    pub warmup_epochs: usize,
    pub strategy: Strategy,
    pub hidden: Option<usize>,
    pub init_scale: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            selection_ratio: 0.5,
            epochs: 30,
            batch_size: 64,
            learn_rate: 0.5,
            lr_decay: 0.98,
            lambda: 1.0,
            score_learn_rate: 0.1,
            steps_per_epoch: 1,
            refresh_every: 10,
            warmup_epochs: 1,
            strategy: Strategy::Dual,
            hidden: None,
            init_scale: 0.1,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    /// `cache_prefilled` relaxes the warmup requirement for strategies that
    /// read the loss cache, for callers that supply an initial score state
    /// whose cache is already populated.
    pub fn validate(&self, cache_prefilled: bool) -> Result<()> {
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::validation(format!(
                "selection_ratio must lie in (0, 1], got {}",
                self.selection_ratio
            )));
        }
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learn_rate >= 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::validation("learn_rate must be nonnegative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::validation("lr_decay must be positive"));
        }
        if !self.lambda.is_finite() {
            return Err(Error::validation("lambda must be finite"));
        }
        if !(self.score_learn_rate >= 0.0 && self.score_learn_rate.is_finite()) {
            return Err(Error::validation("score_learn_rate must be nonnegative"));
        }
        if self.steps_per_epoch < 1 {
            return Err(Error::validation("steps_per_epoch must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::validation("init_scale must be nonnegative"));
        }
        if let Some(h) = self.hidden {
            if h < 1 {
                return Err(Error::validation("hidden width must be at least 1"));
            }
        }
        if self.strategy.needs_loss_cache() && self.warmup_epochs < 1 && !cache_prefilled {
            return Err(Error::validation(format!(
                "strategy {} needs warmup_epochs >= 1 to populate the loss cache",
                self.strategy.name()
            )));
        }
        Ok(())
    }

    /// Per-epoch target subset size.
    pub fn subset_size(&self, n: usize) -> usize {
        ((self.selection_ratio * n as f64).round() as usize).clamp(1, n)
    }
}

/// One epoch's instrumentation. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub selected_count: usize,
    pub mean_train_loss: f64,
    pub eval_accuracy: f64,
    pub selected_noisy_count: usize,
    pub selected_noisy_fraction: f64,
    pub forward_passes: u64,
    pub backward_updates: u64,
    pub median_score: f64,
}

/// Closing summary of a run; the final line of the metrics stream.
/// `eval_accuracy` and `final_accuracy` are measured against ground-truth
/// labels, so they stay meaningful under injected label noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub final_accuracy: f64,
    pub total_forward_passes: u64,
    pub total_backward_updates: u64,
    pub forward_saved: i64,
    pub backward_saved: i64,
}

/// Full record of a run: per-epoch metrics plus the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochMetrics>,
    pub summary: RunSummary,
}

impl RunReport {
    /// Mean selected-noisy fraction over the post-warmup epochs, the number
    /// Figure-style noise-filtering comparisons quote. Zero when every epoch
    /// is still warmup.
    pub fn mean_post_warmup_noisy_fraction(&self) -> f64 {
        let warmup = self.summary.config.warmup_epochs;
        let post: Vec<&EpochMetrics> =
            self.epochs.iter().filter(|m| m.epoch >= warmup).collect();
        if post.is_empty() {
            return 0.0;
        }
        post.iter().map(|m| m.selected_noisy_fraction).sum::<f64>() / post.len() as f64
    }
}

/// Closed-form training cost saved by pruning from `n` to `k` samples per
/// epoch: `(n-k)·T` forward passes and `ceil((n-k)·T / batch_size)` backward
/// updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSavings {
    pub forward_saved: u64,
    pub backward_saved: u64,
}

pub fn cost_savings(n: usize, k: usize, epochs: usize, batch_size: usize) -> Result<CostSavings> {
    if k < 1 || k > n {
        return Err(Error::validation(format!(
            "k must lie in [1, {n}], got {k}"
        )));
    }
    if epochs < 1 || batch_size < 1 {
        return Err(Error::validation(
            "epochs and batch_size must both be at least 1",
        ));
    }
    let forward_saved = ((n - k) * epochs) as u64;
    let backward_saved = forward_saved.div_ceil(batch_size as u64);
    Ok(CostSavings {
        forward_saved,
        backward_saved,
    })
}

/// Noise composition of one selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFilterMetrics {
    pub selected_noisy_count: usize,
    pub selected_noisy_fraction: f64,
    pub base_noise_rate: f64,
    pub filtering_ratio: f64,
}

pub fn noise_filter_metrics(
    selection: &SelectionResult,
    ds: &Dataset,
) -> Result<NoiseFilterMetrics> {
    if let Some(&bad) = selection.selected_ids.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::validation(format!(
            "selected id {bad} out of range for dataset of {}",
            ds.len()
        )));
    }
    let selected_noisy_count = selection
        .selected_ids
        .iter()
        .filter(|&&i| ds.sample(i).is_noisy)
        .count();
    let selected_noisy_fraction = selected_noisy_count as f64 / selection.selected_ids.len() as f64;
    let base_noise_rate = ds.noisy_count() as f64 / ds.len() as f64;
    let filtering_ratio = if base_noise_rate > 0.0 {
        selected_noisy_fraction / base_noise_rate
    } else {
        0.0
    };
    Ok(NoiseFilterMetrics {
        selected_noisy_count,
        selected_noisy_fraction,
        base_noise_rate,
        filtering_ratio,
    })
}

/// Recomputes the whole task-loss cache at the current parameters, tagging
/// every entry with `epoch`. Costs N forward passes.
pub fn refresh_losses(
    model: &ClassifierModel,
    ds: &Dataset,
    state: &ScoreState,
    epoch: usize,
    counters: &mut CostCounters,
) -> Result<ScoreState> {
    let all_ids: Vec<usize> = (0..ds.len()).collect();
    let losses = per_sample_losses(model, ds, &all_ids, counters)?;
    let mut next = state.clone();
    next.fill_cache(&losses, epoch as i32)?;
    Ok(next)
}

fn epoch_rng(rng_seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Stream 0 stays reserved for model initialization.
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Runs the full training loop and returns the per-epoch metrics stream.
pub fn run_experiment(
    config: &TrainConfig,
    ds: &Dataset,
    table: &EmbeddingTable,
    adapters: &AdapterPair,
) -> Result<RunReport> {
    run_experiment_with_state(config, ds, table, adapters, None)
}

/// As [`run_experiment`], but an initial score state (typically one with a
/// prefilled loss cache) may replace the fresh all-ones state, which also
/// permits `warmup_epochs == 0` for cache-reading strategies.
pub fn run_experiment_with_state(
    config: &TrainConfig,
    ds: &Dataset,
    table: &EmbeddingTable,
    adapters: &AdapterPair,
    initial_state: Option<ScoreState>,
) -> Result<RunReport> {
    config.validate(initial_state.is_some())?;
    if table.num_samples() != ds.len() || table.num_classes() != ds.num_classes() {
        return Err(Error::validation(format!(
            "embedding table is {}x{} but dataset is {}x{}",
            table.num_samples(),
            table.num_classes(),
            ds.len(),
            ds.num_classes()
        )));
    }

    let n = ds.len();
    let k = config.subset_size(n);
    let labels = ds.observed_labels();

    let scores = consistency_scores(table, &labels, adapters)?;
    let mut state = match initial_state {
        Some(s) => {
            if s.len() != n {
                return Err(Error::validation(format!(
                    "initial score state has {} entries, dataset has {n}",
                    s.len()
                )));
            }
            s
        }
        None => init_scores(
            n,
            scores.values().to_vec(),
            config.lambda,
            config.score_learn_rate,
            config.steps_per_epoch,
        )?,
    };

    let mut model = init_model(
        ds.feature_dim(),
        ds.num_classes(),
        config.hidden,
        config.init_scale,
        config.rng_seed,
    )?;
    let mut counters = CostCounters::default();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let ctx = |phase: &str| format!("epoch {epoch} ({phase})");
        let lr = config.learn_rate * config.lr_decay.powi(epoch as i32);
        let mut rng = epoch_rng(config.rng_seed, epoch);

        // Phase 1: choose this epoch's subset.
        let full_epoch = epoch < config.warmup_epochs || config.strategy == Strategy::FullData;
        let selected: Vec<usize> = if full_epoch {
            (0..n).collect()
        } else {
            match config.strategy {
                Strategy::FullData => unreachable!(),
                Strategy::Dual => {
                    state = score_step(&state, epoch).map_err(|e| e.with_context(&ctx("selection")))?;
                    select_median_band(state.scores(), k, epoch)
                        .map_err(|e| e.with_context(&ctx("selection")))?
                        .selected_ids
                }
                Strategy::LossOnly => top_k_by_cached_loss(state.task_loss_cache(), k),
                Strategy::RandomDynamic => {
                    let mut ids = index_sample(&mut rng, n, k).into_vec();
                    ids.sort_unstable();
                    ids
                }
            }
        };

        let selected_noisy_count = selected
            .iter()
            .filter(|&&i| ds.sample(i).is_noisy)
            .count();
        let median_score =
            median(state.scores()).map_err(|e| e.with_context(&ctx("selection")))?;

        // Phase 2: shuffled mini-batch training over the subset, recording
        // each trained sample's loss (at the parameters it was trained with)
        // into the cache.
        let forward_before = counters.forward_passes;
        let backward_before = counters.backward_updates;
        let mut order = selected.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let losses = per_sample_losses(&model, ds, batch, &mut counters)
                .map_err(|e| e.with_context(&ctx("training")))?;
            for (&id, &loss) in batch.iter().zip(&losses) {
                loss_sum += loss;
                state.record_loss(id, loss, epoch as i32);
            }
            let grad =
                batch_gradient(&model, ds, batch).map_err(|e| e.with_context(&ctx("training")))?;
            model = sgd_step(&model, &grad, lr).map_err(|e| e.with_context(&ctx("training")))?;
            counters.backward_updates += 1;
        }
        let mean_train_loss = loss_sum / selected.len() as f64;

        // Phase 3: optional staleness refresh over the whole dataset.
        if config.refresh_every > 0 && epoch % config.refresh_every == 0 {
            state = refresh_losses(&model, ds, &state, epoch, &mut counters)
                .map_err(|e| e.with_context(&ctx("refresh")))?;
        }

        // Phase 4: instrumentation. Accuracy is measured against ground
        // truth and not charged to the training cost counters.
        let eval_accuracy =
            evaluate(&model, ds, true).map_err(|e| e.with_context(&ctx("evaluation")))?;

        epochs.push(EpochMetrics {
            epoch,
            selected_count: selected.len(),
            mean_train_loss,
            eval_accuracy,
            selected_noisy_count,
            selected_noisy_fraction: selected_noisy_count as f64 / selected.len() as f64,
            forward_passes: counters.forward_passes - forward_before,
            backward_updates: counters.backward_updates - backward_before,
            median_score,
        });
    }

    let final_accuracy = epochs.last().map(|m| m.eval_accuracy).unwrap_or(0.0);
    let full_forward = (n * config.epochs) as u64;
    let full_backward = (n.div_ceil(config.batch_size) * config.epochs) as u64;
    let summary = RunSummary {
        config: config.clone(),
        final_accuracy,
        total_forward_passes: counters.forward_passes,
        total_backward_updates: counters.backward_updates,
        forward_saved: full_forward as i64 - counters.forward_passes as i64,
        backward_saved: full_backward as i64 - counters.backward_updates as i64,
    };
    Ok(RunReport { epochs, summary })
}

/// Highest cached losses first; loss ties break toward the smaller index.
fn top_k_by_cached_loss(cache: &[f64], k: usize) -> Vec<usize> {
    let mut by_loss: Vec<(f64, usize)> = cache.iter().cloned().zip(0..).collect();
    by_loss.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut ids: Vec<usize> = by_loss[..k].iter().map(|&(_, i)| i).collect();
    ids.sort_unstable();
    ids
}

/// Writes the metrics stream: one JSON object per epoch, then the summary
/// object, one per line.
pub fn write_jsonl(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        for m in &report.epochs {
            serde_json::to_writer(&mut *w, m)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut *w, &report.summary)?;
        w.write_all(b"\n")?;
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Parses a metrics stream back into a report. Format errors carry the
/// 1-based line number.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(Error::format(format!(
            "{}: empty metrics file",
            path.display()
        )));
    }
    let mut epochs = Vec::with_capacity(lines.len() - 1);
    for (i, line) in lines[..lines.len() - 1].iter().enumerate() {
        let m: EpochMetrics = serde_json::from_str(line).map_err(|e| {
            Error::format(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        epochs.push(m);
    }
    let summary: RunSummary = serde_json::from_str(lines[lines.len() - 1]).map_err(|e| {
        Error::format(format!("{}:{}: {e}", path.display(), lines.len()))
    })?;
    Ok(RunReport { epochs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_gaussian_blobs, inject_label_noise};
    use crate::embeddings::synthesize_embeddings;
    use crate::scorer::init_scores;

    fn small_setup(
        noise: f64,
        data_seed: u64,
    ) -> (Dataset, EmbeddingTable, AdapterPair) {
        let clean = generate_gaussian_blobs(20, 4, 4, 6.0, 1.0, data_seed).unwrap();
        let ds = if noise > 0.0 {
            inject_label_noise(&clean, noise, data_seed + 1).unwrap()
        } else {
            clean
        };
        let table = synthesize_embeddings(&ds, 6, 1.0, 0.1, data_seed + 2).unwrap();
        (ds, table, AdapterPair::identity(6))
    }

    fn quick_config(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            epochs: 6,
            batch_size: 16,
            learn_rate: 0.3,
            refresh_every: 0,
            strategy,
            rng_seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("dual".parse::<Strategy>().unwrap(), Strategy::Dual);
        assert_eq!(
            "random_dynamic".parse::<Strategy>().unwrap(),
            Strategy::RandomDynamic
        );
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation_catches_warmupless_cache_strategies() {
        let mut cfg = quick_config(Strategy::Dual);
        cfg.warmup_epochs = 0;
        assert!(cfg.validate(false).is_err());
        assert!(cfg.validate(true).is_ok());
        cfg.strategy = Strategy::RandomDynamic;
        assert!(cfg.validate(false).is_ok());
    }

    #[test]
    fn subset_size_rounds_half_away_from_zero_and_clamps() {
        let mut cfg = quick_config(Strategy::Dual);
        cfg.selection_ratio = 0.5;
        assert_eq!(cfg.subset_size(5), 3); // 2.5 rounds up
        cfg.selection_ratio = 0.001;
        assert_eq!(cfg.subset_size(10), 1); // clamped to 1
        cfg.selection_ratio = 1.0;
        assert_eq!(cfg.subset_size(10), 10);
    }

    #[test]
    fn full_ratio_dual_matches_full_data() {
        let (ds, table, adapters) = small_setup(0.0, 60);
        let mut dual = quick_config(Strategy::Dual);
        dual.selection_ratio = 1.0;
        let full = TrainConfig {
            strategy: Strategy::FullData,
            ..dual.clone()
        };
        let a = run_experiment(&dual, &ds, &table, &adapters).unwrap();
        let b = run_experiment(&full, &ds, &table, &adapters).unwrap();
        assert_eq!(a.summary.final_accuracy, b.summary.final_accuracy);
        assert_eq!(
            a.summary.total_forward_passes,
            b.summary.total_forward_passes
        );
    }

    #[test]
    fn reports_are_deterministic_and_seed_sensitive() {
        let (ds, table, adapters) = small_setup(0.2, 61);
        let cfg = quick_config(Strategy::Dual);
        let a = run_experiment(&cfg, &ds, &table, &adapters).unwrap();
        let b = run_experiment(&cfg, &ds, &table, &adapters).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig {
            rng_seed: 6,
            ..cfg
        };
        let c = run_experiment(&other, &ds, &table, &adapters).unwrap();
        assert_ne!(a.epochs, c.epochs);
    }

    #[test]
    fn totals_match_per_epoch_counters_and_closed_form() {
        let (ds, table, adapters) = small_setup(0.0, 62);
        let mut cfg = quick_config(Strategy::Dual);
        cfg.selection_ratio = 0.5;
        let report = run_experiment(&cfg, &ds, &table, &adapters).unwrap();
        let n = ds.len() as u64;
        let k = cfg.subset_size(ds.len()) as u64;
        let fwd_sum: u64 = report.epochs.iter().map(|m| m.forward_passes).sum();
        let bwd_sum: u64 = report.epochs.iter().map(|m| m.backward_updates).sum();
        assert_eq!(report.summary.total_forward_passes, fwd_sum);
        assert_eq!(report.summary.total_backward_updates, bwd_sum);
        // With refresh off: warmup·N + (T − warmup)·k forward passes.
        let expect = cfg.warmup_epochs as u64 * n + (cfg.epochs - cfg.warmup_epochs) as u64 * k;
        assert_eq!(fwd_sum, expect);
        // Every post-warmup epoch selects exactly k.
        for m in &report.epochs {
            if m.epoch >= cfg.warmup_epochs {
                assert_eq!(m.selected_count, k as usize);
            } else {
                assert_eq!(m.selected_count, n as usize);
            }
        }
    }

    #[test]
    fn loss_only_ignores_the_consistency_signal() {
        // Two tables with very different consistency scores must produce
        // identical loss_only runs: that path reads only the loss cache.
        let (ds, table_a, adapters) = small_setup(0.2, 63);
        let table_b = synthesize_embeddings(&ds, 6, 1.0, 0.9, 999).unwrap();
        let cfg = quick_config(Strategy::LossOnly);
        let a = run_experiment(&cfg, &ds, &table_a, &adapters).unwrap();
        let b = run_experiment(&cfg, &ds, &table_b, &adapters).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refresh_equals_per_batch_updates_when_parameters_freeze() {
        // With a zero learning rate the parameters never move, so losses
        // recorded batch-by-batch equal a full refresh at epoch end.
        let (ds, table, adapters) = small_setup(0.0, 64);
        let mut cfg = quick_config(Strategy::FullData);
        cfg.learn_rate = 0.0;
        cfg.epochs = 1;

        let model = init_model(
            ds.feature_dim(),
            ds.num_classes(),
            cfg.hidden,
            cfg.init_scale,
            cfg.rng_seed,
        )
        .unwrap();
        let labels = ds.observed_labels();
        let scores = consistency_scores(&table, &labels, &adapters).unwrap();
        let state = init_scores(ds.len(), scores.values().to_vec(), 1.0, 0.1, 1).unwrap();
        let mut counters = CostCounters::default();
        let refreshed = refresh_losses(&model, &ds, &state, 0, &mut counters).unwrap();
        assert_eq!(counters.forward_passes, ds.len() as u64);

        // Run one full-data epoch at lr = 0; its cache must agree.
        let report_state = {
            let mut state = state.clone();
            let mut c = CostCounters::default();
            let order: Vec<usize> = (0..ds.len()).collect();
            for batch in order.chunks(cfg.batch_size) {
                let losses = per_sample_losses(&model, &ds, batch, &mut c).unwrap();
                for (&id, &loss) in batch.iter().zip(&losses) {
                    state.record_loss(id, loss, 0);
                }
            }
            state
        };
        assert_eq!(refreshed.task_loss_cache(), report_state.task_loss_cache());

        // Double refresh with an unchanged model is idempotent, and no entry
        // is stale afterwards.
        let again = refresh_losses(&model, &ds, &refreshed, 0, &mut counters).unwrap();
        assert_eq!(again.task_loss_cache(), refreshed.task_loss_cache());
        assert!(again.last_updated().iter().all(|&e| e == 0));
    }

    #[test]
    fn cost_savings_examples() {
        assert_eq!(
            cost_savings(10, 10, 3, 4).unwrap(),
            CostSavings {
                forward_saved: 0,
                backward_saved: 0
            }
        );
        assert_eq!(
            cost_savings(50_000, 35_000, 100, 128).unwrap(),
            CostSavings {
                forward_saved: 1_500_000,
                backward_saved: 11_719
            }
        );
        assert_eq!(
            cost_savings(10, 5, 1, 3).unwrap(),
            CostSavings {
                forward_saved: 5,
                backward_saved: 2
            }
        );
        assert!(cost_savings(10, 0, 1, 1).is_err());
        assert!(cost_savings(10, 11, 1, 1).is_err());
    }

    #[test]
    fn noise_metrics_examples() {
        let (clean, _, _) = small_setup(0.0, 65);
        let selection = SelectionResult {
            epoch: 0,
            selected_ids: vec![0, 1, 2],
            median_value: 0.0,
            k: 3,
        };
        let m = noise_filter_metrics(&selection, &clean).unwrap();
        assert_eq!(m.selected_noisy_fraction, 0.0);
        assert_eq!(m.filtering_ratio, 0.0);

        let (noisy, _, _) = small_setup(0.25, 66);
        let noisy_ids: Vec<usize> = noisy
            .samples()
            .iter()
            .filter(|s| s.is_noisy)
            .map(|s| s.id)
            .collect();
        let all_noisy = SelectionResult {
            epoch: 0,
            k: noisy_ids.len(),
            selected_ids: noisy_ids,
            median_value: 0.0,
        };
        let m = noise_filter_metrics(&all_noisy, &noisy).unwrap();
        assert_eq!(m.selected_noisy_fraction, 1.0);
        assert!(m.filtering_ratio > 1.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let (ds, table, adapters) = small_setup(0.2, 67);
        let cfg = quick_config(Strategy::Dual);
        let report = run_experiment(&cfg, &ds, &table, &adapters).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        write_jsonl(&report, &path).unwrap();
        let reloaded = read_jsonl(&path).unwrap();
        assert_eq!(report, reloaded);
        // And twice-written files are byte-identical.
        let path2 = dir.path().join("run2.jsonl");
        write_jsonl(&report, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_jsonl_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"epoch\": 0}\nnot json\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(":1:") || err.to_string().contains(":2:"));

        fs::write(&path, "").unwrap();
        assert!(read_jsonl(&path).is_err());
    }

    #[test]
    fn dual_filters_noise_in_a_small_run() {
        let (ds, table, adapters) = small_setup(0.2, 68);
        let mut cfg = quick_config(Strategy::Dual);
        cfg.selection_ratio = 0.5;
        cfg.epochs = 8;
        let report = run_experiment(&cfg, &ds, &table, &adapters).unwrap();
        let base = ds.noisy_count() as f64 / ds.len() as f64;
        assert!(base > 0.15);
        assert!(
            report.mean_post_warmup_noisy_fraction() < base,
            "selected fraction {} not below base rate {base}",
            report.mean_post_warmup_noisy_fraction()
        );
    }
}
