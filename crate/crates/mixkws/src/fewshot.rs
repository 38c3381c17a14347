//! Experiment orchestration: pre-train under each strategy, fine-tune each
//! backbone under each strategy for every shot count and subset, evaluate on
//! clean and 2-mix tests, and check the directional orderings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ModelConfig, TrainingConfig};
use crate::corpus::Datasets;
use crate::data::sample_nshot;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_runs, compute_eer, score_testset, topk_accuracy, MeanStd, MetricReport, ScoreItem,
};
use crate::features::{fbank, FeatureStats};
use crate::model::{
    reinit_head, train, Architecture, EpochLog, HeadKind, ModelState, TrainOptions,
};
use crate::seeds;
use crate::strategy::{ExamplePool, PoolExample, StrategyConfig, StrategyKind};

/// The full experiment grid to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub pretrain_strategies: Vec<StrategyKind>,
    pub finetune_strategies: Vec<StrategyKind>,
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
    pub mt_clean_fraction: f64,
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl ExperimentPlan {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            pretrain_strategies: cfg.plan.pretrain_strategies.clone(),
            finetune_strategies: cfg.plan.finetune_strategies.clone(),
            shots: cfg.plan.shots.clone(),
            repeats: cfg.plan.repeats,
            master_seed: cfg.seed,
            mt_clean_fraction: cfg.strategy.mt_clean_fraction,
            model: cfg.model.clone(),
            training: cfg.training.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_strategies.is_empty() || self.finetune_strategies.is_empty() {
            return Err(Error::Plan("strategy sets must be non-empty".into()));
        }
        if self.shots.is_empty() || self.shots.iter().any(|&s| s == 0) {
            return Err(Error::Plan("shot counts must be positive".into()));
        }
        if self.repeats < 2 {
            return Err(Error::Plan(
                "repeats must be at least 2 for mean/std aggregation".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mt_clean_fraction) {
            return Err(Error::Plan("mt_clean_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Aggregated cells in the full grid: strategies x shots x {clean, mixed}.
    pub fn expected_cells(&self) -> usize {
        self.pretrain_strategies.len() * self.finetune_strategies.len() * self.shots.len() * 2
    }

    fn strategy_config(&self, kind: StrategyKind) -> Result<StrategyConfig> {
        StrategyConfig::new(kind, self.mt_clean_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Clean,
    Mixed,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Clean => "clean",
            TestKind::Mixed => "mixed",
        }
    }
}

/// Clean and 2-mix metrics of one pre-trained model on the pre-train tests.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PretrainEval {
    pub clean: MetricReport,
    pub mixed: MetricReport,
}

/// One aggregated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub pretrain: StrategyKind,
    pub finetune: StrategyKind,
    pub shots: usize,
    pub test: TestKind,
    pub per_run: Vec<MetricReport>,
    pub acc: MeanStd,
    pub eer: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanEcho {
    pub pretrain_strategies: Vec<StrategyKind>,
    pub finetune_strategies: Vec<StrategyKind>,
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
}

/// Complete experiment results keyed by cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultGrid {
    pub plan: PlanEcho,
    /// Pre-trained model evaluation per strategy (clean + 2-mix tests).
    pub pretrain: BTreeMap<String, PretrainEval>,
    /// Aggregated few-shot cells keyed by [`ResultGrid::cell_key`].
    pub cells: BTreeMap<String, CellResult>,
}

impl ResultGrid {
    pub fn cell_key(
        pretrain: StrategyKind,
        finetune: StrategyKind,
        shots: usize,
        test: TestKind,
    ) -> String {
        format!(
            "pre={} ft={} shots={} test={}",
            pretrain.name(),
            finetune.name(),
            shots,
            test.name()
        )
    }

    pub fn cell(
        &self,
        pretrain: StrategyKind,
        finetune: StrategyKind,
        shots: usize,
        test: TestKind,
    ) -> Option<&CellResult> {
        self.cells
            .get(&Self::cell_key(pretrain, finetune, shots, test))
    }

    /// True when every cell of the plan cross-product is present.
    pub fn is_complete(&self, plan: &ExperimentPlan) -> bool {
        plan.pretrain_strategies.iter().all(|&p| {
            self.pretrain.contains_key(p.name())
                && plan.finetune_strategies.iter().all(|&f| {
                    plan.shots.iter().all(|&s| {
                        [TestKind::Clean, TestKind::Mixed]
                            .iter()
                            .all(|&t| self.cells.contains_key(&Self::cell_key(p, f, s, t)))
                    })
                })
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    /// Plain-text tables: pre-trained model comparison, then the few-shot
    /// grid with mean +- std cells (accuracies and EER in percent).
    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        out.push_str("Pre-trained models (pre-train test sets)\n");
        out.push_str(&format!(
            "{:<10} {:>14} {:>10} {:>14} {:>10}\n",
            "pre-train", "Top-1 ACC%", "EER%", "Top-2 ACC%", "EER%"
        ));
        for (name, eval) in &self.pretrain {
            out.push_str(&format!(
                "{:<10} {:>14} {:>10} {:>14} {:>10}\n",
                name,
                pct(eval.clean.topk_acc),
                pct(eval.clean.eer),
                pct(eval.mixed.topk_acc),
                pct(eval.mixed.eer),
            ));
        }
        if self.cells.is_empty() {
            return out;
        }
        out.push('\n');
        out.push_str("Few-shot grid (fine-tune test sets, mean +- std over subsets)\n");
        out.push_str(&format!(
            "{:<10} {:<10} {:>6} {:<6} {:>18} {:>18}\n",
            "pre-train", "fine-tune", "shots", "test", "ACC%", "EER%"
        ));
        for cell in self.cells.values() {
            let fmt_ms = |m: &MeanStd| format!("{} +- {}", pct(m.mean), pct(m.std));
            out.push_str(&format!(
                "{:<10} {:<10} {:>6} {:<6} {:>18} {:>18}\n",
                cell.pretrain.name(),
                cell.finetune.name(),
                cell.shots,
                cell.test.name(),
                fmt_ms(&cell.acc),
                fmt_ms(&cell.eer),
            ));
        }
        out
    }
}

fn evaluate_items(model: &ModelState, items: &[ScoreItem], k: usize) -> Result<MetricReport> {
    let (log, trials) = score_testset(model, items)?;
    Ok(MetricReport {
        eer: compute_eer(&log)?,
        topk_acc: topk_accuracy(&trials, k)?,
        k,
        n_trials: trials.len(),
    })
}

/// Pre-train one backbone under `strategy` and evaluate it on the pre-train
/// clean and 2-mix tests. The parameter init and feature statistics are
/// shared across strategies (derived only from the master seed) so strategy
/// comparisons are paired.
pub fn pretrain_one(
    plan: &ExperimentPlan,
    data: &Datasets,
    strategy: StrategyKind,
) -> Result<(ModelState, PretrainEval, Vec<EpochLog>)> {
    let stats = pretrain_feature_stats(data)?;
    pretrain_with_stats(plan, data, strategy, stats)
}

fn pretrain_with_stats(
    plan: &ExperimentPlan,
    data: &Datasets,
    strategy: StrategyKind,
    stats: FeatureStats,
) -> Result<(ModelState, PretrainEval, Vec<EpochLog>)> {
    let pool = data.pretrain_pool()?;
    let arch = Architecture {
        conv_channels: plan.model.conv_channels.clone(),
        embedding_dim: plan.model.embedding_dim,
        head: HeadKind::SingleLinear {
            out: data.pretrain_keywords.len(),
        },
    };
    let mut init_rng = seeds::stream(plan.master_seed, "pretrain/init");
    let init = ModelState::init(arch, stats, &mut init_rng)?;
    let opts = TrainOptions {
        epochs: plan.training.pretrain_epochs,
        learning_rate: plan.training.learning_rate,
        batch_size: plan.training.batch_size,
        checkpoint_window: plan.training.checkpoint_window,
        seed: seeds::derive(plan.master_seed, &format!("pretrain/{}", strategy.name())),
    };
    let (model, logs) = train(&init, &pool, &plan.strategy_config(strategy)?, &opts)?;
    let eval = PretrainEval {
        clean: evaluate_items(&model, &data.pretrain_clean_items(), 1)?,
        mixed: evaluate_items(&model, &data.pretrain_mixed_test, 2)?,
    };
    Ok((model, eval, logs))
}

/// Normalization statistics over the pre-training split, persisted with the
/// model from initialization onward.
pub fn pretrain_feature_stats(data: &Datasets) -> Result<FeatureStats> {
    let matrices = data
        .pretrain_train
        .par_iter()
        .map(|ex| fbank(&ex.waveform))
        .collect::<Result<Vec<_>>>()?;
    FeatureStats::compute(&matrices)
}

struct CellSpec {
    pretrain: StrategyKind,
    finetune: StrategyKind,
    shots: usize,
    repeat: usize,
}

struct CellRun {
    clean: MetricReport,
    mixed: MetricReport,
}

fn run_cell(
    plan: &ExperimentPlan,
    data: &Datasets,
    pretrained: &ModelState,
    spec: &CellSpec,
    subset_pool: &ExamplePool,
) -> Result<CellRun> {
    // Head init is shared across fine-tune strategies (paired comparison).
    let mut head_rng = seeds::stream(
        plan.master_seed,
        &format!(
            "reinit/{}/{}/{}",
            spec.pretrain.name(),
            spec.shots,
            spec.repeat
        ),
    );
    let head_state = reinit_head(pretrained, data.finetune_keywords.len(), &mut head_rng)?;
    let opts = TrainOptions {
        epochs: plan.training.finetune_epochs,
        learning_rate: plan.training.learning_rate,
        batch_size: plan.training.batch_size,
        checkpoint_window: plan.training.checkpoint_window,
        seed: seeds::derive(
            plan.master_seed,
            &format!(
                "finetune/{}/{}/{}/{}",
                spec.pretrain.name(),
                spec.finetune.name(),
                spec.shots,
                spec.repeat
            ),
        ),
    };
    let (tuned, _logs) = train(
        &head_state,
        subset_pool,
        &plan.strategy_config(spec.finetune)?,
        &opts,
    )?;
    if tuned.backbone_hash() != pretrained.backbone_hash() {
        return Err(Error::Plan(
            "fine-tuning altered the frozen backbone".into(),
        ));
    }
    Ok(CellRun {
        clean: evaluate_items(&tuned, &data.finetune_clean_items(), 1)?,
        mixed: evaluate_items(&tuned, &data.finetune_mixed_test, 2)?,
    })
}

/// N-shot subsets per shot count, shared (paired) across all strategy
/// combinations; each subset is materialized as a training pool. Subsets
/// depend only on `(master_seed, shots)`.
pub fn build_subset_pools(
    data: &Datasets,
    shots_list: &[usize],
    repeats: usize,
    master_seed: u64,
) -> Result<BTreeMap<usize, Vec<ExamplePool>>> {
    let manifest = data.finetune_manifest();
    let waveforms = data.finetune_waveforms();
    let mut pools = BTreeMap::new();
    for &shots in shots_list {
        let mut rng = seeds::stream(master_seed, &format!("nshot/{shots}"));
        let subsets = sample_nshot(&manifest, shots, repeats, &mut rng)?;
        let mut shot_pools = Vec::with_capacity(subsets.len());
        for subset in &subsets {
            let examples = subset
                .iter()
                .map(|entry| {
                    let wave = waveforms.get(entry.audio_path.as_str()).ok_or_else(|| {
                        Error::Dataset(format!("subset references unknown id {}", entry.audio_path))
                    })?;
                    Ok(PoolExample {
                        waveform: (*wave).clone(),
                        keyword_id: entry.keyword_id,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            shot_pools.push(ExamplePool::new(examples, data.finetune_keywords.len())?);
        }
        pools.insert(shots, shot_pools);
    }
    Ok(pools)
}

/// Run the full experiment grid. Deterministic given the plan's master seed;
/// cells run in parallel and are assembled in plan order.
pub fn run_plan(plan: &ExperimentPlan, data: &Datasets) -> Result<ResultGrid> {
    plan.validate()?;
    let mut grid = ResultGrid {
        plan: PlanEcho {
            pretrain_strategies: plan.pretrain_strategies.clone(),
            finetune_strategies: plan.finetune_strategies.clone(),
            shots: plan.shots.clone(),
            repeats: plan.repeats,
            master_seed: plan.master_seed,
        },
        pretrain: BTreeMap::new(),
        cells: BTreeMap::new(),
    };

    let subset_pools = build_subset_pools(data, &plan.shots, plan.repeats, plan.master_seed)?;
    let stats = pretrain_feature_stats(data)?;

    for &p in &plan.pretrain_strategies {
        let (model, eval, _logs) = pretrain_with_stats(plan, data, p, stats.clone())
            .map_err(|e| Error::Plan(format!("pretrain {}: {e}", p.name())))?;
        grid.pretrain.insert(p.name().to_string(), eval);

        let specs: Vec<CellSpec> = plan
            .finetune_strategies
            .iter()
            .flat_map(|&f| {
                plan.shots.iter().flat_map(move |&shots| {
                    (0..plan.repeats).map(move |repeat| CellSpec {
                        pretrain: p,
                        finetune: f,
                        shots,
                        repeat,
                    })
                })
            })
            .collect();

        let runs: Vec<CellRun> = specs
            .par_iter()
            .map(|spec| {
                run_cell(
                    plan,
                    data,
                    &model,
                    spec,
                    &subset_pools[&spec.shots][spec.repeat],
                )
                .map_err(|e| {
                    Error::Plan(format!(
                        "cell {}: {e}",
                        ResultGrid::cell_key(spec.pretrain, spec.finetune, spec.shots, TestKind::Clean)
                    ))
                })
            })
            .collect::<Result<_>>()?;

        for (&f, f_runs) in plan
            .finetune_strategies
            .iter()
            .zip(runs.chunks(plan.shots.len() * plan.repeats))
        {
            for (&shots, s_runs) in plan.shots.iter().zip(f_runs.chunks(plan.repeats)) {
                let clean_reports: Vec<MetricReport> = s_runs.iter().map(|r| r.clean).collect();
                let mixed_reports: Vec<MetricReport> = s_runs.iter().map(|r| r.mixed).collect();
                for (test, reports) in [
                    (TestKind::Clean, clean_reports),
                    (TestKind::Mixed, mixed_reports),
                ] {
                    let agg = aggregate_runs(&reports)?;
                    grid.cells.insert(
                        ResultGrid::cell_key(p, f, shots, test),
                        CellResult {
                            pretrain: p,
                            finetune: f,
                            shots,
                            test,
                            per_run: reports,
                            acc: agg.acc,
                            eer: agg.eer,
                        },
                    );
                }
            }
        }
    }

    debug_assert!(grid.is_complete(plan));
    Ok(grid)
}

/// A directional assertion over the grid, mirroring the reported orderings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum OrderingRule {
    /// Pre-trained models on the 2-mix test: EER(mt) < EER(mixup) < EER(clean)
    /// with each gap at least `min_gap` (absolute EER, 0.02 = 2 points).
    PretrainMixedEer { min_gap: f64 },
    /// Fine-tuning strategies at one (pretrain, shots) on the 2-mix test:
    /// mean EER(mt) < mean EER(mixup) < mean EER(clean), with the mt-clean
    /// gap at least `min_gap_mt_vs_clean`.
    FinetuneMixedEer {
        pretrain: StrategyKind,
        shots: usize,
        min_gap_mt_vs_clean: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub rule: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingReport {
    pub checks: Vec<OrderingCheck>,
}

impl OrderingReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Evaluate directional ordering rules against a grid. Missing cells are a
/// hard error; each check reports the observed margins.
pub fn check_orderings(grid: &ResultGrid, rules: &[OrderingRule]) -> Result<OrderingReport> {
    let mut checks = Vec::new();
    for rule in rules {
        match rule {
            OrderingRule::PretrainMixedEer { min_gap } => {
                let eer_of = |s: StrategyKind| -> Result<f64> {
                    grid.pretrain
                        .get(s.name())
                        .map(|e| e.mixed.eer)
                        .ok_or_else(|| {
                            Error::Plan(format!("grid is missing pretrain eval for {}", s.name()))
                        })
                };
                let mt = eer_of(StrategyKind::Mt)?;
                let mixup = eer_of(StrategyKind::Mixup)?;
                let clean = eer_of(StrategyKind::Clean)?;
                let gap_mm = mixup - mt;
                let gap_cm = clean - mixup;
                let pass = gap_mm >= *min_gap && gap_cm >= *min_gap;
                checks.push(OrderingCheck {
                    rule: "pretrain-mixed-eer".into(),
                    pass,
                    details: format!(
                        "mixed EER%: mt {:.2} < mixup {:.2} < clean {:.2}; \
                         gaps {:.2} / {:.2} (need >= {:.2})",
                        mt * 100.0,
                        mixup * 100.0,
                        clean * 100.0,
                        gap_mm * 100.0,
                        gap_cm * 100.0,
                        min_gap * 100.0
                    ),
                });
            }
            OrderingRule::FinetuneMixedEer {
                pretrain,
                shots,
                min_gap_mt_vs_clean,
            } => {
                let eer_of = |f: StrategyKind| -> Result<f64> {
                    grid.cell(*pretrain, f, *shots, TestKind::Mixed)
                        .map(|c| c.eer.mean)
                        .ok_or_else(|| {
                            Error::Plan(format!(
                                "grid is missing cell {}",
                                ResultGrid::cell_key(*pretrain, f, *shots, TestKind::Mixed)
                            ))
                        })
                };
                let mt = eer_of(StrategyKind::Mt)?;
                let mixup = eer_of(StrategyKind::Mixup)?;
                let clean = eer_of(StrategyKind::Clean)?;
                let pass = mt < mixup && mixup < clean && (clean - mt) >= *min_gap_mt_vs_clean;
                checks.push(OrderingCheck {
                    rule: format!(
                        "finetune-mixed-eer(pre={}, shots={})",
                        pretrain.name(),
                        shots
                    ),
                    pass,
                    details: format!(
                        "mean mixed EER%: mt {:.2} < mixup {:.2} < clean {:.2}; \
                         mt-clean gap {:.2} (need >= {:.2})",
                        mt * 100.0,
                        mixup * 100.0,
                        clean * 100.0,
                        (clean - mt) * 100.0,
                        min_gap_mt_vs_clean * 100.0
                    ),
                });
            }
        }
    }
    Ok(OrderingReport { checks })
}
