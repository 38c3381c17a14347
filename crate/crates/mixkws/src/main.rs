//! Command-line entry point. All randomness flows from a single `--seed`
//! (defaulting to the config's seed); outputs are reproducible byte-for-byte
//! from `(config, seed)` regardless of `--workers`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use mixkws::config::Config;
use mixkws::corpus::{load_corpus, write_synth_corpus, Datasets};
use mixkws::data::{
    excerpt_keyword, read_alignments, select_keywords, write_manifest, ExampleManifestEntry, Split,
};
use mixkws::error::{Error, Result};
use mixkws::eval::{compute_eer, DetectionLog, MetricReport};
use mixkws::fewshot::{
    build_subset_pools, check_orderings, pretrain_one, run_plan, ExperimentPlan, OrderingRule,
    TestKind,
};
use mixkws::model::{checkpoint, reinit_head, train, TrainOptions};
use mixkws::signal::{load_wav, save_wav};
use mixkws::strategy::{StrategyConfig, StrategyKind};
use mixkws::{eval, seeds};

#[derive(Parser)]
#[command(
    name = "mixkws",
    about = "Keyword spotting with clean / mixup / mix-training strategies",
    version
)]
struct Cli {
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: WAV files plus manifests.
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset from a forced-alignment TSV and source audio.
    BuildDataset {
        #[arg(long)]
        alignments: PathBuf,
        /// Directory that alignment audio paths are relative to.
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pre-train a backbone under one strategy and save the checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory from gen-synth; omitted = synthesize in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch training log (JSONL).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fine-tune a pre-trained checkpoint on one N-shot subset.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        shots: usize,
        /// Subset index in 0..plan.repeats.
        #[arg(long, default_value_t = 0)]
        subset: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a test set, or recompute metrics from a
    /// persisted detection log.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which test set to score.
        #[arg(long, value_parser = ["clean", "mixed"], default_value = "clean")]
        test: String,
        /// Which phase's test set (pre-train or fine-tune keywords).
        #[arg(long, value_parser = ["pretrain", "finetune"], default_value = "finetune")]
        phase: String,
        /// Recompute EER from an existing detection log instead of scoring.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the metric report (JSON) here; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Persist the detection log produced by scoring.
        #[arg(long)]
        save_log: Option<PathBuf>,
    },
    /// Run the full experiment grid and write results + summary tables.
    RunPlan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let message = e.to_string().replace('\n', " ");
        eprintln!("error[{}]: {}", e.class(), message);
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::GenSynth { config, out } => gen_synth(&config, cli.seed, &out),
        Command::BuildDataset {
            alignments,
            audio_dir,
            out,
            config,
        } => build_dataset(&alignments, &audio_dir, &out, config.as_deref(), cli.seed),
        Command::Pretrain {
            config,
            data,
            strategy,
            out,
            log,
        } => pretrain(&config, data.as_deref(), &strategy, &out, log.as_deref(), cli.seed),
        Command::Finetune {
            config,
            data,
            checkpoint,
            strategy,
            shots,
            subset,
            out,
            log,
        } => finetune(
            &config,
            data.as_deref(),
            &checkpoint,
            &strategy,
            shots,
            subset,
            &out,
            log.as_deref(),
            cli.seed,
        ),
        Command::Evaluate {
            config,
            data,
            checkpoint,
            test,
            phase,
            log,
            out,
            save_log,
        } => evaluate(
            config.as_deref(),
            data.as_deref(),
            checkpoint.as_deref(),
            &test,
            &phase,
            log.as_deref(),
            out.as_deref(),
            save_log.as_deref(),
            cli.seed,
        ),
        Command::RunPlan { config, data, out } => {
            run_plan_cmd(&config, data.as_deref(), &out, cli.seed)
        }
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<Config> {
    let mut config = Config::load(path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

fn load_datasets(config: &Config, data: Option<&Path>) -> Result<Datasets> {
    match data {
        Some(dir) => load_corpus(dir),
        None => Datasets::synth(&config.corpus, config.seed),
    }
}

#[derive(Serialize)]
struct Provenance {
    seed: u64,
    config: Config,
    dataset_hash: String,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn gen_synth(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let summary = write_synth_corpus(&config.corpus, config.seed, out)?;
    println!("wrote synthetic corpus to {}", out.display());
    for (split, count) in &summary.counts {
        println!("  {split}: {count}");
    }
    Ok(())
}

fn build_dataset(
    alignments_path: &Path,
    audio_dir: &Path,
    out: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = match config_path {
        Some(p) => load_config(p, seed)?,
        None => {
            let mut c = Config::default();
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
    };
    let build = &config.dataset;
    let alignments = read_alignments(alignments_path)?;

    // Verify every referenced audio file exists before any work.
    let mut missing: Vec<String> = alignments
        .iter()
        .map(|r| r.audio_path.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .filter(|p| !audio_dir.join(p).is_file())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Dataset(format!(
            "missing audio files under {}: {}",
            audio_dir.display(),
            missing.join(", ")
        )));
    }

    let mut rng = seeds::stream(config.seed, "build-dataset/select");
    let (table, retained) = select_keywords(
        &alignments,
        build.min_letters,
        build.min_count,
        build.frequency_cap,
        &mut rng,
    )?;

    std::fs::create_dir_all(out.join("excerpts"))
        .map_err(|e| Error::io(out.join("excerpts"), e))?;
    let mut entries: Vec<ExampleManifestEntry> = Vec::new();
    for (kw_id, occurrences) in &retained {
        let text = table.text_of(*kw_id).unwrap_or_default().to_string();
        // Held-out valid/test examples per keyword, the rest train.
        let mut order: Vec<usize> = (0..occurrences.len()).collect();
        use rand::seq::SliceRandom;
        let mut split_rng = seeds::stream(config.seed, &format!("build-dataset/split/{kw_id}"));
        order.shuffle(&mut split_rng);
        for (pos, &occ_idx) in order.iter().enumerate() {
            let rec = &occurrences[occ_idx];
            let split = if pos < build.valid_per_keyword {
                Split::Valid
            } else if pos < build.valid_per_keyword + build.test_per_keyword {
                Split::Test
            } else {
                Split::Train
            };
            let audio = load_wav(audio_dir.join(&rec.audio_path))?;
            let excerpt = excerpt_keyword(rec, &audio, build.excerpt_duration_s)?;
            let rel = format!("excerpts/{}_{:05}.wav", text, occ_idx);
            save_wav(out.join(&rel), &excerpt)?;
            entries.push(ExampleManifestEntry {
                audio_path: rel,
                keyword_id: *kw_id,
                keyword_text: text.clone(),
                split,
            });
        }
    }
    entries.sort_by(|a, b| (a.keyword_id, &a.audio_path).cmp(&(b.keyword_id, &b.audio_path)));

    table.write_json(out.join("keywords.json"))?;
    for (name, split) in [
        ("train.jsonl", Split::Train),
        ("valid.jsonl", Split::Valid),
        ("test.jsonl", Split::Test),
    ] {
        let subset: Vec<ExampleManifestEntry> = entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect();
        write_manifest(out.join(name), &subset)?;
    }
    println!(
        "built dataset with {} keywords, {} excerpts at {}",
        table.len(),
        entries.len(),
        out.display()
    );
    Ok(())
}

fn pretrain(
    config_path: &Path,
    data: Option<&Path>,
    strategy: &str,
    out: &Path,
    log_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let strategy = StrategyKind::parse(strategy)?;
    let datasets = load_datasets(&config, data)?;
    let plan = ExperimentPlan::from_config(&config);
    let (model, eval_report, logs) = pretrain_one(&plan, &datasets, strategy)?;
    let echo = serde_json::json!({
        "command": "pretrain",
        "strategy": strategy.name(),
        "seed": config.seed,
        "config": config,
        "dataset_hash": datasets.content_hash(),
    });
    checkpoint::save(&model, out, echo)?;
    if let Some(path) = log_path {
        write_jsonl(path, &logs)?;
    }
    println!(
        "pretrained [{}] -> {} | clean: top1 {:.2}% eer {:.2}% | mixed: top2 {:.2}% eer {:.2}%",
        strategy.name(),
        out.display(),
        eval_report.clean.topk_acc * 100.0,
        eval_report.clean.eer * 100.0,
        eval_report.mixed.topk_acc * 100.0,
        eval_report.mixed.eer * 100.0,
    );
    Ok(())
}

fn write_jsonl(path: &Path, rows: &[impl Serialize]) -> Result<()> {
    use std::io::Write;
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    config_path: &Path,
    data: Option<&Path>,
    checkpoint_path: &Path,
    strategy: &str,
    shots: usize,
    subset: usize,
    out: &Path,
    log_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let strategy = StrategyKind::parse(strategy)?;
    let datasets = load_datasets(&config, data)?;
    let (pretrained, _echo) = checkpoint::load(checkpoint_path)?;

    let pools = build_subset_pools(&datasets, &[shots], config.plan.repeats, config.seed)?;
    let pool = pools[&shots].get(subset).ok_or_else(|| {
        Error::Plan(format!(
            "subset index {subset} out of range for {} repeats",
            config.plan.repeats
        ))
    })?;

    let mut head_rng = seeds::stream(config.seed, &format!("cli/reinit/{shots}/{subset}"));
    let head_state = reinit_head(&pretrained, datasets.finetune_keywords.len(), &mut head_rng)?;
    let opts = TrainOptions {
        epochs: config.training.finetune_epochs,
        learning_rate: config.training.learning_rate,
        batch_size: config.training.batch_size,
        checkpoint_window: config.training.checkpoint_window,
        seed: seeds::derive(
            config.seed,
            &format!("cli/finetune/{}/{shots}/{subset}", strategy.name()),
        ),
    };
    let strategy_cfg = StrategyConfig::new(strategy, config.strategy.mt_clean_fraction)?;
    let (tuned, logs) = train(&head_state, pool, &strategy_cfg, &opts)?;
    if tuned.backbone_hash() != pretrained.backbone_hash() {
        return Err(Error::Plan("fine-tuning altered the frozen backbone".into()));
    }
    let echo = serde_json::json!({
        "command": "finetune",
        "strategy": strategy.name(),
        "shots": shots,
        "subset": subset,
        "seed": config.seed,
        "config": config,
        "pretrained_backbone_sha256": hex(&pretrained.backbone_hash()),
        "dataset_hash": datasets.content_hash(),
    });
    checkpoint::save(&tuned, out, echo)?;
    if let Some(path) = log_path {
        write_jsonl(path, &logs)?;
    }
    println!(
        "finetuned [{}] {shots}-shot subset {subset} -> {} (backbone preserved)",
        strategy.name(),
        out.display()
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    config_path: Option<&Path>,
    data: Option<&Path>,
    checkpoint_path: Option<&Path>,
    test: &str,
    phase: &str,
    log: Option<&Path>,
    out: Option<&Path>,
    save_log: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    // Log mode: recompute pooled EER from a persisted detection log.
    if let Some(log_path) = log {
        let detection_log = DetectionLog::read_jsonl(log_path)?;
        let eer = compute_eer(&detection_log)?;
        let report = serde_json::json!({
            "eer": eer,
            "n_entries": detection_log.entries.len(),
        });
        emit_report(&report, out)?;
        return Ok(());
    }

    let config_path = config_path.ok_or_else(|| {
        Error::Config("evaluate needs --config (with --checkpoint) or --log".into())
    })?;
    let checkpoint_path = checkpoint_path
        .ok_or_else(|| Error::Config("evaluate needs --checkpoint when scoring a model".into()))?;
    let config = load_config(config_path, seed)?;
    let datasets = load_datasets(&config, data)?;
    let (model, _echo) = checkpoint::load(checkpoint_path)?;

    let (items, k) = match (phase, test) {
        ("pretrain", "clean") => (datasets.pretrain_clean_items(), 1),
        ("pretrain", "mixed") => (datasets.pretrain_mixed_test.clone(), 2),
        ("finetune", "clean") => (datasets.finetune_clean_items(), 1),
        ("finetune", "mixed") => (datasets.finetune_mixed_test.clone(), 2),
        _ => unreachable!("clap validates the value sets"),
    };
    let (detection_log, trials) = eval::score_testset(&model, &items)?;
    let report = MetricReport {
        eer: compute_eer(&detection_log)?,
        topk_acc: eval::topk_accuracy(&trials, k)?,
        k,
        n_trials: trials.len(),
    };
    if let Some(path) = save_log {
        detection_log.write_jsonl(path)?;
    }
    emit_report(&report, out)?;
    Ok(())
}

fn emit_report(report: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, &json).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run_plan_cmd(config_path: &Path, data: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let datasets = load_datasets(&config, data)?;
    let plan = ExperimentPlan::from_config(&config);
    let grid = run_plan(&plan, &datasets)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join("grid.json"), grid.to_json_pretty())
        .map_err(|e| Error::io(out.join("grid.json"), e))?;
    std::fs::write(out.join("summary.txt"), grid.render_tables())
        .map_err(|e| Error::io(out.join("summary.txt"), e))?;
    write_json(&out.join("plan.json"), &plan)?;
    write_json(
        &out.join("provenance.json"),
        &Provenance {
            seed: config.seed,
            config: config.clone(),
            dataset_hash: datasets.content_hash(),
        },
    )?;

    // Directional ordering report, when the grid covers the named cells.
    let mut rules = Vec::new();
    let all = [StrategyKind::Clean, StrategyKind::Mixup, StrategyKind::Mt];
    if all.iter().all(|s| grid.pretrain.contains_key(s.name())) {
        rules.push(OrderingRule::PretrainMixedEer { min_gap: 0.02 });
    }
    for &shots in &plan.shots {
        if all
            .iter()
            .all(|&f| grid.cell(StrategyKind::Mt, f, shots, TestKind::Mixed).is_some())
        {
            rules.push(OrderingRule::FinetuneMixedEer {
                pretrain: StrategyKind::Mt,
                shots,
                min_gap_mt_vs_clean: 0.02,
            });
        }
    }
    if !rules.is_empty() {
        let report = check_orderings(&grid, &rules)?;
        write_json(&out.join("orderings.json"), &report)?;
        for check in &report.checks {
            println!(
                "[{}] {} - {}",
                if check.pass { "PASS" } else { "FAIL" },
                check.rule,
                check.details
            );
        }
    }

    print!("{}", grid.render_tables());
    println!("results written to {}", out.display());
    Ok(())
}
