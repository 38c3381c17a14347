//! Synthetic keyword corpus: deterministic generation of the pre-train and
//! fine-tune splits (in memory or rendered to WAV files plus manifests) and
//! loading of a rendered corpus directory.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::CorpusConfig;
use crate::data::{
    build_2mix_testset, read_manifest, read_mixed_trials, write_manifest, write_mixed_trials,
    ExampleManifestEntry, KeywordTable, MixedTrial, Split,
};
use crate::error::{Error, Result};
use crate::eval::ScoreItem;
use crate::seeds;
use crate::signal::{load_wav, save_wav, synth_keyword, Waveform};
use crate::strategy::{ExamplePool, PoolExample};

/// One labeled clean example with a stable id (its manifest audio path).
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: String,
    pub keyword_id: u32,
    pub waveform: Waveform,
}

/// Everything an experiment plan consumes: training pools, clean test splits
/// and rendered 2-mix test items for both phases.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub pretrain_keywords: KeywordTable,
    pub finetune_keywords: KeywordTable,
    pub pretrain_train: Vec<LabeledExample>,
    pub pretrain_test: Vec<LabeledExample>,
    pub pretrain_mixed_test: Vec<ScoreItem>,
    pub finetune_pool: Vec<LabeledExample>,
    pub finetune_test: Vec<LabeledExample>,
    pub finetune_mixed_test: Vec<ScoreItem>,
}

fn synth_table(prefix: &str, offset: usize, count: usize) -> KeywordTable {
    let texts: Vec<String> = (0..count)
        .map(|i| format!("{prefix}{:02}", offset + i))
        .collect();
    KeywordTable::from_texts(&texts).expect("generated texts are unique")
}

/// Variant seed for one synthetic clip; unique per (phase, split, keyword,
/// variant) so splits can never share a clip.
fn variant_seed(master: u64, phase: &str, split: &str, keyword: u32, variant: usize) -> u64 {
    seeds::derive(master, &format!("corpus/{phase}/{split}/{keyword}/{variant}"))
}

struct SplitSpec<'a> {
    phase: &'a str,
    split: &'a str,
    keywords: usize,
    /// Global synth keyword id offset (fine-tune keywords use fresh ids).
    id_offset: u32,
    variants: usize,
}

fn generate_split(
    spec: &SplitSpec,
    corpus: &CorpusConfig,
    master: u64,
    seen: &mut BTreeSet<u64>,
) -> Result<Vec<LabeledExample>> {
    let mut items = Vec::with_capacity(spec.keywords * spec.variants);
    for kw in 0..spec.keywords as u32 {
        for v in 0..spec.variants {
            let seed = variant_seed(master, spec.phase, spec.split, kw, v);
            if !seen.insert(seed) {
                return Err(Error::Dataset(format!(
                    "variant seed collision between splits at {}/{}/kw{kw}/v{v}",
                    spec.phase, spec.split
                )));
            }
            items.push((kw, v, seed));
        }
    }
    let duration = corpus.duration_s;
    let id_offset = spec.id_offset;
    let phase = spec.phase;
    let split = spec.split;
    Ok(items
        .par_iter()
        .map(|&(kw, v, seed)| LabeledExample {
            id: format!("{phase}/{split}/kw{:02}_v{v:04}.wav", id_offset + kw),
            keyword_id: kw,
            waveform: synth_keyword(id_offset + kw, seed, duration),
        })
        .collect())
}

fn clean_score_items(examples: &[LabeledExample]) -> Vec<ScoreItem> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| ScoreItem {
            trial_id: i as u64,
            waveform: ex.waveform.clone(),
            truth: vec![ex.keyword_id],
        })
        .collect()
}

fn mixed_trials_for(
    clean_test: &[LabeledExample],
    table: &KeywordTable,
    num_trials: usize,
    master: u64,
    phase: &str,
) -> Result<Vec<(MixedTrial, Waveform)>> {
    let entries: Vec<ExampleManifestEntry> = clean_test
        .iter()
        .map(|ex| ExampleManifestEntry {
            audio_path: ex.id.clone(),
            keyword_id: ex.keyword_id,
            keyword_text: table
                .text_of(ex.keyword_id)
                .unwrap_or_default()
                .to_string(),
            split: Split::Test,
        })
        .collect();
    let by_id: HashMap<&str, &Waveform> = clean_test
        .iter()
        .map(|ex| (ex.id.as_str(), &ex.waveform))
        .collect();
    let mut rng = seeds::stream(master, &format!("corpus/{phase}/mixed"));
    build_2mix_testset(&entries, num_trials, &mut rng, |path| {
        by_id
            .get(path)
            .map(|w| (*w).clone())
            .ok_or_else(|| Error::Dataset(format!("unknown clean test id {path}")))
    })
}

fn mixed_score_items(trials: &[(MixedTrial, Waveform)]) -> Vec<ScoreItem> {
    trials
        .iter()
        .map(|(t, wave)| {
            let mut truth = vec![t.keyword_a, t.keyword_b];
            truth.sort_unstable();
            ScoreItem {
                trial_id: t.trial_id,
                waveform: wave.clone(),
                truth,
            }
        })
        .collect()
}

impl Datasets {
    /// Generate the full synthetic corpus in memory, deterministically from
    /// the master seed.
    pub fn synth(corpus: &CorpusConfig, master_seed: u64) -> Result<Self> {
        let pre_kw = corpus.pretrain_keywords;
        let fine_kw = corpus.finetune_keywords;
        let pretrain_keywords = synth_table("kw", 0, pre_kw);
        let finetune_keywords = synth_table("kw", pre_kw, fine_kw);

        let mut seen = BTreeSet::new();
        let pretrain_train = generate_split(
            &SplitSpec {
                phase: "pretrain",
                split: "train",
                keywords: pre_kw,
                id_offset: 0,
                variants: corpus.pretrain_train_variants,
            },
            corpus,
            master_seed,
            &mut seen,
        )?;
        let pretrain_test = generate_split(
            &SplitSpec {
                phase: "pretrain",
                split: "test",
                keywords: pre_kw,
                id_offset: 0,
                variants: corpus.pretrain_test_variants,
            },
            corpus,
            master_seed,
            &mut seen,
        )?;
        let finetune_pool = generate_split(
            &SplitSpec {
                phase: "finetune",
                split: "pool",
                keywords: fine_kw,
                id_offset: pre_kw as u32,
                variants: corpus.finetune_pool_variants,
            },
            corpus,
            master_seed,
            &mut seen,
        )?;
        let finetune_test = generate_split(
            &SplitSpec {
                phase: "finetune",
                split: "test",
                keywords: fine_kw,
                id_offset: pre_kw as u32,
                variants: corpus.finetune_test_variants,
            },
            corpus,
            master_seed,
            &mut seen,
        )?;

        let pretrain_mixed = mixed_trials_for(
            &pretrain_test,
            &pretrain_keywords,
            corpus.pretrain_mixed_trials,
            master_seed,
            "pretrain",
        )?;
        let finetune_mixed = mixed_trials_for(
            &finetune_test,
            &finetune_keywords,
            corpus.finetune_mixed_trials,
            master_seed,
            "finetune",
        )?;

        Ok(Self {
            pretrain_keywords,
            finetune_keywords,
            pretrain_train,
            pretrain_test,
            pretrain_mixed_test: mixed_score_items(&pretrain_mixed),
            finetune_pool,
            finetune_test,
            finetune_mixed_test: mixed_score_items(&finetune_mixed),
        })
    }

    pub fn pretrain_clean_items(&self) -> Vec<ScoreItem> {
        clean_score_items(&self.pretrain_test)
    }

    pub fn finetune_clean_items(&self) -> Vec<ScoreItem> {
        clean_score_items(&self.finetune_test)
    }

    /// Training pool over the pre-train inventory.
    pub fn pretrain_pool(&self) -> Result<ExamplePool> {
        ExamplePool::new(
            self.pretrain_train
                .iter()
                .map(|ex| PoolExample {
                    waveform: ex.waveform.clone(),
                    keyword_id: ex.keyword_id,
                })
                .collect(),
            self.pretrain_keywords.len(),
        )
    }

    /// Map fine-tune example ids to waveforms (for resolving N-shot subsets).
    pub fn finetune_waveforms(&self) -> HashMap<&str, &Waveform> {
        self.finetune_pool
            .iter()
            .map(|ex| (ex.id.as_str(), &ex.waveform))
            .collect()
    }

    /// Fine-tune pool as manifest entries (input to N-shot sampling).
    pub fn finetune_manifest(&self) -> Vec<ExampleManifestEntry> {
        self.finetune_pool
            .iter()
            .map(|ex| ExampleManifestEntry {
                audio_path: ex.id.clone(),
                keyword_id: ex.keyword_id,
                keyword_text: self
                    .finetune_keywords
                    .text_of(ex.keyword_id)
                    .unwrap_or_default()
                    .to_string(),
                split: Split::Train,
            })
            .collect()
    }

    /// SHA-256 over every example's id, label and sample bits; stable input
    /// fingerprint for provenance records.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut eat_examples = |tag: &str, items: &[LabeledExample]| {
            hasher.update(tag.as_bytes());
            for ex in items {
                hasher.update(ex.id.as_bytes());
                hasher.update(ex.keyword_id.to_le_bytes());
                for s in ex.waveform.samples() {
                    hasher.update(s.to_le_bytes());
                }
            }
        };
        eat_examples("pretrain_train", &self.pretrain_train);
        eat_examples("pretrain_test", &self.pretrain_test);
        eat_examples("finetune_pool", &self.finetune_pool);
        eat_examples("finetune_test", &self.finetune_test);
        let mut eat_items = |tag: &str, items: &[ScoreItem]| {
            hasher.update(tag.as_bytes());
            for item in items {
                hasher.update(item.trial_id.to_le_bytes());
                for &t in &item.truth {
                    hasher.update(t.to_le_bytes());
                }
                for s in item.waveform.samples() {
                    hasher.update(s.to_le_bytes());
                }
            }
        };
        eat_items("pretrain_mixed", &self.pretrain_mixed_test);
        eat_items("finetune_mixed", &self.finetune_mixed_test);
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary written next to a rendered corpus.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub counts: std::collections::BTreeMap<String, usize>,
}

fn manifest_of(
    examples: &[LabeledExample],
    table: &KeywordTable,
    split: Split,
) -> Vec<ExampleManifestEntry> {
    examples
        .iter()
        .map(|ex| ExampleManifestEntry {
            audio_path: ex.id.clone(),
            keyword_id: ex.keyword_id,
            keyword_text: table.text_of(ex.keyword_id).unwrap_or_default().to_string(),
            split,
        })
        .collect()
}

fn mixed_wav_path(phase: &str, trial_id: u64) -> String {
    format!("{phase}/mixed/trial_{trial_id:05}.wav")
}

/// Render the synthetic corpus to `out_dir`: WAV files, JSONL manifests,
/// keyword tables, rendered 2-mix trials and a summary echo.
pub fn write_synth_corpus(
    corpus: &CorpusConfig,
    master_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusSummary> {
    let out = out_dir.as_ref();
    let data = Datasets::synth(corpus, master_seed)?;
    for sub in [
        "pretrain/train",
        "pretrain/test",
        "pretrain/mixed",
        "finetune/pool",
        "finetune/test",
        "finetune/mixed",
    ] {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| Error::io(out.join(sub), e))?;
    }

    let write_examples = |examples: &[LabeledExample]| -> Result<()> {
        examples
            .par_iter()
            .map(|ex| save_wav(out.join(&ex.id), &ex.waveform))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    };
    write_examples(&data.pretrain_train)?;
    write_examples(&data.pretrain_test)?;
    write_examples(&data.finetune_pool)?;
    write_examples(&data.finetune_test)?;

    data.pretrain_keywords
        .write_json(out.join("keywords_pretrain.json"))?;
    data.finetune_keywords
        .write_json(out.join("keywords_finetune.json"))?;

    write_manifest(
        out.join("pretrain_train.jsonl"),
        &manifest_of(&data.pretrain_train, &data.pretrain_keywords, Split::Train),
    )?;
    write_manifest(
        out.join("pretrain_test.jsonl"),
        &manifest_of(&data.pretrain_test, &data.pretrain_keywords, Split::Test),
    )?;
    write_manifest(
        out.join("finetune_pool.jsonl"),
        &manifest_of(&data.finetune_pool, &data.finetune_keywords, Split::Train),
    )?;
    write_manifest(
        out.join("finetune_test.jsonl"),
        &manifest_of(&data.finetune_test, &data.finetune_keywords, Split::Test),
    )?;

    // 2-mix trials: manifest plus rendered audio. The generation pass is
    // deterministic, so re-running it reproduces the in-memory trials.
    for (phase, clean, table, count) in [
        (
            "pretrain",
            &data.pretrain_test,
            &data.pretrain_keywords,
            corpus.pretrain_mixed_trials,
        ),
        (
            "finetune",
            &data.finetune_test,
            &data.finetune_keywords,
            corpus.finetune_mixed_trials,
        ),
    ] {
        let trials = mixed_trials_for(clean, table, count, master_seed, phase)?;
        trials
            .par_iter()
            .map(|(t, wave)| save_wav(out.join(mixed_wav_path(phase, t.trial_id)), wave))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<MixedTrial> = trials.into_iter().map(|(t, _)| t).collect();
        write_mixed_trials(out.join(format!("{phase}_mixed.jsonl")), &records)?;
    }

    let mut counts = std::collections::BTreeMap::new();
    counts.insert("pretrain_train".into(), data.pretrain_train.len());
    counts.insert("pretrain_test".into(), data.pretrain_test.len());
    counts.insert("pretrain_mixed".into(), corpus.pretrain_mixed_trials);
    counts.insert("finetune_pool".into(), data.finetune_pool.len());
    counts.insert("finetune_test".into(), data.finetune_test.len());
    counts.insert("finetune_mixed".into(), corpus.finetune_mixed_trials);
    let summary = CorpusSummary {
        seed: master_seed,
        corpus: corpus.clone(),
        counts,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out.join("corpus.json"), json)
        .map_err(|e| Error::io(out.join("corpus.json"), e))?;
    Ok(summary)
}

/// Load a corpus directory produced by [`write_synth_corpus`].
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Datasets> {
    let dir = dir.as_ref();
    let pretrain_keywords = KeywordTable::read_json(dir.join("keywords_pretrain.json"))?;
    let finetune_keywords = KeywordTable::read_json(dir.join("keywords_finetune.json"))?;

    let load_split = |manifest: &str| -> Result<Vec<LabeledExample>> {
        let entries = read_manifest(dir.join(manifest))?;
        entries
            .par_iter()
            .map(|e| {
                Ok(LabeledExample {
                    id: e.audio_path.clone(),
                    keyword_id: e.keyword_id,
                    waveform: load_wav(dir.join(&e.audio_path))?,
                })
            })
            .collect()
    };
    let pretrain_train = load_split("pretrain_train.jsonl")?;
    let pretrain_test = load_split("pretrain_test.jsonl")?;
    let finetune_pool = load_split("finetune_pool.jsonl")?;
    let finetune_test = load_split("finetune_test.jsonl")?;

    let load_mixed = |manifest: &str, phase: &str| -> Result<Vec<ScoreItem>> {
        let trials = read_mixed_trials(dir.join(manifest))?;
        trials
            .par_iter()
            .map(|t| {
                let wave = load_wav(dir.join(mixed_wav_path(phase, t.trial_id)))?;
                let mut truth = vec![t.keyword_a, t.keyword_b];
                truth.sort_unstable();
                Ok(ScoreItem {
                    trial_id: t.trial_id,
                    waveform: wave,
                    truth,
                })
            })
            .collect()
    };
    let pretrain_mixed_test = load_mixed("pretrain_mixed.jsonl", "pretrain")?;
    let finetune_mixed_test = load_mixed("finetune_mixed.jsonl", "finetune")?;

    Ok(Datasets {
        pretrain_keywords,
        finetune_keywords,
        pretrain_train,
        pretrain_test,
        pretrain_mixed_test,
        finetune_pool,
        finetune_test,
        finetune_mixed_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> CorpusConfig {
        CorpusConfig {
            duration_s: 0.05,
            pretrain_keywords: 3,
            pretrain_train_variants: 4,
            pretrain_test_variants: 3,
            finetune_keywords: 2,
            finetune_pool_variants: 4,
            finetune_test_variants: 3,
            pretrain_mixed_trials: 5,
            finetune_mixed_trials: 4,
        }
    }

    #[test]
    fn synth_datasets_have_configured_shape() {
        let data = Datasets::synth(&tiny_corpus(), 7).unwrap();
        assert_eq!(data.pretrain_train.len(), 12);
        assert_eq!(data.pretrain_test.len(), 9);
        assert_eq!(data.pretrain_mixed_test.len(), 5);
        assert_eq!(data.finetune_pool.len(), 8);
        assert_eq!(data.finetune_test.len(), 6);
        assert_eq!(data.finetune_mixed_test.len(), 4);
        for item in &data.pretrain_mixed_test {
            assert_eq!(item.truth.len(), 2);
            assert!(item.truth[0] < item.truth[1]);
        }
        // Fine-tune keyword ids are local to the fine-tune head.
        assert!(data
            .finetune_pool
            .iter()
            .all(|ex| (ex.keyword_id as usize) < 2));
    }

    #[test]
    fn synth_datasets_are_deterministic() {
        let a = Datasets::synth(&tiny_corpus(), 11).unwrap();
        let b = Datasets::synth(&tiny_corpus(), 11).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = Datasets::synth(&tiny_corpus(), 12).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn rendered_corpus_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        let summary = write_synth_corpus(&corpus, 5, dir.path()).unwrap();
        assert_eq!(summary.counts["pretrain_train"], 12);
        let loaded = load_corpus(dir.path()).unwrap();
        let reference = Datasets::synth(&corpus, 5).unwrap();
        assert_eq!(loaded.pretrain_train.len(), reference.pretrain_train.len());
        let bound = (-15f64).exp2();
        for (a, b) in loaded.pretrain_train.iter().zip(&reference.pretrain_train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.keyword_id, b.keyword_id);
            for (x, y) in a.waveform.samples().iter().zip(b.waveform.samples()) {
                assert!((x - y).abs() <= bound);
            }
        }
        assert_eq!(
            loaded.finetune_mixed_test.len(),
            reference.finetune_mixed_test.len()
        );
        for (a, b) in loaded
            .finetune_mixed_test
            .iter()
            .zip(&reference.finetune_mixed_test)
        {
            assert_eq!(a.truth, b.truth);
        }
    }

    #[test]
    fn rendering_twice_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        write_synth_corpus(&corpus, 9, dir_a.path()).unwrap();
        write_synth_corpus(&corpus, 9, dir_b.path()).unwrap();
        assert_eq!(hash_tree(dir_a.path()), hash_tree(dir_b.path()));
    }

    fn hash_tree(root: &Path) -> Vec<(String, [u8; 32])> {
        fn walk(dir: &Path, root: &Path, files: &mut Vec<(String, [u8; 32])>) {
            let mut entries: Vec<_> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for path in entries {
                if path.is_dir() {
                    walk(&path, root, files);
                } else {
                    let rel = path.strip_prefix(root).unwrap().display().to_string();
                    let bytes = std::fs::read(&path).unwrap();
                    files.push((rel, Sha256::digest(&bytes).into()));
                }
            }
        }
        let mut files = Vec::new();
        walk(root, root, &mut files);
        files
    }
}
