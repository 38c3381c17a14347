//! Dataset construction: alignment ingestion, keyword excerption, frequency
//! capping, N-shot subset sampling and 2-mix test-set construction, plus the
//! line-delimited manifest formats shared with the CLI.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{mix_waveforms, sample_mt_weights, MixWeights, Waveform};

/// One word occurrence from a forced-alignment dump
/// (`utterance_id  word  start_s  end_s  audio_path`, tab-separated).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRecord {
    pub utterance_id: String,
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
    pub audio_path: String,
}

impl AlignmentRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        word: impl Into<String>,
        start_s: f64,
        end_s: f64,
        audio_path: impl Into<String>,
    ) -> Result<Self> {
        if !(start_s >= 0.0 && start_s < end_s) {
            return Err(Error::Dataset(format!(
                "alignment span [{start_s}, {end_s}] must satisfy 0 <= start < end"
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            word: word.into(),
            start_s,
            end_s,
            audio_path: audio_path.into(),
        })
    }
}

/// Parse the alignment TSV, reporting the first malformed line by number.
pub fn read_alignments(path: impl AsRef<Path>) -> Result<Vec<AlignmentRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::AlignmentParse {
                path: path.to_path_buf(),
                line: lineno,
                detail: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let start_s: f64 = fields[2].parse().map_err(|e| Error::AlignmentParse {
            path: path.to_path_buf(),
            line: lineno,
            detail: format!("bad start time '{}': {e}", fields[2]),
        })?;
        let end_s: f64 = fields[3].parse().map_err(|e| Error::AlignmentParse {
            path: path.to_path_buf(),
            line: lineno,
            detail: format!("bad end time '{}': {e}", fields[3]),
        })?;
        let record = AlignmentRecord::new(fields[0], fields[1], start_s, end_s, fields[4])
            .map_err(|e| Error::AlignmentParse {
                path: path.to_path_buf(),
                line: lineno,
                detail: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Extract a fixed-duration excerpt centered on the aligned word; regions
/// outside the utterance are zero-padded.
pub fn excerpt_keyword(
    rec: &AlignmentRecord,
    audio: &Waveform,
    duration_s: f64,
) -> Result<Waveform> {
    let sr = audio.sample_rate_hz() as f64;
    if rec.end_s > audio.duration_s() + 1e-9 {
        return Err(Error::Dataset(format!(
            "alignment [{}, {}] extends past the {:.3}s utterance {}",
            rec.start_s,
            rec.end_s,
            audio.duration_s(),
            rec.utterance_id
        )));
    }
    let total = (duration_s * sr).round() as usize;
    if total == 0 {
        return Err(Error::Dataset("excerpt duration too short".into()));
    }
    let center = (rec.start_s + rec.end_s) / 2.0;
    let start = (center * sr).round() as i64 - (total / 2) as i64;
    let samples = (0..total)
        .map(|i| {
            let idx = start + i as i64;
            if idx >= 0 && (idx as usize) < audio.len() {
                audio.samples()[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, audio.sample_rate_hz())
}

/// One (audio, keyword) example in a split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleManifestEntry {
    pub audio_path: String,
    pub keyword_id: u32,
    pub keyword_text: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Bijective keyword id <-> text table for one dataset version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub keywords: Vec<KeywordEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub id: u32,
    pub text: String,
}

impl KeywordTable {
    pub fn from_texts(texts: &[String]) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for t in texts {
            if !seen.insert(t.clone()) {
                return Err(Error::Dataset(format!("duplicate keyword '{t}'")));
            }
        }
        Ok(Self {
            keywords: texts
                .iter()
                .enumerate()
                .map(|(i, t)| KeywordEntry {
                    id: i as u32,
                    text: t.clone(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn id_of(&self, text: &str) -> Option<u32> {
        self.keywords.iter().find(|k| k.text == text).map(|k| k.id)
    }

    pub fn text_of(&self, id: u32) -> Option<&str> {
        self.keywords
            .iter()
            .find(|k| k.id == id)
            .map(|k| k.text.as_str())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ExampleManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ExampleManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}

/// Default keyword-selection thresholds.
pub const MIN_LETTERS: usize = 6;
pub const MIN_COUNT: usize = 100;
pub const FREQUENCY_CAP: usize = 500;

/// Select keywords with at least `min_letters` letters appearing strictly
/// more than `min_count` times, capping high-frequency keywords to exactly
/// `cap` seeded-uniformly-sampled occurrences. Returns the keyword table
/// (sorted text order) and the retained occurrences per keyword.
pub fn select_keywords(
    alignments: &[AlignmentRecord],
    min_letters: usize,
    min_count: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(KeywordTable, BTreeMap<u32, Vec<AlignmentRecord>>)> {
    if alignments.is_empty() {
        return Err(Error::Dataset("no alignment records supplied".into()));
    }
    let mut by_word: BTreeMap<String, Vec<AlignmentRecord>> = BTreeMap::new();
    for rec in alignments {
        by_word
            .entry(rec.word.to_lowercase())
            .or_default()
            .push(rec.clone());
    }
    let candidates: Vec<(String, Vec<AlignmentRecord>)> = by_word
        .into_iter()
        .filter(|(word, occurrences)| {
            word.chars().filter(|c| c.is_alphabetic()).count() >= min_letters
                && occurrences.len() > min_count
        })
        .collect();
    if candidates.is_empty() {
        let total = alignments.len();
        return Err(Error::Dataset(format!(
            "no keyword passed the filters (letters >= {min_letters}, count > {min_count}) \
             over {total} alignment records"
        )));
    }
    let texts: Vec<String> = candidates.iter().map(|(w, _)| w.clone()).collect();
    let table = KeywordTable::from_texts(&texts)?;
    let mut retained = BTreeMap::new();
    for (id, (_, mut occurrences)) in candidates.into_iter().enumerate() {
        if occurrences.len() > cap {
            // Seeded uniform subsample of exactly `cap` occurrences, kept in
            // original order for determinism.
            let mut indices: Vec<usize> = (0..occurrences.len()).collect();
            indices.shuffle(rng);
            let mut keep: Vec<usize> = indices.into_iter().take(cap).collect();
            keep.sort_unstable();
            occurrences = keep.into_iter().map(|i| occurrences[i].clone()).collect();
        }
        retained.insert(id as u32, occurrences);
    }
    Ok((table, retained))
}

/// Sample `repeats` pairwise-disjoint subsets of exactly `n` examples per
/// keyword. Deterministic given the rng state.
pub fn sample_nshot(
    pool: &[ExampleManifestEntry],
    n: usize,
    repeats: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<ExampleManifestEntry>>> {
    if n == 0 || repeats == 0 {
        return Err(Error::Dataset("n and repeats must be positive".into()));
    }
    let mut by_keyword: BTreeMap<u32, Vec<&ExampleManifestEntry>> = BTreeMap::new();
    for entry in pool {
        by_keyword.entry(entry.keyword_id).or_default().push(entry);
    }
    let need = n * repeats;
    let short: Vec<String> = by_keyword
        .iter()
        .filter(|(_, v)| v.len() < need)
        .map(|(k, v)| format!("keyword {k} has {} examples, need {need}", v.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::Dataset(format!(
            "insufficient pool for {repeats} disjoint {n}-shot subsets: {}",
            short.join("; ")
        )));
    }
    let mut subsets: Vec<Vec<ExampleManifestEntry>> = vec![Vec::new(); repeats];
    for (_, mut entries) in by_keyword {
        entries.shuffle(rng);
        for (r, subset) in subsets.iter_mut().enumerate() {
            subset.extend(entries[r * n..(r + 1) * n].iter().map(|e| (*e).clone()));
        }
    }
    for subset in &mut subsets {
        subset.sort_by(|a, b| (a.keyword_id, &a.audio_path).cmp(&(b.keyword_id, &b.audio_path)));
    }
    Ok(subsets)
}

/// One 2-mix evaluation trial: two clean test examples of different keywords
/// and the convex weights used to superpose them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTrial {
    pub trial_id: u64,
    pub path_a: String,
    pub path_b: String,
    pub keyword_a: u32,
    pub keyword_b: u32,
    pub weights: MixWeights,
    pub trial_seed: u64,
}

pub fn write_mixed_trials(path: impl AsRef<Path>, trials: &[MixedTrial]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for trial in trials {
        serde_json::to_writer(&mut out, trial)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_mixed_trials(path: impl AsRef<Path>) -> Result<Vec<MixedTrial>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut trials = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(serde_json::from_str(&line)?);
    }
    Ok(trials)
}

/// Build `num_trials` 2-mix trials from a clean test manifest: each trial
/// pairs two examples with distinct keywords and renders the superposed
/// audio via `load`. Fully reproducible from the rng state.
pub fn build_2mix_testset<F>(
    clean_test: &[ExampleManifestEntry],
    num_trials: usize,
    rng: &mut ChaCha8Rng,
    mut load: F,
) -> Result<Vec<(MixedTrial, Waveform)>>
where
    F: FnMut(&str) -> Result<Waveform>,
{
    let distinct: std::collections::BTreeSet<u32> =
        clean_test.iter().map(|e| e.keyword_id).collect();
    if distinct.len() < 2 {
        return Err(Error::Dataset(format!(
            "2-mix construction needs >= 2 distinct keywords, got {}",
            distinct.len()
        )));
    }
    let mut out = Vec::with_capacity(num_trials);
    for trial_id in 0..num_trials as u64 {
        let a = rng.gen_range(0..clean_test.len());
        let b = loop {
            let j = rng.gen_range(0..clean_test.len());
            if clean_test[j].keyword_id != clean_test[a].keyword_id {
                break j;
            }
        };
        let weights = sample_mt_weights(rng);
        let trial_seed = rng.gen::<u64>();
        let wave_a = load(&clean_test[a].audio_path)?;
        let wave_b = load(&clean_test[b].audio_path)?;
        let mixed = mix_waveforms(&wave_a, &wave_b, &weights)?;
        out.push((
            MixedTrial {
                trial_id,
                path_a: clean_test[a].audio_path.clone(),
                path_b: clean_test[b].audio_path.clone(),
                keyword_a: clean_test[a].keyword_id,
                keyword_b: clean_test[b].keyword_id,
                weights,
                trial_seed,
            },
            mixed,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::signal::{synth_keyword, DEFAULT_SAMPLE_RATE};

    #[test]
    fn excerpt_centered_window() {
        // 3 s utterance, word span [1.2, 1.6] -> excerpt covers [0.9, 1.9) s.
        let samples: Vec<f64> = (0..48_000).map(|i| (i % 100) as f64 / 200.0).collect();
        let audio = Waveform::new(samples.clone(), DEFAULT_SAMPLE_RATE).unwrap();
        let rec = AlignmentRecord::new("u1", "word", 1.2, 1.6, "u1.wav").unwrap();
        let ex = excerpt_keyword(&rec, &audio, 1.0).unwrap();
        assert_eq!(ex.len(), 16_000);
        // center 1.4 s = sample 22400, so the window is [14400, 30400).
        assert_eq!(ex.samples(), &samples[14_400..30_400]);
    }

    #[test]
    fn excerpt_pads_leading_zeros() {
        // Word span [0.1, 0.3] -> window [-0.3, 0.7) -> 0.3 s of zeros.
        let samples: Vec<f64> = (0..16_000).map(|i| ((i % 50) as f64 - 25.0) / 50.0).collect();
        let audio = Waveform::new(samples.clone(), DEFAULT_SAMPLE_RATE).unwrap();
        let rec = AlignmentRecord::new("u1", "word", 0.1, 0.3, "u1.wav").unwrap();
        let ex = excerpt_keyword(&rec, &audio, 1.0).unwrap();
        assert_eq!(ex.len(), 16_000);
        let pad = (0.3 * 16_000.0) as usize;
        assert!(ex.samples()[..pad].iter().all(|&s| s == 0.0));
        assert_eq!(&ex.samples()[pad..], &samples[..16_000 - pad]);
    }

    #[test]
    fn excerpt_of_centered_word_in_one_second_file_is_identity() {
        let samples: Vec<f64> = (0..16_000).map(|i| ((i % 64) as f64 - 32.0) / 64.0).collect();
        let audio = Waveform::new(samples.clone(), DEFAULT_SAMPLE_RATE).unwrap();
        let rec = AlignmentRecord::new("u1", "word", 0.4, 0.6, "u1.wav").unwrap();
        let ex = excerpt_keyword(&rec, &audio, 1.0).unwrap();
        assert_eq!(ex.samples(), audio.samples());
    }

    #[test]
    fn excerpt_rejects_alignment_outside_audio() {
        let audio = Waveform::new(vec![0.0; 8000], DEFAULT_SAMPLE_RATE).unwrap();
        let rec = AlignmentRecord::new("u1", "word", 0.4, 0.9, "u1.wav").unwrap();
        assert!(excerpt_keyword(&rec, &audio, 1.0).is_err());
    }

    fn occurrences(word: &str, count: usize) -> Vec<AlignmentRecord> {
        (0..count)
            .map(|i| {
                AlignmentRecord::new(
                    format!("utt-{word}-{i}"),
                    word,
                    0.5,
                    1.0,
                    format!("{word}-{i}.wav"),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn keyword_selection_applies_letter_count_and_cap() {
        let mut alignments = Vec::new();
        alignments.extend(occurrences("cat", 400)); // 3 letters: excluded
        alignments.extend(occurrences("mixture", 750)); // capped to 500
        alignments.extend(occurrences("signals", 150)); // kept whole
        alignments.extend(occurrences("deeper", 90)); // too rare: excluded
        let mut rng = seeds::stream(3, "select");
        let (table, retained) =
            select_keywords(&alignments, MIN_LETTERS, MIN_COUNT, FREQUENCY_CAP, &mut rng).unwrap();
        assert_eq!(table.len(), 2);
        assert!(table.id_of("cat").is_none());
        assert!(table.id_of("deeper").is_none());
        let mixture = table.id_of("mixture").unwrap();
        let signals = table.id_of("signals").unwrap();
        assert_eq!(retained[&mixture].len(), 500);
        assert_eq!(retained[&signals].len(), 150);
        // Bijection between ids and texts.
        assert_eq!(table.text_of(mixture), Some("mixture"));
        assert_eq!(table.text_of(signals), Some("signals"));
    }

    #[test]
    fn keyword_selection_rejects_empty_result() {
        let alignments = occurrences("cat", 300);
        let mut rng = seeds::stream(4, "select");
        let err = select_keywords(&alignments, 6, 100, 500, &mut rng).unwrap_err();
        assert!(err.to_string().contains("no keyword passed"), "{err}");
    }

    #[test]
    fn keyword_selection_is_deterministic() {
        let alignments = occurrences("mixture", 750);
        let pick = |seed| {
            let mut rng = seeds::stream(seed, "select");
            let (_, retained) = select_keywords(&alignments, 6, 100, 500, &mut rng).unwrap();
            retained[&0].iter().map(|r| r.utterance_id.clone()).collect::<Vec<_>>()
        };
        assert_eq!(pick(5), pick(5));
        assert_ne!(pick(5), pick(6));
    }

    fn pool_entries(keywords: &[(u32, usize)]) -> Vec<ExampleManifestEntry> {
        let mut entries = Vec::new();
        for &(kw, count) in keywords {
            for i in 0..count {
                entries.push(ExampleManifestEntry {
                    audio_path: format!("kw{kw}-{i:04}.wav"),
                    keyword_id: kw,
                    keyword_text: format!("kw{kw}"),
                    split: Split::Train,
                });
            }
        }
        entries
    }

    #[test]
    fn nshot_perfect_partition_and_disjointness() {
        let pool = pool_entries(&[(0, 75), (1, 75)]);
        let mut rng = seeds::stream(7, "nshot");
        let subsets = sample_nshot(&pool, 15, 5, &mut rng).unwrap();
        assert_eq!(subsets.len(), 5);
        let mut seen = std::collections::BTreeSet::new();
        for subset in &subsets {
            assert_eq!(subset.len(), 30);
            for kw in [0u32, 1] {
                assert_eq!(
                    subset.iter().filter(|e| e.keyword_id == kw).count(),
                    15,
                    "keyword {kw}"
                );
            }
            for entry in subset {
                assert!(
                    seen.insert(entry.audio_path.clone()),
                    "duplicate {}",
                    entry.audio_path
                );
            }
        }
        // A perfect partition uses up the whole pool.
        assert_eq!(seen.len(), 150);
    }

    #[test]
    fn nshot_degenerate_single_draw() {
        let pool = pool_entries(&[(0, 3), (1, 2)]);
        let mut rng = seeds::stream(8, "nshot");
        let subsets = sample_nshot(&pool, 1, 1, &mut rng).unwrap();
        assert_eq!(subsets.len(), 1);
        assert_eq!(subsets[0].len(), 2);
    }

    #[test]
    fn nshot_rejects_insufficient_pool_listing_keywords() {
        let pool = pool_entries(&[(0, 75), (1, 40), (2, 20)]);
        let mut rng = seeds::stream(9, "nshot");
        let err = sample_nshot(&pool, 15, 5, &mut rng).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("keyword 1"), "{msg}");
        assert!(msg.contains("keyword 2"), "{msg}");
        assert!(!msg.contains("keyword 0"), "{msg}");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entries = pool_entries(&[(0, 3), (1, 2)]);
        write_manifest(&path, &entries).unwrap();
        let loaded = read_manifest(&path).unwrap();
        assert_eq!(entries, loaded);
    }

    #[test]
    fn two_mix_trials_pair_distinct_keywords_deterministically() {
        let entries = pool_entries(&[(0, 4), (1, 4), (2, 4)]);
        let load = |path: &str| -> crate::error::Result<Waveform> {
            // Derive deterministic audio from the path.
            let kw: u32 = path[2..3].parse().unwrap();
            let idx: u64 = path[4..8].parse().unwrap();
            Ok(synth_keyword(kw, idx, 0.05))
        };
        let run = || {
            let mut rng = seeds::stream(11, "2mix");
            build_2mix_testset(&entries, 20, &mut rng, load).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 20);
        for ((ta, wa), (tb, wb)) in a.iter().zip(&b) {
            assert_ne!(ta.keyword_a, ta.keyword_b);
            assert_eq!(ta, tb);
            assert_eq!(wa.samples(), wb.samples());
        }
    }

    #[test]
    fn two_mix_rejects_single_keyword_test_set() {
        let entries = pool_entries(&[(0, 4)]);
        let mut rng = seeds::stream(12, "2mix");
        let err =
            build_2mix_testset(&entries, 5, &mut rng, |_| unreachable!("never loads")).unwrap_err();
        assert!(err.to_string().contains("distinct keywords"), "{err}");
    }

    #[test]
    fn mixed_trial_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        let trials = vec![MixedTrial {
            trial_id: 0,
            path_a: "a.wav".into(),
            path_b: "b.wav".into(),
            keyword_a: 0,
            keyword_b: 1,
            weights: MixWeights::new(0.4, 0.6).unwrap(),
            trial_seed: 99,
        }];
        write_mixed_trials(&path, &trials).unwrap();
        assert_eq!(read_mixed_trials(&path).unwrap(), trials);
    }
}
