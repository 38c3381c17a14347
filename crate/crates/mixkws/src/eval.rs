//! Detection-score evaluation: pooled equal error rate, top-k accuracy and
//! mean/std aggregation over repeated few-shot subsets.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::fbank;
use crate::model::{detection_scores, ModelState};
use crate::signal::Waveform;

/// One detection trial: the score the model assigned to one keyword on one
/// test utterance, and whether that keyword was actually present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub trial_id: u64,
    pub keyword_id: u32,
    pub score: f64,
    pub is_target: bool,
}

/// Flat pooled list of detection trials; the input to all metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionLog {
    pub entries: Vec<DetectionEntry>,
}

impl DetectionLog {
    pub fn new(entries: Vec<DetectionEntry>) -> Self {
        Self { entries }
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
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
        Ok(Self { entries })
    }
}

/// Pooled equal error rate.
///
/// Sweeps thresholds over the sorted score set with the convention
/// `FRR(t) = P(target score < t)`, `FAR(t) = P(non-target score >= t)` and
/// linearly interpolates between the two thresholds where `FAR - FRR`
/// changes sign.
pub fn compute_eer(log: &DetectionLog) -> Result<f64> {
    let mut target_scores = Vec::new();
    let mut nontarget_scores = Vec::new();
    for e in &log.entries {
        if !e.score.is_finite() {
            return Err(Error::NonFinite(format!(
                "score {} in trial {}",
                e.score, e.trial_id
            )));
        }
        if e.is_target {
            target_scores.push(e.score);
        } else {
            nontarget_scores.push(e.score);
        }
    }
    if target_scores.is_empty() || nontarget_scores.is_empty() {
        return Err(Error::DegenerateLog(format!(
            "need at least one target and one non-target entry, got {} / {}",
            target_scores.len(),
            nontarget_scores.len()
        )));
    }
    target_scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    nontarget_scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

    let mut thresholds: Vec<f64> = log.entries.iter().map(|e| e.score).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();

    let n_t = target_scores.len() as f64;
    let n_n = nontarget_scores.len() as f64;
    let frr_at = |t: f64| -> f64 {
        let below = target_scores.partition_point(|&s| s < t);
        below as f64 / n_t
    };
    let far_at = |t: f64| -> f64 {
        let below = nontarget_scores.partition_point(|&s| s < t);
        (n_n - below as f64) / n_n
    };

    // Operating points at every distinct score plus a sentinel past the
    // maximum (reject everything). FAR - FRR is non-increasing along this
    // sweep and brackets zero.
    let mut points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (far_at(t), frr_at(t)))
        .collect();
    points.push((0.0, 1.0));

    for k in 0..points.len() - 1 {
        let (far0, frr0) = points[k];
        let (far1, frr1) = points[k + 1];
        let d0 = far0 - frr0;
        let d1 = far1 - frr1;
        if d0 >= 0.0 && d1 <= 0.0 {
            if d0 == d1 {
                return Ok(frr0);
            }
            let alpha = d0 / (d0 - d1);
            return Ok(frr0 + alpha * (frr1 - frr0));
        }
    }
    Err(Error::Metric(
        "no FAR/FRR crossing found (scores out of order?)".into(),
    ))
}

/// Per-trial score vector with the set of keywords truly present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialScores {
    pub trial_id: u64,
    pub scores: Vec<f64>,
    /// Sorted distinct keyword ids present in the trial.
    pub truth: Vec<u32>,
}

/// Fraction of trials whose `k` highest-scoring keywords equal the truth set.
/// Ties break toward the lower keyword id.
pub fn topk_accuracy(trials: &[TrialScores], k: usize) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Metric("no trials to score".into()));
    }
    let mut hits = 0usize;
    for trial in trials {
        if trial.truth.len() != k {
            return Err(Error::Metric(format!(
                "trial {} has truth size {}, expected {k}",
                trial.trial_id,
                trial.truth.len()
            )));
        }
        if k > trial.scores.len() {
            return Err(Error::Metric(format!(
                "k = {k} exceeds {} keywords",
                trial.scores.len()
            )));
        }
        let mut order: Vec<usize> = (0..trial.scores.len()).collect();
        order.sort_by(|&a, &b| {
            trial.scores[b]
                .partial_cmp(&trial.scores[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let mut top: Vec<u32> = order[..k].iter().map(|&i| i as u32).collect();
        top.sort_unstable();
        if top == trial.truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials.len() as f64)
}

/// Metrics of a single evaluation run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricReport {
    pub eer: f64,
    pub topk_acc: f64,
    pub k: usize,
    pub n_trials: usize,
}

/// Mean plus sample standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.len() < 2 {
        return Err(Error::Metric(format!(
            "need at least 2 values for a standard deviation, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AggregateReport {
    pub acc: MeanStd,
    pub eer: MeanStd,
    pub k: usize,
    pub runs: usize,
}

/// Mean and sample standard deviation of accuracy and EER over repeated
/// few-shot subsets. Requires at least two reports with a common `k`.
pub fn aggregate_runs(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::Metric(format!(
            "need at least 2 reports to aggregate, got {}",
            reports.len()
        )));
    }
    let k = reports[0].k;
    if reports.iter().any(|r| r.k != k) {
        return Err(Error::Metric("reports disagree on k".into()));
    }
    let accs: Vec<f64> = reports.iter().map(|r| r.topk_acc).collect();
    let eers: Vec<f64> = reports.iter().map(|r| r.eer).collect();
    Ok(AggregateReport {
        acc: mean_std(&accs)?,
        eer: mean_std(&eers)?,
        k,
        runs: reports.len(),
    })
}

/// One test utterance to score: rendered audio plus its ground-truth keyword
/// set (one keyword for clean trials, two for 2-mix trials).
#[derive(Debug, Clone)]
pub struct ScoreItem {
    pub trial_id: u64,
    pub waveform: Waveform,
    pub truth: Vec<u32>,
}

/// Score every trial with the model's sigmoid keyword detectors. Each
/// `(trial, keyword)` pair contributes one pooled detection entry.
pub fn score_testset(
    model: &ModelState,
    items: &[ScoreItem],
) -> Result<(DetectionLog, Vec<TrialScores>)> {
    if items.is_empty() {
        return Err(Error::Metric("no trials to score".into()));
    }
    let k = model.num_keywords();
    for item in items {
        if item.truth.iter().any(|&kw| kw as usize >= k) {
            return Err(Error::Metric(format!(
                "trial {} references keyword outside the model's {k}-keyword head",
                item.trial_id
            )));
        }
    }
    let trials: Vec<TrialScores> = items
        .par_iter()
        .map(|item| {
            let features = fbank(&item.waveform)?;
            let scores = detection_scores(model, &features)?;
            let mut truth = item.truth.clone();
            truth.sort_unstable();
            truth.dedup();
            Ok(TrialScores {
                trial_id: item.trial_id,
                scores,
                truth,
            })
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(items.len() * k);
    for trial in &trials {
        for (kw, &score) in trial.scores.iter().enumerate() {
            entries.push(DetectionEntry {
                trial_id: trial.trial_id,
                keyword_id: kw as u32,
                score,
                is_target: trial.truth.binary_search(&(kw as u32)).is_ok(),
            });
        }
    }
    Ok((DetectionLog::new(entries), trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_from(targets: &[f64], nontargets: &[f64]) -> DetectionLog {
        let mut entries = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            entries.push(DetectionEntry {
                trial_id: i as u64,
                keyword_id: 0,
                score: s,
                is_target: true,
            });
        }
        for (i, &s) in nontargets.iter().enumerate() {
            entries.push(DetectionEntry {
                trial_id: (targets.len() + i) as u64,
                keyword_id: 1,
                score: s,
                is_target: false,
            });
        }
        DetectionLog::new(entries)
    }

    /// Exhaustive midpoint-threshold oracle used to pin expected EER values.
    pub(crate) fn eer_oracle(log: &DetectionLog) -> f64 {
        let targets: Vec<f64> = log
            .entries
            .iter()
            .filter(|e| e.is_target)
            .map(|e| e.score)
            .collect();
        let nontargets: Vec<f64> = log
            .entries
            .iter()
            .filter(|e| !e.is_target)
            .map(|e| e.score)
            .collect();
        let mut scores: Vec<f64> = log.entries.iter().map(|e| e.score).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.dedup();
        // Candidate thresholds: below the minimum, every midpoint between
        // consecutive distinct scores, above the maximum.
        let mut candidates = vec![scores[0] - 1.0];
        for pair in scores.windows(2) {
            candidates.push(0.5 * (pair[0] + pair[1]));
        }
        candidates.push(scores[scores.len() - 1] + 1.0);

        let frr = |t: f64| {
            targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64
        };
        let far = |t: f64| {
            nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64
        };
        let points: Vec<(f64, f64)> = candidates.iter().map(|&t| (far(t), frr(t))).collect();
        for k in 0..points.len() - 1 {
            let d0 = points[k].0 - points[k].1;
            let d1 = points[k + 1].0 - points[k + 1].1;
            if d0 >= 0.0 && d1 <= 0.0 {
                if d0 == d1 {
                    return points[k].1;
                }
                let alpha = d0 / (d0 - d1);
                return points[k].1 + alpha * (points[k + 1].1 - points[k].1);
            }
        }
        unreachable!("crossing always exists");
    }

    #[test]
    fn eer_worked_example_is_one_third() {
        let log = log_from(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]);
        let eer = compute_eer(&log).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-12, "{eer}");
        assert!((eer_oracle(&log) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn eer_separated_scores() {
        let log = log_from(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1]);
        assert_eq!(compute_eer(&log).unwrap(), 0.0);
        // Flip all labels: perfectly anti-separated.
        let flipped = DetectionLog::new(
            log.entries
                .iter()
                .map(|e| DetectionEntry {
                    is_target: !e.is_target,
                    ..e.clone()
                })
                .collect(),
        );
        assert_eq!(compute_eer(&flipped).unwrap(), 1.0);
    }

    #[test]
    fn eer_rejects_degenerate_logs() {
        let log = log_from(&[0.5, 0.6], &[]);
        assert!(matches!(
            compute_eer(&log).unwrap_err(),
            Error::DegenerateLog(_)
        ));
        let log = log_from(&[], &[0.5]);
        assert!(compute_eer(&log).is_err());
    }

    #[test]
    fn eer_matches_oracle_on_randomized_logs_with_ties() {
        use rand::Rng;
        let mut rng = crate::seeds::stream(33, "eer-random");
        for case in 0..300 {
            let n = rng.gen_range(10..200);
            let entries: Vec<DetectionEntry> = (0..n)
                .map(|i| DetectionEntry {
                    trial_id: i as u64,
                    keyword_id: 0,
                    // Quantized scores force plenty of ties.
                    score: f64::from(rng.gen_range(0..20u32)) / 20.0,
                    is_target: rng.gen_bool(0.4),
                })
                .collect();
            let log = DetectionLog::new(entries);
            let has_t = log.entries.iter().any(|e| e.is_target);
            let has_n = log.entries.iter().any(|e| !e.is_target);
            if !(has_t && has_n) {
                continue;
            }
            let fast = compute_eer(&log).unwrap();
            let slow = eer_oracle(&log);
            assert!((fast - slow).abs() < 1e-9, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let log = log_from(&[0.9, 0.8, 0.3, 0.55], &[0.7, 0.2, 0.1, 0.55]);
        let base = compute_eer(&log).unwrap();
        let transformed = DetectionLog::new(
            log.entries
                .iter()
                .map(|e| DetectionEntry {
                    score: (e.score * 4.0).exp(),
                    ..e.clone()
                })
                .collect(),
        );
        let t = compute_eer(&transformed).unwrap();
        assert!((base - t).abs() < 1e-9, "{base} vs {t}");
    }

    fn trial(id: u64, scores: &[f64], truth: &[u32]) -> TrialScores {
        TrialScores {
            trial_id: id,
            scores: scores.to_vec(),
            truth: truth.to_vec(),
        }
    }

    #[test]
    fn topk_worked_examples() {
        let t = trial(0, &[0.9, 0.8, 0.1, 0.05], &[0, 1]);
        assert_eq!(topk_accuracy(&[t], 2).unwrap(), 1.0);
        let t = trial(0, &[0.9, 0.1, 0.8, 0.05], &[0, 1]);
        assert_eq!(topk_accuracy(&[t], 2).unwrap(), 0.0);
        let t = trial(0, &[0.1, 0.9, 0.2], &[1]);
        assert_eq!(topk_accuracy(&[t], 1).unwrap(), 1.0);
    }

    #[test]
    fn topk_breaks_ties_toward_lower_keyword_id() {
        let t = trial(0, &[0.5, 0.5, 0.5], &[0, 1]);
        assert_eq!(topk_accuracy(&[t], 2).unwrap(), 1.0);
        let t = trial(0, &[0.5, 0.5, 0.5], &[1, 2]);
        assert_eq!(topk_accuracy(&[t], 2).unwrap(), 0.0);
    }

    #[test]
    fn topk_rejects_truth_size_mismatch() {
        let t = trial(0, &[0.5, 0.4], &[0]);
        assert!(topk_accuracy(&[t], 2).is_err());
    }

    #[test]
    fn topk_invariant_under_monotone_transform() {
        use rand::Rng;
        let mut rng = crate::seeds::stream(34, "topk-mono");
        let trials: Vec<TrialScores> = (0..50)
            .map(|i| {
                let scores: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let mut order: Vec<usize> = (0..6).collect();
                order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
                let mut truth = vec![order[0] as u32, order[3] as u32];
                truth.sort_unstable();
                TrialScores {
                    trial_id: i,
                    scores,
                    truth,
                }
            })
            .collect();
        let base = topk_accuracy(&trials, 2).unwrap();
        let mapped: Vec<TrialScores> = trials
            .iter()
            .map(|t| TrialScores {
                trial_id: t.trial_id,
                scores: t.scores.iter().map(|s| s.tanh() * 10.0).collect(),
                truth: t.truth.clone(),
            })
            .collect();
        assert_eq!(base, topk_accuracy(&mapped, 2).unwrap());
    }

    #[test]
    fn aggregate_worked_examples() {
        let mk = |acc: f64, eer: f64| MetricReport {
            eer,
            topk_acc: acc,
            k: 1,
            n_trials: 10,
        };
        let agg = aggregate_runs(&[mk(0.8, 0.1), mk(0.8, 0.1), mk(0.8, 0.1)]).unwrap();
        assert!((agg.acc.mean - 0.8).abs() < 1e-12);
        assert!(agg.acc.std.abs() < 1e-12);
        let agg = aggregate_runs(&[mk(0.7, 0.2), mk(0.9, 0.3)]).unwrap();
        assert!((agg.acc.mean - 0.8).abs() < 1e-12);
        assert!((agg.acc.std - (0.02f64).sqrt()).abs() < 1e-12);
        assert!((agg.acc.std - 0.141_421_356).abs() < 1e-6);
        assert!(aggregate_runs(&[mk(0.7, 0.2)]).is_err());
    }

    #[test]
    fn aggregate_matches_recomputation_and_is_permutation_invariant() {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = crate::seeds::stream(35, "agg");
        let mut reports: Vec<MetricReport> = (0..5)
            .map(|_| MetricReport {
                eer: rng.gen_range(0.0..0.5),
                topk_acc: rng.gen_range(0.3..1.0),
                k: 2,
                n_trials: 100,
            })
            .collect();
        let agg = aggregate_runs(&reports).unwrap();
        let n = reports.len() as f64;
        let mean: f64 = reports.iter().map(|r| r.topk_acc).sum::<f64>() / n;
        let var: f64 = reports
            .iter()
            .map(|r| (r.topk_acc - mean) * (r.topk_acc - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!((agg.acc.mean - mean).abs() < 1e-12);
        assert!((agg.acc.std - var.sqrt()).abs() < 1e-12);

        reports.shuffle(&mut rng);
        let shuffled = aggregate_runs(&reports).unwrap();
        assert!((shuffled.acc.mean - agg.acc.mean).abs() < 1e-12);
    }

    #[test]
    fn detection_log_round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = log_from(&[0.25, 0.5], &[0.125]);
        log.write_jsonl(&path).unwrap();
        let loaded = DetectionLog::read_jsonl(&path).unwrap();
        assert_eq!(log, loaded);
    }
}
