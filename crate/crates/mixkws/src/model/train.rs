//! Epoch-based training loop: strategy-constructed pairs, Adam updates, and
//! averaging of the last checkpoints into the delivered model.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{fbank, FeatureMatrix};
use crate::model::{adam_step, average_checkpoints, bce_loss, forward, ModelState};
use crate::seeds;
use crate::strategy::{epoch_pairs, ExamplePool, LabelVector, StrategyConfig};

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Number of trailing per-epoch checkpoints averaged into the final model.
    pub checkpoint_window: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            checkpoint_window: 10,
            seed: 0,
        }
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Top-1 accuracy over this epoch's un-mixed rows (absent when the
    /// strategy produced none, e.g. mixup).
    pub clean_top1: Option<f64>,
}

/// Train `state` for `opts.epochs` epochs of strategy-constructed batches.
/// One pass over the clean pool per epoch; the returned model is the
/// elementwise average of the trailing `checkpoint_window` per-epoch
/// checkpoints. Fully deterministic given `opts.seed`.
pub fn train(
    state: &ModelState,
    pool: &ExamplePool,
    strategy: &StrategyConfig,
    opts: &TrainOptions,
) -> Result<(ModelState, Vec<EpochLog>)> {
    if pool.num_keywords() != state.num_keywords() {
        return Err(Error::ShapeMismatch(format!(
            "pool has {} keywords, head has {}",
            pool.num_keywords(),
            state.num_keywords()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if opts.epochs == 0 {
        return Ok((state.clone(), Vec::new()));
    }

    // Clean features are pure per pool index; compute them once on demand.
    let feature_cache: Vec<OnceLock<FeatureMatrix>> =
        (0..pool.len()).map(|_| OnceLock::new()).collect();
    let clean_features = |base: usize| -> Result<FeatureMatrix> {
        if let Some(f) = feature_cache[base].get() {
            return Ok(f.clone());
        }
        let f = fbank(&pool.examples()[base].waveform)?;
        Ok(feature_cache[base].get_or_init(|| f).clone())
    };

    let mut working = state.clone();
    let mut window: VecDeque<ModelState> = VecDeque::new();
    let mut logs = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let mut rng = seeds::stream(opts.seed, &format!("train/epoch/{epoch}"));
        let pairs = epoch_pairs(strategy, pool, &mut rng)?;

        let mut epoch_loss = 0.0;
        let mut rows_seen = 0usize;
        let mut clean_hits = 0usize;
        let mut clean_rows = 0usize;

        for (batch_idx, chunk) in pairs.chunks(opts.batch_size).enumerate() {
            // Feature extraction per row (cached for un-mixed rows).
            let rows: Vec<(FeatureMatrix, LabelVector, bool)> = chunk
                .par_iter()
                .map(|(base, (wave, label, mixspec))| {
                    let features = if mixspec.is_none() {
                        clean_features(*base)?
                    } else {
                        fbank(wave)?
                    };
                    Ok((features, label.clone(), mixspec.is_none()))
                })
                .collect::<Result<_>>()?;

            let mut batch = Vec::with_capacity(rows.len());
            let mut targets = Vec::with_capacity(rows.len());
            let mut is_clean = Vec::with_capacity(rows.len());
            for (f, l, c) in rows {
                batch.push(f);
                targets.push(l);
                is_clean.push(c);
            }

            let (logits, cache) = forward(&working, &batch)?;
            let (loss, dlogits) = bce_loss(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("loss = {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            rows_seen += batch.len();

            for ((row_logits, target), clean) in logits.iter().zip(&targets).zip(&is_clean) {
                if *clean {
                    clean_rows += 1;
                    if argmax(row_logits) == argmax(target.values()) {
                        clean_hits += 1;
                    }
                }
            }

            let grads = crate::model::backward(&working, &cache, &dlogits)?;
            adam_step(&mut working, &grads, opts.learning_rate)?;
        }

        logs.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / rows_seen as f64,
            clean_top1: (clean_rows > 0).then(|| clean_hits as f64 / clean_rows as f64),
        });

        window.push_back(working.clone());
        if window.len() > opts.checkpoint_window.max(1) {
            window.pop_front();
        }
    }

    let snapshots: Vec<ModelState> = window.into_iter().collect();
    let averaged = average_checkpoints(&snapshots)?;
    Ok((averaged, logs))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
