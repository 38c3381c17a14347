//! Training-pair construction under the three strategies: clean training,
//! mixup (interpolated waveforms and labels) and mix-training (superposed
//! waveforms with a k-hot union label).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{convex_mix, mix_waveforms, sample_mt_weights, MixWeights, Waveform};

pub const MIXUP_BETA_ALPHA: f64 = 0.2;
pub const MIXUP_BETA_BETA: f64 = 0.2;

/// Per-keyword target vector with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidLabel("entries must lie in [0, 1]".into()));
        }
        Ok(Self(values))
    }

    pub fn one_hot(index: usize, len: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::InvalidLabel(format!(
                "one-hot index {index} out of range for length {len}"
            )));
        }
        let mut values = vec![0.0; len];
        values[index] = 1.0;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn is_one_hot(&self) -> bool {
        self.is_binary() && self.0.iter().filter(|&&v| v == 1.0).count() == 1
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }
}

/// k-hot union of two binary labels (elementwise logical OR).
pub fn label_union(a: &LabelVector, b: &LabelVector) -> Result<LabelVector> {
    if a.len() != b.len() {
        return Err(Error::InvalidLabel(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::InvalidLabel(
            "label union requires binary entries".into(),
        ));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| if x == 1.0 || y == 1.0 { 1.0 } else { 0.0 })
        .collect();
    Ok(LabelVector(values))
}

/// Linear interpolation of two one-hot labels with the mixup coefficient.
pub fn mixup_label(a: &LabelVector, b: &LabelVector, lam: f64) -> Result<LabelVector> {
    if a.len() != b.len() {
        return Err(Error::InvalidLabel(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !a.is_one_hot() || !b.is_one_hot() {
        return Err(Error::InvalidLabel("mixup parents must be one-hot".into()));
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidLabel(format!("lambda {lam} outside [0, 1]")));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| lam * x + (1.0 - lam) * y)
        .collect();
    LabelVector::new(values)
}

/// Draw a mixup coefficient from `Beta(0.2, 0.2)`, clamped into the open
/// unit interval to guard against a draw rounding to exactly 0 or 1.
pub fn sample_mixup_lambda(rng: &mut ChaCha8Rng) -> f64 {
    let beta = Beta::new(MIXUP_BETA_ALPHA, MIXUP_BETA_BETA).expect("valid Beta parameters");
    beta.sample(rng).clamp(1e-12, 1.0 - 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Clean,
    Mixup,
    Mt,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Clean => "clean",
            StrategyKind::Mixup => "mixup",
            StrategyKind::Mt => "mt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(StrategyKind::Clean),
            "mixup" => Ok(StrategyKind::Mixup),
            "mt" => Ok(StrategyKind::Mt),
            other => Err(Error::InvalidStrategy(format!(
                "unknown strategy '{other}' (expected clean | mixup | mt)"
            ))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Fraction of un-mixed examples per epoch; only meaningful for MT.
    pub clean_fraction: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, clean_fraction: f64) -> Result<Self> {
        if kind == StrategyKind::Mt && !(0.0..=1.0).contains(&clean_fraction) {
            return Err(Error::InvalidStrategy(format!(
                "clean_fraction {clean_fraction} outside [0, 1]"
            )));
        }
        Ok(Self {
            kind,
            clean_fraction,
        })
    }

    pub fn clean() -> Self {
        Self {
            kind: StrategyKind::Clean,
            clean_fraction: 0.0,
        }
    }

    pub fn mixup() -> Self {
        Self {
            kind: StrategyKind::Mixup,
            clean_fraction: 0.0,
        }
    }

    pub fn mt(clean_fraction: f64) -> Result<Self> {
        Self::new(StrategyKind::Mt, clean_fraction)
    }
}

/// How one training example was mixed, for reproducibility logs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub source_a: usize,
    pub source_b: usize,
    pub mixing: Mixing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mixing {
    MtWeights(MixWeights),
    MixupLambda(f64),
}

/// One clean example in a training pool.
#[derive(Debug, Clone)]
pub struct PoolExample {
    pub waveform: Waveform,
    pub keyword_id: u32,
}

/// Indexed clean examples over a fixed keyword inventory of size
/// `num_keywords`; label vectors produced by the strategies have that length.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    examples: Vec<PoolExample>,
    num_keywords: usize,
    distinct_keywords: usize,
}

impl ExamplePool {
    pub fn new(examples: Vec<PoolExample>, num_keywords: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Dataset("example pool is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ex in &examples {
            if ex.keyword_id as usize >= num_keywords {
                return Err(Error::Dataset(format!(
                    "keyword id {} out of range for {num_keywords} keywords",
                    ex.keyword_id
                )));
            }
            seen.insert(ex.keyword_id);
        }
        Ok(Self {
            examples,
            num_keywords,
            distinct_keywords: seen.len(),
        })
    }

    pub fn examples(&self) -> &[PoolExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_keywords(&self) -> usize {
        self.num_keywords
    }

    pub fn distinct_keywords(&self) -> usize {
        self.distinct_keywords
    }

    fn one_hot(&self, index: usize) -> LabelVector {
        LabelVector::one_hot(self.examples[index].keyword_id as usize, self.num_keywords)
            .expect("keyword ids validated at construction")
    }

    /// Uniform draw of a partner with a keyword different from `base`'s.
    fn draw_partner(&self, base: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        if self.distinct_keywords < 2 {
            return Err(Error::InvalidStrategy(
                "mixing strategies require at least two distinct keywords in the pool".into(),
            ));
        }
        let base_kw = self.examples[base].keyword_id;
        loop {
            let j = rng.gen_range(0..self.examples.len());
            if self.examples[j].keyword_id != base_kw {
                return Ok(j);
            }
        }
    }
}

/// A constructed training pair: model input, target label, and the mixing
/// provenance when two sources were combined.
pub type TrainingPair = (Waveform, LabelVector, Option<MixSpec>);

/// Build one training pair with the base example drawn uniformly from the
/// pool. Deterministic given the rng state.
pub fn make_training_pair(
    strategy: &StrategyConfig,
    pool: &ExamplePool,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPair> {
    let base = rng.gen_range(0..pool.len());
    make_training_pair_for_base(strategy, pool, base, rng)
}

/// Build one training pair for a fixed base example; used by the epoch
/// scheduler so every clean example serves as a base exactly once per epoch.
pub fn make_training_pair_for_base(
    strategy: &StrategyConfig,
    pool: &ExamplePool,
    base: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPair> {
    if base >= pool.len() {
        return Err(Error::Dataset(format!(
            "base index {base} out of range for pool of {}",
            pool.len()
        )));
    }
    match strategy.kind {
        StrategyKind::Clean => Ok((
            pool.examples[base].waveform.clone(),
            pool.one_hot(base),
            None,
        )),
        StrategyKind::Mixup => {
            let partner = pool.draw_partner(base, rng)?;
            let lam = sample_mixup_lambda(rng);
            let wave = convex_mix(
                &pool.examples[base].waveform,
                &pool.examples[partner].waveform,
                lam,
                1.0 - lam,
            )?;
            let label = mixup_label(&pool.one_hot(base), &pool.one_hot(partner), lam)?;
            Ok((
                wave,
                label,
                Some(MixSpec {
                    source_a: base,
                    source_b: partner,
                    mixing: Mixing::MixupLambda(lam),
                }),
            ))
        }
        StrategyKind::Mt => {
            if pool.distinct_keywords < 2 && strategy.clean_fraction < 1.0 {
                return Err(Error::InvalidStrategy(
                    "mixing strategies require at least two distinct keywords in the pool".into(),
                ));
            }
            let clean = rng.gen_range(0.0..1.0) < strategy.clean_fraction;
            if clean {
                return Ok((
                    pool.examples[base].waveform.clone(),
                    pool.one_hot(base),
                    None,
                ));
            }
            let partner = pool.draw_partner(base, rng)?;
            let w = sample_mt_weights(rng);
            let wave = mix_waveforms(
                &pool.examples[base].waveform,
                &pool.examples[partner].waveform,
                &w,
            )?;
            let label = label_union(&pool.one_hot(base), &pool.one_hot(partner))?;
            Ok((
                wave,
                label,
                Some(MixSpec {
                    source_a: base,
                    source_b: partner,
                    mixing: Mixing::MtWeights(w),
                }),
            ))
        }
    }
}

/// All training pairs for one epoch: clean examples in shuffled order as
/// bases, each paired according to the strategy. Each entry carries its base
/// pool index so callers can reuse cached per-example features.
pub fn epoch_pairs(
    strategy: &StrategyConfig,
    pool: &ExamplePool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, TrainingPair)>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|base| Ok((base, make_training_pair_for_base(strategy, pool, base, rng)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::signal::synth_keyword;

    fn label(values: &[f64]) -> LabelVector {
        LabelVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn union_examples() {
        let u = label_union(&label(&[1.0, 0.0, 0.0]), &label(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(u.values(), &[1.0, 1.0, 0.0]);
        let x = label(&[1.0, 1.0, 0.0]);
        assert_eq!(label_union(&x, &x).unwrap(), x);
        let u = label_union(&label(&[1.0, 1.0, 0.0]), &label(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(u.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn union_rejects_bad_inputs() {
        assert!(label_union(&label(&[1.0]), &label(&[1.0, 0.0])).is_err());
        assert!(label_union(&label(&[0.5, 0.5]), &label(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn mixup_label_examples() {
        let m = mixup_label(&label(&[1.0, 0.0]), &label(&[0.0, 1.0]), 0.25).unwrap();
        assert_eq!(m.values(), &[0.25, 0.75]);
        let a = label(&[1.0, 0.0]);
        let m = mixup_label(&a, &label(&[0.0, 1.0]), 1.0).unwrap();
        assert_eq!(m, a);
        let m = mixup_label(&label(&[1.0, 0.0, 0.0]), &label(&[0.0, 0.0, 1.0]), 0.5).unwrap();
        assert_eq!(m.values(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn mixup_lambda_matches_beta_moments() {
        let mut rng = seeds::stream(3, "mixup-lambda");
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let lam = sample_mixup_lambda(&mut rng);
            assert!((0.0..=1.0).contains(&lam));
            sum += lam;
            sq += lam * lam;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 0.178_571).abs() < 0.005, "var {var}");
    }

    fn small_pool() -> ExamplePool {
        let mut examples = Vec::new();
        for kw in 0..3u32 {
            for v in 0..4u64 {
                examples.push(PoolExample {
                    waveform: synth_keyword(kw, v, 0.05),
                    keyword_id: kw,
                });
            }
        }
        ExamplePool::new(examples, 3).unwrap()
    }

    #[test]
    fn clean_on_singleton_pool_returns_that_example() {
        let pool = ExamplePool::new(
            vec![PoolExample {
                waveform: synth_keyword(1, 0, 0.05),
                keyword_id: 1,
            }],
            3,
        )
        .unwrap();
        let mut rng = seeds::stream(1, "pair");
        let (wave, label, spec) =
            make_training_pair(&StrategyConfig::clean(), &pool, &mut rng).unwrap();
        assert_eq!(wave, pool.examples()[0].waveform);
        assert_eq!(label.values(), &[0.0, 1.0, 0.0]);
        assert!(spec.is_none());
    }

    #[test]
    fn mt_with_full_clean_fraction_behaves_like_clean() {
        let pool = small_pool();
        let strategy = StrategyConfig::mt(1.0).unwrap();
        let mut rng = seeds::stream(2, "pair");
        for _ in 0..64 {
            let (_, label, spec) = make_training_pair(&strategy, &pool, &mut rng).unwrap();
            assert!(spec.is_none());
            assert!(label.is_one_hot());
        }
    }

    #[test]
    fn mt_mixed_fraction_and_label_shape() {
        let pool = small_pool();
        let strategy = StrategyConfig::mt(0.5).unwrap();
        let mut rng = seeds::stream(5, "pair");
        let n = 100_000;
        let mut mixed = 0usize;
        for _ in 0..n {
            let (_, label, spec) = make_training_pair(&strategy, &pool, &mut rng).unwrap();
            match spec {
                Some(ref s) => {
                    mixed += 1;
                    assert_eq!(label.nonzero_count(), 2);
                    assert!(label.is_binary());
                    let a = pool.examples()[s.source_a].keyword_id;
                    let b = pool.examples()[s.source_b].keyword_id;
                    assert_ne!(a, b);
                }
                None => assert!(label.is_one_hot()),
            }
        }
        let fraction = mixed as f64 / n as f64;
        assert!((fraction - 0.5).abs() < 0.01, "mixed fraction {fraction}");
    }

    #[test]
    fn mixup_labels_have_at_most_two_nonzeros() {
        let pool = small_pool();
        let mut rng = seeds::stream(6, "pair");
        for _ in 0..200 {
            let (_, label, spec) =
                make_training_pair(&StrategyConfig::mixup(), &pool, &mut rng).unwrap();
            assert!(label.nonzero_count() <= 2);
            let sum: f64 = label.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(spec.is_some());
        }
    }

    #[test]
    fn mixing_rejects_single_keyword_pool() {
        let examples: Vec<PoolExample> = (0..4)
            .map(|v| PoolExample {
                waveform: synth_keyword(0, v, 0.05),
                keyword_id: 0,
            })
            .collect();
        let pool = ExamplePool::new(examples, 2).unwrap();
        let mut rng = seeds::stream(7, "pair");
        assert!(make_training_pair(&StrategyConfig::mixup(), &pool, &mut rng).is_err());
        let mt = StrategyConfig::mt(0.5).unwrap();
        assert!(make_training_pair(&mt, &pool, &mut rng).is_err());
    }

    #[test]
    fn pair_stream_is_deterministic() {
        let pool = small_pool();
        let strategy = StrategyConfig::mt(0.5).unwrap();
        let run = |seed: u64| -> Vec<(usize, TrainingPair)> {
            let mut rng = seeds::stream(seed, "epoch/0");
            epoch_pairs(&strategy, &pool, &mut rng).unwrap()
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a.len(), pool.len());
        for ((ia, (wa, la, sa)), (ib, (wb, lb, sb))) in a.iter().zip(&b) {
            assert_eq!(ia, ib);
            assert_eq!(wa.samples(), wb.samples());
            assert_eq!(la, lb);
            assert_eq!(sa, sb);
        }
        // Every clean example serves as a base exactly once per epoch.
        let mut bases: Vec<usize> = a.iter().map(|(b, _)| *b).collect();
        bases.sort_unstable();
        assert_eq!(bases, (0..pool.len()).collect::<Vec<_>>());
    }
}
