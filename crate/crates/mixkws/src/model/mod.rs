//! Convolutional embedding backbone with per-keyword binary classifier heads,
//! BCE loss, exact reverse-mode gradients, Adam, checkpoint averaging and the
//! freeze/re-init support used by the pre-train/fine-tune protocol.

pub mod checkpoint;
pub mod net;
mod train;

pub use train::{train, EpochLog, TrainOptions};

use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{mean_var_normalize, FeatureMatrix, FeatureStats, NUM_MEL_BINS};
use crate::strategy::LabelVector;

/// Classifier stack on top of the embedding: one linear layer during
/// pre-training, two linear layers (ReLU between) during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    SingleLinear { out: usize },
    TwoLayer { hidden: usize, out: usize },
}

impl HeadKind {
    pub fn num_keywords(&self) -> usize {
        match *self {
            HeadKind::SingleLinear { out } => out,
            HeadKind::TwoLayer { out, .. } => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub head: HeadKind,
}

impl Architecture {
    /// Desk-scale default: three stride-2 conv blocks and a 64-d embedding.
    pub fn default_backbone(num_keywords: usize) -> Self {
        Self {
            conv_channels: vec![16, 32, 64],
            embedding_dim: 64,
            head: HeadKind::SingleLinear { out: num_keywords },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::Config("at least one conv block required".into()));
        }
        if self.embedding_dim == 0 || self.head.num_keywords() == 0 {
            return Err(Error::Config(
                "embedding dim and head size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub backbone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn zeroed(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Full trainable state: flat parameter vector with a shape table, Adam
/// moments, the freeze flag for the backbone, and the feature normalization
/// statistics that travel with the model.
#[derive(Debug, Clone)]
pub struct ModelState {
    arch: Architecture,
    tensors: Vec<TensorSpec>,
    params: Vec<f64>,
    backbone_frozen: bool,
    adam: AdamState,
    feature_stats: FeatureStats,
    version: u64,
}

fn build_tensor_table(arch: &Architecture) -> Vec<TensorSpec> {
    let mut tensors = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, backbone: bool| {
        let len: usize = shape.iter().product();
        tensors.push(TensorSpec {
            name,
            shape,
            offset,
            len,
            backbone,
        });
        offset += len;
    };
    let mut in_ch = 1usize;
    for (i, &out_ch) in arch.conv_channels.iter().enumerate() {
        push(
            format!("conv{i}.w"),
            vec![out_ch, in_ch, net::KERNEL, net::KERNEL],
            true,
        );
        push(format!("conv{i}.b"), vec![out_ch], true);
        in_ch = out_ch;
    }
    push("embed.w".into(), vec![arch.embedding_dim, in_ch], true);
    push("embed.b".into(), vec![arch.embedding_dim], true);
    match arch.head {
        HeadKind::SingleLinear { out } => {
            push("head.l1.w".into(), vec![out, arch.embedding_dim], false);
            push("head.l1.b".into(), vec![out], false);
        }
        HeadKind::TwoLayer { hidden, out } => {
            push("head.l1.w".into(), vec![hidden, arch.embedding_dim], false);
            push("head.l1.b".into(), vec![hidden], false);
            push("head.l2.w".into(), vec![out, hidden], false);
            push("head.l2.b".into(), vec![out], false);
        }
    }
    tensors
}

fn init_tensor(spec: &TensorSpec, params: &mut [f64], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    let slot = &mut params[spec.offset..spec.offset + spec.len];
    if spec.name.ends_with(".b") {
        slot.fill(0.0);
        return;
    }
    // fan_in = product of all dims but the first (output) dim.
    let fan_in: usize = spec.shape[1..].iter().product();
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in slot {
        *v = rng.gen_range(-bound..bound);
    }
}

impl ModelState {
    /// Seeded parameter initialization: uniform `+-1/sqrt(fan_in)` weights,
    /// zero biases, zero optimizer moments.
    pub fn init(arch: Architecture, feature_stats: FeatureStats, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let tensors = build_tensor_table(&arch);
        let total: usize = tensors.iter().map(|t| t.len).sum();
        let mut params = vec![0.0f64; total];
        for spec in &tensors {
            init_tensor(spec, &mut params, rng);
        }
        Ok(Self {
            arch,
            tensors,
            params,
            backbone_frozen: false,
            adam: AdamState::zeroed(total),
            feature_stats,
            version: fresh_version(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameter vector; bumps the version so any
    /// outstanding forward cache is invalidated.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_keywords(&self) -> usize {
        self.arch.head.num_keywords()
    }

    pub fn backbone_frozen(&self) -> bool {
        self.backbone_frozen
    }

    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.backbone_frozen = frozen;
        self.version = fresh_version();
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn feature_stats(&self) -> &FeatureStats {
        &self.feature_stats
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.offset..t.offset + t.len])
    }

    /// Mutable view of one tensor; bumps the version.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.version = fresh_version();
        let spec = self.tensors.iter().find(|t| t.name == name)?.clone();
        Some(&mut self.params[spec.offset..spec.offset + spec.len])
    }

    /// True for parameter ranges that must not move under the current freeze
    /// state.
    fn tensor_frozen(&self, spec: &TensorSpec) -> bool {
        spec.backbone && self.backbone_frozen
    }

    /// SHA-256 of the backbone parameter ranges; bit-stable across head
    /// re-initialization and fine-tuning with a frozen backbone.
    pub fn backbone_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for spec in self.tensors.iter().filter(|t| t.backbone) {
            hasher.update(spec.name.as_bytes());
            for v in &self.params[spec.offset..spec.offset + spec.len] {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// SHA-256 over the full parameter vector.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in &self.params {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }

    pub(crate) fn from_parts(
        arch: Architecture,
        params: Vec<f64>,
        backbone_frozen: bool,
        adam: AdamState,
        feature_stats: FeatureStats,
    ) -> Result<Self> {
        arch.validate()?;
        let tensors = build_tensor_table(&arch);
        let total: usize = tensors.iter().map(|t| t.len).sum();
        if params.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} entries, shape table requires {total}",
                params.len()
            )));
        }
        if adam.m.len() != total || adam.v.len() != total {
            return Err(Error::ShapeMismatch(
                "optimizer moment length does not match parameters".into(),
            ));
        }
        Ok(Self {
            arch,
            tensors,
            params,
            backbone_frozen,
            adam,
            feature_stats,
            version: fresh_version(),
        })
    }
}

/// Cached activations from one forward pass, consumed by [`backward`].
pub struct ForwardCache {
    version: u64,
    num_keywords: usize,
    samples: Vec<SampleCache>,
}

struct SampleCache {
    /// (channels, h, w) of each conv block's input.
    block_in_dims: Vec<(usize, usize, usize)>,
    /// im2col patch matrix per conv block.
    patches: Vec<Vec<f64>>,
    /// Pre-activation conv outputs per block, layout `[oc][out_h*out_w]`.
    preacts: Vec<Vec<f64>>,
    /// Pooled per-channel means (input to the embedding layer).
    pooled: Vec<f64>,
    /// Embedding output (input to the head).
    embedding: Vec<f64>,
    /// Pre-activation of the first head layer (two-layer heads only).
    head_hidden_pre: Option<Vec<f64>>,
}

fn forward_sample(state: &ModelState, features: &FeatureMatrix) -> Result<(Vec<f64>, SampleCache)> {
    let normalized = mean_var_normalize(features, &state.feature_stats)?;
    let mut h = normalized.num_frames();
    let mut w = NUM_MEL_BINS;
    let mut c = 1usize;
    let mut x = normalized.data().to_vec();

    let mut block_in_dims = Vec::new();
    let mut patches_cache = Vec::new();
    let mut preacts = Vec::new();
    for (i, &out_ch) in state.arch.conv_channels.iter().enumerate() {
        let weights = state.tensor(&format!("conv{i}.w")).expect("conv weights");
        let bias = state.tensor(&format!("conv{i}.b")).expect("conv bias");
        let patches = net::im2col(&x, c, h, w);
        let out_h = net::conv_out_dim(h);
        let out_w = net::conv_out_dim(w);
        let rows = out_h * out_w;
        let cols = c * net::KERNEL * net::KERNEL;
        let mut out = vec![0.0f64; out_ch * rows];
        net::conv_forward(&patches, rows, cols, weights, bias, &mut out);
        block_in_dims.push((c, h, w));
        patches_cache.push(patches);
        preacts.push(out.clone());
        net::relu(&mut out);
        x = out;
        c = out_ch;
        h = out_h;
        w = out_w;
    }

    let plane = h * w;
    let pooled = net::global_avg_pool(&x, c, plane);
    let embed_w = state.tensor("embed.w").expect("embedding weights");
    let embed_b = state.tensor("embed.b").expect("embedding bias");
    let embedding = net::linear_forward(&pooled, embed_w, embed_b);

    let (logits, head_hidden_pre) = match state.arch.head {
        HeadKind::SingleLinear { .. } => {
            let w1 = state.tensor("head.l1.w").expect("head weights");
            let b1 = state.tensor("head.l1.b").expect("head bias");
            (net::linear_forward(&embedding, w1, b1), None)
        }
        HeadKind::TwoLayer { .. } => {
            let w1 = state.tensor("head.l1.w").expect("head weights");
            let b1 = state.tensor("head.l1.b").expect("head bias");
            let pre = net::linear_forward(&embedding, w1, b1);
            let mut hid = pre.clone();
            net::relu(&mut hid);
            let w2 = state.tensor("head.l2.w").expect("head weights");
            let b2 = state.tensor("head.l2.b").expect("head bias");
            (net::linear_forward(&hid, w2, b2), Some(pre))
        }
    };

    Ok((
        logits,
        SampleCache {
            block_in_dims,
            patches: patches_cache,
            preacts,
            pooled,
            embedding,
            head_hidden_pre,
        },
    ))
}

/// Run the model on a batch of feature matrices. Returns per-sample logits
/// and the activation cache required by [`backward`].
pub fn forward(
    state: &ModelState,
    batch: &[FeatureMatrix],
) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let mut logits = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    for features in batch {
        let (l, cache) = forward_sample(state, features)?;
        logits.push(l);
        samples.push(cache);
    }
    Ok((
        logits,
        ForwardCache {
            version: state.version,
            num_keywords: state.num_keywords(),
            samples,
        },
    ))
}

/// Inference-only scores: sigmoid of each keyword logit.
pub fn detection_scores(state: &ModelState, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let (logits, _) = forward_sample(state, features)?;
    Ok(logits.into_iter().map(sigmoid).collect())
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross entropy over batch and keywords, with the gradient with
/// respect to the logits: `(sigmoid(z) - t) / (batch * keywords)`.
pub fn bce_loss(
    logits: &[Vec<f64>],
    targets: &[LabelVector],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} target rows",
            logits.len(),
            targets.len()
        )));
    }
    let k = logits[0].len();
    let n = (logits.len() * k) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, target) in logits.iter().zip(targets) {
        if row.len() != k || target.len() != k {
            return Err(Error::ShapeMismatch(
                "ragged logits or targets in batch".into(),
            ));
        }
        let mut grow = Vec::with_capacity(k);
        for (&z, &t) in row.iter().zip(target.values()) {
            if !z.is_finite() {
                return Err(Error::NonFinite(format!("logit {z}")));
            }
            let p = sigmoid(z).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            grow.push((sigmoid(z) - t) / n);
        }
        grads.push(grow);
    }
    Ok((total / n, grads))
}

fn backward_sample(
    state: &ModelState,
    cache: &SampleCache,
    dlogits: &[f64],
    grads: &mut [f64],
) {
    let spec_of = |name: &str| -> &TensorSpec {
        state
            .tensors
            .iter()
            .find(|t| t.name == name)
            .expect("tensor present")
    };
    // Split-borrow helper: gradient slice for one tensor.
    macro_rules! grad_slices {
        ($w:expr, $b:expr) => {{
            let ws = spec_of($w).clone();
            let bs = spec_of($b).clone();
            (ws, bs)
        }};
    }

    // Head backward.
    let de = match state.arch.head {
        HeadKind::SingleLinear { .. } => {
            let (ws, bs) = grad_slices!("head.l1.w", "head.l1.b");
            let w = state.tensor("head.l1.w").unwrap();
            let mut dw = vec![0.0; ws.len];
            let mut db = vec![0.0; bs.len];
            let de = net::linear_backward(&cache.embedding, w, dlogits, &mut dw, &mut db);
            accumulate(grads, ws.offset, &dw);
            accumulate(grads, bs.offset, &db);
            de
        }
        HeadKind::TwoLayer { .. } => {
            let pre = cache.head_hidden_pre.as_ref().expect("two-layer cache");
            let mut hidden = pre.clone();
            net::relu(&mut hidden);
            let (w2s, b2s) = grad_slices!("head.l2.w", "head.l2.b");
            let w2 = state.tensor("head.l2.w").unwrap();
            let mut dw2 = vec![0.0; w2s.len];
            let mut db2 = vec![0.0; b2s.len];
            let mut dhidden = net::linear_backward(&hidden, w2, dlogits, &mut dw2, &mut db2);
            accumulate(grads, w2s.offset, &dw2);
            accumulate(grads, b2s.offset, &db2);
            net::relu_backward(pre, &mut dhidden);
            let (w1s, b1s) = grad_slices!("head.l1.w", "head.l1.b");
            let w1 = state.tensor("head.l1.w").unwrap();
            let mut dw1 = vec![0.0; w1s.len];
            let mut db1 = vec![0.0; b1s.len];
            let de = net::linear_backward(&cache.embedding, w1, &dhidden, &mut dw1, &mut db1);
            accumulate(grads, w1s.offset, &dw1);
            accumulate(grads, b1s.offset, &db1);
            de
        }
    };

    // With a frozen backbone no further gradients can move, so stop here.
    if state.backbone_frozen {
        return;
    }

    let (ews, ebs) = grad_slices!("embed.w", "embed.b");
    let embed_w = state.tensor("embed.w").unwrap();
    let mut dew = vec![0.0; ews.len];
    let mut deb = vec![0.0; ebs.len];
    let dpooled = net::linear_backward(&cache.pooled, embed_w, &de, &mut dew, &mut deb);
    accumulate(grads, ews.offset, &dew);
    accumulate(grads, ebs.offset, &deb);

    let blocks = state.arch.conv_channels.len();
    let (_, last_in_h, last_in_w) = cache.block_in_dims[blocks - 1];
    let last_plane = net::conv_out_dim(last_in_h) * net::conv_out_dim(last_in_w);
    let mut dx = net::global_avg_pool_backward(&dpooled, last_plane);

    for i in (0..blocks).rev() {
        let (in_c, in_h, in_w) = cache.block_in_dims[i];
        let out_h = net::conv_out_dim(in_h);
        let out_w = net::conv_out_dim(in_w);
        let rows = out_h * out_w;
        let cols = in_c * net::KERNEL * net::KERNEL;
        let out_ch = state.arch.conv_channels[i];

        net::relu_backward(&cache.preacts[i], &mut dx);

        let (ws, bs) = grad_slices!(&format!("conv{i}.w"), &format!("conv{i}.b"));
        let mut dw = vec![0.0; ws.len];
        let mut db = vec![0.0; bs.len];
        net::conv_backward_params(&dx, &cache.patches[i], rows, cols, out_ch, &mut dw, &mut db);
        accumulate(grads, ws.offset, &dw);
        accumulate(grads, bs.offset, &db);

        if i > 0 {
            let weights = state.tensor(&format!("conv{i}.w")).unwrap();
            let dpatches = net::conv_backward_patches(&dx, weights, rows, cols, out_ch);
            dx = net::col2im(&dpatches, in_c, in_h, in_w);
        }
    }
}

fn accumulate(grads: &mut [f64], offset: usize, delta: &[f64]) {
    for (g, d) in grads[offset..offset + delta.len()].iter_mut().zip(delta) {
        *g += d;
    }
}

/// Exact gradient of the loss with respect to all parameters. Frozen
/// parameter ranges receive exactly zero gradient. Rejects caches produced
/// before the model was last modified.
pub fn backward(
    state: &ModelState,
    cache: &ForwardCache,
    dlogits: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if cache.version != state.version {
        return Err(Error::StaleCache);
    }
    if dlogits.len() != cache.samples.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient rows vs {} cached samples",
            dlogits.len(),
            cache.samples.len()
        )));
    }
    let mut grads = vec![0.0f64; state.params.len()];
    for (sample, dl) in cache.samples.iter().zip(dlogits) {
        if dl.len() != cache.num_keywords {
            return Err(Error::ShapeMismatch(
                "logit gradient row has wrong width".into(),
            ));
        }
        backward_sample(state, sample, dl, &mut grads);
    }
    Ok(grads)
}

/// One Adam update over the unfrozen parameters; frozen ranges (parameters
/// and moments) are untouched. The step counter always advances.
pub fn adam_step(state: &mut ModelState, grads: &[f64], lr: f64) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries, parameters have {}",
            grads.len(),
            state.params.len()
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {bad}")));
    }
    state.adam.step += 1;
    let t = state.adam.step;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let tensors = state.tensors.clone();
    for spec in &tensors {
        if state.tensor_frozen(spec) {
            continue;
        }
        for idx in spec.offset..spec.offset + spec.len {
            let g = grads[idx];
            let m = ADAM_BETA1 * state.adam.m[idx] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * state.adam.v[idx] + (1.0 - ADAM_BETA2) * g * g;
            state.adam.m[idx] = m;
            state.adam.v[idx] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            state.params[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    state.version = fresh_version();
    Ok(())
}

/// Elementwise mean of the checkpoints' parameters; optimizer moments come
/// from the last checkpoint. All checkpoints must share the shape table,
/// freeze state and feature statistics.
pub fn average_checkpoints(checkpoints: &[ModelState]) -> Result<ModelState> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Checkpoint("cannot average zero checkpoints".into()))?;
    for ck in checkpoints {
        if ck.arch != first.arch || ck.tensors != first.tensors {
            return Err(Error::ShapeMismatch(
                "checkpoints have different shape tables".into(),
            ));
        }
        if ck.backbone_frozen != first.backbone_frozen {
            return Err(Error::Checkpoint(
                "checkpoints disagree on freeze state".into(),
            ));
        }
        if ck.feature_stats != first.feature_stats {
            return Err(Error::Checkpoint(
                "checkpoints carry different feature statistics".into(),
            ));
        }
    }
    // Centered mean: x0 + sum(xi - x0)/k. Algebraically the arithmetic mean,
    // and exactly idempotent when all checkpoints are identical.
    let k = checkpoints.len() as f64;
    let mut deltas = vec![0.0f64; first.params.len()];
    for ck in &checkpoints[1..] {
        for ((acc, v), base) in deltas.iter_mut().zip(&ck.params).zip(&first.params) {
            *acc += v - base;
        }
    }
    let params: Vec<f64> = first
        .params
        .iter()
        .zip(&deltas)
        .map(|(base, delta)| base + delta / k)
        .collect();
    let last = checkpoints.last().expect("non-empty");
    ModelState::from_parts(
        first.arch.clone(),
        params,
        first.backbone_frozen,
        last.adam.clone(),
        first.feature_stats.clone(),
    )
}

/// Replace the classifier head with a freshly initialized two-layer stack for
/// `new_num_keywords` keywords, keep the backbone bit-identical, freeze it,
/// and reset the optimizer.
pub fn reinit_head(
    state: &ModelState,
    new_num_keywords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModelState> {
    if new_num_keywords == 0 {
        return Err(Error::Config("head must have at least one keyword".into()));
    }
    let arch = Architecture {
        conv_channels: state.arch.conv_channels.clone(),
        embedding_dim: state.arch.embedding_dim,
        head: HeadKind::TwoLayer {
            hidden: state.arch.embedding_dim,
            out: new_num_keywords,
        },
    };
    let tensors = build_tensor_table(&arch);
    let total: usize = tensors.iter().map(|t| t.len).sum();
    let mut params = vec![0.0f64; total];
    // Backbone tensors lead both tables with identical layouts.
    for spec in tensors.iter().filter(|t| t.backbone) {
        let src = state
            .tensor(&spec.name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {}", spec.name)))?;
        params[spec.offset..spec.offset + spec.len].copy_from_slice(src);
    }
    for spec in tensors.iter().filter(|t| !t.backbone) {
        init_tensor(spec, &mut params, rng);
    }
    let mut out = ModelState::from_parts(
        arch,
        params,
        true,
        AdamState::zeroed(total),
        state.feature_stats.clone(),
    )?;
    out.version = fresh_version();
    Ok(out)
}
