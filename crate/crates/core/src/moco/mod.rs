//! Momentum-contrast pre-training on an image corpus.
//!
//! A query encoder is trained with a softmax contrastive objective against
//! one positive key and a FIFO queue of negative keys; the key encoder
//! trails the query encoder as an exponential moving average and never
//! receives gradients.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint};

use std::collections::VecDeque;

use crate::data::ImageCorpus;
use crate::error::{Error, Result};
use crate::image::{ChannelStats, Image};
use crate::imageaug::{sample_view_pair, AugPolicy};
use crate::nn::{
    adam_step, encoder_backward, encoder_forward, encoder_forward_cached, AdamState,
    ArchDescriptor, EncoderParams, Tensor,
};
use crate::parallel;
use crate::rng::{derive_seed, Rng};
use crate::spectro::normalize;

/// FIFO ring of unit-norm key embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vec<f64>>,
}

impl KeyQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::config("queue capacity and dimension must be positive"));
        }
        Ok(KeyQueue {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Insert a batch, oldest entries leaving first once capacity is hit.
    pub fn push_batch(&mut self, keys: &[Vec<f64>]) -> Result<()> {
        if keys.len() > self.capacity {
            return Err(Error::config(format!(
                "batch of {} keys exceeds queue capacity {}",
                keys.len(),
                self.capacity
            )));
        }
        for key in keys {
            if key.len() != self.dim {
                return Err(Error::config(format!(
                    "key dimension {} does not match queue dimension {}",
                    key.len(),
                    self.dim
                )));
            }
            let norm: f64 = key.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::numeric(format!(
                    "queue entries must be unit-norm; got {norm}"
                )));
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(key.clone());
        }
        Ok(())
    }

    /// Oldest-to-newest snapshot of the current negatives.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().cloned().collect()
    }
}

/// Contrastive loss of a query against one positive and K negative keys.
///
/// Logits are dot products over temperature; the denominator includes the
/// positive, so the loss is ln of a quantity >= 1 and never negative.
/// Returns the loss and its gradient with respect to `q` (keys detached).
pub fn infonce_loss(
    q: &[f64],
    k_plus: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if negatives.is_empty() {
        return Err(Error::config("need at least one negative key"));
    }
    let d = q.len();
    if k_plus.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(Error::config("key dimensions do not match the query"));
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let l_plus = dot(q, k_plus) / tau;
    let l_neg: Vec<f64> = negatives.iter().map(|n| dot(q, n) / tau).collect();

    let max = l_neg.iter().cloned().fold(l_plus, f64::max);
    let exp_plus = (l_plus - max).exp();
    let mut denom = exp_plus;
    for &l in &l_neg {
        denom += (l - max).exp();
    }
    let loss = denom.ln() - (l_plus - max);
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite contrastive loss"));
    }

    // dL/dq = (sum_j p_j k_j - k_plus) / tau with p the softmax over all keys.
    let mut grad = vec![0.0f64; d];
    let p_plus = exp_plus / denom;
    for (g, &k) in grad.iter_mut().zip(k_plus) {
        *g += (p_plus - 1.0) * k / tau;
    }
    for (l, neg) in l_neg.iter().zip(negatives) {
        let p = (l - max).exp() / denom;
        for (g, &k) in grad.iter_mut().zip(neg) {
            *g += p * k / tau;
        }
    }
    Ok((loss, grad))
}

/// Exponential moving average: key <- m * key + (1 - m) * query.
pub fn momentum_update(key: &mut EncoderParams, query: &EncoderParams, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::config(format!("momentum must be in [0, 1], got {m}")));
    }
    if key.arch != query.arch {
        return Err(Error::config("key and query architectures differ"));
    }
    for (k_slice, q_slice) in key.param_slices_mut().into_iter().zip(query.param_slices()) {
        for (k, &q) in k_slice.iter_mut().zip(q_slice) {
            *k = m * *k + (1.0 - m) * q;
        }
    }
    Ok(())
}

/// Full trainer state: both encoders, the queue, and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct MoCoState {
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub queue: KeyQueue,
    pub tau: f64,
    pub momentum: f64,
    pub step: u64,
}

impl MoCoState {
    /// Fresh state: the key encoder starts as an exact copy of the query.
    pub fn init(
        arch: &ArchDescriptor,
        queue_size: usize,
        tau: f64,
        momentum: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {tau}")));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1], got {momentum}")));
        }
        let query = EncoderParams::init(arch, seed)?;
        let key = query.clone();
        let queue = KeyQueue::new(queue_size, arch.feature_dim)?;
        Ok(MoCoState {
            query,
            key,
            queue,
            tau,
            momentum,
            step: 0,
        })
    }
}

/// Hyperparameters of a pre-training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub momentum: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        // Desk preset; the full-scale configuration (queue 4096, batch 256,
        // 40 epochs, lr 1e-6) ships in paper.cfg.
        PretrainConfig {
            epochs: 10,
            batch_size: 32,
            queue_size: 512,
            learning_rate: 1e-3,
            tau: 0.07,
            momentum: 0.99,
            seed: 1,
            threads: 0,
        }
    }
}

impl PretrainConfig {
    pub fn effective_threads(&self) -> usize {
        if self.threads == 0 {
            parallel::default_threads()
        } else {
            self.threads
        }
    }
}

/// Per-epoch training statistics (one CSV row).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_pos_cos: f64,
    pub lr: f64,
}

/// Trainer: state plus optimizer and bookkeeping; serializable to a
/// checkpoint at epoch boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrainer {
    pub state: MoCoState,
    pub adam: AdamState,
    pub config: PretrainConfig,
    /// Normalization statistics of the pre-training corpus, persisted with
    /// the model and reused downstream.
    pub stats: ChannelStats,
    pub config_hash: u64,
    pub epochs_done: usize,
}

impl Pretrainer {
    pub fn new(
        arch: &ArchDescriptor,
        config: PretrainConfig,
        stats: ChannelStats,
        config_hash: u64,
    ) -> Result<Self> {
        let state = MoCoState::init(arch, config.queue_size, config.tau, config.momentum, config.seed)?;
        let adam = AdamState::new(&state.query.group_sizes());
        Ok(Pretrainer {
            state,
            adam,
            config,
            stats,
            config_hash,
            epochs_done: 0,
        })
    }

    pub fn require_feature_dim(&self, dim: usize) -> Result<()> {
        let found = self.state.query.arch.feature_dim;
        if found != dim {
            return Err(Error::config(format!(
                "checkpoint feature dimension {found} does not match expected {dim}"
            )));
        }
        Ok(())
    }

    /// Encode augmented second views with the key encoder until the queue is
    /// full, so the first gradient step sees a fully populated dictionary.
    pub fn warmup_queue(&mut self, corpus: &ImageCorpus, policy: &AugPolicy) -> Result<()> {
        if corpus.is_empty() {
            return Err(Error::data("pre-training corpus is empty"));
        }
        let threads = self.config.effective_threads();
        let batch = self.config.batch_size.min(self.state.queue.capacity());
        let mut cursor = 0usize;
        while !self.state.queue.is_full() {
            let indices: Vec<usize> = (0..batch)
                .map(|i| (cursor + i) % corpus.len())
                .collect();
            cursor = (cursor + batch) % corpus.len();
            let views = self.make_views(corpus, &indices, u64::MAX, policy, threads)?;
            let keys = encoder_forward(&self.state.key, &views.1, threads)?;
            let rows: Vec<Vec<f64>> = (0..indices.len())
                .map(|i| keys.data()[i * self.dim()..(i + 1) * self.dim()].to_vec())
                .collect();
            let room = self.state.queue.capacity() - self.state.queue.len();
            let take = room.min(rows.len());
            self.state.queue.push_batch(&rows[..take])?;
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        self.state.query.arch.feature_dim
    }

    /// Augment and normalize both views of each listed corpus image.
    fn make_views(
        &self,
        corpus: &ImageCorpus,
        indices: &[usize],
        epoch: u64,
        policy: &AugPolicy,
        threads: usize,
    ) -> Result<(Tensor, Tensor)> {
        let stats = self.stats;
        let seed = self.config.seed;
        let pairs = parallel::parallel_map(indices.len(), threads, |i| -> Result<(Image, Image)> {
            let source = corpus.image(indices[i]);
            let pair_seed = derive_seed(seed, &[0xa1b2, epoch, indices[i] as u64]);
            let (v1, v2) = sample_view_pair(&source, policy, pair_seed)?;
            Ok((normalize(&v1, &stats)?, normalize(&v2, &stats)?))
        });
        let mut views1 = Vec::with_capacity(indices.len());
        let mut views2 = Vec::with_capacity(indices.len());
        for pair in pairs {
            let (v1, v2) = pair?;
            views1.push(v1);
            views2.push(v2);
        }
        Ok((images_to_batch(&views1)?, images_to_batch(&views2)?))
    }

    /// One pass over the corpus: per batch, encode both views, take the
    /// contrastive gradient against the current queue, update the query
    /// encoder with Adam, move the key encoder, and enqueue the new keys.
    pub fn run_epoch(&mut self, corpus: &ImageCorpus, policy: &AugPolicy) -> Result<EpochStats> {
        if corpus.is_empty() {
            return Err(Error::data("pre-training corpus is empty"));
        }
        if self.config.batch_size > corpus.len() {
            return Err(Error::data(format!(
                "batch size {} exceeds corpus size {}",
                self.config.batch_size,
                corpus.len()
            )));
        }
        if !self.state.queue.is_full() {
            self.warmup_queue(corpus, policy)?;
        }
        let epoch = self.epochs_done;
        let threads = self.config.effective_threads();
        let d = self.dim();
        let batch_size = self.config.batch_size;

        let mut order: Vec<usize> = (0..corpus.len()).collect();
        Rng::substream(self.config.seed, &[0xe90c, epoch as u64]).shuffle(&mut order);

        let mut total_loss = 0.0f64;
        let mut total_cos = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(batch_size) {
            let (q_batch, k_batch) = self.make_views(corpus, chunk, epoch as u64, policy, threads)?;
            let (q_feats, cache) = encoder_forward_cached(&self.state.query, &q_batch, threads)?;
            let k_feats = encoder_forward(&self.state.key, &k_batch, threads)?;
            let negatives = self.state.queue.snapshot();

            let mut grad_features = Tensor::zeros(&[batch_size, d]);
            let mut batch_loss = 0.0f64;
            let mut batch_cos = 0.0f64;
            let results = parallel::parallel_map(batch_size, threads, |i| {
                let q = &q_feats.data()[i * d..(i + 1) * d];
                let k = &k_feats.data()[i * d..(i + 1) * d];
                infonce_loss(q, k, &negatives, self.state.tau).map(|(loss, grad)| {
                    let cos: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                    (loss, grad, cos)
                })
            });
            for (i, result) in results.into_iter().enumerate() {
                let (loss, grad, cos) = result.map_err(|e| {
                    Error::numeric(format!("step {}: {e}", self.state.step))
                })?;
                batch_loss += loss;
                batch_cos += cos;
                // Mean loss over the batch.
                for (dst, g) in grad_features.data_mut()[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&grad)
                {
                    *dst = g / batch_size as f64;
                }
            }

            let grads = encoder_backward(&self.state.query, &cache, &grad_features, threads)?;
            {
                let mut params = self.state.query.param_slices_mut();
                let grad_slices = grads.param_slices();
                adam_step(&mut params, &grad_slices, &mut self.adam, self.config.learning_rate)?;
            }
            momentum_update(&mut self.state.key, &self.state.query, self.state.momentum)?;

            let rows: Vec<Vec<f64>> = (0..batch_size)
                .map(|i| k_feats.data()[i * d..(i + 1) * d].to_vec())
                .collect();
            self.state.queue.push_batch(&rows)?;
            self.state.step += 1;

            total_loss += batch_loss / batch_size as f64;
            total_cos += batch_cos / batch_size as f64;
            batches += 1;
        }
        self.epochs_done += 1;
        Ok(EpochStats {
            epoch,
            mean_loss: total_loss / batches.max(1) as f64,
            mean_pos_cos: total_cos / batches.max(1) as f64,
            lr: self.config.learning_rate,
        })
    }
}

/// Stack normalized images into a [B, 3, H, W] tensor.
pub fn images_to_batch(images: &[Image]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::config("cannot build an empty batch"));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::config("batch images must share dimensions"));
        }
        for ch in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    data.push(img.get(r, c, ch));
                }
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Mean contrastive loss and positive-pair cosine of augmented pairs from
/// `images`, against a fixed set of negatives. Used for held-out evaluation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_infonce(
    query: &EncoderParams,
    key: &EncoderParams,
    images: &[Image],
    policy: &AugPolicy,
    stats: &ChannelStats,
    negatives: &[Vec<f64>],
    tau: f64,
    seed: u64,
    threads: usize,
) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::data("no held-out images"));
    }
    let d = query.arch.feature_dim;
    let mut views1 = Vec::with_capacity(images.len());
    let mut views2 = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let (v1, v2) = sample_view_pair(img, policy, derive_seed(seed, &[0xea71, i as u64]))?;
        views1.push(normalize(&v1, stats)?);
        views2.push(normalize(&v2, stats)?);
    }
    let q_feats = encoder_forward(query, &images_to_batch(&views1)?, threads)?;
    let k_feats = encoder_forward(key, &images_to_batch(&views2)?, threads)?;
    let mut total_loss = 0.0;
    let mut total_cos = 0.0;
    for i in 0..images.len() {
        let q = &q_feats.data()[i * d..(i + 1) * d];
        let k = &k_feats.data()[i * d..(i + 1) * d];
        let (loss, _) = infonce_loss(q, k, negatives, tau)?;
        total_loss += loss;
        total_cos += q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok((
        total_loss / images.len() as f64,
        total_cos / images.len() as f64,
    ))
}
