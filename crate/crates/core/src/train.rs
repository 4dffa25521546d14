//! Mini-batch SGD with teacher forcing, validation tracking and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{loss_and_grad, sequence_loss, EncodedExample, Hyperparams, Parameters};
use crate::numerics::{Real, Rng, Scalar, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Validate (and possibly checkpoint) every this many steps, besides every epoch end.
    pub checkpoint_every: Option<usize>,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    /// A log entry is emitted every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            batch_size: 32,
            epochs: 30,
            grad_clip_norm: Some(5.0),
            seed: 1,
            checkpoint_every: None,
            max_steps: None,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be a finite value >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        if self.log_every == 0 || self.checkpoint_every == Some(0) {
            return Err(Error::Config(
                "log_every and checkpoint_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub epoch: usize,
    /// Mean batch loss since the previous entry.
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

/// Where to persist the best-validation parameters during training.
#[derive(Clone, Debug)]
pub struct CheckpointTarget {
    pub path: PathBuf,
    pub vocab_hash: String,
}

pub struct TrainOutcome<T> {
    /// Parameters after the last update.
    pub params: Parameters<T>,
    /// Parameters with the lowest validation loss seen, when validation ran.
    pub best: Option<(Parameters<T>, f64)>,
    pub log: Vec<TrainLogEntry>,
    pub steps: usize,
}

impl<T: Scalar> TrainOutcome<T> {
    /// The best-validation parameters, or the final ones without validation data.
    pub fn selected(&self) -> &Parameters<T> {
        self.best.as_ref().map_or(&self.params, |(p, _)| p)
    }
}

/// Mean over examples of the teacher-forced loss.
pub fn mean_loss<T: Scalar>(params: &Parameters<T>, hyper: &Hyperparams, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(params.tensors());
        let rec = sequence_loss(&mut tape, params, hyper, ex)?;
        total += tape.scalar(rec.loss).as_f64();
    }
    Ok(total / examples.len() as f64)
}

/// Mean per-token negative log-likelihood over all target tokens.
pub fn token_nll<T: Scalar>(params: &Parameters<T>, hyper: &Hyperparams, examples: &[EncodedExample]) -> Result<f64> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for ex in examples {
        let mut tape = Tape::new(params.tensors());
        let rec = sequence_loss(&mut tape, params, hyper, ex)?;
        total -= rec.token_logprobs.iter().sum::<f64>();
        tokens += rec.token_logprobs.len();
    }
    if tokens == 0 {
        return Err(Error::InvalidInput("no target tokens to evaluate".into()));
    }
    Ok(total / tokens as f64)
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

fn sgd_update<T: Scalar>(params: &mut Parameters<T>, grads: &[Tensor<T>], lr: f64) {
    let lr = T::of(lr);
    for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * *d;
        }
    }
}

/// Runs SGD from `init`. Each step averages the per-example losses of one
/// shuffled batch, clips the global gradient norm and applies a plain update.
pub fn train<T: Scalar>(
    init: Parameters<T>,
    hyper: &Hyperparams,
    config: &TrainConfig,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    checkpoint: Option<&CheckpointTarget>,
    mut on_log: impl FnMut(&TrainLogEntry),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let started = Instant::now();
    let mut rng = Rng::new(config.seed);
    let mut params = init;
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(Parameters<T>, f64)> = None;
    let (mut step, mut pending_loss, mut pending_steps) = (0usize, 0.0f64, 0usize);
    let done = |step: usize| config.max_steps.is_some_and(|m| step >= m);

    'epochs: for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            if done(step) {
                break 'epochs;
            }
            grads.iter_mut().for_each(Tensor::fill_zero);
            let scale = T::of(1.0 / batch.len() as f64);
            let mut batch_loss = 0.0;
            for &i in batch {
                let v = loss_and_grad(&params, hyper, &train_set[i], &mut grads, scale)?;
                batch_loss += v.loss;
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                return Err(Error::NonFiniteLoss {
                    ids: batch.iter().map(|&i| train_set[i].id).collect(),
                });
            }
            if let Some(c) = config.grad_clip_norm {
                clip_global_norm(&mut grads, c);
            }
            sgd_update(&mut params, &grads, config.lr);
            step += 1;
            pending_loss += batch_loss;
            pending_steps += 1;

            let end_of_epoch = batch.as_ptr_range().end == order.as_ptr_range().end;
            let validate = !val_set.is_empty()
                && (end_of_epoch || done(step) || config.checkpoint_every.is_some_and(|k| step % k == 0));
            if validate || step % config.log_every == 0 || done(step) || end_of_epoch {
                let val_loss = if validate {
                    let v = mean_loss(&params, hyper, val_set)?;
                    if best.as_ref().is_none_or(|(_, b)| v < *b) {
                        if let Some(target) = checkpoint {
                            save_checkpoint(&params.cast::<Real>(), hyper, &target.vocab_hash, &target.path)?;
                        }
                        best = Some((params.clone(), v));
                    }
                    Some(v)
                } else {
                    None
                };
                let entry = TrainLogEntry {
                    step,
                    epoch,
                    train_loss: pending_loss / pending_steps as f64,
                    val_loss,
                    seconds: started.elapsed().as_secs_f64(),
                };
                on_log(&entry);
                log.push(entry);
                pending_loss = 0.0;
                pending_steps = 0;
            }
        }
    }
    if best.is_none() {
        if let Some(target) = checkpoint {
            save_checkpoint(&params.cast::<Real>(), hyper, &target.vocab_hash, &target.path)?;
        }
    }
    Ok(TrainOutcome {
        params,
        best,
        log,
        steps: step,
    })
}

const MAGIC: &[u8; 4] = b"C2Q1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    hyperparams: Hyperparams,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub params: Parameters<Real>,
    pub hyper: Hyperparams,
    pub vocab_hash: String,
}

/// Magic, version (u32 LE), header length (u32 LE), JSON header, then every
/// tensor as little-endian f32 in manifest order.
pub fn checkpoint_bytes(params: &Parameters<Real>, hyper: &Hyperparams, vocab_hash: &str) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        hyperparams: hyper.clone(),
        vocab_hash: vocab_hash.to_string(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint; when `expected_vocab_hash` is given it must match.
pub fn parse_checkpoint(bytes: &[u8], expected_vocab_hash: Option<&str>) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("wrong magic bytes".into()));
    }
    let word = |at: usize, what: &str| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Truncated(format!("missing {what}")))
    };
    let version = word(4, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = word(8, "header length")? as usize;
    let data_start = 12 + header_len;
    let header_bytes = bytes
        .get(12..data_start)
        .ok_or_else(|| Error::Truncated("header cut short".into()))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if let Some(expected) = expected_vocab_hash {
        if header.vocab_hash != expected {
            return Err(Error::VocabHash {
                expected: header.vocab_hash,
                found: expected.to_string(),
            });
        }
    }
    let data = &bytes[data_start..];
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0;
    for e in header.tensors {
        if e.offset != expected_offset {
            return Err(Error::Format(format!(
                "tensor {} at unexpected offset {}",
                e.name, e.offset
            )));
        }
        let n: usize = e.shape.iter().product();
        let raw = data
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| Error::Truncated(format!("tensor {} cut short", e.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((e.name, Tensor::from_vec(&e.shape, values)?));
        expected_offset += 4 * n;
    }
    if data.len() != expected_offset {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor data",
            data.len().saturating_sub(expected_offset)
        )));
    }
    let params = Parameters::from_named(&header.hyperparams, named)?;
    Ok(Checkpoint {
        params,
        hyper: header.hyperparams,
        vocab_hash: header.vocab_hash,
    })
}

pub fn save_checkpoint(params: &Parameters<Real>, hyper: &Hyperparams, vocab_hash: &str, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &checkpoint_bytes(params, hyper, vocab_hash)?)
}

pub fn load_checkpoint(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, expected_vocab_hash)
}
