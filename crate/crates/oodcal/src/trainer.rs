//! Supervised training of the intent classifier.
//!
//! Plain mini-batch training: shuffled batches, dropout at the three encoder
//! sites, softmax cross-entropy, Adam with global-norm gradient clipping, and
//! early stopping on validation IND accuracy. Gradients are computed by hand
//! against the exact forward pass in [`crate::encoder`], including the fixed
//! per-example dropout masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bayes::derive_stream;
use crate::data::{Dataset, Label, Utterance, Vocab};
use crate::encoder::{
    encode, forward, forward_with_masks, DropoutMasks, EncoderDims, ModelParams, ProbDist,
};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Probabilities are clamped here before the log so a confidently wrong
/// prediction yields a large finite loss instead of infinity.
const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Dropout probability during training (independent of the inference p).
    pub dropout_p: f64,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    /// Global L2 norm ceiling for each batch gradient.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            max_epochs: 200,
            batch_size: 64,
            dropout_p: 0.5,
            patience: 10,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if self.max_epochs == 0 {
            return err("max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!(
                "training dropout p must be in [0, 1), got {}",
                self.dropout_p
            ));
        }
        if self.patience == 0 {
            return err("patience must be >= 1".into());
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return err(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// An encoded supervised example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// Encode the IND utterances of a split; OOD utterances are skipped.
pub fn ind_examples(split: &[Utterance], vocab: &Vocab) -> Vec<TrainExample> {
    split
        .iter()
        .filter_map(|u| match u.label {
            Label::Ind(c) => Some(TrainExample {
                ids: encode(&u.text, vocab),
                label: c,
            }),
            Label::Ood => None,
        })
        .collect()
}

/// Negative log likelihood of the target class.
pub fn cross_entropy(probs: &ProbDist, target: usize) -> f64 {
    -probs.as_slice()[target].max(CE_CLAMP).ln()
}

/// Mean loss, correct count, and mean gradients for one batch with fixed
/// dropout masks.
pub fn gradients(
    params: &ModelParams,
    batch: &[(&TrainExample, DropoutMasks)],
) -> (f64, usize, ModelParams) {
    assert!(!batch.is_empty(), "gradient batch must be non-empty");
    let dims = params.dims;
    let h = dims.hidden_dim;
    let mut grads = ModelParams::zeros_like(dims);
    let mut loss_acc = 0.0;
    let mut correct = 0usize;

    for (ex, masks) in batch {
        let act = forward_with_masks(params, &ex.ids, masks);
        loss_acc += cross_entropy(&act.probs, ex.label);
        if act.probs.argmax() == ex.label {
            correct += 1;
        }

        // softmax + cross-entropy: dL/dlogits = probs - onehot(target)
        let mut dlogits = act.probs.as_slice().to_vec();
        dlogits[ex.label] -= 1.0;

        for (g, &d) in grads.bo.iter_mut().zip(&dlogits) {
            *g += d;
        }
        grads.wo.add_outer(&act.x2, &dlogits, 1.0);
        let mut dx2 = vec![0.0; h];
        params.wo.matvec(&dlogits, &mut dx2);

        // back through dropout site 2 and tanh
        let mut da2 = vec![0.0; h];
        for j in 0..h {
            da2[j] = dx2[j] * masks.h2[j] * (1.0 - act.h2[j] * act.h2[j]);
        }
        for (g, &d) in grads.b2.iter_mut().zip(&da2) {
            *g += d;
        }
        grads.w2.add_outer(&act.x1, &da2, 1.0);
        let mut dx1 = vec![0.0; h];
        params.w2.matvec(&da2, &mut dx1);

        let mut da1 = vec![0.0; h];
        for j in 0..h {
            da1[j] = dx1[j] * masks.h1[j] * (1.0 - act.h1[j] * act.h1[j]);
        }
        for (g, &d) in grads.b1.iter_mut().zip(&da1) {
            *g += d;
        }
        grads.w1.add_outer(&act.x0, &da1, 1.0);
        let mut dx0 = vec![0.0; dims.embed_dim];
        params.w1.matvec(&da1, &mut dx0);

        // back through dropout site 0 and the mean pool; each looked-up row
        // receives 1/len of the pooled gradient, repeated ids accumulate
        let inv_len = 1.0 / ex.ids.len() as f64;
        for &id in &ex.ids {
            let row = grads.embed.row_mut(id);
            for k in 0..dims.embed_dim {
                row[k] += dx0[k] * masks.pooled[k] * inv_len;
            }
        }
    }

    let inv_b = 1.0 / batch.len() as f64;
    for t in grads.tensors_mut() {
        for g in t.iter_mut() {
            *g *= inv_b;
        }
    }
    (loss_acc * inv_b, correct, grads)
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            for g in t.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// Adam moment accumulators.
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    t: u32,
}

impl AdamState {
    pub fn new(dims: EncoderDims) -> Self {
        AdamState {
            m: ModelParams::zeros_like(dims),
            v: ModelParams::zeros_like(dims),
            t: 0,
        }
    }

    /// One Adam update with bias correction:
    /// w -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut ps = params.tensors_mut();
        let gs = grads.tensors();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        for ti in 0..ps.len() {
            let (p, g, m, v) = (&mut ps[ti], gs[ti], &mut ms[ti], &mut vs[ti]);
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Per-epoch training statistics. `elapsed_seconds` is cumulative wall time
/// since training started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// CSV layout: `epoch,train_loss,train_acc,val_acc,elapsed_seconds`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["epoch", "train_loss", "train_acc", "val_acc", "elapsed_seconds"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_acc.to_string(),
                e.val_acc.to_string(),
                e.elapsed_seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch, not the last one.
    pub params: ModelParams,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Fraction of examples whose deterministic argmax matches the label.
pub fn ind_accuracy(params: &ModelParams, examples: &[TrainExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct = examples
        .iter()
        .filter(|ex| forward(params, &ex.ids).probs.argmax() == ex.label)
        .count();
    correct as f64 / examples.len() as f64
}

/// Train a classifier on the dataset's IND train split.
///
/// Deterministic for a fixed (dataset, vocab, dims, config): parameter init
/// uses stream (seed, 0, 0) and epoch e uses stream (seed, e, 1) for both the
/// shuffle and the per-example dropout masks.
pub fn train(
    dataset: &Dataset,
    vocab: &Vocab,
    dims: EncoderDims,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    if dims.vocab_size != vocab.size() {
        return Err(Error::DimMismatch(format!(
            "dims.vocab_size = {} but vocabulary has {} tokens",
            dims.vocab_size,
            vocab.size()
        )));
    }
    if dims.num_classes != dataset.num_classes {
        return Err(Error::DimMismatch(format!(
            "dims.num_classes = {} but dataset has {} classes",
            dims.num_classes, dataset.num_classes
        )));
    }

    let train_ex = ind_examples(&dataset.train, vocab);
    if train_ex.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let val_ex = ind_examples(&dataset.val, vocab);
    if val_ex.is_empty() {
        return Err(Error::EmptySplit("val (IND portion)".into()));
    }

    let mut params = ModelParams::init(dims, &mut derive_stream(cfg.seed, 0, 0));
    let mut adam = AdamState::new(dims);
    let mut log = TrainLog::default();
    let mut best_params = params.clone();
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let start = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = derive_stream(cfg.seed, epoch as u64, 1);
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct_sum = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&TrainExample, DropoutMasks)> = chunk
                .iter()
                .map(|&i| {
                    (
                        &train_ex[i],
                        DropoutMasks::sample(&mut rng, dims, cfg.dropout_p),
                    )
                })
                .collect();
            let (loss, correct, mut grads) = gradients(&params, &batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut params, &grads, cfg.lr);
            loss_sum += loss * batch.len() as f64;
            correct_sum += correct;
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }

        let train_loss = loss_sum / train_ex.len() as f64;
        let train_acc = correct_sum as f64 / train_ex.len() as f64;
        let val_acc = ind_accuracy(&params, &val_ex);
        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_acc,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });

        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        log,
        best_epoch,
        best_val_acc,
    })
}
