//! Text encoder and classifier head.
//!
//! Architecture: mean-pooled trainable token embeddings, two tanh hidden
//! layers, and a linear output layer. Dropout applies at three sites (pooled
//! embedding, first hidden, second hidden) both during training and, for the
//! Monte-Carlo ensemble, at inference.
//!
//! Dropout convention: `p` is the probability a unit is DROPPED. Kept units
//! are scaled by `1 / (1 - p)` inside the mask (inverted dropout), so a
//! mask-free forward pass needs no compensation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Vocab, UNK_ID};
use crate::mat::Mat;
use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_HIDDEN_DIM: usize = 128;

/// Layer sizes for one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl EncoderDims {
    pub fn new(vocab_size: usize, num_classes: usize) -> Self {
        EncoderDims {
            vocab_size,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            num_classes,
        }
    }
}

/// All trainable tensors.
///
/// Shapes: embed V×d, w1 d×h, w2 h×h, wo h×C, with matching bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: EncoderDims,
    pub embed: Mat,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub wo: Mat,
    pub bo: Vec<f64>,
}

impl ModelParams {
    /// Random init: Xavier-uniform dense layers, U(-0.1, 0.1) embeddings,
    /// zero biases. The PAD row stays zero (it is never looked up).
    pub fn init<R: Rng>(dims: EncoderDims, rng: &mut R) -> Self {
        let EncoderDims {
            vocab_size: v,
            embed_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = dims;
        let mut embed = Mat::zeros(v, d);
        for row in 1..v {
            for col in 0..d {
                embed.set(row, col, rng.gen_range(-0.1..0.1));
            }
        }
        let mut xavier = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = Mat::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m.set(i, j, rng.gen_range(-a..a));
                }
            }
            m
        };
        ModelParams {
            dims,
            embed,
            w1: xavier(d, h),
            b1: vec![0.0; h],
            w2: xavier(h, h),
            b2: vec![0.0; h],
            wo: xavier(h, c),
            bo: vec![0.0; c],
        }
    }

    /// All-zero tensors with the same shapes; used for gradients and Adam
    /// moment accumulators.
    pub fn zeros_like(dims: EncoderDims) -> Self {
        let EncoderDims {
            vocab_size: v,
            embed_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = dims;
        ModelParams {
            dims,
            embed: Mat::zeros(v, d),
            w1: Mat::zeros(d, h),
            b1: vec![0.0; h],
            w2: Mat::zeros(h, h),
            b2: vec![0.0; h],
            wo: Mat::zeros(h, c),
            bo: vec![0.0; c],
        }
    }

    /// Tensors in a fixed order so optimizers can walk parameter/gradient
    /// pairs positionally.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            &self.embed.data,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
            &self.wo.data,
            &self.bo,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.embed.data,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.wo.data,
            &mut self.bo,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Overwrite embedding rows for vocabulary tokens present in `vectors`.
    /// Rows for absent tokens keep their random init. Returns how many rows
    /// were overwritten.
    pub fn apply_pretrained(
        &mut self,
        vocab: &Vocab,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize> {
        let d = self.dims.embed_dim;
        let mut applied = 0;
        for (token, vec) in vectors {
            if vec.len() != d {
                return Err(Error::DimMismatch(format!(
                    "pretrained vector for {token:?} has dim {}, model uses {d}",
                    vec.len()
                )));
            }
            if let Some(id) = vocab.id(token) {
                self.embed.row_mut(id).copy_from_slice(vec);
                applied += 1;
            }
        }
        Ok(applied)
    }
}

/// Parse a word-vector text file: one `token v1 v2 ... vd` row per line.
pub fn load_word_vectors(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let file = File::open(path)?;
    let mut out = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap().to_string();
        let vec: std::result::Result<Vec<f64>, _> =
            parts.map(|s| s.parse::<f64>()).collect();
        let vec = vec.map_err(|e| {
            Error::Data(format!("word vector line {}: {e}", lineno + 1))
        })?;
        if vec.is_empty() {
            return Err(Error::Data(format!(
                "word vector line {}: no components",
                lineno + 1
            )));
        }
        out.insert(token, vec);
    }
    Ok(out)
}

/// Map text to token ids. Unknown tokens fall back to UNK; text with no
/// surviving tokens encodes as a single UNK so the pooled mean is defined.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<usize> {
    let ids: Vec<usize> = tokenize(text).iter().map(|t| vocab.id_or_unk(t)).collect();
    if ids.is_empty() {
        vec![UNK_ID]
    } else {
        ids
    }
}

/// A categorical distribution over the C IND classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(pub Vec<f64>);

impl ProbDist {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Maximum softmax probability.
    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| {
                if p > bp {
                    (i, p)
                } else {
                    (bi, bp)
                }
            })
            .0
    }

    /// Shannon entropy in nats, with the 0·ln 0 = 0 convention.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Numerically stable softmax: shifts by the max logit before exponentiating.
pub fn softmax(logits: &[f64]) -> ProbDist {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    ProbDist(exps)
}

/// One dropout mask per site, in sampling order: pooled embedding, first
/// hidden, second hidden. Entries are 0 (dropped) or `1/(1-p)` (kept).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub pooled: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl DropoutMasks {
    /// Sample all three masks. The draw order (pooled, then h1, then h2, each
    /// front to back) is part of the reproducibility contract.
    pub fn sample<R: Rng>(rng: &mut R, dims: EncoderDims, p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
        let scale = 1.0 / (1.0 - p);
        let mut site = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
                .collect()
        };
        DropoutMasks {
            pooled: site(dims.embed_dim),
            h1: site(dims.hidden_dim),
            h2: site(dims.hidden_dim),
        }
    }

    /// Identity masks (nothing dropped, scale 1): a masked forward pass with
    /// these equals the deterministic pass bitwise.
    pub fn identity(dims: EncoderDims) -> Self {
        DropoutMasks {
            pooled: vec![1.0; dims.embed_dim],
            h1: vec![1.0; dims.hidden_dim],
            h2: vec![1.0; dims.hidden_dim],
        }
    }
}

/// Every intermediate value of one forward pass, retained for backprop.
///
/// `x0/x1/x2` are the post-dropout inputs actually fed to the next layer;
/// with no dropout they alias `pooled/h1/h2` in value.
#[derive(Debug, Clone)]
pub struct Activations {
    pub ids: Vec<usize>,
    pub pooled: Vec<f64>,
    pub x0: Vec<f64>,
    pub h1: Vec<f64>,
    pub x1: Vec<f64>,
    pub h2: Vec<f64>,
    pub x2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: ProbDist,
}

fn mean_pool(params: &ModelParams, ids: &[usize]) -> Vec<f64> {
    debug_assert!(!ids.is_empty(), "encode() guarantees at least one id");
    let d = params.dims.embed_dim;
    let mut pooled = vec![0.0; d];
    for &id in ids {
        let row = params.embed.row(id);
        for (p, &e) in pooled.iter_mut().zip(row) {
            *p += e;
        }
    }
    let inv = 1.0 / ids.len() as f64;
    for p in &mut pooled {
        *p *= inv;
    }
    pooled
}

fn apply_mask(x: &[f64], mask: &[f64]) -> Vec<f64> {
    x.iter().zip(mask).map(|(&v, &m)| v * m).collect()
}

fn forward_inner(params: &ModelParams, ids: &[usize], masks: Option<&DropoutMasks>) -> Activations {
    let dims = params.dims;
    let pooled = mean_pool(params, ids);
    let x0 = match masks {
        Some(m) => apply_mask(&pooled, &m.pooled),
        None => pooled.clone(),
    };

    let mut h1 = vec![0.0; dims.hidden_dim];
    params.w1.vecmat(&x0, &params.b1, &mut h1);
    for v in &mut h1 {
        *v = v.tanh();
    }
    let x1 = match masks {
        Some(m) => apply_mask(&h1, &m.h1),
        None => h1.clone(),
    };

    let mut h2 = vec![0.0; dims.hidden_dim];
    params.w2.vecmat(&x1, &params.b2, &mut h2);
    for v in &mut h2 {
        *v = v.tanh();
    }
    let x2 = match masks {
        Some(m) => apply_mask(&h2, &m.h2),
        None => h2.clone(),
    };

    let mut logits = vec![0.0; dims.num_classes];
    params.wo.vecmat(&x2, &params.bo, &mut logits);
    let probs = softmax(&logits);

    Activations {
        ids: ids.to_vec(),
        pooled,
        x0,
        h1,
        x1,
        h2,
        x2,
        logits,
        probs,
    }
}

/// Deterministic forward pass (no dropout).
pub fn forward(params: &ModelParams, ids: &[usize]) -> Activations {
    forward_inner(params, ids, None)
}

/// Stochastic forward pass with fixed dropout masks.
pub fn forward_with_masks(
    params: &ModelParams,
    ids: &[usize],
    masks: &DropoutMasks,
) -> Activations {
    forward_inner(params, ids, Some(masks))
}

/// Penultimate representation (second hidden layer, post-tanh, no dropout):
/// the feature space the distance-based detectors operate in.
pub fn penultimate_features(params: &ModelParams, ids: &[usize]) -> Vec<f64> {
    forward(params, ids).h2
}

/// A trained model bound to the vocabulary it was trained with.
///
/// JSON serialization preserves every f64 bit-exactly, so reloading a
/// checkpoint reproduces scores to the last ulp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Fingerprint of the paired vocabulary; verified on load when the vocab
    /// is supplied.
    pub vocab_sha256: String,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: &Vocab) -> Self {
        Checkpoint {
            params,
            vocab_sha256: vocab.sha256_hex(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = File::create(path)?;
        serde_json::to_writer(BufWriter::new(out), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Load and verify the checkpoint was trained with `vocab`.
    pub fn load_with_vocab(path: &Path, vocab: &Vocab) -> Result<Checkpoint> {
        let ckpt = Checkpoint::load(path)?;
        let expect = vocab.sha256_hex();
        if ckpt.vocab_sha256 != expect {
            return Err(Error::Data(format!(
                "checkpoint vocabulary fingerprint {} does not match supplied vocabulary {}",
                ckpt.vocab_sha256, expect
            )));
        }
        Ok(ckpt)
    }
}
