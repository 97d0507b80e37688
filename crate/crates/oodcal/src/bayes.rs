//! Monte-Carlo dropout ensemble.
//!
//! An input is pushed through the network N times with dropout active; the N
//! post-softmax distributions are averaged into one predictive distribution.
//! Probabilities are averaged, not logits: a logit average collapses back to
//! a single deterministic pass and discards the spread between passes, which
//! is exactly the signal the OOD scores read.
//!
//! Reproducibility contract: pass n for utterance u draws its masks from an
//! RNG derived as `derive_stream(seed, u, n)`. Streams are independent of
//! batch order and thread count, so parallel and sequential evaluation agree
//! bitwise.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{forward_with_masks, DropoutMasks, ModelParams, ProbDist};
use crate::{Error, Result};

/// Ensemble hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    /// Number of stochastic passes N.
    pub n: usize,
    /// Inference dropout probability.
    pub p: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n: 100,
            p: 0.7,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("mc passes N must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "mc dropout p must be in [0, 1), got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// splitmix64 finalizer: a stateless 64-bit avalanche.
fn sm_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream for (base seed, key1, key2).
///
/// Used for every RNG in the crate: `(seed, utterance, pass)` for inference
/// masks, `(seed, epoch, purpose)` for training. Counter-based derivation
/// keeps streams stable under reordering and parallelism.
pub fn derive_stream(base: u64, key1: u64, key2: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let s0 = sm_mix(base);
    let s1 = sm_mix(s0 ^ key1);
    let s2 = sm_mix(s1 ^ key2);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let word = sm_mix(s2 ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    rand_chacha::ChaCha8Rng::from_seed(seed)
}

/// Derive a child seed for a named purpose from a master seed.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    sm_mix(sm_mix(base) ^ key)
}

/// Compensated (Neumaier) accumulator: running f64 sums whose result does
/// not drift with magnitude ordering, as long as terms arrive in a fixed
/// order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mc_pass(params: &ModelParams, ids: &[usize], cfg: &McConfig, utt_id: u64, pass: u64) -> ProbDist {
    let mut rng = derive_stream(cfg.seed, utt_id, pass);
    let masks = DropoutMasks::sample(&mut rng, params.dims, cfg.p);
    forward_with_masks(params, ids, &masks).probs
}

/// MC-dropout predictive distribution for one utterance with an explicit
/// utterance key. Passes always accumulate in order n = 0..N.
pub fn mc_predict_keyed(
    params: &ModelParams,
    ids: &[usize],
    cfg: &McConfig,
    utt_id: u64,
) -> ProbDist {
    let c = params.dims.num_classes;
    let mut acc = vec![Neumaier::default(); c];
    for n in 0..cfg.n as u64 {
        let probs = mc_pass(params, ids, cfg, utt_id, n);
        for (a, &p) in acc.iter_mut().zip(probs.as_slice()) {
            a.add(p);
        }
    }
    let inv = 1.0 / cfg.n as f64;
    ProbDist(acc.iter().map(|a| a.value() * inv).collect())
}

/// Single-utterance convenience entry point: utterance key 0, so it agrees
/// bitwise with element 0 of [`mc_predict_batch`].
pub fn mc_predict(params: &ModelParams, ids: &[usize], cfg: &McConfig) -> ProbDist {
    mc_predict_keyed(params, ids, cfg, 0)
}

/// Keyed prediction that also returns the per-pass distributions, in pass
/// order. The mean is identical to [`mc_predict_keyed`].
pub fn mc_predict_samples(
    params: &ModelParams,
    ids: &[usize],
    cfg: &McConfig,
    utt_id: u64,
) -> (ProbDist, Vec<ProbDist>) {
    let c = params.dims.num_classes;
    let mut acc = vec![Neumaier::default(); c];
    let mut samples = Vec::with_capacity(cfg.n);
    for n in 0..cfg.n as u64 {
        let probs = mc_pass(params, ids, cfg, utt_id, n);
        for (a, &p) in acc.iter_mut().zip(probs.as_slice()) {
            a.add(p);
        }
        samples.push(probs);
    }
    let inv = 1.0 / cfg.n as f64;
    (ProbDist(acc.iter().map(|a| a.value() * inv).collect()), samples)
}

/// Predictive distributions for a batch, in input order. Utterance i uses
/// key i. Parallelized over utterances; per-utterance work is sequential, so
/// results match the single-utterance entry points bitwise at any thread
/// count.
pub fn mc_predict_batch(
    params: &ModelParams,
    batch: &[Vec<usize>],
    cfg: &McConfig,
) -> Vec<ProbDist> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, ids)| mc_predict_keyed(params, ids, cfg, i as u64))
        .collect()
}

/// Dump every per-pass distribution for a batch to CSV
/// (`utterance_id,pass,p0..p{C-1}`), for offline inspection of ensemble
/// spread.
pub fn write_sample_dump(
    path: &Path,
    params: &ModelParams,
    batch: &[Vec<usize>],
    cfg: &McConfig,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let c = params.dims.num_classes;
    let mut header = vec!["utterance_id".to_string(), "sample_index".to_string()];
    header.extend((0..c).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (i, ids) in batch.iter().enumerate() {
        let (_, samples) = mc_predict_samples(params, ids, cfg, i as u64);
        for (n, probs) in samples.iter().enumerate() {
            let mut rec = vec![i.to_string(), n.to_string()];
            rec.extend(probs.as_slice().iter().map(|p| format!("{p}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{forward, EncoderDims, ModelParams};
    use approx::assert_relative_eq;

    fn toy_params() -> ModelParams {
        let dims = EncoderDims {
            vocab_size: 6,
            embed_dim: 4,
            hidden_dim: 5,
            num_classes: 3,
        };
        let mut rng = derive_stream(42, 0, 0);
        ModelParams::init(dims, &mut rng)
    }

    #[test]
    fn neumaier_recovers_cancelled_term() {
        let mut acc = Neumaier::default();
        for x in [1e16, 1.0, -1e16] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 1.0);
        let naive = (1e16f64 + 1.0) + -1e16;
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn derive_stream_is_deterministic_and_keyed() {
        use rand::RngCore;
        let a = derive_stream(1, 2, 3).next_u64();
        let b = derive_stream(1, 2, 3).next_u64();
        assert_eq!(a, b);
        assert_ne!(a, derive_stream(1, 2, 4).next_u64());
        assert_ne!(a, derive_stream(1, 3, 2).next_u64());
        assert_ne!(a, derive_stream(2, 2, 3).next_u64());
    }

    #[test]
    fn two_pass_mean_matches_manual_replication() {
        let params = toy_params();
        let ids = [2usize, 3, 5];
        let cfg = McConfig {
            n: 2,
            p: 0.5,
            seed: 3,
        };
        let got = mc_predict_keyed(&params, &ids, &cfg, 7);

        // manual replication of the two passes
        let p0 = mc_pass(&params, &ids, &cfg, 7, 0);
        let p1 = mc_pass(&params, &ids, &cfg, 7, 1);
        assert_ne!(p0, p1, "distinct passes should see distinct masks");
        for k in 0..3 {
            let want = (p0.as_slice()[k] + p1.as_slice()[k]) / 2.0;
            assert_relative_eq!(got.as_slice()[k], want, max_relative = 1e-15);
        }
        assert_relative_eq!(got.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_is_bitwise_deterministic() {
        let params = toy_params();
        let ids = [1usize, 4];
        let cfg = McConfig {
            n: 25,
            p: 0.7,
            seed: 11,
        };
        let a = mc_predict_keyed(&params, &ids, &cfg, 5);
        let b = mc_predict_keyed(&params, &ids, &cfg, 5);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_dropout_collapses_to_deterministic_pass() {
        let params = toy_params();
        let ids = [0usize, 1, 2];
        let cfg = McConfig {
            n: 10,
            p: 0.0,
            seed: 9,
        };
        let mc = mc_predict(&params, &ids, &cfg);
        let det = forward(&params, &ids).probs;
        for (x, y) in mc.as_slice().iter().zip(det.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn batch_matches_keyed_singles_bitwise() {
        let params = toy_params();
        let batch = vec![vec![1usize, 2], vec![3usize], vec![4usize, 5, 0]];
        let cfg = McConfig {
            n: 8,
            p: 0.6,
            seed: 21,
        };
        let out = mc_predict_batch(&params, &batch, &cfg);
        for (i, ids) in batch.iter().enumerate() {
            let single = mc_predict_keyed(&params, ids, &cfg, i as u64);
            for (x, y) in out[i].as_slice().iter().zip(single.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // the convenience single-utterance call is batch element 0
        let first = mc_predict(&params, &batch[0], &cfg);
        assert_eq!(first, out[0]);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let params = toy_params();
        let batch: Vec<Vec<usize>> = (0..40).map(|i| vec![i % 6, (i + 1) % 6]).collect();
        let cfg = McConfig {
            n: 16,
            p: 0.7,
            seed: 33,
        };
        let run = |threads: usize| -> Vec<ProbDist> {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_predict_batch(&params, &batch, &cfg))
        };
        let one = run(1);
        let eight = run(8);
        for (a, b) in one.iter().zip(&eight) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn samples_mean_matches_predict() {
        let params = toy_params();
        let ids = [2usize, 0];
        let cfg = McConfig {
            n: 12,
            p: 0.5,
            seed: 4,
        };
        let mean = mc_predict_keyed(&params, &ids, &cfg, 3);
        let (mean2, samples) = mc_predict_samples(&params, &ids, &cfg, 3);
        assert_eq!(mean, mean2);
        assert_eq!(samples.len(), 12);
        for probs in &samples {
            assert_relative_eq!(probs.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_entropy_at_least_mean_pass_entropy() {
        // Jensen: H(mean of distributions) >= mean of entropies.
        let params = toy_params();
        let cfg = McConfig {
            n: 20,
            p: 0.7,
            seed: 2,
        };
        for utt in 0..25u64 {
            let ids = vec![(utt % 6) as usize, ((utt * 7 + 1) % 6) as usize];
            let (mean, samples) = mc_predict_samples(&params, &ids, &cfg, utt);
            let mean_h: f64 =
                samples.iter().map(|p| p.entropy()).sum::<f64>() / samples.len() as f64;
            assert!(
                mean.entropy() >= mean_h - 1e-12,
                "Jensen violated: H(mean)={} < mean H={}",
                mean.entropy(),
                mean_h
            );
        }
    }

    #[test]
    fn estimator_variance_shrinks_with_more_passes() {
        let params = toy_params();
        let ids = [1usize, 3, 5];
        let spread = |n: usize| -> f64 {
            let reps: Vec<f64> = (0..24)
                .map(|s| {
                    let cfg = McConfig {
                        n,
                        p: 0.7,
                        seed: 1000 + s,
                    };
                    mc_predict(&params, &ids, &cfg).as_slice()[0]
                })
                .collect();
            let mean = reps.iter().sum::<f64>() / reps.len() as f64;
            (reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / reps.len() as f64).sqrt()
        };
        let coarse = spread(5);
        let fine = spread(80);
        // sqrt(80/5) = 4, so even a noisy estimate clears 2x easily
        assert!(
            coarse > 2.0 * fine,
            "std at N=5 ({coarse}) should dominate std at N=80 ({fine})"
        );
    }

    #[test]
    fn sample_dump_writes_one_row_per_pass() {
        let params = toy_params();
        let batch = vec![vec![1usize, 2], vec![0usize]];
        let cfg = McConfig {
            n: 3,
            p: 0.5,
            seed: 8,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.csv");
        write_sample_dump(&path, &params, &batch, &cfg).unwrap();

        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let headers = rdr.headers().unwrap().clone();
        assert_eq!(
            headers.iter().collect::<Vec<_>>(),
            vec!["utterance_id", "sample_index", "p0", "p1", "p2"]
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2 * 3);
        // rows round-trip to probabilities summing to 1
        for row in &rows {
            let sum: f64 = (2..5).map(|k| row[k].parse::<f64>().unwrap()).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
        // pass keying matches the keyed single call
        let (_, samples) = mc_predict_samples(&params, &batch[1], &cfg, 1);
        let row = &rows[3 + 2]; // utterance 1, pass 2
        assert_eq!(row[0].to_string(), "1");
        assert_eq!(row[1].to_string(), "2");
        let got: f64 = row[2].parse().unwrap();
        assert_relative_eq!(got, samples[2].as_slice()[0], max_relative = 1e-15);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(McConfig { n: 0, p: 0.5, seed: 0 }.validate().is_err());
        assert!(McConfig { n: 5, p: 1.0, seed: 0 }.validate().is_err());
        assert!(McConfig { n: 5, p: -0.1, seed: 0 }.validate().is_err());
        assert!(McConfig::default().validate().is_ok());
        assert_eq!(McConfig::default().n, 100);
        assert_relative_eq!(McConfig::default().p, 0.7);
    }
}
