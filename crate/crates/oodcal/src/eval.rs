//! Metrics and end-to-end evaluation pipelines.
//!
//! Labels are handled as dense indices over C + 1 classes: the C intents plus
//! index C for OOD. All F1-style metrics use the 0/0 = 0 convention so empty
//! classes contribute zero instead of NaN.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{mc_predict_batch, McConfig};
use crate::data::{Dataset, Label, Utterance, Vocab};
use crate::detect::{
    calibrate_threshold, classify_or_reject, entropy_score, fit_gda, fit_lof, msp_score,
    CalibrationObjective, CalibrationPoint, DetectorKind, ScoreRow, Threshold,
};
use crate::encoder::{encode, forward, ModelParams, ProbDist};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Confusion statistics and metrics
// ---------------------------------------------------------------------------

/// Confusion counts over the C + 1 dense classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionStats {
    counts: Vec<usize>,
    num_classes: usize,
}

impl ConfusionStats {
    /// Tally gold/pred pairs of dense indices (OOD = num_classes).
    pub fn from_pairs(golds: &[usize], preds: &[usize], num_classes: usize) -> Self {
        assert_eq!(golds.len(), preds.len());
        let side = num_classes + 1;
        let mut counts = vec![0usize; side * side];
        for (&g, &p) in golds.iter().zip(preds) {
            assert!(g < side && p < side, "dense label out of range");
            counts[g * side + p] += 1;
        }
        ConfusionStats { counts, num_classes }
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold * (self.num_classes + 1) + pred]
    }

    fn class_tp_fp_fn(&self, k: usize) -> (usize, usize, usize) {
        let side = self.num_classes + 1;
        let tp = self.get(k, k);
        let mut fp = 0;
        let mut fn_ = 0;
        for other in 0..side {
            if other != k {
                fp += self.get(other, k);
                fn_ += self.get(k, other);
            }
        }
        (tp, fp, fn_)
    }

    /// Per-class F1 with the 0/0 = 0 convention.
    pub fn class_f1(&self, k: usize) -> f64 {
        let (tp, fp, fn_) = self.class_tp_fp_fn(k);
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// F1 of the OOD class (binary F1 with OOD as positive).
    pub fn ood_f1(&self) -> f64 {
        self.class_f1(self.num_classes)
    }

    /// Recall of the OOD class.
    pub fn ood_recall(&self) -> f64 {
        let (tp, _, fn_) = self.class_tp_fp_fn(self.num_classes);
        if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        }
    }

    /// Macro-F1 over the C intent classes only (OOD errors still count as
    /// fp/fn inside each class, the OOD class just isn't averaged in).
    pub fn ind_macro_f1(&self) -> f64 {
        (0..self.num_classes).map(|k| self.class_f1(k)).sum::<f64>() / self.num_classes as f64
    }

    /// Macro-F1 over all C + 1 classes, the threshold-calibration objective.
    pub fn macro_f1_all(&self) -> f64 {
        let side = self.num_classes + 1;
        (0..side).map(|k| self.class_f1(k)).sum::<f64>() / side as f64
    }

    /// Accuracy over gold-IND rows only; predicting OOD for a gold-IND
    /// utterance counts as an error.
    pub fn ind_accuracy(&self) -> f64 {
        let mut correct = 0;
        let mut total = 0;
        for g in 0..self.num_classes {
            correct += self.get(g, g);
            for p in 0..=self.num_classes {
                total += self.get(g, p);
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// The headline numbers reported for one detector run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ood_f1: f64,
    pub ood_recall: f64,
    /// Macro-F1 over the C intent classes.
    pub ind_f1: f64,
    /// Accuracy over gold-IND utterances.
    pub ind_acc: f64,
    /// Macro-F1 over all C + 1 classes.
    pub macro_f1_all: f64,
}

pub fn compute_metrics(stats: &ConfusionStats) -> Metrics {
    Metrics {
        ood_f1: stats.ood_f1(),
        ood_recall: stats.ood_recall(),
        ind_f1: stats.ind_macro_f1(),
        ind_acc: stats.ind_accuracy(),
        macro_f1_all: stats.macro_f1_all(),
    }
}

// ---------------------------------------------------------------------------
// KL to uniform
// ---------------------------------------------------------------------------

/// KL(p || uniform) = ln C - H(p), in nats. Zero when p is uniform, ln C
/// when p is one-hot. Tiny negative values can appear for near-uniform p
/// through float cancellation; they are reported as-is.
pub fn kl_to_uniform(p: &ProbDist) -> f64 {
    (p.len() as f64).ln() - p.entropy()
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Mean and median KL-to-uniform over a set of distributions.
pub fn kl_summary(dists: &[ProbDist]) -> (f64, f64) {
    assert!(!dists.is_empty());
    let mut kls: Vec<f64> = dists.iter().map(kl_to_uniform).collect();
    let mean = kls.iter().sum::<f64>() / kls.len() as f64;
    let med = median(&mut kls);
    (mean, med)
}

// ---------------------------------------------------------------------------
// Predictive distributions
// ---------------------------------------------------------------------------

/// Distributions for a split, in order. `mc = None` is the plain
/// deterministic pass; `Some` runs the MC-dropout ensemble keyed by position.
pub fn predictive_dists(
    params: &ModelParams,
    vocab: &Vocab,
    utts: &[Utterance],
    mc: Option<&McConfig>,
) -> Vec<ProbDist> {
    let batch: Vec<Vec<usize>> = utts.iter().map(|u| encode(&u.text, vocab)).collect();
    match mc {
        Some(cfg) => mc_predict_batch(params, &batch, cfg),
        None => batch
            .par_iter()
            .map(|ids| forward(params, ids).probs)
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Detection pipeline
// ---------------------------------------------------------------------------

/// What to run: which detectors, whether scores come from the MC ensemble or
/// a single deterministic pass, and how the cutoff is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub detectors: Vec<DetectorKind>,
    /// `None` disables the Bayesian ensemble (single deterministic pass).
    pub mc: Option<McConfig>,
    /// Neighborhood size for the LOF baseline.
    pub lof_k: usize,
    pub objective: CalibrationObjective,
}

impl Default for DetectorSetup {
    fn default() -> Self {
        DetectorSetup {
            detectors: DetectorKind::ALL.to_vec(),
            mc: Some(McConfig::default()),
            lof_k: 20,
            objective: CalibrationObjective::default(),
        }
    }
}

impl DetectorSetup {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::Config("no detectors requested".into()));
        }
        for (i, a) in self.detectors.iter().enumerate() {
            if self.detectors[..i].contains(a) {
                return Err(Error::Config(format!("detector {a} requested twice")));
            }
        }
        if let Some(mc) = &self.mc {
            mc.validate()?;
        }
        if self.lof_k == 0 {
            return Err(Error::Config("lof_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResult {
    pub kind: DetectorKind,
    pub threshold: Threshold,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub results: Vec<DetectorResult>,
    /// Test-split rows for every detector, grouped in detector order;
    /// `utterance_id` is the position in the test split.
    pub score_rows: Vec<ScoreRow>,
}

/// Deterministic per-utterance features and argmax for the distance
/// detectors (one forward pass yields both).
fn det_features(
    params: &ModelParams,
    vocab: &Vocab,
    utts: &[Utterance],
) -> Vec<(Vec<f64>, usize)> {
    utts.par_iter()
        .map(|u| {
            let act = forward(params, &encode(&u.text, vocab));
            (act.h2, act.probs.argmax())
        })
        .collect()
}

/// Calibrate on the validation split and evaluate on the test split for each
/// requested detector.
///
/// MSP and entropy read the (possibly MC-averaged) predictive distribution;
/// LOF and GDA operate on penultimate features of a deterministic pass, with
/// the deterministic argmax as the would-be class.
pub fn run_detection(
    dataset: &Dataset,
    vocab: &Vocab,
    params: &ModelParams,
    setup: &DetectorSetup,
) -> Result<DetectionOutcome> {
    setup.validate()?;
    dataset.validate()?;

    let need_probs = setup
        .detectors
        .iter()
        .any(|k| matches!(k, DetectorKind::Msp | DetectorKind::Entropy));
    let need_dist = setup
        .detectors
        .iter()
        .any(|k| matches!(k, DetectorKind::Lof | DetectorKind::Gda));

    let (val_probs, test_probs) = if need_probs {
        (
            predictive_dists(params, vocab, &dataset.val, setup.mc.as_ref()),
            predictive_dists(params, vocab, &dataset.test, setup.mc.as_ref()),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    let (val_det, test_det, lof_model, gda_model) = if need_dist {
        let train_feats: Vec<(Vec<f64>, usize)> = dataset
            .train
            .par_iter()
            .map(|u| {
                let label = match u.label {
                    Label::Ind(c) => c,
                    Label::Ood => unreachable!("validate() rejects OOD in train"),
                };
                (
                    forward(params, &encode(&u.text, vocab)).h2,
                    label,
                )
            })
            .collect();
        let features: Vec<Vec<f64>> = train_feats.iter().map(|(f, _)| f.clone()).collect();
        let labels: Vec<usize> = train_feats.iter().map(|(_, l)| *l).collect();
        let lof = if setup.detectors.contains(&DetectorKind::Lof) {
            Some(fit_lof(features.clone(), setup.lof_k)?)
        } else {
            None
        };
        let gda = if setup.detectors.contains(&DetectorKind::Gda) {
            Some(fit_gda(&features, &labels, dataset.num_classes)?)
        } else {
            None
        };
        (
            det_features(params, vocab, &dataset.val),
            det_features(params, vocab, &dataset.test),
            lof,
            gda,
        )
    } else {
        (Vec::new(), Vec::new(), None, None)
    };

    let score_and_pred = |kind: DetectorKind, i: usize, split_probs: &[ProbDist], split_det: &[(Vec<f64>, usize)]| -> (f64, usize) {
        match kind {
            DetectorKind::Msp => (msp_score(&split_probs[i]), split_probs[i].argmax()),
            DetectorKind::Entropy => (entropy_score(&split_probs[i]), split_probs[i].argmax()),
            DetectorKind::Lof => (
                lof_model.as_ref().expect("lof fitted").score(&split_det[i].0),
                split_det[i].1,
            ),
            DetectorKind::Gda => (
                gda_model.as_ref().expect("gda fitted").score(&split_det[i].0),
                split_det[i].1,
            ),
        }
    };

    let c = dataset.num_classes;
    let mut results = Vec::with_capacity(setup.detectors.len());
    let mut score_rows = Vec::with_capacity(setup.detectors.len() * dataset.test.len());

    for &kind in &setup.detectors {
        let val_points: Vec<CalibrationPoint> = (0..dataset.val.len())
            .map(|i| {
                let (score, pred) = score_and_pred(kind, i, &val_probs, &val_det);
                CalibrationPoint {
                    score,
                    gold: dataset.val[i].label,
                    pred,
                }
            })
            .collect();
        let threshold = calibrate_threshold(kind, &val_points, c, setup.objective)?;

        let mut golds = Vec::with_capacity(dataset.test.len());
        let mut preds = Vec::with_capacity(dataset.test.len());
        for i in 0..dataset.test.len() {
            let (score, pred_class) = score_and_pred(kind, i, &test_probs, &test_det);
            let predicted = classify_or_reject(pred_class, score, &threshold).to_index(c);
            let gold = dataset.test[i].label;
            golds.push(gold.to_index(c));
            preds.push(predicted);
            score_rows.push(ScoreRow {
                utterance_id: i,
                detector: kind,
                score,
                gold_is_ood: gold.is_ood(),
                predicted,
                gold_label: gold.to_index(c),
            });
        }
        let stats = ConfusionStats::from_pairs(&golds, &preds, c);
        results.push(DetectorResult {
            kind,
            threshold,
            metrics: compute_metrics(&stats),
        });
    }

    Ok(DetectionOutcome {
        results,
        score_rows,
    })
}

// ---------------------------------------------------------------------------
// Parameter sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub n: usize,
    pub metrics: Metrics,
}

/// Grid sweep over inference dropout p and pass count N for one
/// probability-based detector. Every cell reuses the same base seed, so cells
/// differ only in (p, N).
pub fn sweep(
    dataset: &Dataset,
    vocab: &Vocab,
    params: &ModelParams,
    detector: DetectorKind,
    ps: &[f64],
    ns: &[usize],
    mc_seed: u64,
    objective: CalibrationObjective,
) -> Result<Vec<SweepRow>> {
    if !matches!(detector, DetectorKind::Msp | DetectorKind::Entropy) {
        return Err(Error::Config(format!(
            "sweep varies (p, N), which only affects probability detectors; got {detector}"
        )));
    }
    if ps.is_empty() || ns.is_empty() {
        return Err(Error::Config("sweep grid must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(ps.len() * ns.len());
    for &p in ps {
        for &n in ns {
            let setup = DetectorSetup {
                detectors: vec![detector],
                mc: Some(McConfig { n, p, seed: mc_seed }),
                lof_k: 1,
                objective,
            };
            let outcome = run_detection(dataset, vocab, params, &setup)?;
            rows.push(SweepRow {
                p,
                n,
                metrics: outcome.results[0].metrics,
            });
        }
    }
    Ok(rows)
}

/// CSV layout: `p,N,ood_f1,ood_recall,ind_f1,ind_acc`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["p", "N", "ood_f1", "ood_recall", "ind_f1", "ind_acc"])?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.n.to_string(),
            r.metrics.ood_f1.to_string(),
            r.metrics.ood_recall.to_string(),
            r.metrics.ind_f1.to_string(),
            r.metrics.ind_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// KL analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    /// "ind" or "ood".
    pub split: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

/// KL-to-uniform of the test-split predictive distributions, summarized
/// separately for IND and OOD utterances, at each ensemble size in `ns`.
pub fn kl_analysis(
    dataset: &Dataset,
    vocab: &Vocab,
    params: &ModelParams,
    ns: &[usize],
    p: f64,
    seed: u64,
) -> Result<Vec<KlRow>> {
    if ns.is_empty() {
        return Err(Error::Config("kl analysis needs at least one N".into()));
    }
    let mut rows = Vec::with_capacity(ns.len() * 2);
    for &n in ns {
        let mc = McConfig { n, p, seed };
        mc.validate()?;
        let dists = predictive_dists(params, vocab, &dataset.test, Some(&mc));
        let ind: Vec<ProbDist> = dists
            .iter()
            .zip(&dataset.test)
            .filter(|(_, u)| !u.label.is_ood())
            .map(|(d, _)| d.clone())
            .collect();
        let ood: Vec<ProbDist> = dists
            .iter()
            .zip(&dataset.test)
            .filter(|(_, u)| u.label.is_ood())
            .map(|(d, _)| d.clone())
            .collect();
        if ind.is_empty() || ood.is_empty() {
            return Err(Error::Data(
                "kl analysis needs both IND and OOD test utterances".into(),
            ));
        }
        let (mean, med) = kl_summary(&ind);
        rows.push(KlRow {
            split: "ind".into(),
            n,
            mean,
            median: med,
        });
        let (mean, med) = kl_summary(&ood);
        rows.push(KlRow {
            split: "ood".into(),
            n,
            mean,
            median: med,
        });
    }
    Ok(rows)
}

/// CSV layout: `split,N,mean,median`.
pub fn write_kl_csv(path: &Path, rows: &[KlRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["split", "N", "mean", "median"])?;
    for r in rows {
        w.write_record([
            r.split.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Inference cost benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Ensemble size; 0 is the deterministic single-pass baseline.
    pub n: usize,
    /// Median wall time of scoring the whole test split, over the runs.
    pub median_seconds: f64,
    pub ood_f1: f64,
}

/// Wall-time cost of scoring the test split at each ensemble size, plus the
/// OOD F1 the detector reaches there (quality measured outside the timer).
pub fn bench(
    dataset: &Dataset,
    vocab: &Vocab,
    params: &ModelParams,
    detector: DetectorKind,
    ns: &[usize],
    runs: usize,
    p: f64,
    seed: u64,
    objective: CalibrationObjective,
) -> Result<Vec<BenchRow>> {
    if !matches!(detector, DetectorKind::Msp | DetectorKind::Entropy) {
        return Err(Error::Config(format!(
            "bench times the MC ensemble, which only drives probability detectors; got {detector}"
        )));
    }
    if ns.is_empty() || runs == 0 {
        return Err(Error::Config("bench needs Ns and at least one run".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mc = if n == 0 {
            None
        } else {
            let cfg = McConfig { n, p, seed };
            cfg.validate()?;
            Some(cfg)
        };

        let mut times: Vec<f64> = (0..runs)
            .map(|_| {
                let t0 = Instant::now();
                let dists = predictive_dists(params, vocab, &dataset.test, mc.as_ref());
                let dt = t0.elapsed().as_secs_f64();
                std::hint::black_box(&dists);
                dt
            })
            .collect();
        let median_seconds = median(&mut times);

        let setup = DetectorSetup {
            detectors: vec![detector],
            mc,
            lof_k: 1,
            objective,
        };
        let outcome = run_detection(dataset, vocab, params, &setup)?;
        rows.push(BenchRow {
            n,
            median_seconds,
            ood_f1: outcome.results[0].metrics.ood_f1,
        });
    }
    Ok(rows)
}

/// CSV layout: `N,median_seconds,ood_f1`.
pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["N", "median_seconds", "ood_f1"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.median_seconds.to_string(),
            r.ood_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Fixed-width histogram over [lo, hi]; out-of-range values clamp to the end
/// bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    assert!(bins >= 1 && hi > lo);
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = ((v - lo) / width).floor() as isize;
        let idx = idx.clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Paired IND/OOD score histograms over the pooled score range, plus the
/// overlap coefficient of the two distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPair {
    pub lo: f64,
    pub hi: f64,
    pub ind: Vec<usize>,
    pub ood: Vec<usize>,
    /// Σ min(h_ind, h_ood) over the count-normalized histograms: 0 for
    /// disjoint score ranges, 1 for identical ones.
    pub overlap: f64,
}

/// Bin both score samples into `bins` equal-width buckets spanning the
/// pooled [min, max] range and measure how much the two histograms overlap.
/// A degenerate pooled range (all scores equal) widens to (0, 1).
pub fn confidence_histograms(ind: &[f64], ood: &[f64], bins: usize) -> Result<HistogramPair> {
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::Config("confidence_histograms needs non-empty score lists".into()));
    }
    if bins == 0 {
        return Err(Error::Config("histogram bin count must be positive".into()));
    }
    let pooled = ind.iter().chain(ood);
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if !lo.is_finite() || hi - lo < 1e-12 {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    let ind_counts = histogram(ind, lo, hi, bins);
    let ood_counts = histogram(ood, lo, hi, bins);
    let overlap = ind_counts
        .iter()
        .zip(&ood_counts)
        .map(|(&a, &b)| f64::min(a as f64 / ind.len() as f64, b as f64 / ood.len() as f64))
        .sum();
    Ok(HistogramPair {
        lo,
        hi,
        ind: ind_counts,
        ood: ood_counts,
        overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::derive_stream;
    use crate::data::{build_vocab, generate_synthetic, SyntheticSpec};
    use crate::detect::detect;
    use crate::encoder::EncoderDims;
    use crate::trainer::{train, TrainConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn confusion_matches_hand_worked_example() {
        // C = 2, OOD index 2. golds/preds worked out by hand:
        // class 0: tp 1 fp 1 fn 1 -> F1 1/2
        // class 1: tp 1 fp 1 fn 0 -> F1 2/3
        // OOD:     tp 1 fp 0 fn 1 -> F1 2/3, recall 1/2
        let golds = [0, 0, 1, 2, 2];
        let preds = [0, 1, 1, 2, 0];
        let stats = ConfusionStats::from_pairs(&golds, &preds, 2);
        assert_relative_eq!(stats.class_f1(0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(stats.class_f1(1), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(stats.ood_f1(), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(stats.ood_recall(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(stats.ind_macro_f1(), 7.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(stats.macro_f1_all(), 11.0 / 18.0, epsilon = 1e-15);
        // gold-IND rows: preds 0, 1, 1 vs golds 0, 0, 1 -> 2/3
        assert_relative_eq!(stats.ind_accuracy(), 2.0 / 3.0, epsilon = 1e-15);

        let m = compute_metrics(&stats);
        assert_eq!(m.ood_f1, stats.ood_f1());
        assert_eq!(m.ind_f1, stats.ind_macro_f1());
        assert_eq!(m.ind_acc, stats.ind_accuracy());
    }

    #[test]
    fn empty_classes_score_zero_not_nan() {
        // nothing is ever gold or predicted OOD
        let stats = ConfusionStats::from_pairs(&[0, 1], &[0, 1], 2);
        assert_eq!(stats.ood_f1(), 0.0);
        assert_eq!(stats.ood_recall(), 0.0);
        assert_relative_eq!(stats.macro_f1_all(), 2.0 / 3.0, epsilon = 1e-15);
        // no gold IND at all
        let stats = ConfusionStats::from_pairs(&[2, 2], &[2, 0], 2);
        assert_eq!(stats.ind_accuracy(), 0.0);
        assert!(stats.ind_macro_f1() >= 0.0);
    }

    #[test]
    fn kl_reference_points() {
        let uniform = ProbDist(vec![0.25; 4]);
        assert_relative_eq!(kl_to_uniform(&uniform), 0.0, epsilon = 1e-14);

        // ln 150 frozen from high-precision evaluation
        let mut onehot = vec![0.0; 150];
        onehot[17] = 1.0;
        assert_relative_eq!(
            kl_to_uniform(&ProbDist(onehot)),
            5.01063529409625575,
            max_relative = 1e-15
        );
    }

    #[test]
    fn kl_plus_entropy_is_log_c_for_random_dists() {
        let mut rng = derive_stream(3, 0, 0);
        for _ in 0..200 {
            let c = rng.gen_range(2..40);
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.001..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let p = ProbDist(raw.into_iter().map(|x| x / sum).collect());
            let identity = kl_to_uniform(&p) + p.entropy();
            assert_relative_eq!(identity, (c as f64).ln(), max_relative = 1e-12);
            assert!(kl_to_uniform(&p) >= -1e-12);
        }
    }

    #[test]
    fn median_handles_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [5.0]), 5.0);
    }

    #[test]
    fn histogram_bins_and_clamps() {
        let h = histogram(&[0.0, 0.05, 0.999, 1.0, -0.5, 2.0], 0.0, 1.0, 10);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0], 3); // 0.0, 0.05, clamped -0.5
        assert_eq!(h[9], 3); // 0.999, 1.0 (clamped), 2.0 (clamped)
        assert_eq!(h.iter().sum::<usize>(), 6);
    }

    #[test]
    fn confidence_overlap_endpoints() {
        // disjoint score ranges -> 0
        let pair = confidence_histograms(&[0.1, 0.2, 0.15], &[0.8, 0.9], 10).unwrap();
        assert_eq!(pair.overlap, 0.0);
        assert_eq!(pair.ind.iter().sum::<usize>(), 3);
        assert_eq!(pair.ood.iter().sum::<usize>(), 2);
        assert_eq!((pair.lo, pair.hi), (0.1, 0.9));

        // identical score lists -> 1, even with unequal sample sizes
        let pair = confidence_histograms(&[0.3, 0.3, 0.7, 0.7], &[0.3, 0.7], 5).unwrap();
        assert_relative_eq!(pair.overlap, 1.0, epsilon = 1e-15);

        // a single repeated score widens the degenerate range to (0, 1)
        let pair = confidence_histograms(&[0.5], &[0.5], 4).unwrap();
        assert_eq!((pair.lo, pair.hi), (0.0, 1.0));
        assert_relative_eq!(pair.overlap, 1.0, epsilon = 1e-15);

        assert!(confidence_histograms(&[], &[0.5], 4).is_err());
        assert!(confidence_histograms(&[0.5], &[], 4).is_err());
        assert!(confidence_histograms(&[0.5], &[0.5], 0).is_err());
    }

    #[test]
    fn bayes_reduces_confidence_overlap_on_benchmark() {
        let ds = generate_synthetic(&SyntheticSpec::benchmark(0)).unwrap();
        let vocab = build_vocab(&ds, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            embed_dim: 64,
            hidden_dim: 128,
            num_classes: ds.num_classes,
        };
        let out = train(&ds, &vocab, dims, &TrainConfig { seed: 0, ..TrainConfig::default() })
            .unwrap();

        let max_probs = |mc: Option<&McConfig>| -> (Vec<f64>, Vec<f64>) {
            let dists = predictive_dists(&out.params, &vocab, &ds.test, mc);
            let mut ind = Vec::new();
            let mut ood = Vec::new();
            for (d, u) in dists.iter().zip(&ds.test) {
                if u.label.is_ood() {
                    ood.push(d.max_prob());
                } else {
                    ind.push(d.max_prob());
                }
            }
            (ind, ood)
        };
        let (ind_plain, ood_plain) = max_probs(None);
        let mc = McConfig { n: 100, p: 0.7, seed: 0 };
        let (ind_bayes, ood_bayes) = max_probs(Some(&mc));

        let plain = confidence_histograms(&ind_plain, &ood_plain, 50).unwrap();
        let bayes = confidence_histograms(&ind_bayes, &ood_bayes, 50).unwrap();
        assert!(
            bayes.overlap <= plain.overlap,
            "calibrated overlap {} vs uncalibrated {}",
            bayes.overlap,
            plain.overlap
        );
    }

    /// Train a small model once for the pipeline tests.
    fn small_trained() -> (crate::data::Dataset, Vocab, ModelParams) {
        let spec = SyntheticSpec {
            num_classes: 4,
            samples_per_class: 25,
            overlap: 0.1,
            len_range: (4, 8),
            ood_samples: 40,
            seed: 13,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let vocab = build_vocab(&ds, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            embed_dim: 16,
            hidden_dim: 24,
            num_classes: ds.num_classes,
        };
        let cfg = TrainConfig {
            max_epochs: 40,
            batch_size: 16,
            dropout_p: 0.3,
            patience: 6,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&ds, &vocab, dims, &cfg).unwrap();
        (ds, vocab, out.params)
    }

    #[test]
    fn detection_pipeline_structure_and_recomputability() {
        let (ds, vocab, params) = small_trained();
        let setup = DetectorSetup {
            detectors: DetectorKind::ALL.to_vec(),
            mc: Some(McConfig {
                n: 10,
                p: 0.5,
                seed: 5,
            }),
            lof_k: 10,
            objective: CalibrationObjective::MacroF1,
        };
        let out = run_detection(&ds, &vocab, &params, &setup).unwrap();

        assert_eq!(out.results.len(), 4);
        assert_eq!(out.score_rows.len(), 4 * ds.test.len());
        for r in &out.results {
            assert!(r.metrics.ood_f1 >= 0.0 && r.metrics.ood_f1 <= 1.0);
            assert!(r.metrics.ind_acc >= 0.0 && r.metrics.ind_acc <= 1.0);
            assert_eq!(r.threshold.kind, r.kind);
            assert!(r.threshold.cutoff.is_finite());
        }

        // metrics are exactly recomputable from the score rows
        let c = ds.num_classes;
        for res in &out.results {
            let rows: Vec<&ScoreRow> = out
                .score_rows
                .iter()
                .filter(|r| r.detector == res.kind)
                .collect();
            assert_eq!(rows.len(), ds.test.len());
            let golds: Vec<usize> = rows.iter().map(|r| r.gold_label).collect();
            let preds: Vec<usize> = rows.iter().map(|r| r.predicted).collect();
            let stats = ConfusionStats::from_pairs(&golds, &preds, c);
            let m = compute_metrics(&stats);
            assert_eq!(m, res.metrics);
            // rows are also self-consistent with the stored threshold
            for row in rows {
                let flagged = detect(&res.threshold, row.score);
                assert_eq!(flagged, row.predicted == c);
                assert_eq!(row.gold_is_ood, row.gold_label == c);
            }
        }
    }

    #[test]
    fn detection_pipeline_is_deterministic() {
        let (ds, vocab, params) = small_trained();
        let setup = DetectorSetup {
            detectors: vec![DetectorKind::Msp, DetectorKind::Gda],
            mc: Some(McConfig {
                n: 8,
                p: 0.7,
                seed: 9,
            }),
            lof_k: 10,
            objective: CalibrationObjective::MacroF1,
        };
        let a = run_detection(&ds, &vocab, &params, &setup).unwrap();
        let b = run_detection(&ds, &vocab, &params, &setup).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn setup_validation_rejects_duplicates_and_bad_mc() {
        let setup = DetectorSetup {
            detectors: vec![DetectorKind::Msp, DetectorKind::Msp],
            ..DetectorSetup::default()
        };
        assert!(setup.validate().is_err());
        let setup = DetectorSetup {
            mc: Some(McConfig {
                n: 0,
                p: 0.5,
                seed: 0,
            }),
            ..DetectorSetup::default()
        };
        assert!(setup.validate().is_err());
        let setup = DetectorSetup {
            detectors: vec![],
            ..DetectorSetup::default()
        };
        assert!(setup.validate().is_err());
    }

    #[test]
    fn sweep_covers_grid_and_matches_direct_run() {
        let (ds, vocab, params) = small_trained();
        let ps = [0.3, 0.7];
        let ns = [1, 4];
        let rows = sweep(
            &ds,
            &vocab,
            &params,
            DetectorKind::Msp,
            &ps,
            &ns,
            77,
            CalibrationObjective::MacroF1,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        // grid order: p outer, N inner
        assert_eq!((rows[0].p, rows[0].n), (0.3, 1));
        assert_eq!((rows[1].p, rows[1].n), (0.3, 4));
        assert_eq!((rows[2].p, rows[2].n), (0.7, 1));
        assert_eq!((rows[3].p, rows[3].n), (0.7, 4));

        // a degenerate grid cell equals a direct pipeline run with that cell
        let setup = DetectorSetup {
            detectors: vec![DetectorKind::Msp],
            mc: Some(McConfig {
                n: 4,
                p: 0.7,
                seed: 77,
            }),
            lof_k: 1,
            objective: CalibrationObjective::MacroF1,
        };
        let direct = run_detection(&ds, &vocab, &params, &setup).unwrap();
        assert_eq!(rows[3].metrics, direct.results[0].metrics);

        // distance detectors reject the sweep
        assert!(sweep(
            &ds,
            &vocab,
            &params,
            DetectorKind::Lof,
            &ps,
            &ns,
            77,
            CalibrationObjective::MacroF1,
        )
        .is_err());
    }

    #[test]
    fn kl_analysis_rows_and_bounds() {
        let (ds, vocab, params) = small_trained();
        let rows = kl_analysis(&ds, &vocab, &params, &[1, 4], 0.7, 3).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].split, "ind");
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[1].split, "ood");
        assert_eq!(rows[1].n, 1);
        assert_eq!(rows[2].n, 4);
        let ln_c = (ds.num_classes as f64).ln();
        for r in &rows {
            assert!(r.mean >= -1e-12 && r.mean <= ln_c + 1e-12, "mean {}", r.mean);
            assert!(r.median >= -1e-12 && r.median <= ln_c + 1e-12);
        }
        // determinism
        let again = kl_analysis(&ds, &vocab, &params, &[1, 4], 0.7, 3).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn bench_rows_report_time_and_quality() {
        let (ds, vocab, params) = small_trained();
        let rows = bench(
            &ds,
            &vocab,
            &params,
            DetectorKind::Msp,
            &[0, 4],
            3,
            0.7,
            11,
            CalibrationObjective::MacroF1,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].n, 0);
        assert!(rows.iter().all(|r| r.median_seconds > 0.0));
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.ood_f1)));
        // more passes cost more time
        assert!(rows[1].median_seconds > rows[0].median_seconds);
    }

    #[test]
    fn csv_writers_produce_documented_layouts() {
        let dir = tempfile::tempdir().unwrap();

        let sweep_rows = vec![SweepRow {
            p: 0.7,
            n: 10,
            metrics: Metrics {
                ood_f1: 0.5,
                ood_recall: 0.25,
                ind_f1: 0.75,
                ind_acc: 0.875,
                macro_f1_all: 0.625,
            },
        }];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &sweep_rows).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["p", "N", "ood_f1", "ood_recall", "ind_f1", "ind_acc"]
        );
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "0.7");
        assert_eq!(&rec[2], "0.5");

        let kl_rows = vec![KlRow {
            split: "ood".into(),
            n: 10,
            mean: 2.27,
            median: 2.5,
        }];
        let path = dir.path().join("kl.csv");
        write_kl_csv(&path, &kl_rows).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["split", "N", "mean", "median"]
        );

        let bench_rows = vec![BenchRow {
            n: 0,
            median_seconds: 0.125,
            ood_f1: 0.5,
        }];
        let path = dir.path().join("bench.csv");
        write_bench_csv(&path, &bench_rows).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["N", "median_seconds", "ood_f1"]
        );
    }
}
