//! OOD scoring, distance baselines, and threshold calibration.
//!
//! Each detector reduces an input to one scalar score; a calibrated cutoff
//! turns the score into an IND/OOD decision. MSP flags low scores, the other
//! three flag high scores. Detection is strict: a score exactly at the cutoff
//! stays IND.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::encoder::ProbDist;
use crate::eval::ConfusionStats;
use crate::mat::{sq_dist, Mat};
use crate::{Error, Result};

/// Floor applied to mean reachability before inversion, so duplicated points
/// produce a large finite density instead of dividing by zero.
const LRD_EPS: f64 = 1e-12;
/// Relative ridge added to the pooled covariance diagonal.
const GDA_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Msp,
    Entropy,
    Lof,
    Gda,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Msp,
        DetectorKind::Entropy,
        DetectorKind::Lof,
        DetectorKind::Gda,
    ];

    pub fn direction(self) -> Direction {
        match self {
            DetectorKind::Msp => Direction::LowIsOod,
            DetectorKind::Entropy | DetectorKind::Lof | DetectorKind::Gda => Direction::HighIsOod,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DetectorKind::Msp => "msp",
            DetectorKind::Entropy => "entropy",
            DetectorKind::Lof => "lof",
            DetectorKind::Gda => "gda",
        };
        write!(f, "{s}")
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(DetectorKind::Msp),
            "entropy" => Ok(DetectorKind::Entropy),
            "lof" => Ok(DetectorKind::Lof),
            "gda" => Ok(DetectorKind::Gda),
            other => Err(Error::Config(format!(
                "unknown detector {other:?} (expected msp, entropy, lof, or gda)"
            ))),
        }
    }
}

/// Which side of the cutoff is flagged OOD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowIsOod,
    HighIsOod,
}

/// Maximum softmax probability. Low values signal OOD.
pub fn msp_score(probs: &ProbDist) -> f64 {
    probs.max_prob()
}

/// Predictive entropy in nats. High values signal OOD.
pub fn entropy_score(probs: &ProbDist) -> f64 {
    probs.entropy()
}

/// A calibrated decision rule for one detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub kind: DetectorKind,
    pub cutoff: f64,
    /// Objective value achieved on the calibration split.
    pub objective_value: f64,
}

impl Threshold {
    pub fn expects(&self, kind: DetectorKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::DetectorMismatch {
                score: kind,
                threshold: self.kind,
            });
        }
        Ok(())
    }
}

/// True when the score falls on the OOD side of the cutoff. Strict in both
/// directions: a score equal to the cutoff is IND.
pub fn detect(thr: &Threshold, score: f64) -> bool {
    match thr.kind.direction() {
        Direction::LowIsOod => score < thr.cutoff,
        Direction::HighIsOod => score > thr.cutoff,
    }
}

/// Final prediction: the rejected marker, or the classifier's argmax class.
pub fn classify_or_reject(pred_class: usize, score: f64, thr: &Threshold) -> Label {
    if detect(thr, score) {
        Label::Ood
    } else {
        Label::Ind(pred_class)
    }
}

// ---------------------------------------------------------------------------
// Gaussian discriminant analysis
// ---------------------------------------------------------------------------

/// Class-conditional Gaussian model with one shared covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdaModel {
    pub means: Vec<Vec<f64>>,
    /// Shrunk pooled covariance (kept for inspection).
    pub sigma: Mat,
    /// Lower Cholesky factor of `sigma`.
    chol: Mat,
}

impl GdaModel {
    /// Build from explicit means and a covariance (already regularized).
    pub fn from_parts(means: Vec<Vec<f64>>, sigma: Mat) -> Result<GdaModel> {
        if means.is_empty() {
            return Err(Error::Data("GDA needs at least one class mean".into()));
        }
        let d = sigma.rows;
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::DimMismatch(format!(
                "class means must match covariance dim {d}"
            )));
        }
        let chol = sigma.cholesky()?;
        Ok(GdaModel { means, sigma, chol })
    }

    /// Minimum Mahalanobis distance from `x` to any class mean.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let mut r = vec![0.0; x.len()];
        for mean in &self.means {
            for ((ri, &xi), &mi) in r.iter_mut().zip(x).zip(mean) {
                *ri = xi - mi;
            }
            // d^2 = r' Sigma^-1 r = |L^-1 r|^2
            let z = self.chol.solve_lower(&r);
            let d2: f64 = z.iter().map(|v| v * v).sum();
            best = best.min(d2);
        }
        best.sqrt()
    }
}

/// Fit GDA on labeled feature vectors: per-class means plus a pooled
/// within-class covariance with denominator (n - K), regularized by a ridge
/// of `1e-3 * mean(diag)` (absolute floor 1e-3 when the scatter is zero).
pub fn fit_gda(features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<GdaModel> {
    if features.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    if num_classes < 1 {
        return Err(Error::Config("GDA needs at least one class".into()));
    }
    if features.len() <= num_classes {
        return Err(Error::Data(format!(
            "pooled covariance needs n > K, got n = {} with K = {num_classes}",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::DimMismatch(
            "feature vectors must share one positive dimension".into(),
        ));
    }
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
    }

    let mut means = vec![vec![0.0; d]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (x, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (m, &xi) in means[l].iter_mut().zip(x) {
            *m += xi;
        }
    }
    for (c, count) in counts.iter().enumerate() {
        if *count == 0 {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        for m in &mut means[c] {
            *m /= *count as f64;
        }
    }

    let mut sigma = Mat::zeros(d, d);
    let mut dev = vec![0.0; d];
    for (x, &l) in features.iter().zip(labels) {
        for ((di, &xi), &mi) in dev.iter_mut().zip(x).zip(&means[l]) {
            *di = xi - mi;
        }
        sigma.add_outer(&dev, &dev, 1.0);
    }
    let denom = (features.len() - num_classes) as f64;
    for v in &mut sigma.data {
        *v /= denom;
    }

    let mean_diag = (0..d).map(|i| sigma.get(i, i)).sum::<f64>() / d as f64;
    let ridge = if mean_diag > 0.0 {
        GDA_SHRINKAGE * mean_diag
    } else {
        GDA_SHRINKAGE
    };
    for i in 0..d {
        let v = sigma.get(i, i) + ridge;
        sigma.set(i, i, v);
    }

    GdaModel::from_parts(means, sigma)
}

// ---------------------------------------------------------------------------
// Local outlier factor
// ---------------------------------------------------------------------------

/// LOF reference set: fitted points with their k-distances and local
/// reachability densities.
#[derive(Debug, Clone)]
pub struct LofModel {
    k: usize,
    points: Vec<Vec<f64>>,
    k_dist: Vec<f64>,
    lrd: Vec<f64>,
}

/// k-th smallest distance and the indices within it (ties included).
fn k_neighborhood(dists: &[f64], k: usize, skip: Option<usize>) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..dists.len()).filter(|&j| Some(j) != skip).collect();
    debug_assert!(order.len() >= k);
    order.select_nth_unstable_by(k - 1, |&a, &b| dists[a].total_cmp(&dists[b]));
    let k_dist = dists[order[k - 1]];
    let neighbors: Vec<usize> = (0..dists.len())
        .filter(|&j| Some(j) != skip && dists[j] <= k_dist)
        .collect();
    (k_dist, neighbors)
}

impl LofModel {
    /// Mean reachability of `dists` indices -> lrd, with the zero floor.
    fn lrd_from(&self, dists: &[f64], neighbors: &[usize]) -> f64 {
        let mean_reach = neighbors
            .iter()
            .map(|&j| dists[j].max(self.k_dist[j]))
            .sum::<f64>()
            / neighbors.len() as f64;
        1.0 / mean_reach.max(LRD_EPS)
    }

    /// LOF score of a query point relative to the fitted set: mean neighbor
    /// density over the query's own density. ~1 for inliers, larger outside
    /// the data.
    pub fn score(&self, x: &[f64]) -> f64 {
        let dists: Vec<f64> = self.points.iter().map(|p| sq_dist(p, x).sqrt()).collect();
        let (_, neighbors) = k_neighborhood(&dists, self.k, None);
        let lrd_q = self.lrd_from(&dists, &neighbors);
        let mean_neighbor_lrd =
            neighbors.iter().map(|&j| self.lrd[j]).sum::<f64>() / neighbors.len() as f64;
        mean_neighbor_lrd / lrd_q
    }
}

/// Fit LOF with neighborhood size `k` (each fitted point's neighborhood
/// excludes itself, so at least k + 1 points are required).
pub fn fit_lof(features: Vec<Vec<f64>>, k: usize) -> Result<LofModel> {
    if k == 0 {
        return Err(Error::Config("LOF k must be >= 1".into()));
    }
    if features.len() < k + 1 {
        return Err(Error::Data(format!(
            "LOF with k = {k} needs at least {} points, got {}",
            k + 1,
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::DimMismatch(
            "feature vectors must share one positive dimension".into(),
        ));
    }

    use rayon::prelude::*;
    let n = features.len();
    let row_dists = |i: usize| -> Vec<f64> {
        (0..n).map(|j| sq_dist(&features[i], &features[j]).sqrt()).collect()
    };

    let per_point: Vec<(f64, Vec<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| k_neighborhood(&row_dists(i), k, Some(i)))
        .collect();
    let k_dist: Vec<f64> = per_point.iter().map(|(kd, _)| *kd).collect();

    let lrd: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dists = row_dists(i);
            let neighbors = &per_point[i].1;
            let mean_reach = neighbors
                .iter()
                .map(|&j| dists[j].max(k_dist[j]))
                .sum::<f64>()
                / neighbors.len() as f64;
            1.0 / mean_reach.max(LRD_EPS)
        })
        .collect();

    Ok(LofModel {
        k,
        points: features,
        k_dist,
        lrd,
    })
}

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

/// One calibration observation: the detector score, the gold label, and the
/// classifier's argmax class (used when the point is not rejected).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub score: f64,
    pub gold: Label,
    pub pred: usize,
}

/// What the cutoff sweep maximizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationObjective {
    /// Macro-F1 over the C + 1 classes (the C intents plus the OOD class).
    #[default]
    MacroF1,
    /// Binary F1 with OOD as the positive class.
    OodF1,
}

fn objective_of(
    points: &[CalibrationPoint],
    thr: &Threshold,
    num_classes: usize,
    objective: CalibrationObjective,
) -> f64 {
    let golds: Vec<usize> = points.iter().map(|p| p.gold.to_index(num_classes)).collect();
    let preds: Vec<usize> = points
        .iter()
        .map(|p| classify_or_reject(p.pred, p.score, thr).to_index(num_classes))
        .collect();
    let stats = ConfusionStats::from_pairs(&golds, &preds, num_classes);
    match objective {
        CalibrationObjective::MacroF1 => stats.macro_f1_all(),
        CalibrationObjective::OodF1 => stats.ood_f1(),
    }
}

/// Sweep candidate cutoffs and keep the best.
///
/// Candidates are the midpoints between consecutive distinct scores plus one
/// sentinel on each side (min - 1, max + 1), which covers every achievable
/// partition under the strict decision rule. Ties on the objective prefer
/// the cutoff flagging more points OOD, then the numerically smaller cutoff.
pub fn calibrate_threshold(
    kind: DetectorKind,
    points: &[CalibrationPoint],
    num_classes: usize,
    objective: CalibrationObjective,
) -> Result<Threshold> {
    if points.is_empty() {
        return Err(Error::Data("calibration requires at least one point".into()));
    }
    if points.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite("calibration score"));
    }
    if let Some(p) = points.iter().find(|p| p.pred >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: p.pred,
            num_classes,
        });
    }
    let has_ood = points.iter().any(|p| p.gold.is_ood());
    let has_ind = points.iter().any(|p| !p.gold.is_ood());
    if !has_ood || !has_ind {
        return Err(Error::Data(
            "calibration requires both IND and OOD gold labels".into(),
        ));
    }

    let mut sorted: Vec<f64> = points.iter().map(|p| p.score).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 1.0);
    for w in sorted.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] + 1.0);

    let mut best: Option<(f64, usize, Threshold)> = None;
    for cutoff in candidates {
        let thr = Threshold {
            kind,
            cutoff,
            objective_value: 0.0,
        };
        let value = objective_of(points, &thr, num_classes, objective);
        let flagged = points.iter().filter(|p| detect(&thr, p.score)).count();
        let better = match &best {
            None => true,
            Some((bv, bf, bt)) => {
                value > *bv
                    || (value == *bv && flagged > *bf)
                    || (value == *bv && flagged == *bf && cutoff < bt.cutoff)
            }
        };
        if better {
            best = Some((
                value,
                flagged,
                Threshold {
                    kind,
                    cutoff,
                    objective_value: value,
                },
            ));
        }
    }
    Ok(best.expect("non-empty candidate list").2)
}

// ---------------------------------------------------------------------------
// Score dumps
// ---------------------------------------------------------------------------

/// One scored test utterance. Label columns hold dense indices (OOD = C).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub utterance_id: usize,
    pub detector: DetectorKind,
    pub score: f64,
    pub gold_is_ood: bool,
    pub predicted: usize,
    pub gold_label: usize,
}

/// CSV layout: `utterance_id,detector,score,gold_is_ood,predicted,gold_label`.
pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "utterance_id",
        "detector",
        "score",
        "gold_is_ood",
        "predicted",
        "gold_label",
    ])?;
    for r in rows {
        w.write_record([
            r.utterance_id.to_string(),
            r.detector.to_string(),
            r.score.to_string(),
            r.gold_is_ood.to_string(),
            r.predicted.to_string(),
            r.gold_label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
