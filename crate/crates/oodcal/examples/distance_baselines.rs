//! Distance-based OOD baselines: local outlier factor and Gaussian
//! discriminant analysis.
//!
//! Both baselines consume the penultimate hidden features of the trained
//! classifier instead of its softmax output: LOF compares a query's local
//! density to that of its nearest training neighbors, GDA measures the
//! minimum Mahalanobis distance to the class-conditional Gaussians under a
//! shared covariance. Thresholds are calibrated on validation data exactly
//! like the probability detectors, and the example closes with the full
//! four-detector comparison table.
//!
//! Run with: cargo run --example distance_baselines

use oodcal::data::{build_vocab, generate_synthetic, Label, SyntheticSpec};
use oodcal::detect::{fit_gda, fit_lof, CalibrationObjective, DetectorKind};
use oodcal::encoder::{encode, penultimate_features, EncoderDims};
use oodcal::eval::{run_detection, DetectorSetup};
use oodcal::trainer::{train, TrainConfig};

fn main() -> oodcal::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec::benchmark(0))?;
    let vocab = build_vocab(&ds, 1)?;
    let dims = EncoderDims::new(vocab.size(), ds.num_classes);
    let out = train(&ds, &vocab, dims, &TrainConfig::default())?;

    // Fit both models directly on train-split features.
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for u in &ds.train {
        if let Label::Ind(c) = u.label {
            feats.push(penultimate_features(&out.params, &encode(&u.text, &vocab)));
            labels.push(c);
        }
    }
    let gda = fit_gda(&feats, &labels, ds.num_classes)?;
    let lof = fit_lof(feats, 20)?;

    let mean_score = |ood: bool, f: &dyn Fn(&[f64]) -> f64| -> f64 {
        let sel: Vec<f64> = ds
            .test
            .iter()
            .filter(|u| u.label.is_ood() == ood)
            .map(|u| f(&penultimate_features(&out.params, &encode(&u.text, &vocab))))
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    println!("mean raw scores on the test split (higher = more OOD-like):");
    println!(
        "  gda mahalanobis: IND {:.2}  OOD {:.2}",
        mean_score(false, &|x| gda.score(x)),
        mean_score(true, &|x| gda.score(x))
    );
    println!(
        "  lof factor:      IND {:.2}  OOD {:.2}",
        mean_score(false, &|x| lof.score(x)),
        mean_score(true, &|x| lof.score(x))
    );

    // The eval pipeline runs the same fits with calibrated thresholds.
    let setup = DetectorSetup {
        detectors: DetectorKind::ALL.to_vec(),
        mc: None,
        lof_k: 20,
        objective: CalibrationObjective::MacroF1,
    };
    let outcome = run_detection(&ds, &vocab, &out.params, &setup)?;
    println!("\ndetector  threshold   OOD F1  OOD rec  IND F1  IND acc");
    for r in &outcome.results {
        let m = &r.metrics;
        println!(
            "{:<8} {:>10.4}  {:>6.3}  {:>7.3}  {:>6.3}  {:>7.3}",
            r.kind.to_string(),
            r.threshold.cutoff,
            m.ood_f1,
            m.ood_recall,
            m.ind_f1,
            m.ind_acc
        );
    }
    println!("\ndistance baselines ignore MC dropout; pair them with the");
    println!("probability detectors from the ood_detection example to compare.");
    Ok(())
}
