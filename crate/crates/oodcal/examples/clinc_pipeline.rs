//! Full pipeline on a CLINC-format corpus: load, train, detect.
//!
//! Pass the path to a CLINC JSON file (e.g. data_full.json) as the first
//! argument to run on real data; with no argument the example writes a
//! synthetic corpus in the same JSON layout to a temp file and loads that
//! instead, so the pipeline is identical either way: build the vocabulary
//! from the train split, train the classifier, calibrate MSP with and
//! without the MC-dropout ensemble, and report test-split metrics.
//!
//! Run with: cargo run --release --example clinc_pipeline [-- path/to/data_full.json]

use std::path::PathBuf;

use oodcal::bayes::McConfig;
use oodcal::data::{build_vocab, generate_synthetic, load_clinc, write_clinc, ClincVariant,
    SyntheticSpec};
use oodcal::detect::{CalibrationObjective, DetectorKind};
use oodcal::encoder::EncoderDims;
use oodcal::eval::{run_detection, DetectorSetup};
use oodcal::trainer::{train, TrainConfig};

fn main() -> oodcal::Result<()> {
    let (path, variant) = match std::env::args().nth(1) {
        Some(p) => {
            let variant = if p.contains("imbal") {
                ClincVariant::Imbal
            } else {
                ClincVariant::Full
            };
            (PathBuf::from(p), variant)
        }
        None => {
            println!("no corpus path given, writing a synthetic CLINC-format stand-in\n");
            let ds = generate_synthetic(&SyntheticSpec::benchmark(7))?;
            let dir = std::env::temp_dir().join("oodcal_clinc_pipeline");
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("synthetic_clinc.json");
            write_clinc(&ds, &path)?;
            (path, ClincVariant::Full)
        }
    };

    let ds = load_clinc(&path, variant)?;
    println!(
        "loaded {}: {} classes, train {} / val {} / test {} (OOD train pool {})",
        path.display(),
        ds.num_classes,
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.ood_train_pool.len()
    );

    let vocab = build_vocab(&ds, 1)?;
    let dims = EncoderDims::new(vocab.size(), ds.num_classes);
    println!("vocabulary {} entries, {} trainable parameters", vocab.size(), {
        use oodcal::encoder::ModelParams;
        use rand::SeedableRng;
        ModelParams::init(dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).num_params()
    });

    let t0 = std::time::Instant::now();
    let out = train(&ds, &vocab, dims, &TrainConfig::default())?;
    println!(
        "trained in {:.1} s: best epoch {} of {}, val acc {:.3}\n",
        t0.elapsed().as_secs_f64(),
        out.best_epoch,
        out.log.epochs.len(),
        out.best_val_acc
    );

    let setup = |mc: Option<McConfig>| DetectorSetup {
        detectors: vec![DetectorKind::Msp, DetectorKind::Entropy],
        mc,
        lof_k: 20,
        objective: CalibrationObjective::MacroF1,
    };
    let plain = run_detection(&ds, &vocab, &out.params, &setup(None))?;
    let bayes = run_detection(&ds, &vocab, &out.params, &setup(Some(McConfig::default())))?;

    println!("detector       threshold   OOD F1  OOD rec  IND F1  IND acc");
    let rows = plain
        .results
        .iter()
        .map(|r| (r.kind.to_string(), r))
        .chain(bayes.results.iter().map(|r| (format!("{}+bayes", r.kind), r)));
    for (name, r) in rows {
        let m = &r.metrics;
        println!(
            "{name:<14} {:>9.4}  {:>6.3}  {:>7.3}  {:>6.3}  {:>7.3}",
            r.threshold.cutoff, m.ood_f1, m.ood_recall, m.ind_f1, m.ind_acc
        );
    }
    Ok(())
}
