//! Train the in-domain intent classifier and persist a checkpoint.
//!
//! Runs the full training loop (cross-entropy, Adam, early stopping on
//! validation accuracy) on the synthetic benchmark, prints the epoch log,
//! and shows that a saved checkpoint reloads bit-identically and refuses a
//! mismatched vocabulary.
//!
//! Run with: cargo run --example train_classifier

use oodcal::data::{build_vocab, generate_synthetic, SyntheticSpec};
use oodcal::encoder::{Checkpoint, EncoderDims};
use oodcal::trainer::{ind_accuracy, ind_examples, train, TrainConfig};

fn main() -> oodcal::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec::benchmark(7))?;
    let vocab = build_vocab(&ds, 1)?;
    let dims = EncoderDims::new(vocab.size(), ds.num_classes);
    let cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };

    println!(
        "model: {} vocab x {} embed, {} hidden, {} classes",
        dims.vocab_size, dims.embed_dim, dims.hidden_dim, dims.num_classes
    );
    let out = train(&ds, &vocab, dims, &cfg)?;

    println!("\nepoch  train_loss  train_acc  val_acc");
    let log = &out.log.epochs;
    for e in log.iter().take(3).chain(log.iter().skip(log.len().saturating_sub(3))) {
        println!(
            "{:>5}  {:>10.4}  {:>9.3}  {:>7.3}",
            e.epoch, e.train_loss, e.train_acc, e.val_acc
        );
    }
    println!(
        "\nstopped after {} epochs; best epoch {} with val acc {:.3}",
        log.len(),
        out.best_epoch,
        out.best_val_acc
    );

    let test_acc = ind_accuracy(&out.params, &ind_examples(&ds.test, &vocab));
    println!("test IND accuracy: {test_acc:.3}");

    // Checkpoints embed a fingerprint of the vocabulary they were trained
    // with, so a stale or foreign vocab cannot be paired with the weights.
    let dir = std::env::temp_dir().join("oodcal_train_classifier");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    Checkpoint::new(out.params.clone(), &vocab).save(&path)?;
    let restored = Checkpoint::load_with_vocab(&path, &vocab)?;
    assert_eq!(restored.params, out.params);
    println!("\ncheckpoint round trip ok: {}", path.display());

    let other = generate_synthetic(&SyntheticSpec {
        num_classes: 5,
        ..SyntheticSpec::benchmark(2)
    })?;
    let other_vocab = build_vocab(&other, 1)?;
    let rejected = Checkpoint::load_with_vocab(&path, &other_vocab);
    println!("loading against a different vocabulary: {:?}", rejected.err().map(|e| e.to_string()));
    Ok(())
}
