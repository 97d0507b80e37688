//! Inference cost of the ensemble: wall time against detection quality.
//!
//! Times the scoring of the whole test split at increasing ensemble sizes
//! (N = 0 is the deterministic single pass) and pairs each cost with the
//! OOD F1 reached there. The quality jump from the first handful of passes
//! is large relative to its cost; past N = 100 the curve is flat. Timing
//! runs serially so measurements are not distorted by one another.
//!
//! Run with: cargo run --example inference_cost

use oodcal::data::{build_vocab, generate_synthetic, SyntheticSpec};
use oodcal::detect::{CalibrationObjective, DetectorKind};
use oodcal::encoder::EncoderDims;
use oodcal::eval::{bench, write_bench_csv};
use oodcal::trainer::{train, TrainConfig};

fn main() -> oodcal::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec::benchmark(0))?;
    let vocab = build_vocab(&ds, 1)?;
    let dims = EncoderDims::new(vocab.size(), ds.num_classes);
    let t0 = std::time::Instant::now();
    let out = train(&ds, &vocab, dims, &TrainConfig::default())?;
    println!(
        "one-time training cost: {:.2} s ({} epochs)",
        t0.elapsed().as_secs_f64(),
        out.log.epochs.len()
    );

    let ns = [0, 1, 10, 100];
    let rows = bench(
        &ds,
        &vocab,
        &out.params,
        DetectorKind::Msp,
        &ns,
        5,
        0.7,
        0,
        CalibrationObjective::MacroF1,
    )?;

    let base = rows[0].median_seconds;
    println!("\n    N   median s     vs N=0   OOD F1");
    for r in &rows {
        println!(
            "{:>5}  {:>9.4}  {:>+8.1}%  {:>7.3}",
            r.n,
            r.median_seconds,
            100.0 * (r.median_seconds - base) / base,
            r.ood_f1
        );
    }

    let dir = std::env::temp_dir().join("oodcal_inference_cost");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bench.csv");
    write_bench_csv(&path, &rows)?;
    println!("\nwrote {}", path.display());
    Ok(())
}
