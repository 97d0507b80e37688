//! Monte-Carlo dropout inference: stochastic passes and their average.
//!
//! Trains the benchmark classifier, then contrasts the deterministic
//! predictive distribution with the MC-dropout ensemble on one in-domain and
//! one out-of-domain utterance. Individual stochastic passes disagree on OOD
//! input; their post-softmax mean flattens toward uniform, which is exactly
//! the signal the detectors threshold. Also demonstrates reproducibility:
//! the ensemble is a pure function of (seed, utterance, pass).
//!
//! Run with: cargo run --example mc_inference

use oodcal::bayes::{mc_predict, mc_predict_samples, McConfig};
use oodcal::data::{build_vocab, generate_synthetic, SyntheticSpec};
use oodcal::encoder::{encode, forward, EncoderDims, ProbDist};
use oodcal::trainer::{train, TrainConfig};

fn shorten(p: &ProbDist) -> String {
    let cells: Vec<String> = p.as_slice().iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", cells.join(" "))
}

fn main() -> oodcal::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec::benchmark(7))?;
    let vocab = build_vocab(&ds, 1)?;
    let dims = EncoderDims::new(vocab.size(), ds.num_classes);
    let out = train(&ds, &vocab, dims, &TrainConfig::default())?;

    let ind = ds.test.iter().find(|u| !u.label.is_ood()).unwrap();
    let ood = ds.test.iter().find(|u| u.label.is_ood()).unwrap();
    let cfg = McConfig {
        n: 100,
        p: 0.7,
        seed: 11,
    };

    for (name, utt) in [("IND", ind), ("OOD", ood)] {
        let ids = encode(&utt.text, &vocab);
        let det = forward(&out.params, &ids).probs;
        let (mean, samples) = mc_predict_samples(&out.params, &ids, &cfg, 0);
        println!("{name} utterance: {}", utt.text);
        println!("  deterministic: {}  (max {:.3}, entropy {:.3})", shorten(&det), det.max_prob(), det.entropy());
        for (i, s) in samples.iter().take(3).enumerate() {
            println!("  pass {i}:        {}", shorten(s));
        }
        println!(
            "  MC mean N={}:  {}  (max {:.3}, entropy {:.3})\n",
            cfg.n,
            shorten(&mean),
            mean.max_prob(),
            mean.entropy()
        );
    }

    // Averaging is post-softmax, so the ensemble mean is itself a valid
    // probability vector and its entropy is at least the mean pass entropy.
    let ids = encode(&ood.text, &vocab);
    let (mean, samples) = mc_predict_samples(&out.params, &ids, &cfg, 0);
    let mean_pass_entropy: f64 =
        samples.iter().map(ProbDist::entropy).sum::<f64>() / samples.len() as f64;
    println!(
        "ensemble entropy {:.4} >= mean per-pass entropy {:.4} (Jensen)",
        mean.entropy(),
        mean_pass_entropy
    );

    // Same (seed, utterance, pass) triple, same result, bit for bit.
    let again = mc_predict(&out.params, &ids, &cfg);
    assert_eq!(again, mc_predict(&out.params, &ids, &cfg));
    println!("repeated ensemble is bit-identical: ok");

    // More passes, steadier estimate: distance to a large-N reference.
    let reference = mc_predict_samples(
        &out.params,
        &ids,
        &McConfig {
            n: 4000,
            ..cfg
        },
        0,
    )
    .0;
    println!("\nmax |v(N) - v(4000)| on the OOD utterance:");
    for n in [1, 10, 100, 1000] {
        let v = mc_predict_samples(
            &out.params,
            &ids,
            &McConfig {
                n,
                ..cfg
            },
            0,
        )
        .0;
        let dist = v
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("  N={n:<5} {dist:.4}");
    }
    Ok(())
}
