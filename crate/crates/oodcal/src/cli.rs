//! Run configuration and the command-line pipelines.
//!
//! Every subcommand reads one JSON [`RunConfig`] (all fields optional, flags
//! override file values), materializes the dataset, and writes its artifacts
//! into the output directory. A training run directory is self-describing:
//!
//! ```text
//! out/
//!   config.echo          normalized config actually used (JSON)
//!   vocab.json           token -> id mapping
//!   checkpoint.json      best model of run 0 (checkpoint_<r>.json for r > 0)
//!   train_log.csv        per-epoch stats    (train_log_<r>.csv for r > 0)
//!   scores/              per-utterance detector scores, one CSV per run
//!                        and ensemble mode (plain_run<r>.csv, bayes_run<r>.csv)
//!   reports/report.json  per-run and mean metrics, plus the config
//!   plots/               confidence histogram CSV + SVG
//! ```
//!
//! Detector rows are reported under the kind name for single deterministic
//! passes and under `<kind>+bayes` for the MC ensemble, so one report carries
//! the with/without comparison.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{derive_seed, McConfig};
use crate::data::{
    build_vocab, generate_synthetic, load_clinc, write_clinc, ClincVariant, Dataset, SyntheticSpec,
    Vocab,
};
use crate::detect::{write_scores_csv, CalibrationObjective, DetectorKind, ScoreRow};
use crate::encoder::{Checkpoint, EncoderDims, ModelParams};
use crate::eval::{
    bench, confidence_histograms, kl_analysis, predictive_dists, run_detection, sweep,
    write_bench_csv, write_kl_csv, write_sweep_csv, DetectorSetup, HistogramPair, Metrics,
};
use crate::trainer::{train, TrainConfig, TrainOutcome};
use crate::{Error, Result};

/// Purpose keys for deriving stage seeds from the master seed.
const SEED_TRAIN: u64 = 1;
const SEED_MC: u64 = 2;
/// Purpose key offset for extra training runs (`--runs`).
const SEED_RUN_BASE: u64 = 0x52554e;

pub const DEFAULT_SWEEP_PS: [f64; 3] = [0.3, 0.5, 0.7];
pub const DEFAULT_SWEEP_NS: [usize; 3] = [1, 10, 100];
pub const DEFAULT_KL_NS: [usize; 3] = [1, 10, 100];
pub const DEFAULT_BENCH_NS: [usize; 4] = [0, 1, 10, 100];

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Clinc {
        path: PathBuf,
        variant: ClincVariant,
    },
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticSpec::default(),
        }
    }
}

/// Encoder shape and vocabulary policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Train-split tokens below this count map to UNK.
    pub min_freq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: crate::encoder::DEFAULT_EMBED_DIM,
            hidden_dim: crate::encoder::DEFAULT_HIDDEN_DIM,
            min_freq: 1,
        }
    }
}

/// One experiment configuration. The master `seed` drives the training and
/// MC seeds ([`RunConfig::normalize`]); the dataset seed stays whatever the
/// data section says, so the corpus is stable while model seeds vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mc: McConfig,
    /// When true, probability detectors are additionally evaluated on the
    /// MC ensemble and reported as `<kind>+bayes` next to the plain rows.
    pub bayes: bool,
    pub detectors: Vec<DetectorKind>,
    pub lof_k: usize,
    pub objective: CalibrationObjective,
    /// Training repetitions averaged by `train` (the `--runs` flag wins).
    pub runs: usize,
    /// Output directory (the `--out` flag wins).
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mc: McConfig::default(),
            bayes: true,
            detectors: DetectorKind::ALL.to_vec(),
            lof_k: 20,
            objective: CalibrationObjective::default(),
            runs: 5,
            out: None,
        }
    }
}

impl RunConfig {
    /// Derive the stage seeds from the master seed. Idempotent, and any
    /// seeds set directly in the train/mc sections are overwritten.
    pub fn normalize(&mut self) {
        self.train.seed = derive_seed(self.seed, SEED_TRAIN);
        self.mc.seed = derive_seed(self.seed, SEED_MC);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.mc.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.model.min_freq == 0 {
            return Err(Error::Config("min_freq must be >= 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        self.plain_setup().validate()?;
        if let DataSource::Synthetic { spec } = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Single-deterministic-pass setup over all requested detectors.
    fn plain_setup(&self) -> DetectorSetup {
        DetectorSetup {
            detectors: self.detectors.clone(),
            mc: None,
            lof_k: self.lof_k,
            objective: self.objective,
        }
    }

    /// MC-ensemble setup over the requested probability detectors, if the
    /// config enables Bayes and any were requested.
    fn bayes_setup(&self) -> Option<DetectorSetup> {
        if !self.bayes {
            return None;
        }
        let prob: Vec<DetectorKind> = self
            .detectors
            .iter()
            .copied()
            .filter(|k| matches!(k, DetectorKind::Msp | DetectorKind::Entropy))
            .collect();
        if prob.is_empty() {
            return None;
        }
        Some(DetectorSetup {
            detectors: prob,
            mc: Some(self.mc),
            lof_k: self.lof_k,
            objective: self.objective,
        })
    }

    /// The ensemble config used for plotting and analysis commands.
    fn analysis_mc(&self) -> Option<McConfig> {
        if self.bayes {
            Some(self.mc)
        } else {
            None
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let file = File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Stable 12-hex-digit fingerprint of the normalized config.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

fn load_or_default(config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

/// The output directory: flag wins, config supplies the fallback. The
/// resolved path is written back so the config echo replays the run.
fn resolve_out(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(o) = flag {
        cfg.out = Some(o);
    }
    cfg.out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set \"out\"".into()))
}

fn materialize_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Clinc { path, variant } => load_clinc(path, *variant),
        DataSource::Synthetic { spec } => generate_synthetic(spec),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SingleRunReport {
    pub run_index: usize,
    pub master_seed: u64,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub epochs_ran: Option<usize>,
    /// Calibrated cutoff per reported detector row.
    pub thresholds: BTreeMap<String, f64>,
    pub detectors: BTreeMap<String, Metrics>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub config: RunConfig,
    pub source: String,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub runs: Vec<SingleRunReport>,
    /// Field-wise mean of the per-run metrics, per detector row.
    pub mean: BTreeMap<String, Metrics>,
}

fn mean_metrics(runs: &[SingleRunReport]) -> BTreeMap<String, Metrics> {
    let mut acc: BTreeMap<String, (Metrics, usize)> = BTreeMap::new();
    for run in runs {
        for (name, m) in &run.detectors {
            let entry = acc.entry(name.clone()).or_insert((
                Metrics {
                    ood_f1: 0.0,
                    ood_recall: 0.0,
                    ind_f1: 0.0,
                    ind_acc: 0.0,
                    macro_f1_all: 0.0,
                },
                0,
            ));
            entry.0.ood_f1 += m.ood_f1;
            entry.0.ood_recall += m.ood_recall;
            entry.0.ind_f1 += m.ind_f1;
            entry.0.ind_acc += m.ind_acc;
            entry.0.macro_f1_all += m.macro_f1_all;
            entry.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(name, (sum, n))| {
            let n = n as f64;
            (
                name,
                Metrics {
                    ood_f1: sum.ood_f1 / n,
                    ood_recall: sum.ood_recall / n,
                    ind_f1: sum.ind_f1 / n,
                    ind_acc: sum.ind_acc / n,
                    macro_f1_all: sum.macro_f1_all / n,
                },
            )
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Detection rows
// ---------------------------------------------------------------------------

/// Evaluate the configured detectors with a single deterministic pass and,
/// when Bayes is enabled, the probability detectors again on the MC
/// ensemble. Returns (thresholds, metrics) keyed by reported row name plus
/// the per-mode score rows for persistence.
fn detection_rows(
    dataset: &Dataset,
    vocab: &Vocab,
    params: &ModelParams,
    cfg: &RunConfig,
) -> Result<(
    BTreeMap<String, f64>,
    BTreeMap<String, Metrics>,
    Vec<(&'static str, Vec<ScoreRow>)>,
)> {
    let mut thresholds = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    let mut score_sets = Vec::new();

    let outcome = run_detection(dataset, vocab, params, &cfg.plain_setup())?;
    for res in &outcome.results {
        thresholds.insert(res.kind.to_string(), res.threshold.cutoff);
        metrics.insert(res.kind.to_string(), res.metrics);
    }
    score_sets.push(("plain", outcome.score_rows));

    if let Some(setup) = cfg.bayes_setup() {
        let outcome = run_detection(dataset, vocab, params, &setup)?;
        for res in &outcome.results {
            thresholds.insert(format!("{}+bayes", res.kind), res.threshold.cutoff);
            metrics.insert(format!("{}+bayes", res.kind), res.metrics);
        }
        score_sets.push(("bayes", outcome.score_rows));
    }
    Ok((thresholds, metrics, score_sets))
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

/// Pooled-range histogram resolution.
const HIST_BINS: usize = 50;

/// `bin_lo,bin_hi,ind_count,ood_count` over max-probability confidence.
fn write_hist_csv(path: &Path, pair: &HistogramPair) -> Result<()> {
    let (lo, hi) = (pair.lo, pair.hi);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["bin_lo", "bin_hi", "ind_count", "ood_count"])?;
    let width = (hi - lo) / HIST_BINS as f64;
    for b in 0..HIST_BINS {
        w.write_record([
            (lo + b as f64 * width).to_string(),
            (lo + (b + 1) as f64 * width).to_string(),
            pair.ind[b].to_string(),
            pair.ood[b].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal grouped bar chart: per-bin fractions of IND vs OOD confidence.
fn write_hist_svg(path: &Path, pair: &HistogramPair) -> Result<()> {
    let (lo, hi) = (pair.lo, pair.hi);
    let (ind, ood) = (&pair.ind, &pair.ood);
    let (w, h) = (640.0, 360.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 35.0, 40.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let frac = |counts: &[usize]| -> Vec<f64> {
        let total: usize = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    };
    let fi = frac(ind);
    let fo = frac(ood);
    let max_frac = fi.iter().chain(&fo).copied().fold(0.05, f64::max);

    let mut bars = String::new();
    let bin_w = plot_w / HIST_BINS as f64;
    for b in 0..HIST_BINS {
        let x = ml + b as f64 * bin_w;
        for (off, f, color) in [(0.08, fi[b], "#4472c4"), (0.52, fo[b], "#ed7d31")] {
            let bh = plot_h * f / max_frac;
            bars.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                x + bin_w * off,
                mt + plot_h - bh,
                bin_w * 0.4,
                bh,
                color
            ));
        }
    }

    let mut ticks = String::new();
    for t in 0..=4 {
        let x = ml + plot_w * t as f64 / 4.0;
        ticks.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#444\">{:.2}</text>\n",
            h - mb + 16.0,
            lo + (hi - lo) * t as f64 / 4.0
        ));
    }

    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\" fill=\"#222\">\
         Confidence (max probability) by split</text>\n\
         <line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#444\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"#444\"/>\n\
         {bars}{ticks}\
         <rect x=\"{:.1}\" y=\"{mt}\" width=\"12\" height=\"12\" fill=\"#4472c4\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#222\">IND</text>\n\
         <rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"#ed7d31\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#222\">OOD</text>\n\
         </svg>\n",
        ml + plot_w / 2.0,
        mt + plot_h,
        w - mr,
        mt + plot_h,
        mt + plot_h,
        ml + plot_w - 110.0,
        ml + plot_w - 92.0,
        mt + 10.0,
        ml + plot_w - 110.0,
        mt + 18.0,
        ml + plot_w - 92.0,
        mt + 28.0,
    );
    fs::write(path, svg)?;
    Ok(())
}

fn write_confidence_plots(
    plots_dir: &Path,
    params: &ModelParams,
    vocab: &Vocab,
    dataset: &Dataset,
    mc: Option<&McConfig>,
) -> Result<()> {
    let dists = predictive_dists(params, vocab, &dataset.test, mc);
    let mut ind_vals = Vec::new();
    let mut ood_vals = Vec::new();
    for (d, u) in dists.iter().zip(&dataset.test) {
        if u.label.is_ood() {
            ood_vals.push(d.max_prob());
        } else {
            ind_vals.push(d.max_prob());
        }
    }
    let pair = confidence_histograms(&ind_vals, &ood_vals, HIST_BINS)?;
    write_hist_csv(&plots_dir.join("confidence_hist.csv"), &pair)?;
    write_hist_svg(&plots_dir.join("confidence_hist.svg"), &pair)?;
    println!("confidence overlap coefficient: {:.4}", pair.overlap);
    Ok(())
}

// ---------------------------------------------------------------------------
// Model acquisition
// ---------------------------------------------------------------------------

/// Either load `checkpoint.json` + `vocab.json` from a previous run
/// directory, or train a fresh model from the config.
fn obtain_model(
    cfg: &RunConfig,
    dataset: &Dataset,
    checkpoint: Option<&Path>,
) -> Result<(Vocab, ModelParams, Option<TrainOutcome>)> {
    match checkpoint {
        Some(dir) => {
            let vocab = Vocab::load(&dir.join("vocab.json"))?;
            let ckpt = Checkpoint::load_with_vocab(&dir.join("checkpoint.json"), &vocab)?;
            if ckpt.params.dims.num_classes != dataset.num_classes {
                return Err(Error::DimMismatch(format!(
                    "checkpoint has {} classes, dataset has {}",
                    ckpt.params.dims.num_classes, dataset.num_classes
                )));
            }
            Ok((vocab, ckpt.params, None))
        }
        None => {
            let vocab = build_vocab(dataset, cfg.model.min_freq)?;
            let dims = EncoderDims {
                vocab_size: vocab.size(),
                embed_dim: cfg.model.embed_dim,
                hidden_dim: cfg.model.hidden_dim,
                num_classes: dataset.num_classes,
            };
            let outcome = train(dataset, &vocab, dims, &cfg.train)?;
            let params = outcome.params.clone();
            Ok((vocab, params, Some(outcome)))
        }
    }
}

fn ensure_run_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::create_dir_all(out.join("scores"))?;
    fs::create_dir_all(out.join("reports"))?;
    fs::create_dir_all(out.join("plots"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommand pipelines
// ---------------------------------------------------------------------------

/// Train models (run r reseeds from the master seed), evaluate the
/// configured detectors on each, and write the full run directory.
pub fn cmd_train(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    runs: Option<usize>,
) -> Result<()> {
    let mut cfg = load_or_default(config, seed)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    let out = resolve_out(&mut cfg, out)?;
    cfg.validate()?;
    let dataset = materialize_data(&cfg)?;
    ensure_run_dir(&out)?;
    write_json(&out.join("config.echo"), &cfg)?;

    let runs = cfg.runs;
    let mut run_reports = Vec::with_capacity(runs);
    let mut first_model: Option<(Vocab, ModelParams)> = None;

    for r in 0..runs {
        let master = if r == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, SEED_RUN_BASE + r as u64)
        };
        let mut run_cfg = cfg.clone();
        run_cfg.seed = master;
        run_cfg.normalize();

        let vocab = build_vocab(&dataset, run_cfg.model.min_freq)?;
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            embed_dim: run_cfg.model.embed_dim,
            hidden_dim: run_cfg.model.hidden_dim,
            num_classes: dataset.num_classes,
        };
        let outcome = train(&dataset, &vocab, dims, &run_cfg.train)?;
        println!(
            "run {r}: best epoch {} of {}, val acc {:.4}",
            outcome.best_epoch,
            outcome.log.epochs.len(),
            outcome.best_val_acc
        );

        let suffix = if r == 0 {
            String::new()
        } else {
            format!("_{r}")
        };
        Checkpoint::new(outcome.params.clone(), &vocab)
            .save(&out.join(format!("checkpoint{suffix}.json")))?;
        outcome
            .log
            .write_csv(&out.join(format!("train_log{suffix}.csv")))?;
        if r == 0 {
            vocab.save(&out.join("vocab.json"))?;
        }

        let (thresholds, detector_metrics, score_sets) =
            detection_rows(&dataset, &vocab, &outcome.params, &run_cfg)?;
        for (mode, rows) in &score_sets {
            write_scores_csv(&out.join("scores").join(format!("{mode}_run{r}.csv")), rows)?;
        }

        run_reports.push(SingleRunReport {
            run_index: r,
            master_seed: master,
            best_epoch: Some(outcome.best_epoch),
            best_val_acc: Some(outcome.best_val_acc),
            epochs_ran: Some(outcome.log.epochs.len()),
            thresholds,
            detectors: detector_metrics,
        });
        if r == 0 {
            first_model = Some((vocab, outcome.params));
        }
    }

    let (vocab0, params0) = first_model.expect("runs >= 1");
    write_confidence_plots(
        &out.join("plots"),
        &params0,
        &vocab0,
        &dataset,
        cfg.analysis_mc().as_ref(),
    )?;

    let mean = mean_metrics(&run_reports);
    let report = RunReport {
        run_id: cfg.run_id(),
        source: dataset.source.clone(),
        num_classes: dataset.num_classes,
        vocab_size: vocab0.size(),
        config: cfg,
        runs: run_reports,
        mean,
    };
    write_json(&out.join("reports").join("report.json"), &report)?;

    println!("\nmean over {runs} run(s):");
    print_metrics_table(&report.mean);
    println!("\nartifacts written to {}", out.display());
    Ok(())
}

fn print_metrics_table(mean: &BTreeMap<String, Metrics>) {
    println!(
        "{:>14}  {:>8}  {:>10}  {:>8}  {:>8}",
        "detector", "ood_f1", "ood_recall", "ind_f1", "ind_acc"
    );
    for (name, m) in mean {
        println!(
            "{:>14}  {:>8.4}  {:>10.4}  {:>8.4}  {:>8.4}",
            name, m.ood_f1, m.ood_recall, m.ind_f1, m.ind_acc
        );
    }
}

/// Detection overrides shared by the eval path.
pub fn apply_eval_overrides(
    cfg: &mut RunConfig,
    detector: Option<&str>,
    mc_n: Option<usize>,
    mc_p: Option<f64>,
    no_bayes: bool,
) -> Result<()> {
    if let Some(name) = detector {
        cfg.detectors = vec![name.parse::<DetectorKind>()?];
    }
    if let Some(n) = mc_n {
        cfg.mc.n = n;
    }
    if let Some(p) = mc_p {
        cfg.mc.p = p;
    }
    if no_bayes {
        cfg.bayes = false;
    }
    cfg.validate()
}

/// Evaluate detectors on the test split, either with a checkpoint from a
/// previous training run or with a freshly trained model. Probability
/// detectors are reported both plain and (unless disabled) with Bayes.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<&Path>,
    detector: Option<&str>,
    mc_n: Option<usize>,
    mc_p: Option<f64>,
    no_bayes: bool,
) -> Result<()> {
    let mut cfg = load_or_default(config, seed)?;
    apply_eval_overrides(&mut cfg, detector, mc_n, mc_p, no_bayes)?;
    let out = resolve_out(&mut cfg, out)?;
    let dataset = materialize_data(&cfg)?;
    let (vocab, params, trained) = obtain_model(&cfg, &dataset, checkpoint)?;

    ensure_run_dir(&out)?;
    write_json(&out.join("config.echo"), &cfg)?;
    vocab.save(&out.join("vocab.json"))?;
    Checkpoint::new(params.clone(), &vocab).save(&out.join("checkpoint.json"))?;
    if let Some(t) = &trained {
        t.log.write_csv(&out.join("train_log.csv"))?;
    }

    let (thresholds, detector_metrics, score_sets) =
        detection_rows(&dataset, &vocab, &params, &cfg)?;
    for (mode, rows) in &score_sets {
        write_scores_csv(&out.join("scores").join(format!("{mode}_run0.csv")), rows)?;
    }
    write_confidence_plots(
        &out.join("plots"),
        &params,
        &vocab,
        &dataset,
        cfg.analysis_mc().as_ref(),
    )?;

    let single = SingleRunReport {
        run_index: 0,
        master_seed: cfg.seed,
        best_epoch: trained.as_ref().map(|t| t.best_epoch),
        best_val_acc: trained.as_ref().map(|t| t.best_val_acc),
        epochs_ran: trained.as_ref().map(|t| t.log.epochs.len()),
        thresholds,
        detectors: detector_metrics,
    };
    let report = RunReport {
        run_id: cfg.run_id(),
        source: dataset.source.clone(),
        num_classes: dataset.num_classes,
        vocab_size: vocab.size(),
        mean: mean_metrics(std::slice::from_ref(&single)),
        config: cfg,
        runs: vec![single],
    };
    write_json(&out.join("reports").join("report.json"), &report)?;

    print_metrics_table(&report.mean);
    println!("\nartifacts written to {}", out.display());
    Ok(())
}

/// Sweep (p, N) for a probability detector and write `sweep.csv`.
pub fn cmd_sweep(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<&Path>,
    detector: Option<&str>,
    ps: Option<Vec<f64>>,
    ns: Option<Vec<usize>>,
) -> Result<()> {
    let mut cfg = load_or_default(config, seed)?;
    let out = resolve_out(&mut cfg, out)?;
    let kind = match detector {
        Some(name) => name.parse::<DetectorKind>()?,
        None => DetectorKind::Msp,
    };
    let ps = ps.unwrap_or_else(|| DEFAULT_SWEEP_PS.to_vec());
    let ns = ns.unwrap_or_else(|| DEFAULT_SWEEP_NS.to_vec());
    let dataset = materialize_data(&cfg)?;
    let (vocab, params, _) = obtain_model(&cfg, &dataset, checkpoint)?;

    let rows = sweep(
        &dataset, &vocab, &params, kind, &ps, &ns, cfg.mc.seed, cfg.objective,
    )?;

    fs::create_dir_all(&out)?;
    write_json(&out.join("config.echo"), &cfg)?;
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;

    println!(
        "{:>5}  {:>5}  {:>8}  {:>10}  {:>8}  {:>8}",
        "p", "N", "ood_f1", "ood_recall", "ind_f1", "ind_acc"
    );
    for r in &rows {
        println!(
            "{:>5}  {:>5}  {:>8.4}  {:>10.4}  {:>8.4}  {:>8.4}",
            r.p, r.n, r.metrics.ood_f1, r.metrics.ood_recall, r.metrics.ind_f1, r.metrics.ind_acc
        );
    }
    println!("\nsweep written to {}", out.join("sweep.csv").display());
    Ok(())
}

/// Summarize KL-to-uniform of the predictive distributions per split and N.
pub fn cmd_kl(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<&Path>,
    ns: Option<Vec<usize>>,
    mc_p: Option<f64>,
) -> Result<()> {
    let mut cfg = load_or_default(config, seed)?;
    if let Some(p) = mc_p {
        cfg.mc.p = p;
        cfg.validate()?;
    }
    let out = resolve_out(&mut cfg, out)?;
    let ns = ns.unwrap_or_else(|| DEFAULT_KL_NS.to_vec());
    let dataset = materialize_data(&cfg)?;
    let (vocab, params, _) = obtain_model(&cfg, &dataset, checkpoint)?;

    let rows = kl_analysis(&dataset, &vocab, &params, &ns, cfg.mc.p, cfg.mc.seed)?;

    fs::create_dir_all(&out)?;
    write_json(&out.join("config.echo"), &cfg)?;
    write_kl_csv(&out.join("kl.csv"), &rows)?;

    println!("{:>5}  {:>5}  {:>8}  {:>8}", "split", "N", "mean", "median");
    for r in &rows {
        println!(
            "{:>5}  {:>5}  {:>8.4}  {:>8.4}",
            r.split, r.n, r.mean, r.median
        );
    }
    println!("\nkl summary written to {}", out.join("kl.csv").display());
    Ok(())
}

/// Time the MC ensemble at several N and report the F1 each buys.
#[allow(clippy::too_many_arguments)]
pub fn cmd_bench(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<&Path>,
    detector: Option<&str>,
    ns: Option<Vec<usize>>,
    runs: usize,
) -> Result<()> {
    let mut cfg = load_or_default(config, seed)?;
    let out = resolve_out(&mut cfg, out)?;
    let kind = match detector {
        Some(name) => name.parse::<DetectorKind>()?,
        None => DetectorKind::Msp,
    };
    let ns = ns.unwrap_or_else(|| DEFAULT_BENCH_NS.to_vec());
    let dataset = materialize_data(&cfg)?;
    let (vocab, params, _) = obtain_model(&cfg, &dataset, checkpoint)?;

    let rows = bench(
        &dataset,
        &vocab,
        &params,
        kind,
        &ns,
        runs,
        cfg.mc.p,
        cfg.mc.seed,
        cfg.objective,
    )?;

    fs::create_dir_all(&out)?;
    write_json(&out.join("config.echo"), &cfg)?;
    write_bench_csv(&out.join("bench.csv"), &rows)?;

    let baseline = rows.iter().find(|r| r.n == 0);
    println!(
        "{:>5}  {:>14}  {:>8}  {:>12}  {:>12}",
        "N", "median_seconds", "ood_f1", "time_vs_base", "f1_vs_base"
    );
    for r in &rows {
        let (dt, df) = match baseline {
            Some(b) if b.n != r.n && b.median_seconds > 0.0 && b.ood_f1 > 0.0 => (
                format!(
                    "{:+.2}%",
                    100.0 * (r.median_seconds / b.median_seconds - 1.0)
                ),
                format!("{:+.2}%", 100.0 * (r.ood_f1 / b.ood_f1 - 1.0)),
            ),
            _ => ("-".into(), "-".into()),
        };
        println!(
            "{:>5}  {:>14.6}  {:>8.4}  {:>12}  {:>12}",
            r.n, r.median_seconds, r.ood_f1, dt, df
        );
    }
    println!("\nbench written to {}", out.join("bench.csv").display());
    Ok(())
}

/// Generate the configured synthetic dataset and write it in the standard
/// corpus JSON layout.
pub fn cmd_gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let spec = match &mut cfg.data {
        DataSource::Synthetic { spec } => {
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.clone()
        }
        DataSource::Clinc { .. } => {
            return Err(Error::Config(
                "gen-data needs a synthetic data source, config points at a corpus file".into(),
            ))
        }
    };
    let dataset = generate_synthetic(&spec)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_clinc(&dataset, out)?;
    let (ind_val, ood_val) = Dataset::partition(&dataset.val);
    let (ind_test, ood_test) = Dataset::partition(&dataset.test);
    println!(
        "wrote {}: {} classes, train {}, val {}+{} ood, test {}+{} ood, ood pool {}",
        out.display(),
        dataset.num_classes,
        dataset.train.len(),
        ind_val.len(),
        ood_val.len(),
        ind_test.len(),
        ood_test.len(),
        dataset.ood_train_pool.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "oodcal",
    about = "Train intent classifiers and detect out-of-domain queries via MC-dropout uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train model(s) and evaluate the configured detectors
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of training runs with distinct seeds (config default: 5)
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate detectors using a checkpoint or a freshly trained model
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Previous run directory holding checkpoint.json + vocab.json
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Restrict to one detector: msp, entropy, lof, or gda
        #[arg(long)]
        detector: Option<String>,
        /// Override the number of MC passes
        #[arg(long)]
        mc_n: Option<usize>,
        /// Override the inference dropout probability
        #[arg(long)]
        mc_p: Option<f64>,
        /// Skip the MC ensemble and report plain single-pass rows only
        #[arg(long)]
        no_bayes: bool,
    },
    /// Sweep inference dropout p and pass count N for one detector
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Detector to sweep (msp or entropy)
        #[arg(long)]
        detector: Option<String>,
        /// Dropout values, comma separated
        #[arg(long, value_delimiter = ',')]
        ps: Option<Vec<f64>>,
        /// Pass counts, comma separated
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
    },
    /// Summarize KL-to-uniform of predictive distributions by split and N
    Kl {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pass counts, comma separated
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Override the inference dropout probability
        #[arg(long)]
        mc_p: Option<f64>,
    },
    /// Measure inference cost vs detection quality across ensemble sizes
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Detector to score (msp or entropy)
        #[arg(long)]
        detector: Option<String>,
        /// Ensemble sizes, comma separated; 0 = deterministic baseline
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Timing repetitions per N
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Generate the configured synthetic dataset as a corpus JSON file
    GenData {
        /// JSON run configuration (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSON file
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse CLI arguments and dispatch. The binary's whole main.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train { common, runs } => {
            cmd_train(common.config.as_deref(), common.seed, common.out, runs)
        }
        Cmd::Eval {
            common,
            checkpoint,
            detector,
            mc_n,
            mc_p,
            no_bayes,
        } => cmd_eval(
            common.config.as_deref(),
            common.seed,
            common.out,
            checkpoint.as_deref(),
            detector.as_deref(),
            mc_n,
            mc_p,
            no_bayes,
        ),
        Cmd::Sweep {
            common,
            checkpoint,
            detector,
            ps,
            ns,
        } => cmd_sweep(
            common.config.as_deref(),
            common.seed,
            common.out,
            checkpoint.as_deref(),
            detector.as_deref(),
            ps,
            ns,
        ),
        Cmd::Kl {
            common,
            checkpoint,
            ns,
            mc_p,
        } => cmd_kl(
            common.config.as_deref(),
            common.seed,
            common.out,
            checkpoint.as_deref(),
            ns,
            mc_p,
        ),
        Cmd::Bench {
            common,
            checkpoint,
            detector,
            ns,
            runs,
        } => cmd_bench(
            common.config.as_deref(),
            common.seed,
            common.out,
            checkpoint.as_deref(),
            detector.as_deref(),
            ns,
            runs,
        ),
        Cmd::GenData { config, seed, out } => cmd_gen_data(config.as_deref(), seed, &out),
    }
}
