//! Corpus loading, synthetic dataset generation, and vocabulary construction.
//!
//! Datasets carry `C` in-domain (IND) intent classes plus a distinguished
//! out-of-domain (OOD) marker. OOD utterances are never used for supervision:
//! they appear in the validation split (threshold calibration) and the test
//! split (evaluation), and any OOD pool attached to the training portion of a
//! corpus is ingested but kept out of the split the trainer consumes.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Intent label: an in-domain class id (dense in `0..C`) or the OOD marker.
///
/// In dense array contexts (confusion matrices, CSV dumps) the OOD marker maps
/// to the reserved index `C`, one past the IND range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Ind(usize),
    Ood,
}

impl Label {
    pub fn is_ood(self) -> bool {
        matches!(self, Label::Ood)
    }

    /// Dense index: IND class ids pass through, OOD maps to `num_classes`.
    pub fn to_index(self, num_classes: usize) -> usize {
        match self {
            Label::Ind(c) => c,
            Label::Ood => num_classes,
        }
    }

    /// Inverse of [`Label::to_index`].
    pub fn from_index(idx: usize, num_classes: usize) -> Self {
        if idx == num_classes {
            Label::Ood
        } else {
            Label::Ind(idx)
        }
    }
}

/// One labeled utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub label: Label,
}

/// Which CLINC file flavor a path refers to. The two flavors share one JSON
/// layout; the variant is provenance recorded with the loaded dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClincVariant {
    Full,
    Imbal,
}

impl fmt::Display for ClincVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClincVariant::Full => write!(f, "full"),
            ClincVariant::Imbal => write!(f, "imbal"),
        }
    }
}

/// A labeled corpus split into train/val/test.
///
/// Invariants, checked by [`Dataset::validate`]:
/// - the train split contains no OOD-labeled utterances (OOD appears only in
///   val/test, plus the held-out `ood_train_pool`);
/// - every IND label id is `< num_classes`;
/// - `num_classes >= 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// OOD pool attached to the training portion of the corpus. Ingested and
    /// validated, never fed to the trainer.
    pub ood_train_pool: Vec<Utterance>,
    /// Number of IND classes, `C`.
    pub num_classes: usize,
    /// IND class names by id (sorted label strings for CLINC corpora).
    pub class_names: Vec<String>,
    /// Human-readable provenance ("clinc-full:path", "synthetic(seed=7,...)").
    pub source: String,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Data(format!(
                "need at least 2 IND classes, got {}",
                self.num_classes
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Data(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.train.iter().any(|u| u.label.is_ood()) {
            return Err(Error::Data(
                "train split contains OOD-labeled utterances".into(),
            ));
        }
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
            ("ood_train_pool", &self.ood_train_pool),
        ] {
            for u in split.iter() {
                if let Label::Ind(c) = u.label {
                    if c >= self.num_classes {
                        return Err(Error::Data(format!(
                            "{name}: label id {c} out of range for C = {}",
                            self.num_classes
                        )));
                    }
                }
                if u.text.trim().is_empty() {
                    return Err(Error::Data(format!("{name}: empty utterance text")));
                }
            }
        }
        Ok(())
    }

    /// Utterances of a split partitioned into (IND, OOD), order preserved.
    pub fn partition(split: &[Utterance]) -> (Vec<&Utterance>, Vec<&Utterance>) {
        split.iter().partition(|u| !u.label.is_ood())
    }
}

/// Lowercase, split on whitespace, and strip non-alphanumeric characters.
/// Tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let tok: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(|c| c.to_lowercase())
                .collect();
            if tok.is_empty() {
                None
            } else {
                Some(tok)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CLINC JSON layout
// ---------------------------------------------------------------------------

/// On-disk CLINC layout: six split keys, each a list of `[utterance, label]`
/// pairs. `oos_*` entries carry the OOD marker on ingestion.
#[derive(Debug, Serialize, Deserialize)]
struct ClincFile {
    train: Vec<(String, String)>,
    val: Vec<(String, String)>,
    test: Vec<(String, String)>,
    oos_train: Vec<(String, String)>,
    oos_val: Vec<(String, String)>,
    oos_test: Vec<(String, String)>,
}

/// Label string written for OOD entries when serializing to the CLINC layout.
pub const OOS_LABEL: &str = "oos";

/// Load a CLINC-layout JSON corpus.
///
/// IND class ids are assigned by sorting the distinct label strings observed
/// across the train/val/test splits, which makes the mapping deterministic.
/// `oos_train` entries are kept in [`Dataset::ood_train_pool`], outside the
/// supervised train split.
pub fn load_clinc(path: &Path, variant: ClincVariant) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let raw: ClincFile = serde_json::from_reader(BufReader::new(file))?;

    for (name, rows) in [
        ("train", &raw.train),
        ("val", &raw.val),
        ("test", &raw.test),
        ("oos_train", &raw.oos_train),
        ("oos_val", &raw.oos_val),
        ("oos_test", &raw.oos_test),
    ] {
        if rows.is_empty() {
            return Err(Error::EmptySplit(name.to_string()));
        }
    }

    let mut names: Vec<String> = raw
        .train
        .iter()
        .chain(&raw.val)
        .chain(&raw.test)
        .map(|(_, label)| label.clone())
        .collect();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 IND intents, found {}",
            names.len()
        )));
    }
    let id_of: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let ind = |rows: &[(String, String)]| -> Result<Vec<Utterance>> {
        rows.iter()
            .map(|(text, label)| {
                let c = *id_of
                    .get(label.as_str())
                    .ok_or_else(|| Error::Data(format!("unknown intent label {label:?}")))?;
                Ok(Utterance {
                    text: text.clone(),
                    label: Label::Ind(c),
                })
            })
            .collect()
    };
    let ood = |rows: &[(String, String)]| -> Vec<Utterance> {
        rows.iter()
            .map(|(text, _)| Utterance {
                text: text.clone(),
                label: Label::Ood,
            })
            .collect()
    };

    let mut val = ind(&raw.val)?;
    val.extend(ood(&raw.oos_val));
    let mut test = ind(&raw.test)?;
    test.extend(ood(&raw.oos_test));

    let dataset = Dataset {
        train: ind(&raw.train)?,
        val,
        test,
        ood_train_pool: ood(&raw.oos_train),
        num_classes: names.len(),
        class_names: names,
        source: format!("clinc-{variant}:{}", path.display()),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Serialize a dataset back to the CLINC JSON layout.
///
/// Splits are partitioned into their IND and `oos_*` keys, preserving order,
/// so a round trip through [`load_clinc`] reproduces the dataset.
pub fn write_clinc(dataset: &Dataset, path: &Path) -> Result<()> {
    let pair = |u: &Utterance| -> (String, String) {
        let label = match u.label {
            Label::Ind(c) => dataset.class_names[c].clone(),
            Label::Ood => OOS_LABEL.to_string(),
        };
        (u.text.clone(), label)
    };
    let split = |utts: &[Utterance]| -> (Vec<(String, String)>, Vec<(String, String)>) {
        let (ind, ood): (Vec<_>, Vec<_>) = utts.iter().partition(|u| !u.label.is_ood());
        (
            ind.into_iter().map(pair).collect(),
            ood.into_iter().map(pair).collect(),
        )
    };
    let (train, train_ood_extra) = split(&dataset.train);
    let (val, oos_val) = split(&dataset.val);
    let (test, oos_test) = split(&dataset.test);
    let mut oos_train: Vec<(String, String)> =
        dataset.ood_train_pool.iter().map(pair).collect();
    oos_train.extend(train_ood_extra); // never populated for valid datasets

    let file = ClincFile {
        train,
        val,
        test,
        oos_train,
        oos_val,
        oos_test,
    };
    let out = File::create(path)?;
    serde_json::to_writer(BufWriter::new(out), &file)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Recipe for a desk-scale synthetic intent dataset.
///
/// Class vocabularies are contiguous windows of [`CLASS_VOCAB`] tokens laid
/// out on a token ring whose circumference is chosen so the mean pairwise
/// Jaccard overlap of the windows matches `overlap`. Ring tokens covered by
/// two or more windows form the shared pool; OOD utterances draw from a
/// disjoint token block mixed with shared-pool tokens at the overlap ratio,
/// so OOD text carries conflicting weak class evidence the way out-of-scope
/// queries reuse ordinary in-domain words. Generation is bit-reproducible
/// from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Train utterances per IND class. Val and test IND sizes are derived as
    /// ceil(20%) and ceil(30%) per class.
    pub samples_per_class: usize,
    /// Target pairwise Jaccard overlap between class vocabularies, in [0, 1].
    pub overlap: f64,
    /// Inclusive token-count range per utterance.
    pub len_range: (usize, usize),
    /// OOD utterances generated for each of the oos train/val/test pools.
    pub ood_samples: usize,
    pub seed: u64,
}

/// Tokens in each class-specific vocabulary window.
const CLASS_VOCAB: usize = 40;
/// Tokens in the OOD-only block.
const OOD_VOCAB: usize = 80;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return err(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.samples_per_class == 0 {
            return err("samples_per_class must be positive".into());
        }
        if self.ood_samples == 0 {
            return err("ood_samples must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return err(format!("overlap must be in [0, 1], got {}", self.overlap));
        }
        let (lo, hi) = self.len_range;
        if lo == 0 || lo > hi {
            return err(format!("invalid utterance length range {lo}..={hi}"));
        }
        Ok(())
    }

    /// The default desk-scale benchmark: 10 classes, 50 train utterances per
    /// class, matched-size OOD pools.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            num_classes: 10,
            samples_per_class: 50,
            overlap: 0.3,
            len_range: (4, 9),
            ood_samples: 150,
            seed,
        }
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::benchmark(0)
    }
}

/// Window start offsets for `c` class windows on a ring of `ring` tokens.
fn window_starts(c: usize, ring: usize) -> Vec<usize> {
    (0..c).map(|i| i * ring / c).collect()
}

/// Mean pairwise Jaccard overlap of the class windows on a ring of `ring`
/// tokens. Two width-`b` arcs at offset `d` intersect in
/// `min(b, max(0, b-d) + max(0, b-(ring-d)))` tokens (the second term is the
/// wrap-around side), and J = inter / (2b - inter).
fn mean_window_jaccard(c: usize, ring: usize) -> f64 {
    let b = CLASS_VOCAB;
    let starts = window_starts(c, ring);
    let mut total = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            let d = starts[j] - starts[i];
            let inter = (b.saturating_sub(d) + b.saturating_sub(ring - d)).min(b);
            total += inter as f64 / (2 * b - inter) as f64;
        }
    }
    total / (c * (c - 1) / 2) as f64
}

/// Pick the ring circumference whose mean pairwise window Jaccard is closest
/// to the requested overlap. The ring shrinks as overlap grows: `ring =
/// C·CLASS_VOCAB` lays the windows out disjointly (overlap 0) and `ring =
/// CLASS_VOCAB` makes them coincide (overlap 1). Ties keep the smallest ring
/// so overlap 1 resolves exactly.
fn ring_size(c: usize, overlap: f64) -> usize {
    let (lo, hi) = (CLASS_VOCAB, c * CLASS_VOCAB);
    let step = ((hi - lo) / 2000).max(1);
    let mut best = (f64::INFINITY, hi);
    for ring in (lo..=hi).step_by(step).chain([hi]) {
        let err = (mean_window_jaccard(c, ring) - overlap).abs();
        if err < best.0 {
            best = (err, ring);
        }
    }
    best.1
}

/// Generate a synthetic dataset. Deterministic given an identical spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let ring = ring_size(spec.num_classes, spec.overlap);
    let ring_tokens: Vec<String> = (0..ring).map(|i| format!("tok{i:04}")).collect();
    let ood_block: Vec<String> = (0..OOD_VOCAB).map(|i| format!("xood{i:03}")).collect();
    let starts = window_starts(spec.num_classes, ring);

    // Shared pool: ring tokens covered by at least two class windows.
    let mut coverage = vec![0usize; ring];
    for &start in &starts {
        for k in 0..CLASS_VOCAB {
            coverage[(start + k) % ring] += 1;
        }
    }
    let shared: Vec<usize> = (0..ring).filter(|&t| coverage[t] >= 2).collect();

    let (lo, hi) = spec.len_range;
    let ind_utterance = |class: usize, rng: &mut ChaCha8Rng| -> Utterance {
        let len = rng.gen_range(lo..=hi);
        let start = starts[class];
        let text: Vec<&str> = (0..len)
            .map(|_| ring_tokens[(start + rng.gen_range(0..CLASS_VOCAB)) % ring].as_str())
            .collect();
        Utterance {
            text: text.join(" "),
            label: Label::Ind(class),
        }
    };
    let ood_utterance = |rng: &mut ChaCha8Rng| -> Utterance {
        let len = rng.gen_range(lo..=hi);
        let text: Vec<&str> = (0..len)
            .map(|_| {
                if !shared.is_empty() && rng.gen::<f64>() < spec.overlap {
                    ring_tokens[shared[rng.gen_range(0..shared.len())]].as_str()
                } else {
                    ood_block[rng.gen_range(0..ood_block.len())].as_str()
                }
            })
            .collect();
        Utterance {
            text: text.join(" "),
            label: Label::Ood,
        }
    };

    let val_per_class = spec.samples_per_class.div_ceil(5); // 20%
    let test_per_class = (spec.samples_per_class * 3).div_ceil(10); // 30%

    let ind_split = |per_class: usize, rng: &mut ChaCha8Rng| -> Vec<Utterance> {
        let mut out = Vec::with_capacity(per_class * spec.num_classes);
        for class in 0..spec.num_classes {
            for _ in 0..per_class {
                out.push(ind_utterance(class, rng));
            }
        }
        out
    };

    let train = ind_split(spec.samples_per_class, &mut rng);
    let mut val = ind_split(val_per_class, &mut rng);
    let mut test = ind_split(test_per_class, &mut rng);
    let ood_train_pool: Vec<Utterance> =
        (0..spec.ood_samples).map(|_| ood_utterance(&mut rng)).collect();
    val.extend((0..spec.ood_samples).map(|_| ood_utterance(&mut rng)));
    test.extend((0..spec.ood_samples).map(|_| ood_utterance(&mut rng)));

    let dataset = Dataset {
        train,
        val,
        test,
        ood_train_pool,
        num_classes: spec.num_classes,
        class_names: (0..spec.num_classes).map(|c| format!("class_{c:03}")).collect(),
        source: format!(
            "synthetic(C={},n={},overlap={},len={}..={},ood={},seed={})",
            spec.num_classes,
            spec.samples_per_class,
            spec.overlap,
            lo,
            hi,
            spec.ood_samples,
            spec.seed
        ),
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Reserved id for the padding token.
pub const PAD_ID: usize = 0;
/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token-to-id mapping with dense ids in `[0, V)` and reserved PAD/UNK slots.
///
/// Built from the train split only, so no information leaks from val, test,
/// or OOD text. The mapping is a pure function of (train split, min_freq):
/// content tokens are sorted lexicographically before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        Vocab::from_tokens(f.tokens)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, lookup }
    }

    /// Total size V including PAD and UNK.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Content-addressed fingerprint, persisted in checkpoints so a model is
    /// never paired with the wrong vocabulary.
    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = File::create(path)?;
        serde_json::to_writer(BufWriter::new(out), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Build a vocabulary from the dataset's train split.
///
/// Tokens occurring fewer than `min_freq` times are left unmapped and fall
/// back to [`UNK_ID`] at encode time.
pub fn build_vocab(dataset: &Dataset, min_freq: usize) -> Result<Vocab> {
    if dataset.train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for u in &dataset.train {
        for tok in tokenize(&u.text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut content: Vec<String> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_freq.max(1))
        .map(|(t, _)| t)
        .collect();
    content.sort();

    let mut tokens = Vec::with_capacity(content.len() + 2);
    tokens.push(PAD_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    debug_assert_eq!(tokens[PAD_ID], PAD_TOKEN);
    debug_assert_eq!(tokens[UNK_ID], UNK_TOKEN);
    tokens.extend(content);
    Ok(Vocab::from_tokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn mini_dataset(train_texts: &[&str]) -> Dataset {
        let utt = |t: &str, c: usize| Utterance {
            text: t.to_string(),
            label: Label::Ind(c),
        };
        Dataset {
            train: train_texts.iter().map(|t| utt(t, 0)).collect(),
            val: vec![utt("v", 0), utt("w", 1)],
            test: vec![utt("x", 1)],
            ood_train_pool: vec![],
            num_classes: 2,
            class_names: vec!["a".into(), "b".into()],
            source: "test".into(),
        }
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("What's MY Balance?!"), vec!["whats", "my", "balance"]);
        assert_eq!(tokenize("  .. , "), Vec::<String>::new());
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn vocab_counts_and_specials() {
        let ds = mini_dataset(&["a b", "a c"]);
        let v = build_vocab(&ds, 1).unwrap();
        // 3 content tokens + UNK + PAD
        assert_eq!(v.size(), 5);
        assert_eq!(v.token(PAD_ID), "<pad>");
        assert_eq!(v.token(UNK_ID), "<unk>");
        assert_ne!(PAD_ID, UNK_ID);

        let v2 = build_vocab(&ds, 2).unwrap();
        assert_eq!(v2.size(), 3); // only "a" survives the frequency filter
        assert!(v2.id("a").is_some());
        assert!(v2.id("b").is_none());
    }

    #[test]
    fn vocab_is_deterministic_and_train_only() {
        let ds = mini_dataset(&["c a b", "b d"]);
        let v1 = build_vocab(&ds, 1).unwrap();
        let v2 = build_vocab(&ds, 1).unwrap();
        assert_eq!(v1, v2);
        // ids dense in [0, V)
        for id in 0..v1.size() {
            assert_eq!(v1.id(v1.token(id)), Some(id));
        }
        // val/test tokens don't leak in
        assert!(v1.id("v").is_none());
        assert!(v1.id("x").is_none());
    }

    #[test]
    fn vocab_size_matches_independent_counter() {
        // Brute-force oracle: one pass counting distinct normalized tokens.
        let ds = generate_synthetic(&SyntheticSpec::benchmark(3)).unwrap();
        let v = build_vocab(&ds, 1).unwrap();
        let mut seen = HashSet::new();
        for u in &ds.train {
            for t in u.text.to_lowercase().split_whitespace() {
                seen.insert(t.to_string());
            }
        }
        assert_eq!(v.size(), seen.len() + 2);
    }

    #[test]
    fn synthetic_is_bit_reproducible() {
        let spec = SyntheticSpec::benchmark(7);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_zero_overlap_classes_disjoint() {
        let spec = SyntheticSpec {
            num_classes: 10,
            samples_per_class: 50,
            overlap: 0.0,
            len_range: (4, 9),
            ood_samples: 20,
            seed: 7,
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.train.len(), 500);

        let mut class_tokens: Vec<HashSet<String>> = vec![HashSet::new(); 10];
        for u in &ds.train {
            if let Label::Ind(c) = u.label {
                class_tokens[c].extend(tokenize(&u.text));
            }
        }
        for i in 0..10 {
            for j in (i + 1)..10 {
                assert!(
                    class_tokens[i].is_disjoint(&class_tokens[j]),
                    "classes {i} and {j} share tokens"
                );
            }
        }
    }

    #[test]
    fn synthetic_overlap_matches_measured_jaccard() {
        let spec = SyntheticSpec {
            num_classes: 10,
            samples_per_class: 50,
            overlap: 0.2,
            len_range: (4, 9),
            ood_samples: 20,
            seed: 7,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut class_tokens: Vec<HashSet<String>> = vec![HashSet::new(); 10];
        for u in &ds.train {
            if let Label::Ind(c) = u.label {
                class_tokens[c].extend(tokenize(&u.text));
            }
        }
        // Oracle: measured pairwise Jaccard overlap after generation.
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..10 {
            for j in (i + 1)..10 {
                let inter = class_tokens[i].intersection(&class_tokens[j]).count();
                let union = class_tokens[i].union(&class_tokens[j]).count();
                total += inter as f64 / union as f64;
                pairs += 1;
            }
        }
        let mean_jaccard = total / pairs as f64;
        assert!(
            (mean_jaccard - 0.2).abs() <= 0.05,
            "mean Jaccard {mean_jaccard} not within 0.05 of 0.2"
        );
    }

    #[test]
    fn synthetic_keeps_ood_out_of_train() {
        let ds = generate_synthetic(&SyntheticSpec::benchmark(1)).unwrap();
        assert!(ds.train.iter().all(|u| !u.label.is_ood()));
        assert!(ds.val.iter().any(|u| u.label.is_ood()));
        assert!(ds.test.iter().any(|u| u.label.is_ood()));
        assert_eq!(ds.ood_train_pool.len(), 150);
        ds.validate().unwrap();
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut spec = SyntheticSpec::benchmark(0);
        spec.overlap = 1.5;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = SyntheticSpec::benchmark(0);
        spec.len_range = (5, 2);
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::benchmark(0);
        spec.num_classes = 1;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn clinc_round_trip() {
        let ds = generate_synthetic(&SyntheticSpec::benchmark(11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.json");
        write_clinc(&ds, &path).unwrap();
        let loaded = load_clinc(&path, ClincVariant::Full).unwrap();
        assert_eq!(loaded.train, ds.train);
        assert_eq!(loaded.val, ds.val);
        assert_eq!(loaded.test, ds.test);
        assert_eq!(loaded.ood_train_pool, ds.ood_train_pool);
        assert_eq!(loaded.num_classes, ds.num_classes);
        assert_eq!(loaded.class_names, ds.class_names);
    }

    #[test]
    fn clinc_loader_errors() {
        let dir = tempfile::tempdir().unwrap();

        // missing file
        let missing = dir.path().join("nope.json");
        assert!(matches!(
            load_clinc(&missing, ClincVariant::Full),
            Err(Error::Io(_))
        ));

        // malformed JSON
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{not json").unwrap();
        assert!(matches!(
            load_clinc(&bad, ClincVariant::Full),
            Err(Error::Json(_))
        ));

        // missing split key
        let partial = dir.path().join("partial.json");
        std::fs::write(&partial, r#"{"train": [["hi", "a"]]}"#).unwrap();
        assert!(matches!(
            load_clinc(&partial, ClincVariant::Full),
            Err(Error::Json(_))
        ));

        // empty train list
        let empty = dir.path().join("empty.json");
        std::fs::write(
            &empty,
            r#"{"train": [], "val": [["v","a"]], "test": [["t","a"]],
                "oos_train": [["o","oos"]], "oos_val": [["o","oos"]], "oos_test": [["o","oos"]]}"#,
        )
        .unwrap();
        match load_clinc(&empty, ClincVariant::Full) {
            Err(Error::EmptySplit(name)) => assert_eq!(name, "train"),
            other => panic!("expected EmptySplit, got {other:?}"),
        }
    }

    #[test]
    fn clinc_fixture_counts_and_markers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        std::fs::write(
            &path,
            r#"{
              "train": [["pay my bill", "pay_bill"], ["check balance", "balance"],
                        ["send money now", "transfer"], ["my balance please", "balance"]],
              "val":   [["balance check", "balance"], ["pay bill", "pay_bill"]],
              "test":  [["transfer funds", "transfer"]],
              "oos_train": [["weather today", "oos"]],
              "oos_val":   [["tell a joke", "oos"], ["sing", "oos"]],
              "oos_test":  [["what is love", "oos"], ["play music", "oos"], ["dance", "oos"]]
            }"#,
        )
        .unwrap();
        let ds = load_clinc(&path, ClincVariant::Imbal).unwrap();
        assert_eq!(ds.num_classes, 3);
        // sorted label strings: balance < pay_bill < transfer
        assert_eq!(ds.class_names, vec!["balance", "pay_bill", "transfer"]);
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.ood_train_pool.len(), 1);
        assert_eq!(ds.val.len(), 4); // 2 IND + 2 OOD
        assert_eq!(ds.test.len(), 4); // 1 IND + 3 OOD
        assert_eq!(ds.test.iter().filter(|u| u.label.is_ood()).count(), 3);
        assert_eq!(ds.train[0].label, Label::Ind(1)); // pay_bill
        assert!(ds.source.contains("imbal"));
    }

    #[test]
    fn label_index_round_trip() {
        assert_eq!(Label::Ind(3).to_index(10), 3);
        assert_eq!(Label::Ood.to_index(10), 10);
        assert_eq!(Label::from_index(10, 10), Label::Ood);
        assert_eq!(Label::from_index(9, 10), Label::Ind(9));
    }
}
