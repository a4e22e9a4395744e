//! Seeded synthetic genomic classification datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Table;
use crate::model::{DatasetManifest, Metric, Task};

/// Rejection sampling gives up after this many draws for one row.
pub const MAX_REJECTION_TRIES: u64 = 1_000_000;

pub const LABEL_COLUMN: &str = "label";
pub const POSITIVE: &str = "1";
pub const NEGATIVE: &str = "0";

const BASES: &[u8; 4] = b"ACGT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// One `sequence` column; positives carry the motif at a random position,
    /// negatives never contain it.
    PlantedMotif,
    /// A fixed-length `target` and a variable-length `probe`; the label is 1
    /// iff the reverse complement of the probe occurs in the target.
    PairedSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub name: String,
    pub kind: SyntheticKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Sequence length (the `target` length for paired sequences).
    pub seq_len: usize,
    /// Inclusive probe length range for paired sequences.
    pub len_range: Option<(usize, usize)>,
    pub motif: String,
    /// Fraction of positive rows in each split.
    pub class_balance: f64,
    pub seed: u64,
    /// Defaults to accuracy for planted motifs and average precision for
    /// paired sequences.
    pub metric: Option<Metric>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "planted_motif".to_string(),
            kind: SyntheticKind::PlantedMotif,
            n_train: 2000,
            n_test: 500,
            seq_len: 100,
            len_range: None,
            motif: "TATAAT".to_string(),
            class_balance: 0.5,
            seed: 0,
            metric: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid synthetic spec: rejection sampling exceeded {MAX_REJECTION_TRIES} tries (motif too dense for the sequence length)")]
    TooDense,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Paths written by [`generate_synthetic`], plus the manifest with its data
/// paths resolved the way [`DatasetManifest::load`] would.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub manifest_path: PathBuf,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub manifest: DatasetManifest,
}

impl SyntheticSpec {
    pub fn metric(&self) -> Metric {
        self.metric.unwrap_or(match self.kind {
            SyntheticKind::PlantedMotif => Metric::Accuracy,
            SyntheticKind::PairedSequence => Metric::AveragePrecision,
        })
    }

    fn probe_range(&self) -> (usize, usize) {
        self.len_range.unwrap_or((8, 14))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Spec(m));
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("name `{}` is not a plain file stem", self.name));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return fail("n_train and n_test must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return fail(format!(
                "class_balance {} is outside [0, 1]",
                self.class_balance
            ));
        }
        match self.kind {
            SyntheticKind::PlantedMotif => {
                if self.motif.is_empty() || !self.motif.bytes().all(|b| BASES.contains(&b)) {
                    return fail(format!(
                        "motif `{}` must be a non-empty string over ACGT",
                        self.motif
                    ));
                }
                if self.motif.len() >= self.seq_len {
                    return fail(format!(
                        "motif length {} must be below the sequence length {}",
                        self.motif.len(),
                        self.seq_len
                    ));
                }
            }
            SyntheticKind::PairedSequence => {
                let (lo, hi) = self.probe_range();
                if lo == 0 || lo > hi {
                    return fail(format!("probe length range ({lo}, {hi}) is empty"));
                }
                if hi >= self.seq_len {
                    return fail(format!(
                        "probe length {hi} must be below the target length {}",
                        self.seq_len
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn feature_columns(&self) -> Vec<String> {
        match self.kind {
            SyntheticKind::PlantedMotif => vec!["sequence".to_string()],
            SyntheticKind::PairedSequence => vec!["target".to_string(), "probe".to_string()],
        }
    }
}

/// Writes `<name>_train.csv`, `<name>_test.csv` and `<name>.manifest.json`
/// into `out_dir`. Identical specs produce byte-identical files.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    out_dir: &Path,
) -> Result<SyntheticOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = generate_split(spec, spec.n_train, &mut rng)?;
    let test = generate_split(spec, spec.n_test, &mut rng)?;

    fs::create_dir_all(out_dir)?;
    let train_name = format!("{}_train.csv", spec.name);
    let test_name = format!("{}_test.csv", spec.name);
    let train_path = out_dir.join(&train_name);
    let test_path = out_dir.join(&test_name);
    fs::write(&train_path, train.to_csv_bytes())?;
    fs::write(&test_path, test.to_csv_bytes())?;

    let on_disk = DatasetManifest {
        name: spec.name.clone(),
        train_path: PathBuf::from(train_name),
        test_path: PathBuf::from(test_name),
        label_column: LABEL_COLUMN.to_string(),
        feature_columns: spec.feature_columns(),
        task: Task::BinaryClassification,
        metric: spec.metric(),
        description: Some(description(spec.kind).to_string()),
        positive_label: Some(POSITIVE.to_string()),
    };
    let manifest_path = out_dir.join(format!("{}.manifest.json", spec.name));
    let mut json = serde_json::to_vec_pretty(&on_disk)?;
    json.push(b'\n');
    fs::write(&manifest_path, json)?;

    let manifest = DatasetManifest {
        train_path: train_path.clone(),
        test_path: test_path.clone(),
        ..on_disk
    };
    Ok(SyntheticOutput {
        manifest_path,
        train_path,
        test_path,
        manifest,
    })
}

fn description(kind: SyntheticKind) -> &'static str {
    match kind {
        SyntheticKind::PlantedMotif => {
            "DNA sequences with a binary label. Each row holds one nucleotide sequence over A, C, G and T."
        }
        SyntheticKind::PairedSequence => {
            "Pairs of DNA sequences with a binary label. `target` has a fixed length and `probe` a variable length; the label describes whether the two sequences interact."
        }
    }
}

/// Positive count for a split of `n` rows.
pub fn positive_count(n: usize, class_balance: f64) -> usize {
    ((n as f64) * class_balance).round() as usize
}

fn generate_split(
    spec: &SyntheticSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Table, SynthError> {
    let positives = positive_count(n, spec.class_balance);
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    labels.shuffle(rng);

    let mut headers = spec.feature_columns();
    headers.push(LABEL_COLUMN.to_string());
    let mut rows = Vec::with_capacity(n);
    for positive in labels {
        let mut row = match spec.kind {
            SyntheticKind::PlantedMotif => vec![planted_motif_row(spec, positive, rng)?],
            SyntheticKind::PairedSequence => {
                let (target, probe) = paired_row(spec, positive, rng)?;
                vec![target, probe]
            }
        };
        row.push(if positive { POSITIVE } else { NEGATIVE }.to_string());
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

fn random_sequence(len: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.random_range(0..4)]).collect()
}

fn planted_motif_row(
    spec: &SyntheticSpec,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> Result<String, SynthError> {
    let motif = spec.motif.as_bytes();
    if positive {
        let mut seq = random_sequence(spec.seq_len, rng);
        let at = rng.random_range(0..=spec.seq_len - motif.len());
        seq[at..at + motif.len()].copy_from_slice(motif);
        return Ok(to_string(seq));
    }
    for _ in 0..MAX_REJECTION_TRIES {
        if let Some(seq) = motif_free_draw(spec.seq_len, motif, rng) {
            return Ok(to_string(seq));
        }
    }
    Err(SynthError::TooDense)
}

/// One rejection-sampling draw, abandoned as soon as the motif appears.
fn motif_free_draw(len: usize, motif: &[u8], rng: &mut ChaCha8Rng) -> Option<Vec<u8>> {
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        seq.push(BASES[rng.random_range(0..4)]);
        if seq.ends_with(motif) {
            return None;
        }
    }
    Some(seq)
}

fn paired_row(
    spec: &SyntheticSpec,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(String, String), SynthError> {
    let (lo, hi) = spec.probe_range();
    let probe_len = rng.random_range(lo..=hi);
    if positive {
        let target = random_sequence(spec.seq_len, rng);
        let at = rng.random_range(0..=spec.seq_len - probe_len);
        let probe = reverse_complement(&target[at..at + probe_len]);
        return Ok((to_string(target), to_string(probe)));
    }
    for _ in 0..MAX_REJECTION_TRIES {
        let target = random_sequence(spec.seq_len, rng);
        let probe = random_sequence(probe_len, rng);
        if !contains(&target, &reverse_complement(&probe)) {
            return Ok((to_string(target), to_string(probe)));
        }
    }
    Err(SynthError::TooDense)
}

pub fn reverse_complement(seq: &[u8]) -> Vec<u8> {
    seq.iter()
        .rev()
        .map(|b| match b {
            b'A' => b'T',
            b'T' => b'A',
            b'C' => b'G',
            b'G' => b'C',
            other => *other,
        })
        .collect()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn to_string(seq: Vec<u8>) -> String {
    String::from_utf8(seq).expect("bases are ASCII")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: SyntheticKind) -> SyntheticSpec {
        SyntheticSpec {
            name: "toy".into(),
            kind,
            n_train: 40,
            n_test: 11,
            seq_len: 30,
            seed: 7,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = small(SyntheticKind::PairedSequence);
        let x = generate_synthetic(&spec, a.path()).unwrap();
        let y = generate_synthetic(&spec, b.path()).unwrap();
        for (p, q) in [
            (&x.train_path, &y.train_path),
            (&x.test_path, &y.test_path),
            (&x.manifest_path, &y.manifest_path),
        ] {
            assert_eq!(fs::read(p).unwrap(), fs::read(q).unwrap());
        }
        let other = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }, a.path()).unwrap();
        assert_ne!(
            fs::read(&other.train_path).unwrap(),
            fs::read(&y.train_path).unwrap()
        );
    }

    #[test]
    fn class_balance_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&small(SyntheticKind::PlantedMotif), dir.path()).unwrap();
        let test = Table::read(&out.test_path).unwrap();
        let pos = test
            .column(LABEL_COLUMN)
            .unwrap()
            .iter()
            .filter(|l| **l == POSITIVE)
            .count();
        assert_eq!(pos, positive_count(11, 0.5));
        assert_eq!(test.rows.len(), 11);
    }

    #[test]
    fn manifest_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&small(SyntheticKind::PlantedMotif), dir.path()).unwrap();
        let loaded = DatasetManifest::load(&out.manifest_path).unwrap();
        assert_eq!(loaded, out.manifest);
        loaded.validate_with_data().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let long_motif = SyntheticSpec {
            motif: "A".repeat(30),
            ..small(SyntheticKind::PlantedMotif)
        };
        assert!(matches!(long_motif.validate(), Err(SynthError::Spec(_))));
        let bad_base = SyntheticSpec {
            motif: "TAXA".into(),
            ..small(SyntheticKind::PlantedMotif)
        };
        assert!(bad_base.validate().is_err());
        let long_probe = SyntheticSpec {
            len_range: Some((5, 30)),
            ..small(SyntheticKind::PairedSequence)
        };
        assert!(long_probe.validate().is_err());
    }

    #[test]
    fn dense_motif_exhausts_rejection_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            motif: "A".into(),
            seq_len: 200,
            n_train: 2,
            n_test: 2,
            ..small(SyntheticKind::PlantedMotif)
        };
        assert!(matches!(
            generate_synthetic(&spec, dir.path()),
            Err(SynthError::TooDense)
        ));
    }

    #[test]
    fn reverse_complement_examples() {
        assert_eq!(reverse_complement(b"AACG"), b"CGTT");
        assert_eq!(reverse_complement(b""), b"");
    }
}
