//! EHR data model: coded visits grouped into patient histories, vocabularies,
//! dataset splits, serialization, and medication ordering.

pub mod ingest;
pub mod stats;
pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

// ============ Vocabularies ============

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeKind {
    Diagnosis,
    Procedure,
    Medication,
}

/// Bidirectional code <-> dense id map for one code kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeVocabulary {
    pub kind: CodeKind,
    id_to_code: Vec<String>,
    code_to_id: HashMap<String, usize>,
}

impl CodeVocabulary {
    pub fn new(kind: CodeKind) -> Self {
        CodeVocabulary {
            kind,
            id_to_code: Vec::new(),
            code_to_id: HashMap::new(),
        }
    }

    pub fn from_codes(kind: CodeKind, codes: Vec<String>) -> Result<Self> {
        let mut v = CodeVocabulary::new(kind);
        for c in codes {
            if v.code_to_id.contains_key(&c) {
                return Err(Error::validation(format!("duplicate code in vocabulary: {c}")));
            }
            v.add(c);
        }
        Ok(v)
    }

    /// Insert a code if new; returns its id either way.
    pub fn add(&mut self, code: String) -> usize {
        if let Some(&id) = self.code_to_id.get(&code) {
            return id;
        }
        let id = self.id_to_code.len();
        self.code_to_id.insert(code.clone(), id);
        self.id_to_code.push(code);
        id
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.code_to_id.get(code).copied()
    }

    pub fn code(&self, id: usize) -> &str {
        &self.id_to_code[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_code.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.id_to_code
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub diagnosis: CodeVocabulary,
    pub procedure: CodeVocabulary,
    pub medication: CodeVocabulary,
}

impl Vocabularies {
    pub fn n_diag(&self) -> usize {
        self.diagnosis.len()
    }

    pub fn n_proc(&self) -> usize {
        self.procedure.len()
    }

    /// Number of clinical medications; sequence control tokens live above it.
    pub fn n_med(&self) -> usize {
        self.medication.len()
    }

    /// Token id used as the decoder's first input. Never a legal output.
    pub fn start_token(&self) -> usize {
        self.n_med()
    }

    /// Token id that terminates a generated medication sequence.
    pub fn end_token(&self) -> usize {
        self.n_med() + 1
    }

    /// Width of the decoder output distribution: every clinical medication
    /// plus one end-of-sequence slot (the last index).
    pub fn n_outputs(&self) -> usize {
        self.n_med() + 1
    }

    pub fn end_slot(&self) -> usize {
        self.n_med()
    }

    /// Hex SHA-256 over all codes in id order; stamped into checkpoints and
    /// exported artifacts so mismatched vocabularies are caught on load.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, vocab) in [
            ("diag", &self.diagnosis),
            ("proc", &self.procedure),
            ("med", &self.medication),
        ] {
            h.update(tag.as_bytes());
            for code in vocab.codes() {
                h.update([0u8]);
                h.update(code.as_bytes());
            }
            h.update([1u8]);
        }
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ============ Records ============

/// One hospital visit: sets of diagnosis/procedure ids and an ordered,
/// duplicate-free medication list. Procedures may be empty; the model
/// substitutes a learned placeholder for empty procedure sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    #[serde(rename = "diag")]
    pub diagnoses: Vec<usize>,
    #[serde(rename = "proc")]
    pub procedures: Vec<usize>,
    #[serde(rename = "meds")]
    pub medications: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Check id ranges and structural invariants against the vocabularies.
    pub fn validate(&self, vocabs: &Vocabularies) -> Result<()> {
        if self.visits.is_empty() {
            return Err(Error::validation(format!(
                "patient {} has no visits",
                self.patient_id
            )));
        }
        for (t, v) in self.visits.iter().enumerate() {
            if v.diagnoses.is_empty() {
                return Err(Error::validation(format!(
                    "patient {} visit {t}: empty diagnosis set",
                    self.patient_id
                )));
            }
            if v.medications.is_empty() {
                return Err(Error::validation(format!(
                    "patient {} visit {t}: empty medication list",
                    self.patient_id
                )));
            }
            for &d in &v.diagnoses {
                if d >= vocabs.n_diag() {
                    return Err(Error::validation(format!(
                        "patient {} visit {t}: diagnosis id {d} out of range",
                        self.patient_id
                    )));
                }
            }
            for &p in &v.procedures {
                if p >= vocabs.n_proc() {
                    return Err(Error::validation(format!(
                        "patient {} visit {t}: procedure id {p} out of range",
                        self.patient_id
                    )));
                }
            }
            let mut seen = vec![false; vocabs.n_med()];
            for &m in &v.medications {
                if m >= vocabs.n_med() {
                    return Err(Error::validation(format!(
                        "patient {} visit {t}: medication id {m} out of range",
                        self.patient_id
                    )));
                }
                if seen[m] {
                    return Err(Error::validation(format!(
                        "patient {} visit {t}: duplicate medication id {m}",
                        self.patient_id
                    )));
                }
                seen[m] = true;
            }
        }
        Ok(())
    }
}

// ============ Dataset bundle ============

/// Patient-level train/validation/test split plus shared vocabularies.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train: Vec<PatientRecord>,
    pub validation: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub vocabs: Vocabularies,
    /// Visit-level medication occurrence counts over the train split,
    /// indexed by medication id. Drives frequency-based ordering.
    pub med_frequency: Vec<usize>,
}

impl DatasetBundle {
    pub fn all_patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.train
            .iter()
            .chain(self.validation.iter())
            .chain(self.test.iter())
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.all_patients() {
            p.validate(&self.vocabs)?;
        }
        Ok(())
    }
}

/// Count visit-level medication occurrences (each visit contributes at most
/// one count per medication).
pub fn med_visit_frequency(records: &[PatientRecord], n_med: usize) -> Vec<usize> {
    let mut freq = vec![0usize; n_med];
    for p in records {
        for v in &p.visits {
            for &m in &v.medications {
                freq[m] += 1;
            }
        }
    }
    freq
}

// ============ Splitting ============

/// Split patients into train/validation/test by the given ratios.
///
/// Sizes are `floor(n·r_train)` for train, the floor of the proportional
/// share of the remainder for validation, and the rest for test, so the
/// three parts always partition the cohort exactly.
pub fn split_dataset(
    mut patients: Vec<PatientRecord>,
    vocabs: Vocabularies,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetBundle> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b < 0.0 || c < 0.0 || !(a + b + c).is_finite() {
        return Err(Error::validation(format!(
            "split ratios must be positive (train) / non-negative, got {ratios:?}"
        )));
    }
    if patients.is_empty() {
        return Err(Error::validation("cannot split an empty cohort"));
    }
    let total = a + b + c;
    let (ra, rb, rc) = (a / total, b / total, c / total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n = patients.len();
    let n_train = ((n as f64) * ra).floor() as usize;
    let remaining = n - n_train;
    let n_val = if rb + rc > 0.0 {
        ((remaining as f64) * (rb / (rb + rc))).floor() as usize
    } else {
        0
    };

    let test = patients.split_off(n_train + n_val);
    let validation = patients.split_off(n_train);
    let train = patients;

    let med_frequency = med_visit_frequency(&train, vocabs.n_med());
    Ok(DatasetBundle {
        train,
        validation,
        test,
        vocabs,
        med_frequency,
    })
}

// ============ Medication ordering ============

/// Heuristic deciding the decoding order of each visit's medication list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderHeuristic {
    /// Ascending train-split frequency (the default).
    RareFirst,
    /// Descending train-split frequency.
    FrequentFirst,
    /// Ascending index of the visit where the medication first appears in
    /// this patient's history.
    EarlyFirst,
    /// Descending first-appearance index.
    LateFirst,
}

impl FromStr for OrderHeuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_lowercase().as_str() {
            "rare_first" => Ok(OrderHeuristic::RareFirst),
            "frequent_first" => Ok(OrderHeuristic::FrequentFirst),
            "early_first" => Ok(OrderHeuristic::EarlyFirst),
            "late_first" => Ok(OrderHeuristic::LateFirst),
            other => Err(Error::validation(format!(
                "unknown ordering heuristic '{other}' (expected rare_first, frequent_first, early_first or late_first)"
            ))),
        }
    }
}

impl std::fmt::Display for OrderHeuristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OrderHeuristic::RareFirst => "rare_first",
            OrderHeuristic::FrequentFirst => "frequent_first",
            OrderHeuristic::EarlyFirst => "early_first",
            OrderHeuristic::LateFirst => "late_first",
        };
        f.write_str(s)
    }
}

/// Reorder every visit's medication list in all three splits.
///
/// Frequency-based heuristics use the train split's visit-level counts
/// (medications never seen in train count as frequency zero). All ties are
/// broken by ascending medication id, making each ordering a deterministic
/// permutation of the input list.
pub fn order_medications(bundle: &mut DatasetBundle, heuristic: OrderHeuristic) {
    let freq = med_visit_frequency(&bundle.train, bundle.vocabs.n_med());
    let splits: [&mut Vec<PatientRecord>; 3] = [
        &mut bundle.train,
        &mut bundle.validation,
        &mut bundle.test,
    ];
    for split in splits {
        for patient in split.iter_mut() {
            // First visit index where each medication appears in this history.
            let mut first_seen: HashMap<usize, usize> = HashMap::new();
            for (t, v) in patient.visits.iter().enumerate() {
                for &m in &v.medications {
                    first_seen.entry(m).or_insert(t);
                }
            }
            for v in &mut patient.visits {
                match heuristic {
                    OrderHeuristic::RareFirst => v.medications.sort_by_key(|&m| (freq[m], m)),
                    OrderHeuristic::FrequentFirst => {
                        v.medications.sort_by_key(|&m| (std::cmp::Reverse(freq[m]), m))
                    }
                    OrderHeuristic::EarlyFirst => {
                        v.medications.sort_by_key(|&m| (first_seen[&m], m))
                    }
                    OrderHeuristic::LateFirst => v
                        .medications
                        .sort_by_key(|&m| (std::cmp::Reverse(first_seen[&m]), m)),
                }
            }
        }
    }
    bundle.med_frequency = freq;
}

// ============ Serialization ============

#[derive(Serialize, Deserialize)]
struct VocabFile {
    diagnosis: Vec<String>,
    procedure: Vec<String>,
    medication: Vec<String>,
}

/// Write one split as JSON lines, one patient per line.
pub fn save_jsonl(patients: &[PatientRecord], path: &Path) -> Result<()> {
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    for p in patients {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<PatientRecord>> {
    let f = fs::File::open(path)?;
    let r = BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientRecord = serde_json::from_str(&line).map_err(|e| {
            Error::validation(format!("{}: bad patient record on line {}: {e}", path.display(), i + 1))
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Persist a bundle as a directory: `train.jsonl`, `validation.jsonl`,
/// `test.jsonl` plus a `vocab.json` sidecar.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_jsonl(&bundle.train, &dir.join("train.jsonl"))?;
    save_jsonl(&bundle.validation, &dir.join("validation.jsonl"))?;
    save_jsonl(&bundle.test, &dir.join("test.jsonl"))?;
    let vf = VocabFile {
        diagnosis: bundle.vocabs.diagnosis.codes().to_vec(),
        procedure: bundle.vocabs.procedure.codes().to_vec(),
        medication: bundle.vocabs.medication.codes().to_vec(),
    };
    let f = fs::File::create(dir.join("vocab.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &vf)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let vocab_path = dir.join("vocab.json");
    let vf: VocabFile = serde_json::from_reader(BufReader::new(
        fs::File::open(&vocab_path).map_err(|e| {
            Error::validation(format!("cannot open {}: {e}", vocab_path.display()))
        })?,
    ))?;
    let vocabs = Vocabularies {
        diagnosis: CodeVocabulary::from_codes(CodeKind::Diagnosis, vf.diagnosis)?,
        procedure: CodeVocabulary::from_codes(CodeKind::Procedure, vf.procedure)?,
        medication: CodeVocabulary::from_codes(CodeKind::Medication, vf.medication)?,
    };
    let train = load_jsonl(&dir.join("train.jsonl"))?;
    let validation = load_jsonl(&dir.join("validation.jsonl"))?;
    let test = load_jsonl(&dir.join("test.jsonl"))?;
    let med_frequency = med_visit_frequency(&train, vocabs.n_med());
    let bundle = DatasetBundle {
        train,
        validation,
        test,
        vocabs,
        med_frequency,
    };
    bundle.validate()?;
    Ok(bundle)
}

// ============ Tests ============
