//! Ingestion of MIMIC-style CSV exports into [`PatientRecord`]s.
//!
//! Four tables are read: admissions (patient/admission/time), diagnoses,
//! optional procedures, and prescriptions. Column names are configurable so
//! differently-cased or renamed exports work without preprocessing. Drug
//! codes are optionally frequency-filtered (keep the `top_k_med` most
//! common raw codes) and then translated through a user-supplied two-column
//! mapping file (e.g. NDC → ATC); rows that don't survive either step are
//! dropped and counted.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CodeKind, CodeVocabulary, PatientRecord, Visit, Vocabularies};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub patient_id: String,
    pub admission_id: String,
    pub admit_time: String,
    pub diagnosis_code: String,
    pub procedure_code: String,
    pub drug_code: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            patient_id: "subject_id".into(),
            admission_id: "hadm_id".into(),
            admit_time: "admittime".into(),
            diagnosis_code: "icd9_code".into(),
            procedure_code: "icd9_code".into(),
            drug_code: "ndc".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub admissions: PathBuf,
    pub diagnoses: PathBuf,
    #[serde(default)]
    pub procedures: Option<PathBuf>,
    pub prescriptions: PathBuf,
    /// Two-column headerless CSV `raw_code,mapped_code`; applied after the
    /// frequency filter.
    #[serde(default)]
    pub drug_code_map: Option<PathBuf>,
    /// Keep only this many most-frequent raw drug codes (ties broken by
    /// code string). `None` keeps everything.
    #[serde(default = "default_top_k")]
    pub top_k_med: Option<usize>,
    /// Patients need at least this many usable visits to be retained.
    #[serde(default = "default_min_visits")]
    pub min_visits: usize,
    #[serde(default)]
    pub columns: ColumnMap,
}

fn default_top_k() -> Option<usize> {
    Some(300)
}

fn default_min_visits() -> usize {
    2
}

/// What happened during ingestion, for logs and the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub patients: usize,
    pub visits: usize,
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
    pub dropped_prescription_rows: usize,
    pub dropped_visits: usize,
    pub dropped_patients: usize,
}

/// Case-insensitive header lookup; ingestion errors name the missing column.
fn col_index(headers: &csv::StringRecord, name: &str, table: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            Error::validation(format!(
                "missing column '{name}' in {} (found: {})",
                table.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
}

fn read_pairs(path: &Path, key_col: &str, val_col: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let ki = col_index(&headers, key_col, path)?;
    let vi = col_index(&headers, val_col, path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let k = rec.get(ki).unwrap_or("").trim();
        let v = rec.get(vi).unwrap_or("").trim();
        if k.is_empty() || v.is_empty() {
            continue;
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Read the EHR export described by `cfg` into patient records plus
/// vocabularies built from the retained visits only.
pub fn ingest_csv(cfg: &IngestConfig) -> Result<(Vec<PatientRecord>, Vocabularies, IngestReport)> {
    // Admissions: (patient, admission, time).
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(&cfg.admissions)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", cfg.admissions.display())))?;
    let headers = rdr.headers()?.clone();
    let pi = col_index(&headers, &cfg.columns.patient_id, &cfg.admissions)?;
    let ai = col_index(&headers, &cfg.columns.admission_id, &cfg.admissions)?;
    let ti = col_index(&headers, &cfg.columns.admit_time, &cfg.admissions)?;
    // patient -> [(admit_time, admission_id)]
    let mut admissions: HashMap<String, Vec<(String, String)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let p = rec.get(pi).unwrap_or("").trim().to_string();
        let a = rec.get(ai).unwrap_or("").trim().to_string();
        let t = rec.get(ti).unwrap_or("").trim().to_string();
        if p.is_empty() || a.is_empty() {
            continue;
        }
        admissions.entry(p).or_default().push((t, a));
    }

    let diag_rows = read_pairs(&cfg.diagnoses, &cfg.columns.admission_id, &cfg.columns.diagnosis_code)?;
    let mut diag_by_adm: HashMap<String, Vec<String>> = HashMap::new();
    for (adm, code) in diag_rows {
        diag_by_adm.entry(adm).or_default().push(code);
    }

    let mut proc_by_adm: HashMap<String, Vec<String>> = HashMap::new();
    if let Some(proc_path) = &cfg.procedures {
        for (adm, code) in read_pairs(proc_path, &cfg.columns.admission_id, &cfg.columns.procedure_code)? {
            proc_by_adm.entry(adm).or_default().push(code);
        }
    }

    let rx_rows = read_pairs(&cfg.prescriptions, &cfg.columns.admission_id, &cfg.columns.drug_code)?;

    // Frequency filter on raw drug codes (row-level counts).
    let keep: Option<std::collections::HashSet<String>> = match cfg.top_k_med {
        Some(k) => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for (_, code) in &rx_rows {
                *counts.entry(code.as_str()).or_default() += 1;
            }
            let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            Some(ranked.into_iter().take(k).map(|(c, _)| c.to_string()).collect())
        }
        None => None,
    };

    let code_map: Option<HashMap<String, String>> = match &cfg.drug_code_map {
        Some(path) => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_path(path)
                .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))?;
            let mut m = HashMap::new();
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() >= 2 {
                    m.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
                }
            }
            Some(m)
        }
        None => None,
    };

    let mut dropped_rows = 0usize;
    let mut meds_by_adm: HashMap<String, Vec<String>> = HashMap::new();
    for (adm, raw) in rx_rows {
        if let Some(keep) = &keep {
            if !keep.contains(&raw) {
                dropped_rows += 1;
                continue;
            }
        }
        let code = match &code_map {
            Some(m) => match m.get(&raw) {
                Some(mapped) => mapped.clone(),
                None => {
                    dropped_rows += 1;
                    continue;
                }
            },
            None => raw,
        };
        meds_by_adm.entry(adm).or_default().push(code);
    }

    // Assemble visits per patient in admission-time order.
    let mut dropped_visits = 0usize;
    let mut dropped_patients = 0usize;
    let mut raw_patients: Vec<(String, Vec<(Vec<String>, Vec<String>, Vec<String>)>)> = Vec::new();
    let mut patient_ids: Vec<&String> = admissions.keys().collect();
    patient_ids.sort();
    for pid in patient_ids {
        let mut adms = admissions[pid].clone();
        adms.sort();
        let mut visits = Vec::new();
        for (_, adm) in adms {
            let mut d = diag_by_adm.get(&adm).cloned().unwrap_or_default();
            let mut p = proc_by_adm.get(&adm).cloned().unwrap_or_default();
            let mut m = meds_by_adm.get(&adm).cloned().unwrap_or_default();
            d.sort();
            d.dedup();
            p.sort();
            p.dedup();
            m.sort();
            m.dedup();
            if d.is_empty() || m.is_empty() {
                dropped_visits += 1;
                continue;
            }
            visits.push((d, p, m));
        }
        if visits.len() >= cfg.min_visits {
            raw_patients.push((pid.clone(), visits));
        } else {
            dropped_patients += 1;
            dropped_visits += visits.len();
        }
    }

    if raw_patients.is_empty() {
        return Err(Error::validation(
            "ingestion produced no patients; check column names and code maps",
        ));
    }

    // Vocabulary ids in sorted-code order, from retained visits only.
    let mut diag_codes: Vec<String> = Vec::new();
    let mut proc_codes: Vec<String> = Vec::new();
    let mut med_codes: Vec<String> = Vec::new();
    for (_, visits) in &raw_patients {
        for (d, p, m) in visits {
            diag_codes.extend(d.iter().cloned());
            proc_codes.extend(p.iter().cloned());
            med_codes.extend(m.iter().cloned());
        }
    }
    for v in [&mut diag_codes, &mut proc_codes, &mut med_codes] {
        v.sort();
        v.dedup();
    }
    let vocabs = Vocabularies {
        diagnosis: CodeVocabulary::from_codes(CodeKind::Diagnosis, diag_codes)?,
        procedure: CodeVocabulary::from_codes(CodeKind::Procedure, proc_codes)?,
        medication: CodeVocabulary::from_codes(CodeKind::Medication, med_codes)?,
    };

    let mut patients = Vec::with_capacity(raw_patients.len());
    let mut n_visits = 0usize;
    for (pid, visits) in raw_patients {
        let visits: Vec<Visit> = visits
            .into_iter()
            .map(|(d, p, m)| Visit {
                diagnoses: d.iter().map(|c| vocabs.diagnosis.id(c).unwrap()).collect(),
                procedures: p.iter().map(|c| vocabs.procedure.id(c).unwrap()).collect(),
                medications: m.iter().map(|c| vocabs.medication.id(c).unwrap()).collect(),
            })
            .collect();
        n_visits += visits.len();
        patients.push(PatientRecord {
            patient_id: pid,
            visits,
        });
    }

    let report = IngestReport {
        patients: patients.len(),
        visits: n_visits,
        n_diag: vocabs.n_diag(),
        n_proc: vocabs.n_proc(),
        n_med: vocabs.n_med(),
        dropped_prescription_rows: dropped_rows,
        dropped_visits,
        dropped_patients,
    };
    Ok((patients, vocabs, report))
}

// ============ Tests ============
