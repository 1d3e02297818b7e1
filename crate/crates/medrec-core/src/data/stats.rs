//! Corpus descriptive statistics, including how strongly medications repeat
//! across a patient's visits — the signal a history-copying decoder feeds on.

use serde::{Deserialize, Serialize};

use super::{DatasetBundle, PatientRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub patients: usize,
    pub visits: usize,
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
    pub avg_visits_per_patient: f64,
    pub max_visits_per_patient: usize,
    pub avg_diagnoses_per_visit: f64,
    pub max_diagnoses_per_visit: usize,
    pub avg_procedures_per_visit: f64,
    pub max_procedures_per_visit: usize,
    pub avg_medications_per_visit: f64,
    pub max_medications_per_visit: usize,
    /// Mean over visits (t ≥ 2) of |meds_t ∩ history| / |meds_t|.
    pub mean_repeated_proportion: f64,
    /// Mean over visits (t ≥ 2) of Jaccard(meds_t, history union).
    pub mean_history_jaccard: f64,
    /// Histogram of the repeated proportion over [0, 1].
    pub repeated_histogram: Vec<usize>,
    /// Histogram of the history Jaccard over [0, 1].
    pub jaccard_histogram: Vec<usize>,
}

/// Per-visit repetition against the union of all earlier visits' medications.
/// Returns `(repeated_proportion, history_jaccard)` for each visit with
/// history; first visits contribute nothing.
pub fn visit_repetition(patient: &PatientRecord) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut history: Vec<usize> = Vec::new();
    for (t, v) in patient.visits.iter().enumerate() {
        if t > 0 {
            let inter = v.medications.iter().filter(|m| history.contains(m)).count();
            let prop = inter as f64 / v.medications.len() as f64;
            let union = history.len() + v.medications.len() - inter;
            let jac = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            out.push((prop, jac));
        }
        for &m in &v.medications {
            if !history.contains(&m) {
                history.push(m);
            }
        }
    }
    out
}

/// Bin values from [0, 1] into `bins` equal-width buckets; 1.0 lands in the
/// last bucket.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0usize; bins];
    for &v in values {
        let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
        h[idx] += 1;
    }
    h
}

/// Table-style summary over every split of the bundle.
pub fn corpus_statistics(bundle: &DatasetBundle, bins: usize) -> CorpusStats {
    let patients: Vec<&PatientRecord> = bundle.all_patients().collect();
    let mut visits = 0usize;
    let mut max_visits = 0usize;
    let (mut d_sum, mut p_sum, mut m_sum) = (0usize, 0usize, 0usize);
    let (mut d_max, mut p_max, mut m_max) = (0usize, 0usize, 0usize);
    let mut props = Vec::new();
    let mut jacs = Vec::new();
    for p in &patients {
        visits += p.visits.len();
        max_visits = max_visits.max(p.visits.len());
        for v in &p.visits {
            d_sum += v.diagnoses.len();
            p_sum += v.procedures.len();
            m_sum += v.medications.len();
            d_max = d_max.max(v.diagnoses.len());
            p_max = p_max.max(v.procedures.len());
            m_max = m_max.max(v.medications.len());
        }
        for (prop, jac) in visit_repetition(p) {
            props.push(prop);
            jacs.push(jac);
        }
    }
    let vf = visits.max(1) as f64;
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    CorpusStats {
        patients: patients.len(),
        visits,
        n_diag: bundle.vocabs.n_diag(),
        n_proc: bundle.vocabs.n_proc(),
        n_med: bundle.vocabs.n_med(),
        avg_visits_per_patient: visits as f64 / patients.len().max(1) as f64,
        max_visits_per_patient: max_visits,
        avg_diagnoses_per_visit: d_sum as f64 / vf,
        max_diagnoses_per_visit: d_max,
        avg_procedures_per_visit: p_sum as f64 / vf,
        max_procedures_per_visit: p_max,
        avg_medications_per_visit: m_sum as f64 / vf,
        max_medications_per_visit: m_max,
        mean_repeated_proportion: mean(&props),
        mean_history_jaccard: mean(&jacs),
        repeated_histogram: histogram(&props, bins),
        jaccard_histogram: histogram(&jacs, bins),
    }
}

// ============ Tests ============
