//! Recommendation quality metrics: set overlap (Jaccard, F1), ranking
//! quality (area under the precision–recall curve), interaction safety
//! (DDI rate), and prescription volume.
//!
//! Every metric is computed per visit, averaged over a patient's visits,
//! and then averaged across patients with equal patient weights.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::PatientRecord;

// ==== prediction record ====

/// One visit's decoded recommendation with everything the metrics need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisitPrediction {
    /// Recommended medications in emission order; clinical ids only.
    pub recommended: Vec<usize>,
    /// Ground-truth medication set for the visit.
    pub truth: Vec<usize>,
    /// Output distribution at each decode step of the winning hypothesis
    /// (the start token contributes no step). Each vector spans all
    /// medications plus the end slot.
    pub step_probs: Vec<Vec<f64>>,
}

impl VisitPrediction {
    pub fn predicted_set(&self) -> HashSet<usize> {
        self.recommended.iter().copied().collect()
    }
}

// ==== per-visit scores ====

pub fn visit_jaccard(pred: &HashSet<usize>, truth: &HashSet<usize>) -> f64 {
    let union = pred.union(truth).count();
    if union == 0 {
        return 0.0;
    }
    pred.intersection(truth).count() as f64 / union as f64
}

/// Precision, recall, and F1 with zero-denominator terms defined as 0.
pub fn visit_prf(pred: &HashSet<usize>, truth: &HashSet<usize>) -> (f64, f64, f64) {
    let hit = pred.intersection(truth).count() as f64;
    let p = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { hit / truth.len() as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Per-medication ranking scores: the probability at the emission step for
/// recommended medications, the mean probability across all of the visit's
/// steps for the rest.
pub fn medication_scores_for_ranking(vp: &VisitPrediction, n_med: usize) -> Vec<f64> {
    let mut scores = vec![0.0; n_med];
    if vp.step_probs.is_empty() {
        return scores;
    }
    for m in 0..n_med {
        let mean = vp.step_probs.iter().map(|p| p[m]).sum::<f64>() / vp.step_probs.len() as f64;
        scores[m] = mean;
    }
    for (step, &m) in vp.recommended.iter().enumerate() {
        scores[m] = vp.step_probs[step][m];
    }
    scores
}

/// Average precision over all medications ranked by score (descending,
/// ascending id on ties), with relevance given by ground-truth membership.
/// An empty truth set scores 0.
pub fn visit_prauc(vp: &VisitPrediction, n_med: usize) -> f64 {
    let truth: HashSet<usize> = vp.truth.iter().copied().collect();
    if truth.is_empty() {
        return 0.0;
    }
    let scores = medication_scores_for_ranking(vp, n_med);
    let mut order: Vec<usize> = (0..n_med).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &m) in order.iter().enumerate() {
        if truth.contains(&m) {
            hits += 1;
            // Recall rises by 1/|truth| exactly at relevant ranks.
            ap += hits as f64 / (k + 1) as f64 / truth.len() as f64;
        }
    }
    ap
}

/// Fraction of unordered predicted pairs flagged in the interaction matrix.
/// Fewer than two predictions means no pairs and a rate of 0.
pub fn visit_ddi_rate(pred: &HashSet<usize>, a_ddi: &Array2<f64>) -> f64 {
    let mut ids: Vec<usize> = pred.iter().copied().collect();
    ids.sort_unstable();
    let n = ids.len();
    if n < 2 {
        return 0.0;
    }
    let mut flagged = 0usize;
    for j in 0..n {
        for k in (j + 1)..n {
            if a_ddi[[ids[j], ids[k]]] != 0.0 {
                flagged += 1;
            }
        }
    }
    flagged as f64 / (n * (n - 1) / 2) as f64
}

// ==== cohort aggregation ====

/// All headline metrics over one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub avg_drugs: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Average the per-visit metrics over one patient's visits.
pub fn patient_metrics(visits: &[VisitPrediction], a_ddi: &Array2<f64>, n_med: usize) -> MetricValues {
    let mut j = Vec::with_capacity(visits.len());
    let mut f = Vec::with_capacity(visits.len());
    let mut pr = Vec::with_capacity(visits.len());
    let mut d = Vec::with_capacity(visits.len());
    let mut n = Vec::with_capacity(visits.len());
    for vp in visits {
        let pred = vp.predicted_set();
        let truth: HashSet<usize> = vp.truth.iter().copied().collect();
        j.push(visit_jaccard(&pred, &truth));
        f.push(visit_prf(&pred, &truth).2);
        pr.push(visit_prauc(vp, n_med));
        d.push(visit_ddi_rate(&pred, a_ddi));
        n.push(pred.len() as f64);
    }
    MetricValues {
        jaccard: mean(&j),
        f1: mean(&f),
        prauc: mean(&pr),
        ddi_rate: mean(&d),
        avg_drugs: mean(&n),
    }
}

/// Average per-patient metrics across patients, each patient weighted
/// equally regardless of visit count.
pub fn evaluate_patients(
    patients: &[Vec<VisitPrediction>],
    a_ddi: &Array2<f64>,
    n_med: usize,
) -> MetricValues {
    let per: Vec<MetricValues> = patients
        .iter()
        .map(|v| patient_metrics(v, a_ddi, n_med))
        .collect();
    MetricValues {
        jaccard: mean(&per.iter().map(|m| m.jaccard).collect::<Vec<_>>()),
        f1: mean(&per.iter().map(|m| m.f1).collect::<Vec<_>>()),
        prauc: mean(&per.iter().map(|m| m.prauc).collect::<Vec<_>>()),
        ddi_rate: mean(&per.iter().map(|m| m.ddi_rate).collect::<Vec<_>>()),
        avg_drugs: mean(&per.iter().map(|m| m.avg_drugs).collect::<Vec<_>>()),
    }
}

/// Interaction rate of the ground-truth prescriptions themselves, with the
/// same visit → patient → cohort averaging as the prediction metric.
pub fn ground_truth_ddi(patients: &[PatientRecord], a_ddi: &Array2<f64>) -> f64 {
    let per_patient: Vec<f64> = patients
        .iter()
        .map(|p| {
            let rates: Vec<f64> = p
                .visits
                .iter()
                .map(|v| {
                    let set: HashSet<usize> = v.medications.iter().copied().collect();
                    visit_ddi_rate(&set, a_ddi)
                })
                .collect();
            mean(&rates)
        })
        .collect();
    mean(&per_patient)
}

// ==== tests ====
