//! Cohort-level evaluation: batch decoding and bootstrap resampling of
//! patients into mean ± std metric reports.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AblationFlags, ModelConfig};
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::graph::MedicationGraphs;
use crate::infer::predict_visit;
use crate::metrics::{evaluate_patients, MetricValues, VisitPrediction};
use crate::params::ParamStore;

// ==== batch decoding ====

/// Decode every visit of every patient (in parallel over patients; the
/// output order matches the input order).
pub fn predict_patients(
    store: &ParamStore,
    cfg: &ModelConfig,
    flags: AblationFlags,
    graphs: &MedicationGraphs,
    patients: &[PatientRecord],
    greedy: bool,
) -> Result<Vec<Vec<VisitPrediction>>> {
    patients
        .par_iter()
        .map(|p| {
            (0..p.visits.len())
                .map(|t| predict_visit(store, cfg, flags, graphs, &p.visits, t, greedy))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

// ==== bootstrap ====

/// Aggregate of one metric over bootstrap rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation. Bit-identical inputs yield that
/// value and a std of exactly zero (the naive formulas leak rounding noise
/// into both even when every value is equal).
pub fn metric_mean_std(values: &[f64]) -> MetricStat {
    assert!(!values.is_empty(), "mean/std of an empty slice");
    if values.iter().all(|&v| v == values[0]) {
        return MetricStat {
            mean: values[0],
            std: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricStat {
        mean,
        std: var.sqrt(),
    }
}

/// Bootstrap evaluation report: per-metric mean ± std over rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub rounds: usize,
    pub sample_fraction: f64,
    pub seed: u64,
    pub jaccard: MetricStat,
    pub f1: MetricStat,
    pub prauc: MetricStat,
    pub ddi_rate: MetricStat,
    pub avg_drugs: MetricStat,
    /// The raw per-round metric values the stats were computed from.
    pub per_round: Vec<MetricValues>,
}

impl MetricReport {
    /// Stats keyed by metric name, in a fixed display order.
    pub fn named(&self) -> [(&'static str, MetricStat); 5] {
        [
            ("jaccard", self.jaccard),
            ("f1", self.f1),
            ("prauc", self.prauc),
            ("ddi_rate", self.ddi_rate),
            ("avg_drugs", self.avg_drugs),
        ]
    }
}

/// Evaluate predictions under bootstrap resampling: each round draws
/// `max(1, floor(fraction·n))` distinct patients without replacement,
/// aggregates the metrics over that subset, and the report carries the
/// mean and population std over rounds. Sampled indices are evaluated in
/// ascending order so a fraction of 1.0 makes every round bit-identical
/// and the reported std exactly zero.
pub fn bootstrap_evaluate(
    predictions: &[Vec<VisitPrediction>],
    a_ddi: &Array2<f64>,
    n_med: usize,
    rounds: usize,
    fraction: f64,
    seed: u64,
) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::validation("bootstrap evaluation needs at least one patient"));
    }
    if rounds == 0 {
        return Err(Error::validation("bootstrap evaluation needs at least one round"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "sample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = predictions.len();
    let n_sample = ((fraction * n as f64).floor() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut per_round = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut idx = rand::seq::index::sample(&mut rng, n, n_sample).into_vec();
        idx.sort_unstable();
        let subset: Vec<Vec<VisitPrediction>> =
            idx.into_iter().map(|i| predictions[i].clone()).collect();
        per_round.push(evaluate_patients(&subset, a_ddi, n_med));
    }

    let pick = |f: fn(&MetricValues) -> f64| -> MetricStat {
        metric_mean_std(&per_round.iter().map(f).collect::<Vec<_>>())
    };
    Ok(MetricReport {
        rounds,
        sample_fraction: fraction,
        seed,
        jaccard: pick(|m| m.jaccard),
        f1: pick(|m| m.f1),
        prauc: pick(|m| m.prauc),
        ddi_rate: pick(|m| m.ddi_rate),
        avg_drugs: pick(|m| m.avg_drugs),
        per_round,
    })
}

// ==== tests ====
