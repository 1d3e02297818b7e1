//! `medrec explain`: decode one visit and export where the copy mechanism
//! pointed — the per-step copy distribution over historical medications,
//! the visit relevance weights, and the generate-vs-copy gate.

use std::path::PathBuf;

use clap::Args;
use medrec_core::data::{load_dataset, PatientRecord};
use medrec_core::error::{Error, Result};
use medrec_core::infer::explain_visit;
use serde::Serialize;
use serde_json::json;

use crate::commands::{hash_dataset_inputs, load_model};
use crate::fileio::{atomic_write_json, resolve_out_dir};
use crate::manifest::ManifestBuilder;
use crate::plot;

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory written by `medrec train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Patient identifier to explain.
    #[arg(long)]
    pub patient: String,
    /// Zero-based visit index; must have at least one earlier visit.
    #[arg(long)]
    pub visit: usize,
    /// Decode greedily instead of with beam search.
    #[arg(long)]
    pub greedy: bool,
    /// Also render the copy matrix as a heatmap PNG.
    #[arg(long)]
    pub plot: bool,
    #[arg(long, default_value = "explain")]
    pub out: PathBuf,
}

/// One decode step of the exported trace.
#[derive(Debug, Serialize)]
struct StepDoc {
    step: usize,
    emitted_code: String,
    gen_weight: Option<f64>,
    /// Copy probability per history medication, aligned with
    /// `history_medications`; sums to at most 1.
    copy_probs: Option<Vec<f64>>,
}

/// The JSON document written as `explain.json`; see
/// docs/explain.schema.json for the shipped schema.
#[derive(Debug, Serialize)]
struct ExplainDoc {
    patient_id: String,
    visit_index: usize,
    history_medications: Vec<String>,
    history_visit_medications: Vec<Vec<String>>,
    visit_scores: Option<Vec<f64>>,
    recommended: Vec<String>,
    steps: Vec<StepDoc>,
}

fn find_patient<'a>(
    bundle: &'a medrec_core::data::DatasetBundle,
    id: &str,
) -> Result<&'a PatientRecord> {
    bundle
        .all_patients()
        .find(|p| p.patient_id == id)
        .ok_or_else(|| Error::validation(format!("patient {id:?} not found in any split")))
}

pub fn run(args: ExplainArgs) -> Result<()> {
    let out = resolve_out_dir(&args.out);
    let bundle = load_dataset(&args.data)?;
    let (store, header, graphs) = load_model(&args.checkpoint, &bundle)?;
    let patient = find_patient(&bundle, &args.patient)?;

    if args.visit == 0 {
        return Err(Error::validation(
            "visit 0 has no earlier visits to copy from; pick a later visit",
        ));
    }
    if args.visit >= patient.visits.len() {
        return Err(Error::validation(format!(
            "patient {:?} has {} visits; visit index {} is out of range",
            args.patient,
            patient.visits.len(),
            args.visit
        )));
    }

    let mut mb = ManifestBuilder::new(
        "explain",
        &json!({
            "data": args.data,
            "checkpoint": args.checkpoint,
            "patient": args.patient,
            "visit": args.visit,
            "greedy": args.greedy,
            "plot": args.plot,
            "out": out,
        }),
    )?;
    hash_dataset_inputs(&mut mb, &args.data)?;
    for name in ["params.json", "model.json", "a_ehr.bin", "a_ddi.bin"] {
        mb.input(&args.checkpoint.join(name))?;
    }

    let trace = explain_visit(
        &store,
        &header.train.model,
        header.train.ablation,
        &graphs,
        &patient.visits,
        args.visit,
        args.greedy,
    )?;

    let med = &bundle.vocabs.medication;
    let n_med = graphs.n_med();
    let code_of = |slot: usize| -> String {
        if slot == n_med {
            "<end>".to_string()
        } else {
            med.code(slot).to_string()
        }
    };
    let doc = ExplainDoc {
        patient_id: patient.patient_id.clone(),
        visit_index: args.visit,
        history_medications: trace
            .history_medications
            .iter()
            .map(|&m| code_of(m))
            .collect(),
        history_visit_medications: trace
            .history_visit_meds
            .iter()
            .map(|v| v.iter().map(|&m| code_of(m)).collect())
            .collect(),
        visit_scores: trace.visit_scores.clone(),
        recommended: trace
            .decoded_slots
            .iter()
            .filter(|&&s| s != n_med)
            .map(|&s| code_of(s))
            .collect(),
        steps: trace
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| StepDoc {
                step: i,
                emitted_code: code_of(s.emitted),
                gen_weight: s.gen_weight,
                copy_probs: s.copy_probs.clone(),
            })
            .collect(),
    };

    let json_path = out.join("explain.json");
    atomic_write_json(&json_path, &doc)?;
    mb.output(&json_path);

    if args.plot {
        let width = trace.history_medications.len();
        let matrix: Vec<Vec<f64>> = trace
            .steps
            .iter()
            .map(|s| s.copy_probs.clone().unwrap_or_else(|| vec![0.0; width]))
            .collect();
        let png_path = out.join("copy_heatmap.png");
        plot::heatmap(&matrix, &png_path)?;
        mb.output(&png_path);
        println!("heatmap: {}", png_path.display());
    }

    let manifest = mb.write(&out)?;
    println!(
        "explained visit {} of patient {:?}: {} steps, {} historical medications",
        args.visit,
        args.patient,
        doc.steps.len(),
        doc.history_medications.len()
    );
    println!("trace: {}", json_path.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
