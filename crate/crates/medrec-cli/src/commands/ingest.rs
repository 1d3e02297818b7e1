//! `medrec ingest`: build a dataset directory from exported visit-level
//! tables (admissions, diagnoses, procedures, prescriptions).

use std::path::PathBuf;

use clap::Args;
use medrec_core::data::ingest::{ingest_csv, IngestConfig};
use medrec_core::data::{order_medications, save_dataset, split_dataset, OrderHeuristic};
use medrec_core::error::Result;
use serde::Serialize;

use crate::fileio::{atomic_write_json, parse_split, promote_files, resolve_out_dir, stage_dir};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Admissions table (admission id, patient id, admit time).
    #[arg(long)]
    pub admissions: PathBuf,
    /// Diagnosis table (admission id, code).
    #[arg(long)]
    pub diagnoses: PathBuf,
    /// Procedure table (admission id, code); optional.
    #[arg(long)]
    pub procedures: Option<PathBuf>,
    /// Prescription table (admission id, drug code).
    #[arg(long)]
    pub prescriptions: PathBuf,
    /// Two-column raw-code → dispensing-class map; optional.
    #[arg(long)]
    pub drug_map: Option<PathBuf>,
    /// Keep only the k most frequent medications (0 keeps everything).
    #[arg(long, default_value_t = 300)]
    pub top_k: usize,
    /// Drop patients with fewer visits than this after filtering.
    #[arg(long, default_value_t = 2)]
    pub min_visits: usize,
    /// Train/validation/test ratio triple.
    #[arg(long, default_value = "4,1,1")]
    pub split: String,
    #[arg(long, default_value_t = 1203)]
    pub seed: u64,
    /// Label ordering heuristic applied to every medication list.
    #[arg(long, default_value = "rare_first")]
    pub order: String,
    #[arg(long, default_value = "ingested")]
    pub out: PathBuf,
}

pub fn run(args: IngestArgs) -> Result<()> {
    let order: OrderHeuristic = args.order.parse()?;
    let ratios = parse_split(&args.split)?;
    let out = resolve_out_dir(&args.out);
    let mut mb = ManifestBuilder::new("ingest", &args)?;
    mb.seed(args.seed);
    mb.input(&args.admissions)?;
    mb.input(&args.diagnoses)?;
    mb.input(&args.prescriptions)?;
    if let Some(p) = &args.procedures {
        mb.input(p)?;
    }
    if let Some(p) = &args.drug_map {
        mb.input(p)?;
    }

    let cfg = IngestConfig {
        admissions: args.admissions.clone(),
        diagnoses: args.diagnoses.clone(),
        procedures: args.procedures.clone(),
        prescriptions: args.prescriptions.clone(),
        drug_code_map: args.drug_map.clone(),
        top_k_med: (args.top_k > 0).then_some(args.top_k),
        min_visits: args.min_visits,
        columns: Default::default(),
    };
    let (patients, vocabs, report) = ingest_csv(&cfg)?;
    let mut bundle = split_dataset(patients, vocabs, ratios, args.seed)?;
    order_medications(&mut bundle, order);

    let stage = stage_dir(&out)?;
    save_dataset(&bundle, stage.path())?;
    promote_files(stage.path(), &out)?;
    atomic_write_json(&out.join("ingest_report.json"), &report)?;

    for name in ["train.jsonl", "validation.jsonl", "test.jsonl", "vocab.json", "ingest_report.json"]
    {
        mb.output(&out.join(name));
    }
    let manifest = mb.write(&out)?;
    println!(
        "ingested {} patients / {} visits (vocabularies {}/{}/{}) into {}",
        report.patients,
        report.visits,
        report.n_diag,
        report.n_proc,
        report.n_med,
        out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
