//! `medrec gen-data`: synthesize a cohort, split it, order the labels, and
//! write the dataset directory plus a matching interaction edge list.

use std::path::PathBuf;

use clap::Args;
use medrec_core::data::synthetic::{generate_synthetic_cohort, SyntheticConfig};
use medrec_core::data::{order_medications, split_dataset, save_dataset, OrderHeuristic};
use medrec_core::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fileio::{parse_split, promote_files, resolve_out_dir, stage_dir};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// Output directory for the dataset.
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
    /// Number of patients to generate.
    #[arg(long, default_value_t = 1000)]
    pub patients: usize,
    /// Probability that a medication carries over to the next visit.
    #[arg(long, default_value_t = 0.7)]
    pub persistence: f64,
    #[arg(long, default_value_t = 1203)]
    pub seed: u64,
    /// Diagnosis vocabulary size.
    #[arg(long, default_value_t = 40)]
    pub diag_codes: usize,
    /// Procedure vocabulary size.
    #[arg(long, default_value_t = 15)]
    pub proc_codes: usize,
    /// Medication vocabulary size.
    #[arg(long, default_value_t = 30)]
    pub med_codes: usize,
    /// Train/validation/test ratio triple, e.g. "4,1,1".
    #[arg(long, default_value = "4,1,1")]
    pub split: String,
    /// Label ordering heuristic applied to every medication list.
    #[arg(long, default_value = "rare_first")]
    pub order: String,
    /// Fraction of medication pairs marked as interacting in the synthetic
    /// edge list.
    #[arg(long, default_value_t = 0.08)]
    pub ddi_density: f64,
}

/// Deterministic synthetic interaction pairs over the medication codes.
fn synthetic_ddi_csv(codes: &[String], density: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00DD_1ED6);
    let mut out = String::new();
    for i in 0..codes.len() {
        for j in (i + 1)..codes.len() {
            if rng.gen_bool(density) {
                out.push_str(&format!("{},{}\n", codes[i], codes[j]));
            }
        }
    }
    out
}

pub fn run(args: GenDataArgs) -> Result<()> {
    if !(0.0..1.0).contains(&args.ddi_density) {
        return Err(Error::validation(format!(
            "--ddi-density must lie in [0, 1), got {}",
            args.ddi_density
        )));
    }
    let order: OrderHeuristic = args.order.parse()?;
    let ratios = parse_split(&args.split)?;
    let out = resolve_out_dir(&args.out);
    let mut mb = ManifestBuilder::new("gen-data", &args)?;
    mb.seed(args.seed);

    let cohort = SyntheticConfig {
        n_patients: args.patients,
        persistence: args.persistence,
        seed: args.seed,
        n_diag: args.diag_codes,
        n_proc: args.proc_codes,
        n_med: args.med_codes,
    };
    let generated = generate_synthetic_cohort(&cohort)?;
    let mut bundle = split_dataset(generated.train, generated.vocabs, ratios, args.seed)?;
    order_medications(&mut bundle, order);

    let stage = stage_dir(&out)?;
    save_dataset(&bundle, stage.path())?;
    let ddi_csv = synthetic_ddi_csv(
        bundle.vocabs.medication.codes(),
        args.ddi_density,
        args.seed,
    );
    std::fs::write(stage.path().join("ddi_edges.csv"), ddi_csv)?;
    promote_files(stage.path(), &out)?;

    for name in ["train.jsonl", "validation.jsonl", "test.jsonl", "vocab.json", "ddi_edges.csv"] {
        mb.output(&out.join(name));
    }
    let manifest = mb.write(&out)?;
    println!(
        "generated {} patients ({} train / {} validation / {} test) into {}",
        args.patients,
        bundle.train.len(),
        bundle.validation.len(),
        bundle.test.len(),
        out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
