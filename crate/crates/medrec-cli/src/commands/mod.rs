//! Subcommand implementations. Each command resolves its configuration
//! (defaults, then config file, then flags), does its work, and emits a
//! run manifest into its output directory.

pub mod evaluate;
pub mod explain;
pub mod gen_data;
pub mod ingest;
pub mod stats;
pub mod train;

use std::path::Path;

use medrec_core::config::AblationFlags;
use medrec_core::data::DatasetBundle;
use medrec_core::error::{Error, Result};
use medrec_core::graph::{import_adjacency, MedicationGraphs};
use medrec_core::params::{load_checkpoint, CheckpointHeader, ParamStore};

use crate::manifest::ManifestBuilder;

/// Map `--ablate` names onto component switches.
pub fn ablation_from_names(names: &[String]) -> Result<AblationFlags> {
    let mut flags = AblationFlags::default();
    for name in names {
        match name.as_str() {
            "copy" => flags.no_copy = true,
            "visit_scores" => flags.no_visit_scores = true,
            "graphs" => flags.no_graphs = true,
            "diagnoses" => flags.no_diagnoses = true,
            "procedures" => flags.no_procedures = true,
            other => {
                return Err(Error::validation(format!(
                    "unknown ablation {other:?}; expected one of copy, visit_scores, \
                     graphs, diagnoses, procedures"
                )))
            }
        }
    }
    Ok(flags)
}

/// The four files a dataset directory is made of.
pub const DATASET_FILES: [&str; 4] = ["train.jsonl", "validation.jsonl", "test.jsonl", "vocab.json"];

/// Hash every dataset file into the manifest.
pub fn hash_dataset_inputs(mb: &mut ManifestBuilder, data_dir: &Path) -> Result<()> {
    for name in DATASET_FILES {
        mb.input(&data_dir.join(name))?;
    }
    Ok(())
}

/// Load a checkpoint directory: parameters, header, and the adjacency pair
/// exported at training time. The vocabulary hash ties all three to the
/// dataset; a mismatch means the checkpoint belongs to different data.
pub fn load_model(
    checkpoint: &Path,
    bundle: &DatasetBundle,
) -> Result<(ParamStore, CheckpointHeader, MedicationGraphs)> {
    if !checkpoint.join("params.json").is_file() {
        return Err(Error::validation(format!(
            "no checkpoint at {} (expected params.json and model.json)",
            checkpoint.display()
        )));
    }
    let (store, header) = load_checkpoint(checkpoint)?;
    let vocab_hash = bundle.vocabs.content_hash();
    if header.vocab_hash != vocab_hash {
        return Err(Error::validation(format!(
            "checkpoint was trained on different vocabularies (hash {} vs dataset {})",
            header.vocab_hash, vocab_hash
        )));
    }
    let (a_ehr, ehr_header) = import_adjacency(checkpoint, "a_ehr")?;
    let (a_ddi, ddi_header) = import_adjacency(checkpoint, "a_ddi")?;
    for (name, h) in [("a_ehr", &ehr_header), ("a_ddi", &ddi_header)] {
        if h.vocab_hash != vocab_hash {
            return Err(Error::validation(format!(
                "adjacency {name} carries vocabulary hash {} but the dataset has {}",
                h.vocab_hash, vocab_hash
            )));
        }
    }
    let graphs = MedicationGraphs::new(a_ehr, a_ddi)?;
    Ok((store, header, graphs))
}

/// Pick one split of the bundle by name.
pub fn select_split<'a>(
    bundle: &'a DatasetBundle,
    name: &str,
) -> Result<&'a [medrec_core::data::PatientRecord]> {
    let split = match name {
        "train" => &bundle.train,
        "validation" => &bundle.validation,
        "test" => &bundle.test,
        other => {
            return Err(Error::validation(format!(
                "unknown split {other:?}; expected train, validation, or test"
            )))
        }
    };
    if split.is_empty() {
        return Err(Error::validation(format!("split {name:?} is empty")));
    }
    Ok(split)
}
