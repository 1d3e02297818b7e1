//! `medrec train`: fit the recommender on a dataset directory and write
//! best/final checkpoints, the adjacency pair they depend on, and a
//! per-epoch metric log.

use std::path::PathBuf;

use clap::Args;
use medrec_core::config::{ModelDims, TrainConfig};
use medrec_core::data::load_dataset;
use medrec_core::error::{Error, Result};
use medrec_core::graph::{build_cooccurrence, export_adjacency, load_ddi_edges, MedicationGraphs};
use medrec_core::params::{save_checkpoint, CheckpointHeader, ParamStore};
use medrec_core::train::{train, write_metric_log};
use serde::Serialize;
use serde_json::json;

use crate::commands::{ablation_from_names, hash_dataset_inputs};
use crate::fileio::{load_config_file, promote_files, resolve_out_dir, stage_dir};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory produced by gen-data or ingest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Interaction edge list; defaults to ddi_edges.csv inside --data.
    #[arg(long)]
    pub ddi: Option<PathBuf>,
    /// TOML or JSON file with training settings (overridden by flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label order: rare_first, frequent_first, early_first, or late_first.
    #[arg(long)]
    pub order: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Global-norm gradient clipping threshold.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub gate_hidden: Option<usize>,
    #[arg(long)]
    pub encoder_depth: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Disable a component: copy, visit_scores, graphs, diagnoses, or
    /// procedures. Repeat the flag to combine ablations.
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
}

/// Defaults, then config file, then explicit flags.
fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut tc = match &args.config {
        Some(path) => load_config_file::<TrainConfig>(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        tc.lr = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.seed {
        tc.seed = v;
    }
    if let Some(v) = &args.order {
        tc.label_order = v.parse()?;
    }
    if let Some(v) = args.dropout {
        tc.dropout = v;
    }
    if let Some(v) = args.grad_clip {
        tc.grad_clip = Some(v);
    }
    if let Some(v) = args.embed_dim {
        tc.model.embed_dim = v;
    }
    if let Some(v) = args.heads {
        tc.model.heads = v;
    }
    if let Some(v) = args.gate_hidden {
        tc.model.gate_hidden = v;
    }
    if let Some(v) = args.encoder_depth {
        tc.model.encoder_depth = v;
    }
    if let Some(v) = args.max_len {
        tc.model.max_len = v;
    }
    if let Some(v) = args.beam_width {
        tc.model.beam_width = v;
    }
    if !args.ablate.is_empty() {
        tc.ablation = ablation_from_names(&args.ablate)?;
    }
    tc.validate()?;
    Ok(tc)
}

/// Write one checkpoint directory (parameters + header + adjacencies).
fn write_checkpoint(
    dir: &std::path::Path,
    store: &ParamStore,
    header: &CheckpointHeader,
    graphs: &MedicationGraphs,
) -> Result<()> {
    let stage = stage_dir(dir)?;
    save_checkpoint(stage.path(), store, header)?;
    export_adjacency(&graphs.a_ehr, &header.vocab_hash, stage.path(), "a_ehr")?;
    export_adjacency(&graphs.a_ddi, &header.vocab_hash, stage.path(), "a_ddi")?;
    promote_files(stage.path(), dir)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let tc = resolve_config(&args)?;
    let out = resolve_out_dir(&args.out);
    let bundle = load_dataset(&args.data)?;

    let ddi_path = args
        .ddi
        .clone()
        .unwrap_or_else(|| args.data.join("ddi_edges.csv"));
    if !ddi_path.is_file() {
        return Err(Error::validation(format!(
            "interaction edge list {} not found; generate the dataset with gen-data or pass --ddi",
            ddi_path.display()
        )));
    }
    let (a_ddi, ddi_report) = load_ddi_edges(&ddi_path, &bundle.vocabs.medication)?;
    let a_ehr = build_cooccurrence(&bundle.train, bundle.vocabs.n_med());
    let graphs = MedicationGraphs::new(a_ehr, a_ddi)?;

    let mut mb = ManifestBuilder::new(
        "train",
        &json!({
            "data": args.data,
            "ddi": ddi_path,
            "out": out,
            "ddi_edges_kept": ddi_report,
            "train": tc,
        }),
    )?;
    mb.seed(tc.seed);
    hash_dataset_inputs(&mut mb, &args.data)?;
    mb.input(&ddi_path)?;

    let outcome = train(&bundle, &graphs, &tc)?;

    let header = CheckpointHeader {
        train: tc.clone(),
        dims: ModelDims {
            n_diag: bundle.vocabs.n_diag(),
            n_proc: bundle.vocabs.n_proc(),
            n_med: bundle.vocabs.n_med(),
        },
        vocab_hash: bundle.vocabs.content_hash(),
    };
    let best_dir = out.join("checkpoint-best");
    let final_dir = out.join("checkpoint-final");
    write_checkpoint(&best_dir, &outcome.best, &header, &graphs)?;
    write_checkpoint(&final_dir, &outcome.final_params, &header, &graphs)?;

    let log_stage = stage_dir(&out)?;
    write_metric_log(&log_stage.path().join("metrics.csv"), &outcome.log)?;
    promote_files(log_stage.path(), &out)?;

    for dir in [&best_dir, &final_dir] {
        for name in ["params.json", "model.json", "a_ehr.bin", "a_ehr.json", "a_ddi.bin", "a_ddi.json"] {
            mb.output(&dir.join(name));
        }
    }
    mb.output(&out.join("metrics.csv"));
    let manifest = mb.write(&out)?;

    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final loss {:.4}; best validation Jaccard {:.4} at epoch {}",
        outcome.log.len(),
        last.train_loss,
        outcome
            .log
            .iter()
            .map(|e| e.val_jaccard)
            .fold(f64::NEG_INFINITY, f64::max),
        outcome.best_epoch,
    );
    println!("checkpoints: {} and {}", best_dir.display(), final_dir.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
