//! `medrec evaluate`: decode a dataset split with a trained checkpoint and
//! report bootstrap mean ± std for every metric.

use std::path::PathBuf;

use clap::Args;
use medrec_core::data::load_dataset;
use medrec_core::error::Result;
use medrec_core::eval::{bootstrap_evaluate, predict_patients, MetricReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{hash_dataset_inputs, load_model, select_split};
use crate::fileio::{atomic_write_json, load_config_file, resolve_out_dir};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory written by `medrec train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to evaluate: train, validation, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Decode greedily instead of with beam search.
    #[arg(long)]
    pub greedy: bool,
    /// TOML or JSON file with rounds/frac/seed/greedy (overridden by flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bootstrap rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Fraction of the split sampled per round.
    #[arg(long)]
    pub frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

/// File-configurable evaluation knobs and their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalKnobs {
    rounds: usize,
    frac: f64,
    seed: u64,
    greedy: bool,
}

impl Default for EvalKnobs {
    fn default() -> Self {
        EvalKnobs {
            rounds: 10,
            frac: 0.8,
            seed: 1203,
            greedy: false,
        }
    }
}

/// Everything the run wrote into `report.json`.
#[derive(Debug, Serialize)]
struct EvalDoc {
    split: String,
    patients: usize,
    greedy: bool,
    checkpoint: String,
    metrics: MetricReport,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let mut knobs = match &args.config {
        Some(path) => load_config_file::<EvalKnobs>(path)?,
        None => EvalKnobs::default(),
    };
    if let Some(v) = args.rounds {
        knobs.rounds = v;
    }
    if let Some(v) = args.frac {
        knobs.frac = v;
    }
    if let Some(v) = args.seed {
        knobs.seed = v;
    }
    if args.greedy {
        knobs.greedy = true;
    }
    let out = resolve_out_dir(&args.out);

    let bundle = load_dataset(&args.data)?;
    let (store, header, graphs) = load_model(&args.checkpoint, &bundle)?;
    let patients = select_split(&bundle, &args.split)?;

    let mut mb = ManifestBuilder::new(
        "evaluate",
        &json!({
            "data": args.data,
            "checkpoint": args.checkpoint,
            "split": args.split,
            "out": out,
            "knobs": knobs,
        }),
    )?;
    mb.seed(knobs.seed);
    hash_dataset_inputs(&mut mb, &args.data)?;
    for name in ["params.json", "model.json", "a_ehr.bin", "a_ddi.bin"] {
        mb.input(&args.checkpoint.join(name))?;
    }

    let predictions = predict_patients(
        &store,
        &header.train.model,
        header.train.ablation,
        &graphs,
        patients,
        knobs.greedy,
    )?;
    let metrics = bootstrap_evaluate(
        &predictions,
        &graphs.a_ddi,
        graphs.n_med(),
        knobs.rounds,
        knobs.frac,
        knobs.seed,
    )?;

    for (name, stat) in metrics.named() {
        println!("{name:>10}  {:.4} ± {:.4}", stat.mean, stat.std);
    }
    let doc = EvalDoc {
        split: args.split.clone(),
        patients: patients.len(),
        greedy: knobs.greedy,
        checkpoint: args.checkpoint.display().to_string(),
        metrics,
    };
    let report_path = out.join("report.json");
    atomic_write_json(&report_path, &doc)?;
    mb.output(&report_path);
    let manifest = mb.write(&out)?;
    println!("report: {}", report_path.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
