//! `medrec stats`: corpus descriptive statistics with repetition
//! histograms — how often current medications already appeared in a
//! patient's history.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use medrec_core::data::stats::{corpus_statistics, CorpusStats};
use medrec_core::data::{load_dataset, med_visit_frequency, DatasetBundle};
use medrec_core::error::{Error, Result};
use medrec_core::graph::load_ddi_edges;
use medrec_core::metrics::ground_truth_ddi;
use serde::Serialize;
use serde_json::json;

use crate::commands::hash_dataset_inputs;
use crate::fileio::{atomic_write, atomic_write_json, resolve_out_dir};
use crate::manifest::ManifestBuilder;
use crate::plot;

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of histogram bins over [0, 1].
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Which patients to describe: train, validation, test, or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Also render the histograms as PNG bar charts.
    #[arg(long)]
    pub plot: bool,
    #[arg(long, default_value = "stats")]
    pub out: PathBuf,
}

/// The JSON document written as `stats.json`.
#[derive(Debug, Serialize)]
struct StatsDoc {
    split: String,
    bins: usize,
    stats: CorpusStats,
    /// Interaction rate of the ground-truth prescriptions, when the dataset
    /// directory ships an edge list.
    ground_truth_ddi: Option<f64>,
}

/// Restrict the bundle to one split (as its train part) so the corpus
/// walker sees only those patients.
fn restrict(bundle: &DatasetBundle, split: &str) -> Result<DatasetBundle> {
    let selected = match split {
        "all" => return Ok(bundle.clone()),
        "train" => bundle.train.clone(),
        "validation" => bundle.validation.clone(),
        "test" => bundle.test.clone(),
        other => {
            return Err(Error::validation(format!(
                "unknown split {other:?}; expected train, validation, test, or all"
            )))
        }
    };
    if selected.is_empty() {
        return Err(Error::validation(format!("split {split:?} is empty")));
    }
    Ok(DatasetBundle {
        med_frequency: med_visit_frequency(&selected, bundle.vocabs.n_med()),
        train: selected,
        validation: Vec::new(),
        test: Vec::new(),
        vocabs: bundle.vocabs.clone(),
    })
}

pub fn run(args: StatsArgs) -> Result<()> {
    if args.bins == 0 {
        return Err(Error::validation("--bins must be at least 1"));
    }
    let out = resolve_out_dir(&args.out);
    let bundle = load_dataset(&args.data)?;
    let selected = restrict(&bundle, &args.split)?;

    let mut mb = ManifestBuilder::new(
        "stats",
        &json!({
            "data": args.data,
            "split": args.split,
            "bins": args.bins,
            "plot": args.plot,
            "out": out,
        }),
    )?;
    hash_dataset_inputs(&mut mb, &args.data)?;

    let stats = corpus_statistics(&selected, args.bins);

    let ddi_path = args.data.join("ddi_edges.csv");
    let ground_truth = if ddi_path.is_file() {
        mb.input(&ddi_path)?;
        let (a_ddi, _) = load_ddi_edges(&ddi_path, &bundle.vocabs.medication)?;
        Some(ground_truth_ddi(&selected.train, &a_ddi))
    } else {
        None
    };

    let mut csv = String::from("bin,low,high,repeated_count,history_jaccard_count\n");
    for i in 0..args.bins {
        let low = i as f64 / args.bins as f64;
        let high = (i + 1) as f64 / args.bins as f64;
        writeln!(
            csv,
            "{i},{low},{high},{},{}",
            stats.repeated_histogram[i], stats.jaccard_histogram[i]
        )
        .expect("writing to a String cannot fail");
    }
    let csv_path = out.join("histograms.csv");
    atomic_write(&csv_path, csv.as_bytes())?;
    mb.output(&csv_path);

    let doc = StatsDoc {
        split: args.split.clone(),
        bins: args.bins,
        stats,
        ground_truth_ddi: ground_truth,
    };
    let json_path = out.join("stats.json");
    atomic_write_json(&json_path, &doc)?;
    mb.output(&json_path);

    if args.plot {
        let rep_path = out.join("repeated_hist.png");
        plot::bar_chart(&doc.stats.repeated_histogram, &rep_path)?;
        mb.output(&rep_path);
        let jac_path = out.join("history_jaccard_hist.png");
        plot::bar_chart(&doc.stats.jaccard_histogram, &jac_path)?;
        mb.output(&jac_path);
    }

    let manifest = mb.write(&out)?;
    println!(
        "{} patients / {} visits; mean repeated proportion {:.3}, mean history Jaccard {:.3}",
        doc.stats.patients,
        doc.stats.visits,
        doc.stats.mean_repeated_proportion,
        doc.stats.mean_history_jaccard
    );
    if let Some(ddi) = doc.ground_truth_ddi {
        println!("ground-truth interaction rate: {ddi:.4}");
    }
    println!("summary: {}", json_path.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
