//! Shared fixtures for the benchmarks: a reference-scale model and a
//! synthetic patient history, built deterministically.

use medrec_core::config::{ModelConfig, ModelDims, TrainConfig};
use medrec_core::data::synthetic::{generate_synthetic_cohort, SyntheticConfig};
use medrec_core::data::{DatasetBundle, Visit};
use medrec_core::graph::{build_cooccurrence, MedicationGraphs};
use medrec_core::params::{init_model_params, ParamStore};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Everything a benchmark needs: parameters at reference scale (s = 64,
/// 4 heads), the graph pair, and one multi-visit patient.
pub struct BenchModel {
    pub store: ParamStore,
    pub cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub graphs: MedicationGraphs,
    pub visits: Vec<Visit>,
    pub bundle: DatasetBundle,
}

/// Build the fixture at the paper-scale embedding width over a synthetic
/// cohort with a 100-medication vocabulary.
pub fn bench_model() -> BenchModel {
    let cohort = SyntheticConfig {
        n_patients: 200,
        persistence: 0.7,
        seed: 99,
        n_diag: 120,
        n_proc: 40,
        n_med: 100,
    };
    let bundle = generate_synthetic_cohort(&cohort).expect("cohort generates");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_med = bundle.vocabs.n_med();
    let mut ddi = Array2::zeros((n_med, n_med));
    for i in 0..n_med {
        for j in (i + 1)..n_med {
            if rng.gen_bool(0.05) {
                ddi[[i, j]] = 1.0;
                ddi[[j, i]] = 1.0;
            }
        }
    }
    let graphs = MedicationGraphs::new(build_cooccurrence(&bundle.train, n_med), ddi)
        .expect("graphs build");

    let cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        model: cfg.clone(),
        ..TrainConfig::default()
    };
    let dims = ModelDims {
        n_diag: bundle.vocabs.n_diag(),
        n_proc: bundle.vocabs.n_proc(),
        n_med,
    };
    let store = init_model_params(&cfg, &dims, 1203);

    let visits = bundle
        .train
        .iter()
        .map(|p| p.visits.clone())
        .find(|v| v.len() >= 3)
        .expect("a three-visit patient exists");

    BenchModel {
        store,
        cfg,
        train_cfg,
        graphs,
        visits,
        bundle,
    }
}
