//! Named model parameters: ordered storage, seeded initialization, tape
//! binding, and checkpoint serialization.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, ModelDims, TrainConfig};
use crate::error::{Error, Result};

// ==== parameter store ====

/// All trainable arrays, keyed by name, in a fixed creation order.
///
/// Order matters: optimizer state and gradient clipping iterate the store,
/// so a stable order keeps runs reproducible.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

// ==== initialization ====

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn add_attention(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, s: usize, b: f64) {
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(&format!("{prefix}.{w}"), uniform(rng, s, s, b));
    }
}

fn add_layer_norm(store: &mut ParamStore, prefix: &str, s: usize) {
    store.insert(&format!("{prefix}.gain"), Array2::ones((1, s)));
    store.insert(&format!("{prefix}.bias"), Array2::zeros((1, s)));
}

fn add_encoder_stack(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    cfg: &ModelConfig,
    b: f64,
) {
    let s = cfg.embed_dim;
    let f = cfg.ffn_hidden();
    for l in 0..cfg.encoder_depth {
        let p = format!("enc.{name}.{l}");
        add_attention(store, rng, &format!("{p}.attn"), s, b);
        add_layer_norm(store, &format!("{p}.ln1"), s);
        store.insert(&format!("{p}.ffn.w1"), uniform(rng, s, f, b));
        store.insert(&format!("{p}.ffn.b1"), Array2::zeros((1, f)));
        store.insert(&format!("{p}.ffn.w2"), uniform(rng, f, s, b));
        store.insert(&format!("{p}.ffn.b2"), Array2::zeros((1, s)));
        add_layer_norm(store, &format!("{p}.ln2"), s);
    }
}

fn add_gate(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig, b: f64) {
    let s = cfg.embed_dim;
    let h = cfg.gate_hidden;
    store.insert(&format!("gate.{name}.w1"), uniform(rng, s, h, b));
    store.insert(&format!("gate.{name}.b1"), Array2::zeros((1, h)));
    store.insert(&format!("gate.{name}.w2"), uniform(rng, h, 1, b));
    store.insert(&format!("gate.{name}.b2"), Array2::zeros((1, 1)));
}

/// Build a freshly initialized parameter set.
///
/// Weight matrices and embedding tables draw from `U(-1/sqrt(s), 1/sqrt(s))`;
/// biases start at zero, layer-norm gains at one, and the interaction-graph
/// subtraction weight at 0.1. The same seed always yields the same arrays.
pub fn init_model_params(cfg: &ModelConfig, dims: &ModelDims, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.embed_dim;
    let b = 1.0 / (s as f64).sqrt();
    let mut store = ParamStore::new();

    // Embedding tables. The medication table has two extra rows for the
    // start and end control tokens.
    store.insert("embed.diag", uniform(&mut rng, dims.n_diag, s, b));
    store.insert("embed.proc", uniform(&mut rng, dims.n_proc, s, b));
    store.insert("embed.med", uniform(&mut rng, dims.n_med + 2, s, b));
    store.insert("embed.null_proc", uniform(&mut rng, 1, s, b));

    // Three independent set encoders.
    add_encoder_stack(&mut store, &mut rng, "diag", cfg, b);
    add_encoder_stack(&mut store, &mut rng, "proc", cfg, b);
    add_encoder_stack(&mut store, &mut rng, "med", cfg, b);

    // Graph branch over the medication relation matrices.
    store.insert("graph.w_ehr", uniform(&mut rng, s, s, b));
    store.insert("graph.w_ddi", uniform(&mut rng, s, s, b));
    store.insert("graph.lambda", Array2::from_elem((1, 1), 0.1));

    // Decoder: causal self-attention, two cross-attentions, two layer norms.
    add_attention(&mut store, &mut rng, "dec.self", s, b);
    add_layer_norm(&mut store, "dec.ln1", s);
    add_attention(&mut store, &mut rng, "dec.cross_diag", s, b);
    add_attention(&mut store, &mut rng, "dec.cross_proc", s, b);
    add_layer_norm(&mut store, "dec.ln2", s);

    // Generation head over medications plus the end slot.
    store.insert("out.w", uniform(&mut rng, s, dims.n_outputs(), b));
    store.insert("out.b", Array2::zeros((1, dims.n_outputs())));

    // Copy mechanism: hidden-to-history projection and the mixing gate.
    store.insert("copy.w_c", uniform(&mut rng, s, s, b));
    store.insert("copy.w_f", uniform(&mut rng, s, 1, b));
    store.insert("copy.b_f", Array2::zeros((1, 1)));

    // Gated aggregation scorers for visit-level condition vectors.
    add_gate(&mut store, &mut rng, "diag", cfg, b);
    add_gate(&mut store, &mut rng, "proc", cfg, b);

    store
}

// ==== tape binding ====

/// Tape variables for every parameter in a store, in store order.
///
/// Bind with `trainable = true` for training (gradients flow) and `false`
/// for inference (parameters enter the tape as constants).
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

pub fn bind_params<'a>(tape: &mut Tape, store: &'a ParamStore, trainable: bool) -> BoundParams<'a> {
    let vars = store
        .iter()
        .map(|(_, value)| {
            if trainable {
                tape.param(value.clone())
            } else {
                tape.constant(value.clone())
            }
        })
        .collect();
    BoundParams { store, vars }
}

impl<'a> BoundParams<'a> {
    pub fn v(&self, name: &str) -> Var {
        let i = *self
            .store
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// (name, var) pairs in store order, for gradient collection.
    pub fn bound(&self) -> impl Iterator<Item = (&'a str, Var)> + '_ {
        self.store
            .names()
            .zip(self.vars.iter().copied())
    }
}

// ==== checkpoints ====

/// Everything needed to rebuild and reuse a trained model: the full
/// training configuration (model sizes included), the vocabulary sizes the
/// parameter shapes depend on, and a hash of the vocabulary itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Write `params.json` and `model.json` into `dir` (created if missing).
/// Values survive the round trip bit-exactly.
pub fn save_checkpoint(dir: &Path, store: &ParamStore, header: &CheckpointHeader) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let records: Vec<ParamRecord> = store
        .iter()
        .map(|(name, value)| ParamRecord {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
            data: value.iter().copied().collect(),
        })
        .collect();
    let params_json = serde_json::to_string(&records)?;
    std::fs::write(dir.join("params.json"), params_json)?;
    let header_json = serde_json::to_string_pretty(header)?;
    std::fs::write(dir.join("model.json"), header_json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore, CheckpointHeader)> {
    let header_json = std::fs::read_to_string(dir.join("model.json"))?;
    let header: CheckpointHeader = serde_json::from_str(&header_json)?;
    header.train.validate()?;
    let params_json = std::fs::read_to_string(dir.join("params.json"))?;
    let records: Vec<ParamRecord> = serde_json::from_str(&params_json)?;
    let mut store = ParamStore::new();
    for r in records {
        if r.data.len() != r.shape[0] * r.shape[1] {
            return Err(Error::validation(format!(
                "parameter {} has {} values but shape {:?}",
                r.name,
                r.data.len(),
                r.shape
            )));
        }
        if store.contains(&r.name) {
            return Err(Error::validation(format!(
                "duplicate parameter {} in checkpoint",
                r.name
            )));
        }
        let value = Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data)
            .map_err(|e| Error::validation(format!("parameter {}: {e}", r.name)))?;
        store.insert(&r.name, value);
    }
    Ok((store, header))
}

// ==== tests ====
