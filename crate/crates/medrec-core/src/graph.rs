//! Medication relation graphs and their graph-convolutional encoder.
//!
//! Two graphs over the clinical medication vocabulary drive the decoder's
//! relation-aware embeddings: `A_ehr`, co-prescription within train-split
//! visits, and `A_ddi`, known drug-drug interactions from an edge list.
//! Both are binary, symmetric, zero-diagonal. Each is encoded by a two-layer
//! graph convolution and combined as `E_g = G_ehr − λ · G_ddi` with a
//! learnable scalar λ, so interacting medications repel each other in the
//! embedding space.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::CodeVocabulary;
use crate::error::{Error, Result};

// ============ Graph construction ============

/// Binary co-occurrence adjacency: medications prescribed in the same visit
/// are connected. Pass the train split only; evaluation data must not leak
/// into the graph.
pub fn build_cooccurrence(records: &[crate::data::PatientRecord], n_med: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n_med, n_med));
    for p in records {
        for v in &p.visits {
            for (i, &m1) in v.medications.iter().enumerate() {
                for &m2 in &v.medications[i + 1..] {
                    a[(m1, m2)] = 1.0;
                    a[(m2, m1)] = 1.0;
                }
            }
        }
    }
    a
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdiLoadReport {
    pub rows_read: usize,
    /// Rows whose codes are absent from the vocabulary (or self-pairs),
    /// skipped without effect. A header line lands here too.
    pub rows_skipped: usize,
    /// Distinct undirected pairs present in the matrix.
    pub edges: usize,
}

/// Load a drug-drug interaction edge list: headerless two-column CSV of
/// medication codes. Unknown codes and self-pairs are skipped and counted;
/// duplicate rows are idempotent.
pub fn load_ddi_edges(path: &Path, med_vocab: &CodeVocabulary) -> Result<(Array2<f64>, DdiLoadReport)> {
    let n = med_vocab.len();
    let mut a = Array2::zeros((n, n));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))?;
    let mut rows_read = 0usize;
    let mut rows_skipped = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        rows_read += 1;
        if rec.len() < 2 {
            rows_skipped += 1;
            continue;
        }
        let (c1, c2) = (rec[0].trim(), rec[1].trim());
        match (med_vocab.id(c1), med_vocab.id(c2)) {
            (Some(i), Some(j)) if i != j => {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
            _ => rows_skipped += 1,
        }
    }
    let edges = (a.sum() / 2.0) as usize;
    Ok((
        a,
        DdiLoadReport {
            rows_read,
            rows_skipped,
            edges,
        },
    ))
}

/// Count of undirected edges in a binary symmetric adjacency.
pub fn edge_count(a: &Array2<f64>) -> usize {
    (a.sum() / 2.0) as usize
}

fn validate_adjacency(a: &Array2<f64>, name: &str) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::validation(format!("{name}: adjacency must be square")));
    }
    for i in 0..r {
        if a[(i, i)] != 0.0 {
            return Err(Error::validation(format!("{name}: nonzero diagonal at {i}")));
        }
        for j in 0..c {
            let v = a[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::validation(format!("{name}: non-binary entry at ({i},{j})")));
            }
            if (a[(i, j)] - a[(j, i)]).abs() != 0.0 {
                return Err(Error::validation(format!("{name}: asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Symmetrically normalised propagation matrix `D^{-1/2} (A + I) D^{-1/2}`,
/// where `D` holds the degree of the self-looped adjacency. Isolated nodes
/// get degree 1 from the self-loop, so no division by zero is possible.
pub fn symmetric_norm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut hat = a.clone();
    for i in 0..n {
        hat[(i, i)] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| hat.row(i).sum()).collect();
    let mut out = hat;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] /= (deg[i] * deg[j]).sqrt();
        }
    }
    out
}

/// Both medication graphs plus their precomputed propagation matrices.
#[derive(Debug, Clone)]
pub struct MedicationGraphs {
    pub a_ehr: Array2<f64>,
    pub a_ddi: Array2<f64>,
    pub norm_ehr: Array2<f64>,
    pub norm_ddi: Array2<f64>,
}

impl MedicationGraphs {
    pub fn new(a_ehr: Array2<f64>, a_ddi: Array2<f64>) -> Result<Self> {
        validate_adjacency(&a_ehr, "co-occurrence graph")?;
        validate_adjacency(&a_ddi, "interaction graph")?;
        if a_ehr.dim() != a_ddi.dim() {
            return Err(Error::validation(format!(
                "graph size mismatch: {:?} vs {:?}",
                a_ehr.dim(),
                a_ddi.dim()
            )));
        }
        let norm_ehr = symmetric_norm(&a_ehr);
        let norm_ddi = symmetric_norm(&a_ddi);
        Ok(MedicationGraphs {
            a_ehr,
            a_ddi,
            norm_ehr,
            norm_ddi,
        })
    }

    pub fn n_med(&self) -> usize {
        self.a_ehr.nrows()
    }

    /// Graphs with no edges at all: the encoder then reduces to per-node
    /// linear maps. Useful for tests and ablations.
    pub fn empty(n_med: usize) -> Self {
        MedicationGraphs::new(Array2::zeros((n_med, n_med)), Array2::zeros((n_med, n_med))).unwrap()
    }
}

// ============ Graph encoder ============

/// One graph-convolution propagation `S · X` on the tape. The normalised
/// propagation matrix enters as a constant; no nonlinearity is applied here
/// (the encoder below applies ReLU exactly once, between its two layers).
pub fn gcn_layer(tape: &mut Tape, x: Var, norm_adj: &Array2<f64>) -> Var {
    let s = tape.constant(norm_adj.clone());
    tape.matmul(s, x)
}

/// Two-layer branch: `S · (ReLU(S · X) W)`.
fn gcn_branch(tape: &mut Tape, x: Var, norm_adj: &Array2<f64>, w: Var) -> Var {
    let h = gcn_layer(tape, x, norm_adj);
    let h = tape.relu(h);
    let h = tape.matmul(h, w);
    gcn_layer(tape, h, norm_adj)
}

/// Relation-aware medication embeddings `E_g = G_ehr − λ · G_ddi`
/// (`n_med × s`). `e_med_clinical` must hold the clinical medication rows of
/// the embedding table (sequence control tokens excluded).
pub fn encode_medication_relations(
    tape: &mut Tape,
    e_med_clinical: Var,
    w_ehr: Var,
    w_ddi: Var,
    lambda: Var,
    graphs: &MedicationGraphs,
) -> Var {
    let g_ehr = gcn_branch(tape, e_med_clinical, &graphs.norm_ehr, w_ehr);
    let g_ddi = gcn_branch(tape, e_med_clinical, &graphs.norm_ddi, w_ddi);
    let scaled = tape.scalar_mul(lambda, g_ddi);
    tape.sub(g_ehr, scaled)
}

// ============ Export ============

#[derive(Debug, Serialize, Deserialize)]
pub struct AdjacencyHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub vocab_hash: String,
}

/// Write an adjacency as `<name>.bin` (row-major u8) beside a
/// `<name>.json` header carrying shape and vocabulary hash.
pub fn export_adjacency(a: &Array2<f64>, vocab_hash: &str, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = AdjacencyHeader {
        rows: a.nrows(),
        cols: a.ncols(),
        dtype: "u8".into(),
        vocab_hash: vocab_hash.into(),
    };
    let hf = fs::File::create(dir.join(format!("{name}.json")))?;
    serde_json::to_writer_pretty(hf, &header)?;
    let mut bytes = Vec::with_capacity(a.len());
    for row in a.rows() {
        for &v in row {
            bytes.push(if v != 0.0 { 1u8 } else { 0u8 });
        }
    }
    let mut bf = fs::File::create(dir.join(format!("{name}.bin")))?;
    bf.write_all(&bytes)?;
    Ok(())
}

pub fn import_adjacency(dir: &Path, name: &str) -> Result<(Array2<f64>, AdjacencyHeader)> {
    let header: AdjacencyHeader =
        serde_json::from_reader(fs::File::open(dir.join(format!("{name}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{name}.bin")))?;
    if bytes.len() != header.rows * header.cols {
        return Err(Error::validation(format!(
            "adjacency {name}: expected {} bytes, found {}",
            header.rows * header.cols,
            bytes.len()
        )));
    }
    let a = Array2::from_shape_fn((header.rows, header.cols), |(i, j)| {
        f64::from(bytes[i * header.cols + j])
    });
    Ok((a, header))
}

// ============ Tests ============
