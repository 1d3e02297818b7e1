// Shared by several integration-test binaries; not every binary uses every
// helper.
#![allow(dead_code)]

//! Straight-line reference implementation of the decode pipeline on plain
//! nested `Vec`s.
//!
//! It shares only parameter *values* with the library: every matrix product,
//! softmax, normalization, gather and broadcast here is an explicit loop, so
//! comparing against it cross-checks the tape machinery end to end (shape
//! plumbing, slicing, masking, and the composite ops) rather than just the
//! formulas. Nothing in this module calls library math.

use medrec_core::config::ModelConfig;
use medrec_core::data::Visit;
use medrec_core::graph::MedicationGraphs;
use medrec_core::params::ParamStore;

pub type Mat = Vec<Vec<f64>>;

const LN_EPS: f64 = 1e-5;

// ==== plain matrix helpers ====

pub fn fetch(store: &ParamStore, name: &str) -> Mat {
    let a = store.get(name);
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[[i, j]]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

fn add_mats(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

fn add_bias_row(x: &Mat, bias: &Mat) -> Mat {
    x.iter()
        .map(|row| row.iter().zip(&bias[0]).map(|(v, b)| v + b).collect())
        .collect()
}

fn map_mat(x: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    x.iter()
        .map(|row| row.iter().map(|&v| f(v)).collect())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-shifted softmax over the first `support` entries; the rest get zero.
fn softmax_prefix(row: &[f64], support: usize) -> Vec<f64> {
    let mx = row[..support].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; row.len()];
    let mut sum = 0.0;
    for j in 0..support {
        out[j] = (row[j] - mx).exp();
        sum += out[j];
    }
    for v in out[..support].iter_mut() {
        *v /= sum;
    }
    out
}

fn softmax(row: &[f64]) -> Vec<f64> {
    softmax_prefix(row, row.len())
}

fn layer_norm(x: &Mat, gain: &Mat, bias: &Mat) -> Mat {
    let n = x[0].len() as f64;
    x.iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| gain[0][c] * (v - mean) * inv + bias[0][c])
                .collect()
        })
        .collect()
}

fn slice_cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|row| row[start..start + len].to_vec()).collect()
}

fn concat_cols(parts: &[Mat]) -> Mat {
    let n = parts[0].len();
    (0..n)
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

fn gather(a: &Mat, ids: &[usize]) -> Mat {
    ids.iter().map(|&i| a[i].clone()).collect()
}

// ==== attention / encoder blocks ====

/// Multi-head attention with full-width `s×s` projections whose column
/// blocks form the heads; every head keeps the `1/sqrt(s)` scale of the
/// full embedding. `causal` restricts row `i` to key rows `0..=i`.
#[allow(clippy::too_many_arguments)]
fn multi_head(
    xq: &Mat,
    xkv: &Mat,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    wo: &Mat,
    heads: usize,
    causal: bool,
) -> Mat {
    let s = wq.len();
    let head_dim = s / heads;
    let scale = 1.0 / (s as f64).sqrt();
    let qp = matmul(xq, wq);
    let kp = matmul(xkv, wk);
    let vp = matmul(xkv, wv);
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = slice_cols(&qp, h * head_dim, head_dim);
        let k = slice_cols(&kp, h * head_dim, head_dim);
        let v = slice_cols(&vp, h * head_dim, head_dim);
        let n_keys = k.len();
        let mut out = vec![vec![0.0; head_dim]; q.len()];
        for (i, qrow) in q.iter().enumerate() {
            let mut scores = vec![0.0; n_keys];
            for (j, krow) in k.iter().enumerate() {
                scores[j] = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let support = if causal { (i + 1).min(n_keys) } else { n_keys };
            let weights = softmax_prefix(&scores, support);
            for (j, w) in weights.iter().enumerate() {
                for c in 0..head_dim {
                    out[i][c] += w * v[j][c];
                }
            }
        }
        parts.push(out);
    }
    matmul(&concat_cols(&parts), wo)
}

/// One named encoder stack: depth × (self-attention → add & norm →
/// feed-forward → add & norm).
fn encode_set(store: &ParamStore, cfg: &ModelConfig, name: &str, x: &Mat) -> Mat {
    let mut x = x.clone();
    for l in 0..cfg.encoder_depth {
        let p = |suffix: &str| fetch(store, &format!("enc.{name}.{l}.{suffix}"));
        let attn = multi_head(
            &x,
            &x,
            &p("attn.wq"),
            &p("attn.wk"),
            &p("attn.wv"),
            &p("attn.wo"),
            cfg.heads,
            false,
        );
        let h = layer_norm(&add_mats(&x, &attn), &p("ln1.gain"), &p("ln1.bias"));
        let a = add_bias_row(&matmul(&h, &p("ffn.w1")), &p("ffn.b1"));
        let a = map_mat(&a, |v| v.max(0.0));
        let f = add_bias_row(&matmul(&a, &p("ffn.w2")), &p("ffn.b2"));
        x = layer_norm(&add_mats(&h, &f), &p("ln2.gain"), &p("ln2.bias"));
    }
    x
}

/// Score rows with `tanh(X W₁ + b₁) W₂ + b₂`, softmax over the set, and
/// return the weighted row sum.
fn gated_aggregate(x: &Mat, w1: &Mat, b1: &Mat, w2: &Mat, b2: &Mat) -> Vec<f64> {
    let h = map_mat(&add_bias_row(&matmul(x, w1), b1), f64::tanh);
    let logits: Vec<f64> = add_bias_row(&matmul(&h, w2), b2)
        .iter()
        .map(|row| row[0])
        .collect();
    let weights = softmax(&logits);
    let s = x[0].len();
    let mut out = vec![0.0; s];
    for (w, row) in weights.iter().zip(x) {
        for c in 0..s {
            out[c] += w * row[c];
        }
    }
    out
}

struct VisitEnc {
    diag: Mat,
    proc: Mat,
    v_diag: Vec<f64>,
    v_proc: Vec<f64>,
}

fn encode_visit(store: &ParamStore, cfg: &ModelConfig, visit: &Visit) -> VisitEnc {
    let d_rows = gather(&fetch(store, "embed.diag"), &visit.diagnoses);
    let diag = encode_set(store, cfg, "diag", &d_rows);
    let p_rows = if visit.procedures.is_empty() {
        fetch(store, "embed.null_proc")
    } else {
        gather(&fetch(store, "embed.proc"), &visit.procedures)
    };
    let proc = encode_set(store, cfg, "proc", &p_rows);
    let v_diag = gated_aggregate(
        &diag,
        &fetch(store, "gate.diag.w1"),
        &fetch(store, "gate.diag.b1"),
        &fetch(store, "gate.diag.w2"),
        &fetch(store, "gate.diag.b2"),
    );
    let v_proc = gated_aggregate(
        &proc,
        &fetch(store, "gate.proc.w1"),
        &fetch(store, "gate.proc.b1"),
        &fetch(store, "gate.proc.w2"),
        &fetch(store, "gate.proc.b2"),
    );
    VisitEnc {
        diag,
        proc,
        v_diag,
        v_proc,
    }
}

// ==== graph branch ====

fn sym_norm(a: &ndarray::Array2<f64>) -> Mat {
    let n = a.nrows();
    let mut hat: Mat = (0..n)
        .map(|i| (0..n).map(|j| a[[i, j]] + if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let deg: Vec<f64> = hat.iter().map(|row| row.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            hat[i][j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    hat
}

fn gcn_branch(s_hat: &Mat, x: &Mat, w: &Mat) -> Mat {
    let h = map_mat(&matmul(s_hat, x), |v| v.max(0.0));
    matmul(s_hat, &matmul(&h, w))
}

/// Relation-aware decoder input table: graph-encoded clinical rows minus
/// `lambda` times the interaction branch, then two zero rows for the
/// sequence control tokens.
pub fn graph_table(store: &ParamStore, graphs: &MedicationGraphs, n_med: usize) -> Mat {
    let clinical: Mat = fetch(store, "embed.med")[..n_med].to_vec();
    let g_ehr = gcn_branch(
        &sym_norm(&graphs.a_ehr),
        &clinical,
        &fetch(store, "graph.w_ehr"),
    );
    let g_ddi = gcn_branch(
        &sym_norm(&graphs.a_ddi),
        &clinical,
        &fetch(store, "graph.w_ddi"),
    );
    let lambda = store.get("graph.lambda")[[0, 0]];
    let s = clinical[0].len();
    let mut out: Mat = g_ehr
        .iter()
        .zip(&g_ddi)
        .map(|(re, rd)| re.iter().zip(rd).map(|(e, d)| e - lambda * d).collect())
        .collect();
    out.push(vec![0.0; s]);
    out.push(vec![0.0; s]);
    out
}

// ==== full decode step ====

/// Everything one decode step produces, re-derived straight-line.
pub struct OracleStep {
    /// Final distribution with already-emitted slots masked and the rest
    /// renormalized.
    pub probs: Vec<f64>,
    pub gen_probs: Vec<f64>,
    pub copy_probs: Option<Vec<f64>>,
    pub gen_weight: Option<f64>,
    pub visit_scores: Option<Vec<f64>>,
}

/// Decode one step of visit `t` for the full (unablated) model, with
/// `emitted` clinical slots already generated.
pub fn decode_step(
    store: &ParamStore,
    cfg: &ModelConfig,
    graphs: &MedicationGraphs,
    visits: &[Visit],
    t: usize,
    emitted: &[usize],
) -> OracleStep {
    let n_med = graphs.n_med();
    let s = cfg.embed_dim;
    let scale = 1.0 / (s as f64).sqrt();
    let current = encode_visit(store, cfg, &visits[t]);

    // History medication encodings, their slot ids, and visit relevance.
    let history: Vec<(Mat, Vec<usize>)> = visits[..t]
        .iter()
        .map(|v| {
            let rows = gather(&fetch(store, "embed.med"), &v.medications);
            (encode_set(store, cfg, "med", &rows), v.medications.clone())
        })
        .collect();
    let visit_scores = if t > 0 {
        let raw: Vec<f64> = visits[..t]
            .iter()
            .map(|v| {
                let past = encode_visit(store, cfg, v);
                let dd: f64 = past.v_diag.iter().zip(&current.v_diag).map(|(a, b)| a * b).sum();
                let pp: f64 = past.v_proc.iter().zip(&current.v_proc).map(|(a, b)| a * b).sum();
                (dd + pp) * scale
            })
            .collect();
        Some(softmax(&raw))
    } else {
        None
    };

    // Decoder input: token embeddings plus relation-graph rows.
    let gt = graph_table(store, graphs, n_med);
    let emb = fetch(store, "embed.med");
    let mut tokens = vec![n_med]; // start token
    tokens.extend_from_slice(emitted);
    let x: Mat = tokens
        .iter()
        .map(|&tok| emb[tok].iter().zip(&gt[tok]).map(|(a, b)| a + b).collect())
        .collect();

    // Causal self-attention, then cross-attention over both code sets.
    let d = |name: &str| fetch(store, name);
    let sa = multi_head(
        &x,
        &x,
        &d("dec.self.wq"),
        &d("dec.self.wk"),
        &d("dec.self.wv"),
        &d("dec.self.wo"),
        cfg.heads,
        true,
    );
    let h1 = layer_norm(&add_mats(&x, &sa), &d("dec.ln1.gain"), &d("dec.ln1.bias"));
    let cross_d = multi_head(
        &h1,
        &current.diag,
        &d("dec.cross_diag.wq"),
        &d("dec.cross_diag.wk"),
        &d("dec.cross_diag.wv"),
        &d("dec.cross_diag.wo"),
        cfg.heads,
        false,
    );
    let cross_p = multi_head(
        &h1,
        &current.proc,
        &d("dec.cross_proc.wq"),
        &d("dec.cross_proc.wk"),
        &d("dec.cross_proc.wv"),
        &d("dec.cross_proc.wo"),
        cfg.heads,
        false,
    );
    let cross = add_mats(&cross_d, &cross_p);
    let hidden = layer_norm(
        &add_mats(&h1, &cross),
        &d("dec.ln2.gain"),
        &d("dec.ln2.bias"),
    );
    let h_last = vec![hidden.last().unwrap().clone()];

    // Generation head.
    let gen_logits = add_bias_row(&matmul(&h_last, &d("out.w")), &d("out.b"));
    let pr_g = softmax(&gen_logits[0]);

    // Copy distribution over history occurrences, if any history exists.
    let n_outputs = n_med + 1;
    let (pr, pr_c, w_g) = if history.is_empty() {
        (pr_g.clone(), None, None)
    } else {
        let m_rows: Mat = history.iter().flat_map(|(m, _)| m.iter().cloned()).collect();
        let proj = matmul(&h_last, &d("copy.w_c"));
        let logits: Vec<f64> = matmul(&proj, &transpose(&m_rows))[0]
            .iter()
            .map(|v| v * scale)
            .collect();
        let q = softmax(&logits);

        let mut slot_mass = vec![0.0; n_outputs];
        let mut col = 0;
        for (j, (_, meds)) in history.iter().enumerate() {
            let c_j = visit_scores.as_ref().map_or(1.0, |c| c[j]);
            for &m in meds {
                slot_mass[m] += q[col] * c_j;
                col += 1;
            }
        }
        let total: f64 = slot_mass.iter().sum();
        let pr_c: Vec<f64> = slot_mass.iter().map(|v| v / total).collect();

        let gate_logit = matmul(&h_last, &d("copy.w_f"))[0][0] + store.get("copy.b_f")[[0, 0]];
        let w_g = sigmoid(gate_logit);
        let pr: Vec<f64> = pr_g
            .iter()
            .zip(&pr_c)
            .map(|(g, c)| w_g * g + (1.0 - w_g) * c)
            .collect();
        (pr, Some(pr_c), Some(w_g))
    };

    // Mask already-emitted slots and renormalize.
    let mut probs = pr.clone();
    for &e in emitted {
        if e != n_med {
            probs[e] = 0.0;
        }
    }
    let mass: f64 = probs.iter().sum();
    for v in &mut probs {
        *v /= mass;
    }

    OracleStep {
        probs,
        gen_probs: pr_g,
        copy_probs: pr_c,
        gen_weight: w_g,
        visit_scores,
    }
}

// ==== shared test scaffolding ====

/// Absolute elementwise comparison that reports the first offending slot.
pub fn assert_close(label: &str, got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{label}: length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "{label}[{i}]: got {g}, reference {w} (|Δ| = {:.3e} > {tol:.0e})",
            (g - w).abs()
        );
    }
}

// ==== deterministic pseudo-random scorer ====

use medrec_core::infer::{mask_and_renormalize, StepOutput, StepScorer};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

/// A [`StepScorer`] whose step distribution is a pure function of the seed
/// and the prefix: the prefix is hashed into an RNG stream that draws
/// positive weights. Useful for exercising search code against exhaustive
/// enumeration without a model in the loop.
pub struct HashScorer {
    pub n_med: usize,
    pub seed: u64,
}

impl StepScorer for HashScorer {
    fn n_outputs(&self) -> usize {
        self.n_med + 1
    }

    fn end_slot(&self) -> usize {
        self.n_med
    }

    fn step(&mut self, prefix_slots: &[usize]) -> StepOutput {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for &p in prefix_slots {
            h = (h ^ (p as u64 + 1)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut raw: Vec<f64> = (0..self.n_outputs())
            .map(|_| rng.gen_range(0.05..1.0))
            .collect();
        let sum: f64 = raw.iter().sum();
        for v in &mut raw {
            *v /= sum;
        }
        let probs = mask_and_renormalize(&raw, prefix_slots, self.end_slot());
        StepOutput {
            probs,
            gen_probs: raw,
            copy_probs: None,
            gen_weight: None,
        }
    }
}

/// Exhaustively enumerate every complete decode path (ending on the end
/// slot or at `max_len` emissions) and return the best by cumulative log
/// probability. Complete-path semantics mirror the search under test.
pub fn exhaustive_best(scorer: &mut dyn StepScorer, max_len: usize) -> (Vec<usize>, f64) {
    fn go(
        scorer: &mut dyn StepScorer,
        prefix: &mut Vec<usize>,
        lp: f64,
        max_len: usize,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let out = scorer.step(prefix);
        let end = scorer.end_slot();
        for (slot, &p) in out.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let nlp = lp + p.ln();
            if slot == end || prefix.len() + 1 == max_len {
                if best.as_ref().is_none_or(|(_, b)| nlp > *b) {
                    let mut slots = prefix.clone();
                    slots.push(slot);
                    *best = Some((slots, nlp));
                }
            } else {
                prefix.push(slot);
                go(scorer, prefix, nlp, max_len, best);
                prefix.pop();
            }
        }
    }
    let mut best = None;
    go(scorer, &mut Vec::new(), 0.0, max_len, &mut best);
    best.expect("at least one complete path exists")
}
