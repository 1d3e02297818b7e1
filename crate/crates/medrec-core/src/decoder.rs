//! Autoregressive medication decoder with a copy mechanism.
//!
//! Each step mixes two distributions over the output slots (all medications
//! plus an end slot): a generation head over the decoder hidden state, and a
//! copy distribution that points back into medications prescribed during
//! earlier visits, weighted by how relevant each earlier visit looks from
//! the current one. A sigmoid gate on the hidden state balances the two.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::config::{AblationFlags, ModelConfig};
use crate::data::Visit;
use crate::encoders::{encode_medication_set, encode_visit, VisitEncoding};
use crate::error::{Error, Result};
use crate::graph::{encode_medication_relations, MedicationGraphs};
use crate::nn::{causal_mask, multi_head, residual_layer_norm};
use crate::params::BoundParams;

// ==== decode context ====

/// One earlier visit's encoded medication set, kept with the medication ids
/// so the copy distribution can map set positions back to output slots.
pub struct HistoryVisit {
    pub m_enc: Var,
    pub med_ids: Vec<usize>,
}

/// Everything the decoder needs about one (patient, visit) pair, already on
/// the tape. Built once per visit; every decode step reuses it.
pub struct VisitContext {
    pub d_enc: Option<Var>,
    pub p_enc: Option<Var>,
    pub history: Vec<HistoryVisit>,
    /// `1 × t` relevance weights over the history visits; `None` when the
    /// history is empty or visit-level weighting is disabled.
    pub visit_scores: Option<Var>,
    /// `(n_med + 2) × s` relation-graph embedding table with zero rows for
    /// the two control tokens; `None` when the graph branch is disabled.
    pub graph_table: Option<Var>,
    pub n_med: usize,
}

/// Build the relation-graph embedding table for decoder inputs: clinical
/// rows from the two-branch graph encoding, control-token rows pinned to
/// zero. Returns `None` when the branch is ablated.
pub fn graph_embedding_table(
    tape: &mut Tape,
    bp: &BoundParams,
    flags: AblationFlags,
    graphs: &MedicationGraphs,
) -> Option<Var> {
    if flags.no_graphs {
        return None;
    }
    let n_med = graphs.n_med();
    let s = tape.shape(bp.v("embed.med")).1;
    let clinical = tape.slice_rows(bp.v("embed.med"), 0, n_med);
    let e_g = encode_medication_relations(
        tape,
        clinical,
        bp.v("graph.w_ehr"),
        bp.v("graph.w_ddi"),
        bp.v("graph.lambda"),
        graphs,
    );
    let control = tape.constant(Array2::zeros((2, s)));
    Some(tape.concat_rows(&[e_g, control]))
}

/// Encode visit `t` of a patient's visit sequence for decoding: current
/// code sets, history medication sets, and visit relevance scores.
/// `graph_table` is shared across visits on the same tape, so the caller
/// builds it once (see [`graph_embedding_table`]).
pub fn encode_context(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    flags: AblationFlags,
    visits: &[Visit],
    t: usize,
    graph_table: Option<Var>,
    n_med: usize,
) -> Result<VisitContext> {
    if t >= visits.len() {
        return Err(Error::validation(format!(
            "visit index {t} out of range for {} visits",
            visits.len()
        )));
    }
    let current = encode_visit(tape, bp, cfg, flags, &visits[t])?;
    let use_copy = !flags.no_copy && t > 0;

    let mut history = Vec::new();
    if use_copy {
        for v in &visits[..t] {
            let m_enc = encode_medication_set(tape, bp, cfg, &v.medications)?;
            history.push(HistoryVisit {
                m_enc,
                med_ids: v.medications.clone(),
            });
        }
    }

    let visit_scores = if use_copy && !flags.no_visit_scores {
        Some(history_relevance(
            tape, bp, cfg, flags, visits, t, &current,
        )?)
    } else {
        None
    };

    Ok(VisitContext {
        d_enc: current.diag,
        p_enc: current.proc,
        history,
        visit_scores,
        graph_table,
        n_med,
    })
}

/// Softmax over history visits of scaled condition-vector dot products:
/// visit `j` scores `(v_d_j · v_d_t + v_p_j · v_p_t) / sqrt(s)`. Ablated
/// code types drop out of the sum; with both gone the weights are uniform.
fn history_relevance(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    flags: AblationFlags,
    visits: &[Visit],
    t: usize,
    current: &VisitEncoding,
) -> Result<Var> {
    let scale = 1.0 / (cfg.embed_dim as f64).sqrt();
    let d_t = current.v_diag.map(|v| tape.transpose(v));
    let p_t = current.v_proc.map(|v| tape.transpose(v));
    let mut scores = Vec::with_capacity(t);
    for v in &visits[..t] {
        let past = encode_visit(tape, bp, cfg, flags, v)?;
        let mut terms: Vec<Var> = Vec::new();
        if let (Some(vd), Some(dt)) = (past.v_diag, d_t) {
            terms.push(tape.matmul(vd, dt));
        }
        if let (Some(vp), Some(pt)) = (past.v_proc, p_t) {
            terms.push(tape.matmul(vp, pt));
        }
        let score = match terms.len() {
            0 => tape.constant(Array2::zeros((1, 1))),
            1 => terms[0],
            _ => tape.add(terms[0], terms[1]),
        };
        scores.push(tape.scale(score, scale));
    }
    let row = tape.concat_cols(&scores);
    Ok(tape.softmax_rows(row))
}

// ==== decoder stack ====

/// Hidden states for a token prefix: summed token and graph embeddings,
/// causal self-attention, then cross-attention over the current visit's
/// encoded diagnosis and procedure sets. One layer norm wraps the
/// self-attention residual and a single second norm wraps the sum of both
/// cross-attention readouts; there is no feed-forward stage.
pub fn decoder_hidden(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    ctx: &VisitContext,
    prefix_tokens: &[usize],
) -> Result<Var> {
    if prefix_tokens.is_empty() {
        return Err(Error::validation("decoder prefix must not be empty"));
    }
    let mut x = tape.gather_rows(bp.v("embed.med"), prefix_tokens);
    if let Some(gt) = ctx.graph_table {
        let g = tape.gather_rows(gt, prefix_tokens);
        x = tape.add(x, g);
    }

    let mask = causal_mask(prefix_tokens.len());
    let sa = multi_head(
        tape,
        x,
        x,
        x,
        bp.v("dec.self.wq"),
        bp.v("dec.self.wk"),
        bp.v("dec.self.wv"),
        bp.v("dec.self.wo"),
        cfg.heads,
        Some(&mask),
    )?;
    let h1 = residual_layer_norm(tape, x, sa, bp.v("dec.ln1.gain"), bp.v("dec.ln1.bias"));

    let mut cross: Vec<Var> = Vec::new();
    if let Some(d) = ctx.d_enc {
        cross.push(multi_head(
            tape,
            h1,
            d,
            d,
            bp.v("dec.cross_diag.wq"),
            bp.v("dec.cross_diag.wk"),
            bp.v("dec.cross_diag.wv"),
            bp.v("dec.cross_diag.wo"),
            cfg.heads,
            None,
        )?);
    }
    if let Some(p) = ctx.p_enc {
        cross.push(multi_head(
            tape,
            h1,
            p,
            p,
            bp.v("dec.cross_proc.wq"),
            bp.v("dec.cross_proc.wk"),
            bp.v("dec.cross_proc.wv"),
            bp.v("dec.cross_proc.wo"),
            cfg.heads,
            None,
        )?);
    }
    let sub = match cross.len() {
        0 => tape.scale(h1, 0.0),
        1 => cross[0],
        _ => tape.add(cross[0], cross[1]),
    };
    Ok(residual_layer_norm(
        tape,
        h1,
        sub,
        bp.v("dec.ln2.gain"),
        bp.v("dec.ln2.bias"),
    ))
}

// ==== output distributions ====

/// Per-step output distributions, one row per prefix position.
pub struct StepDistributions {
    /// Final mixed distribution over the output slots.
    pub pr: Var,
    /// Generation head alone.
    pub pr_g: Var,
    /// Copy distribution; `None` without usable history.
    pub pr_c: Option<Var>,
    /// `rows × 1` generation weight of the mixing gate; `None` without
    /// usable history.
    pub w_g: Option<Var>,
}

/// Softmax scores over every (history visit, medication) slot:
/// `softmax((hidden W_c) M'ᵀ / sqrt(s))` with history sets stacked row-wise.
pub fn medication_scores(tape: &mut Tape, hidden: Var, w_c: Var, m_hist: Var) -> Var {
    let s = tape.shape(hidden).1;
    let proj = tape.matmul(hidden, w_c);
    let m_t = tape.transpose(m_hist);
    let logits = tape.matmul(proj, m_t);
    let scaled = tape.scale(logits, 1.0 / (s as f64).sqrt());
    tape.softmax_rows(scaled)
}

/// Collapse per-occurrence scores `q` (`rows × K`) into a distribution over
/// output slots: optionally gate each occurrence by its visit's relevance,
/// sum occurrences of the same medication, and renormalize each row.
/// `med_lists` gives the medication ids of each history visit in the order
/// their rows were stacked; the end slot always gets zero mass.
pub fn copy_distribution(
    tape: &mut Tape,
    q: Var,
    visit_scores: Option<Var>,
    med_lists: &[&[usize]],
    n_outputs: usize,
) -> Var {
    let k: usize = med_lists.iter().map(|m| m.len()).sum();
    assert_eq!(tape.shape(q).1, k, "q columns must cover every occurrence");

    let gated = match visit_scores {
        Some(c) => {
            // Expand the per-visit weights to per-occurrence columns.
            let mut expand = Array2::zeros((med_lists.len(), k));
            let mut col = 0;
            for (j, meds) in med_lists.iter().enumerate() {
                for _ in meds.iter() {
                    expand[[j, col]] = 1.0;
                    col += 1;
                }
            }
            let r = tape.constant(expand);
            let c_cols = tape.matmul(c, r);
            tape.mul_row(q, c_cols)
        }
        None => q,
    };

    // Scatter occurrence mass onto the owning medication slot.
    let mut scatter = Array2::zeros((k, n_outputs));
    let mut row = 0;
    for meds in med_lists {
        for &m in meds.iter() {
            assert!(m < n_outputs - 1, "copyable ids must be clinical medications");
            scatter[[row, m]] = 1.0;
            row += 1;
        }
    }
    let s_mat = tape.constant(scatter);
    let gathered = tape.matmul(gated, s_mat);
    tape.normalize_rows(gathered)
}

/// Convex mix of the generation and copy distributions, row by row:
/// `w_g ⊙ pr_g + (1 − w_g) ⊙ pr_c`.
pub fn copy_mix(tape: &mut Tape, pr_g: Var, pr_c: Var, w_g: Var) -> Var {
    let rows = tape.shape(w_g).0;
    let ones = tape.constant(Array2::ones((rows, 1)));
    let w_copy = tape.sub(ones, w_g);
    let gen_part = tape.mul_col(pr_g, w_g);
    let copy_part = tape.mul_col(pr_c, w_copy);
    tape.add(gen_part, copy_part)
}

/// All output distributions for a hidden-state matrix. With no usable
/// history the final distribution is the generation head alone.
pub fn step_distributions(
    tape: &mut Tape,
    bp: &BoundParams,
    ctx: &VisitContext,
    hidden: Var,
) -> StepDistributions {
    let logits = tape.matmul(hidden, bp.v("out.w"));
    let logits = tape.add_row(logits, bp.v("out.b"));
    let pr_g = tape.softmax_rows(logits);

    if ctx.history.is_empty() {
        return StepDistributions {
            pr: pr_g,
            pr_g,
            pr_c: None,
            w_g: None,
        };
    }

    let encs: Vec<Var> = ctx.history.iter().map(|h| h.m_enc).collect();
    let m_hist = tape.concat_rows(&encs);
    let q = medication_scores(tape, hidden, bp.v("copy.w_c"), m_hist);
    let med_lists: Vec<&[usize]> = ctx.history.iter().map(|h| h.med_ids.as_slice()).collect();
    let pr_c = copy_distribution(tape, q, ctx.visit_scores, &med_lists, ctx.n_med + 1);

    let gate_logit = tape.matmul(hidden, bp.v("copy.w_f"));
    let gate_logit = tape.add_row(gate_logit, bp.v("copy.b_f"));
    let w_g = tape.sigmoid(gate_logit);

    let pr = copy_mix(tape, pr_g, pr_c, w_g);
    StepDistributions {
        pr,
        pr_g,
        pr_c: Some(pr_c),
        w_g: Some(w_g),
    }
}

// ==== tests ====
