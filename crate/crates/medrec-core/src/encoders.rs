//! Visit encoding: embedding lookups, stacked self-attention set encoders,
//! and gated aggregation into per-visit condition vectors.
//!
//! Diagnoses, procedures, and historical medications run through three
//! independently parameterized encoder stacks; the stacks share structure
//! but nothing else.

use crate::autodiff::{Tape, Var};
use crate::config::{AblationFlags, ModelConfig};
use crate::data::Visit;
use crate::error::Result;
use crate::nn::{ffn, gated_aggregate, multi_head, residual_layer_norm};
use crate::params::BoundParams;

// ==== set encoder ====

/// Run embedded rows (`L × s`) through `encoder_depth` blocks of the named
/// encoder stack. Each block is self-attention followed by a feed-forward
/// layer, both wrapped in residual layer normalization. Sets carry no
/// order, so no positional information is added.
pub fn encode_set(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    name: &str,
    x: Var,
) -> Result<Var> {
    let mut x = x;
    for l in 0..cfg.encoder_depth {
        let p = format!("enc.{name}.{l}");
        let attn = multi_head(
            tape,
            x,
            x,
            x,
            bp.v(&format!("{p}.attn.wq")),
            bp.v(&format!("{p}.attn.wk")),
            bp.v(&format!("{p}.attn.wv")),
            bp.v(&format!("{p}.attn.wo")),
            cfg.heads,
            None,
        )?;
        let h = residual_layer_norm(
            tape,
            x,
            attn,
            bp.v(&format!("{p}.ln1.gain")),
            bp.v(&format!("{p}.ln1.bias")),
        );
        let f = ffn(
            tape,
            h,
            bp.v(&format!("{p}.ffn.w1")),
            bp.v(&format!("{p}.ffn.b1")),
            bp.v(&format!("{p}.ffn.w2")),
            bp.v(&format!("{p}.ffn.b2")),
        );
        x = residual_layer_norm(
            tape,
            h,
            f,
            bp.v(&format!("{p}.ln2.gain")),
            bp.v(&format!("{p}.ln2.bias")),
        );
    }
    Ok(x)
}

// ==== visit encoding ====

/// Encoded code sets of one visit plus their gated condition vectors.
/// Fields are `None` when the corresponding input is ablated away.
pub struct VisitEncoding {
    /// `|D| × s` encoded diagnosis rows.
    pub diag: Option<Var>,
    /// Encoded procedure rows; a single placeholder row when the visit
    /// recorded no procedures.
    pub proc: Option<Var>,
    /// `1 × s` gated aggregate of the diagnosis rows.
    pub v_diag: Option<Var>,
    /// `1 × s` gated aggregate of the procedure rows.
    pub v_proc: Option<Var>,
}

/// Encode one visit's diagnosis and procedure sets and derive the condition
/// vectors used for visit-relevance scoring.
pub fn encode_visit(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    flags: AblationFlags,
    visit: &Visit,
) -> Result<VisitEncoding> {
    let diag = if flags.no_diagnoses {
        None
    } else {
        let rows = tape.gather_rows(bp.v("embed.diag"), &visit.diagnoses);
        Some(encode_set(tape, bp, cfg, "diag", rows)?)
    };
    let proc = if flags.no_procedures {
        None
    } else {
        // A visit without procedures is encoded as the one-element set
        // holding the learned placeholder row, so downstream shapes and
        // attention targets always exist.
        let rows = if visit.procedures.is_empty() {
            bp.v("embed.null_proc")
        } else {
            tape.gather_rows(bp.v("embed.proc"), &visit.procedures)
        };
        Some(encode_set(tape, bp, cfg, "proc", rows)?)
    };
    let v_diag = diag.map(|d| {
        gated_aggregate(
            tape,
            d,
            bp.v("gate.diag.w1"),
            bp.v("gate.diag.b1"),
            bp.v("gate.diag.w2"),
            bp.v("gate.diag.b2"),
        )
    });
    let v_proc = proc.map(|p| {
        gated_aggregate(
            tape,
            p,
            bp.v("gate.proc.w1"),
            bp.v("gate.proc.b1"),
            bp.v("gate.proc.w2"),
            bp.v("gate.proc.b2"),
        )
    });
    Ok(VisitEncoding {
        diag,
        proc,
        v_diag,
        v_proc,
    })
}

/// Encode a historical medication set (`|M| × s`). Rows come from the raw
/// medication embedding table; the relation-graph adjustment applies only
/// to decoder inputs, not to these history encodings.
pub fn encode_medication_set(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    med_ids: &[usize],
) -> Result<Var> {
    let rows = tape.gather_rows(bp.v("embed.med"), med_ids);
    encode_set(tape, bp, cfg, "med", rows)
}

// ==== tests ====
