//! Model hyperparameters, training settings, and ablation switches.

use serde::{Deserialize, Serialize};

use crate::data::{OrderHeuristic, Vocabularies};
use crate::error::{Error, Result};

/// Architecture sizes. `embed_dim` is the shared width `s` of every
/// embedding and hidden state; the feed-forward hidden layer is fixed at
/// `8·s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// Hidden width of the gated set-aggregation scorer.
    pub gate_hidden: usize,
    /// Number of stacked self-attention blocks in each set encoder.
    pub encoder_depth: usize,
    /// Maximum decode steps per visit, end token included.
    pub max_len: usize,
    pub beam_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            heads: 4,
            gate_hidden: 32,
            encoder_depth: 1,
            max_len: 45,
            beam_width: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::validation(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.gate_hidden == 0 || self.encoder_depth == 0 {
            return Err(Error::validation(
                "gate_hidden and encoder_depth must be at least 1",
            ));
        }
        if self.max_len == 0 || self.beam_width == 0 {
            return Err(Error::validation("max_len and beam_width must be at least 1"));
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        8 * self.embed_dim
    }
}

/// Optimization settings. The defaults mirror the reference protocol:
/// adaptive-moment updates at learning rate 1e-4, batches of 16
/// (patient, visit) pairs, 50 epochs, seed 1203.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// How each visit's medication list is ordered into a target sequence.
    pub label_order: OrderHeuristic,
    pub ablation: AblationFlags,
    /// Drop rate applied to decoder hidden rows during training; 0 (the
    /// default) disables it.
    pub dropout: f64,
    /// Global-norm gradient clipping threshold; `None` (default) is off.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-4,
            batch_size: 16,
            epochs: 50,
            seed: 1203,
            label_order: OrderHeuristic::RareFirst,
            ablation: AblationFlags::default(),
            dropout: 0.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) && self.lr != 0.0 {
            return Err(Error::validation("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::validation("batch_size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::validation("grad_clip must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Switches that disable individual model components, for ablation studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Use the generation distribution alone; no copying from history.
    pub no_copy: bool,
    /// Keep copying but drop the visit-level relevance weighting.
    pub no_visit_scores: bool,
    /// Drop the graph-encoded medication embeddings from decoder inputs.
    pub no_graphs: bool,
    /// Remove diagnosis information from the decoder and visit scoring.
    pub no_diagnoses: bool,
    /// Remove procedure information from the decoder and visit scoring.
    pub no_procedures: bool,
}

/// Vocabulary sizes the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
}

impl ModelDims {
    pub fn from_vocabs(v: &Vocabularies) -> Self {
        ModelDims {
            n_diag: v.n_diag(),
            n_proc: v.n_proc(),
            n_med: v.n_med(),
        }
    }

    /// Output distribution width: clinical medications plus the end slot.
    pub fn n_outputs(&self) -> usize {
        self.n_med + 1
    }

    pub fn end_slot(&self) -> usize {
        self.n_med
    }

    pub fn start_token(&self) -> usize {
        self.n_med
    }

    pub fn end_token(&self) -> usize {
        self.n_med + 1
    }
}
