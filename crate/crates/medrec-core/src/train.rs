//! Teacher-forced training: per-visit sequence loss, adaptive-moment
//! optimization, per-epoch validation, and best-checkpoint retention.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{AblationFlags, ModelConfig, ModelDims, TrainConfig};
use crate::data::{order_medications, DatasetBundle, Visit};
use crate::decoder::{decoder_hidden, encode_context, graph_embedding_table, step_distributions};
use crate::error::{Error, Result};
use crate::graph::MedicationGraphs;
use crate::infer::predict_visit;
use crate::metrics::{evaluate_patients, VisitPrediction};
use crate::params::{bind_params, init_model_params, BoundParams, ParamStore};

// ==== sequence loss ====

/// Per-step Bernoulli keep-masks for training-time regularization.
struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    /// Inverted dropout: kept entries scale by `1/(1-rate)` so the
    /// expected activation is unchanged.
    fn apply(&mut self, tape: &mut Tape, v: Var) -> Var {
        let (rows, cols) = tape.shape(v);
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_fn((rows, cols), |_| {
            if self.rng.gen_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = tape.constant(mask);
        tape.mul(v, m)
    }
}

/// Teacher-forced negative log-likelihood of one (patient, visit) pair:
/// the decoder consumes the start token plus the ground-truth medication
/// sequence and must predict each medication and then the end slot. Returns
/// the loss sum and the number of target tokens. No duplicate masking is
/// applied during training — the uniform-model loss is exactly
/// `(k+1)·ln(|M|+1)`.
#[allow(clippy::too_many_arguments)]
fn visit_loss_on_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    flags: AblationFlags,
    visits: &[Visit],
    t: usize,
    n_med: usize,
    graph_table: Option<Var>,
    dropout: Option<&mut Dropout>,
) -> Result<(Var, usize)> {
    let meds = &visits[t].medications;
    if meds.is_empty() {
        return Err(Error::validation("cannot train on a visit without medications"));
    }
    let ctx = encode_context(tape, bp, cfg, flags, visits, t, graph_table, n_med)?;

    let mut prefix = Vec::with_capacity(meds.len() + 1);
    prefix.push(n_med); // start token
    prefix.extend_from_slice(meds);
    let mut hidden = decoder_hidden(tape, bp, cfg, &ctx, &prefix)?;
    if let Some(d) = dropout {
        hidden = d.apply(tape, hidden);
    }
    let dists = step_distributions(tape, bp, &ctx, hidden);

    // Step i predicts target i: the medications in order, then the end slot.
    let coords: Vec<(usize, usize)> = meds
        .iter()
        .copied()
        .chain(std::iter::once(n_med))
        .enumerate()
        .collect();
    let picked = tape.select_entries(dists.pr, &coords);
    let logs = tape.ln(picked);
    let total = tape.sum_all(logs);
    Ok((tape.scale(total, -1.0), coords.len()))
}

/// Public single-pair loss, evaluated on a fresh tape. Returns the summed
/// negative log-likelihood (natural log) and the target-token count.
pub fn sequence_loss(
    store: &ParamStore,
    cfg: &ModelConfig,
    flags: AblationFlags,
    graphs: &MedicationGraphs,
    visits: &[Visit],
    t: usize,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let bp = bind_params(&mut tape, store, false);
    let gt = graph_embedding_table(&mut tape, &bp, flags, graphs);
    let (loss, n) =
        visit_loss_on_tape(&mut tape, &bp, cfg, flags, visits, t, graphs.n_med(), gt, None)?;
    Ok((tape.scalar_value(loss), n))
}

/// Single-pair loss plus its gradient for every parameter, in store order.
pub fn sequence_loss_with_grads(
    store: &ParamStore,
    cfg: &ModelConfig,
    flags: AblationFlags,
    graphs: &MedicationGraphs,
    visits: &[Visit],
    t: usize,
) -> Result<(f64, Vec<(String, Array2<f64>)>)> {
    let mut tape = Tape::new();
    let bp = bind_params(&mut tape, store, true);
    let gt = graph_embedding_table(&mut tape, &bp, flags, graphs);
    let (loss, _) =
        visit_loss_on_tape(&mut tape, &bp, cfg, flags, visits, t, graphs.n_med(), gt, None)?;
    let grads = tape.backward(loss);
    let out = bp
        .bound()
        .map(|(name, v)| (name.to_string(), grads.get(v, tape.shape(v))))
        .collect();
    Ok((tape.scalar_value(loss), out))
}

/// Loss for a batch of (patient-visits, visit-index) pairs: the sum of the
/// pair losses divided by the total number of target tokens. The graph
/// branch is evaluated once and shared by every pair on the tape.
fn batch_loss_on_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    tc: &TrainConfig,
    graphs: &MedicationGraphs,
    pairs: &[(&[Visit], usize)],
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let gt = graph_embedding_table(tape, bp, tc.ablation, graphs);
    let mut sums = Vec::with_capacity(pairs.len());
    let mut tokens = 0usize;
    let mut drop = dropout;
    for &(visits, t) in pairs {
        let (sum, n) = visit_loss_on_tape(
            tape,
            bp,
            &tc.model,
            tc.ablation,
            visits,
            t,
            graphs.n_med(),
            gt,
            drop.as_deref_mut(),
        )?;
        sums.push(sum);
        tokens += n;
    }
    let mut total = sums[0];
    for &s in &sums[1..] {
        total = tape.add(total, s);
    }
    Ok(tape.scale(total, 1.0 / tokens as f64))
}

// ==== optimizer ====

/// Adaptive-moment estimation with bias correction
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store
            .iter()
            .map(|(_, p)| Array2::zeros(p.dim()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `grads` must align with the store's parameter order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), store.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let g = &grads[i];
            self.m[i].zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i].zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, &m), &v) in p.iter_mut().zip(self.m[i].iter()).zip(self.v[i].iter()) {
                let m_hat = m / b1t;
                let v_hat = v / b2t;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm does not exceed `clip`.
pub fn clip_global_norm(grads: &mut [Array2<f64>], clip: f64) {
    let sq: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
}

// ==== training loop ====

/// One epoch's scalar record for the metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_jaccard: f64,
    pub val_f1: f64,
    pub val_prauc: f64,
    pub val_ddi: f64,
    pub avg_drugs: f64,
}

/// Trained parameters plus the training history.
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation Jaccard (the final
    /// epoch's parameters when there is no validation split).
    pub best: ParamStore,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub final_params: ParamStore,
    pub log: Vec<EpochLog>,
}

fn check_finite_params(store: &ParamStore, epoch: usize, batch: usize) -> Result<()> {
    for (_, p) in store.iter() {
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { epoch, batch });
        }
    }
    Ok(())
}

/// Greedy-decode every visit of every patient and aggregate the metrics.
fn validation_metrics(
    store: &ParamStore,
    cfg: &ModelConfig,
    flags: AblationFlags,
    graphs: &MedicationGraphs,
    patients: &[crate::data::PatientRecord],
) -> Result<crate::metrics::MetricValues> {
    let preds: Vec<Vec<VisitPrediction>> = patients
        .par_iter()
        .map(|p| {
            (0..p.visits.len())
                .map(|t| predict_visit(store, cfg, flags, graphs, &p.visits, t, true))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_patients(&preds, &graphs.a_ddi, graphs.n_med()))
}

/// Train a model on the bundle's train split, validating each epoch on the
/// validation split with greedy decoding and keeping the best-Jaccard
/// parameters. Deterministic for a fixed seed.
pub fn train(
    bundle: &DatasetBundle,
    graphs: &MedicationGraphs,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    bundle.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    if graphs.n_med() != bundle.vocabs.n_med() {
        return Err(Error::ShapeMismatch {
            context: "medication graphs vs vocabulary",
            expected: bundle.vocabs.n_med().to_string(),
            got: graphs.n_med().to_string(),
        });
    }

    // Order each visit's medication list into the target sequence.
    let mut bundle = bundle.clone();
    order_medications(&mut bundle, tc.label_order);

    let dims = ModelDims::from_vocabs(&bundle.vocabs);
    let mut store = init_model_params(&tc.model, &dims, tc.seed);
    let mut adam = Adam::new(tc.lr, &store);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout = if tc.dropout > 0.0 {
        Some(Dropout {
            rate: tc.dropout,
            rng: ChaCha8Rng::seed_from_u64(tc.seed ^ 0x0d0d_0d0d),
        })
    } else {
        None
    };

    // Every (patient, visit) pair is one training example.
    let mut pairs: Vec<(usize, usize)> = bundle
        .train
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.visits.len()).map(move |t| (i, t)))
        .collect();

    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=tc.epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for (batch_idx, chunk) in pairs.chunks(tc.batch_size).enumerate() {
            let batch: Vec<(&[Visit], usize)> = chunk
                .iter()
                .map(|&(i, t)| (bundle.train[i].visits.as_slice(), t))
                .collect();
            let mut tape = Tape::new();
            let bp = bind_params(&mut tape, &store, true);
            let loss = batch_loss_on_tape(&mut tape, &bp, tc, graphs, &batch, dropout.as_mut())?;
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            let tokens: usize = chunk
                .iter()
                .map(|&(i, t)| bundle.train[i].visits[t].medications.len() + 1)
                .sum();
            epoch_loss += loss_value * tokens as f64;
            epoch_tokens += tokens;

            let grads = tape.backward(loss);
            let mut grad_arrays: Vec<Array2<f64>> = bp
                .bound()
                .map(|(_, v)| grads.get(v, tape.shape(v)))
                .collect();
            if let Some(clip) = tc.grad_clip {
                clip_global_norm(&mut grad_arrays, clip);
            }
            adam.step(&mut store, &grad_arrays);
            check_finite_params(&store, epoch, batch_idx)?;
        }

        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        let (val, has_val) = if bundle.validation.is_empty() {
            (
                crate::metrics::MetricValues {
                    jaccard: 0.0,
                    f1: 0.0,
                    prauc: 0.0,
                    ddi_rate: 0.0,
                    avg_drugs: 0.0,
                },
                false,
            )
        } else {
            (
                validation_metrics(&store, &tc.model, tc.ablation, graphs, &bundle.validation)?,
                true,
            )
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_jaccard: val.jaccard,
            val_f1: val.f1,
            val_prauc: val.prauc,
            val_ddi: val.ddi_rate,
            avg_drugs: val.avg_drugs,
        });

        // Without a validation split, the final parameters win; with one,
        // strictly better Jaccard replaces the incumbent.
        let replace = match &best {
            None => true,
            Some((best_j, _, _)) => {
                if has_val {
                    val.jaccard > *best_j
                } else {
                    true
                }
            }
        };
        if replace {
            best = Some((val.jaccard, epoch, store.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        final_params: store,
        log,
    })
}

/// Write the per-epoch metric log as CSV.
pub fn write_metric_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_loss",
        "val_jaccard",
        "val_f1",
        "val_prauc",
        "val_ddi",
        "avg_drugs",
    ])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_jaccard.to_string(),
            e.val_f1.to_string(),
            e.val_prauc.to_string(),
            e.val_ddi.to_string(),
            e.avg_drugs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ==== tests ====
