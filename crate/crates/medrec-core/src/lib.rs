//! Core library for medication recommendation over longitudinal EHR data.
//!
//! The pipeline: set encoders summarize each visit's diagnoses and
//! procedures ([`encoders`]), two graph convolutions embed medication
//! co-occurrence and interaction structure ([`graph`]), and an
//! autoregressive decoder emits one medication at a time, choosing between
//! generating from the full vocabulary and copying from the patient's
//! earlier prescriptions ([`decoder`], [`infer`]). Training differentiates
//! the exact sequence likelihood with a tape-based reverse pass
//! ([`autodiff`], [`train`]); evaluation bootstraps the standard set
//! metrics over a test split ([`metrics`], [`eval`]).

pub mod autodiff;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod infer;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod train;

pub use config::{AblationFlags, ModelConfig, ModelDims, TrainConfig};
pub use data::{DatasetBundle, OrderHeuristic, PatientRecord, Visit, Vocabularies};
pub use error::{Error, Result};
pub use graph::MedicationGraphs;
pub use metrics::VisitPrediction;
pub use params::ParamStore;
