//! Benchmark framework for LLM-assisted anomaly detection on text.
//!
//! The crate covers three pipelines over labeled text corpora with a single
//! anomaly category:
//!
//! - zero-shot detection: prompt a chat model per test sample and rank by the
//!   verbal anomaly score it returns ([`zeroshot`]);
//! - data augmentation: multi-round keyword-conditioned synthetic sample
//!   generation and category-description enrichment ([`augment`]);
//! - unsupervised model selection: ask a reasoning model to pick a two-step
//!   detector from candidate abstracts and score the pick against a bundled
//!   results table ([`modelsel`]).
//!
//! Classical two-step baselines (ECOD, Isolation Forest, LOF, autoencoder)
//! run locally over embedding matrices ([`detectors`]), with AUROC/AUPRC
//! evaluation in [`eval`]. All LLM traffic goes through the provider
//! abstraction in [`llm`], which supports deterministic record/replay.

pub mod augment;
pub mod corpus;
pub mod detectors;
pub mod embed;
pub mod eval;
pub mod jsonx;
pub mod llm;
pub mod modelsel;
pub mod zeroshot;
