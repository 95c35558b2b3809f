//! Core library for `forge`, a batch pipeline that prepares domain-adaptive
//! post-training data for language models.
//!
//! The pipeline stages, in the order a full run wires them together:
//!
//! 1. [`corpus`] — model-judged quality filtering of raw documents and
//!    exercise extraction from book-like material.
//! 2. [`mixer`] — weighted mixture construction and curriculum grouping of
//!    continued-pretraining (CPT) documents and instruction-tuning (IT) task
//!    records, with seed-deterministic downsampling.
//! 3. [`packer`] — chat-template rendering, instruction loss masking, and
//!    fixed-context sequence packing, plus training recipe emission.
//! 4. [`decontam`] — n-gram prefiltered, character-overlap-confirmed
//!    decontamination of training text against evaluation sets.
//! 5. [`prefsynth`] — preference-pair synthesis (final-answer pairs and
//!    step-correction pairs) from sampled trajectories judged by a
//!    generative reward model.
//! 6. [`harness`] — capability-tagged evaluation with pluggable metrics.
//!
//! [`gateway`] provides the single chokepoint through which every model call
//! flows (rate limiting, retries, audit logging, replay), and [`records`]
//! defines the data model shared by all stages.
//!
//! With the default `parallel` feature the hot loops fan out via rayon;
//! without it every stage runs sequentially with identical outputs.

pub mod corpus;
pub mod decontam;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod mixer;
pub mod packer;
pub mod prefsynth;
pub mod prompts;
pub mod records;
pub mod tokenizer;

pub use error::{Error, Result};
