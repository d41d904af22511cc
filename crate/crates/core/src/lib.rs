//! Toolkit for building few-shot-aware instruction datasets for machine
//! translation finetuning and for evaluating the resulting systems.
//!
//! The pipeline runs in stages: [`corpus`] filters scored parallel data and
//! samples per-pair pools, [`dataset`] renders prompts with [`templates`]
//! and [`fewshot`] draws, [`generation`] drives a completions endpoint,
//! [`metrics`] scores hypotheses and [`analysis`] produces the diagnostic
//! tables.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod fewshot;
pub mod generation;
pub mod io;
pub mod lang;
pub mod metrics;
pub mod mock;
pub mod rng;
pub mod templates;
