//! DECT: an LLM-assisted pipeline for detecting Alzheimer's disease from
//! patient–interviewer dialogue transcripts.
//!
//! The pipeline distills cognitive-linguistic atoms and linguistic markers
//! from each dialogue through a pluggable LLM gateway, generates
//! label-switched/label-preserved (LSLP) synthetic transcripts, fuses atom and
//! marker embeddings into an Atom-Marker Representation, and trains a
//! two-loss classifier over it. Experiment harnesses reproduce ablation and
//! generation-strategy grids with multi-seed aggregation.

pub mod augmentation;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoding;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod pipeline;
pub mod planted;
pub mod projection;
pub mod training;
