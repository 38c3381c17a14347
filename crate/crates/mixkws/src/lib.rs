//! Keyword-spotting toolkit comparing three training strategies — clean
//! training, mixup, and mix-training on superposed speech — under a
//! pre-train/fine-tune few-shot protocol, with mixed-speech test
//! construction and EER / top-k evaluation.

pub mod config;
pub mod corpus;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod fewshot;
pub mod model;
pub mod seeds;
pub mod signal;
pub mod strategy;

pub use error::{Error, Result};
