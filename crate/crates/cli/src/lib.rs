//! Command-line front end of `popmaxent`: panel ingestion, fits, Gamma
//! scaling, confidence bands, growth dynamics, q comparison and simulation.
//!
//! Every command writes JSON reports and CSV tables under `--out-dir`. Output
//! depends only on the input files, flags and seeds.

pub mod commands;
pub mod dataset;
pub mod error;

pub use commands::*;
pub use dataset::{ingest, parse_panel, sha256_hex, write_panel, Dataset, FormatOptions, Provenance};
pub use error::*;
