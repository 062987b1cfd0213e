//! Standardized election fingerprints and a comparative statistical test for
//! voter rigging in small electoral units.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`] reads per-unit counts and applies the inclusion criteria.
//! 2. [`sef`] turns turnout and winner share into Z-scores relative to each
//!    unit's neighborhood, bins and smooths them, and removes elliptical
//!    outliers.
//! 3. [`rigging`] compares small and large units of every election and
//!    standardizes that comparison against a reference set of elections.
//! 4. [`diagnostics`] provides the cumulative winner-share curve and a
//!    synthetic election generator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod ingest;
pub mod pipeline;
pub mod rigging;
pub mod sef;
pub mod stats;

pub use diagnostics::{cumulative_winner_share, generate_synthetic, CumulativeCurve, RiggingSpec, SynthSpec};
pub use ingest::{load_election, summarize, Election, ElectionSummary, ElectoralUnit, RawRecord};
pub use pipeline::{run_ensemble, TestConfig};
pub use rigging::{DistanceCurve, EnsembleReport, SplitCenters, TauResult, TestReport, Verdict};
pub use sef::{compute_zscores, SefHistogram, ZScorePair};

use thiserror::Error;

/// Any failure of the library, with a stable code per variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Sef(#[from] sef::SefError),
    #[error(transparent)]
    Rigging(#[from] rigging::RiggingError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Ingest(e) => e.code(),
            Error::Sef(e) => e.code(),
            Error::Rigging(e) => e.code(),
            Error::Diagnostics(e) => e.code(),
        }
    }
}
