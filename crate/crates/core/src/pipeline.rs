//! End-to-end wiring: Z-scores, elliptical outlier removal, distance curves,
//! and the cross-election test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Election;
use crate::rigging::{
    default_p_grid, distance_curve, run_comparative_test, DistanceCurve, EnsembleReport, DEFAULT_ALPHA,
};
use crate::sef::{compute_zscores, remove_ellipse_outliers, ZScoreOptions, ZScorePair, ZScores};
use crate::Error;

pub const DEFAULT_ELLIPSE_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Significance level of the Tau test and of reference-set membership.
    pub alpha: f64,
    pub leave_one_out: bool,
    /// `None` disables elliptical outlier removal.
    pub ellipse_confidence: Option<f64>,
    pub p_grid: Vec<f64>,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            alpha: DEFAULT_ALPHA,
            leave_one_out: true,
            ellipse_confidence: Some(DEFAULT_ELLIPSE_CONFIDENCE),
            p_grid: default_p_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectionAnalysis {
    pub zscores: ZScores,
    /// Pairs dropped by the ellipse step.
    pub removed: Vec<ZScorePair>,
    pub curve: DistanceCurve,
}

/// Ellipse removal over the whole cloud, then the distance curve.
pub fn curve_from_pairs(
    name: &str,
    pairs: &[ZScorePair],
    cfg: &TestConfig,
) -> Result<(DistanceCurve, Vec<ZScorePair>), Error> {
    let (kept, removed) = match cfg.ellipse_confidence {
        Some(conf) => {
            let split = remove_ellipse_outliers(pairs, conf)?;
            (split.kept, split.removed)
        }
        None => (pairs.to_vec(), Vec::new()),
    };
    let curve = distance_curve(name, &kept, &cfg.p_grid)?;
    Ok((curve, removed))
}

pub fn analyze_election(e: &Election, cfg: &TestConfig) -> Result<ElectionAnalysis, Error> {
    let zscores = compute_zscores(
        e,
        ZScoreOptions {
            leave_one_out: cfg.leave_one_out,
        },
    );
    let (curve, removed) = curve_from_pairs(&e.name, &zscores.pairs, cfg)?;
    Ok(ElectionAnalysis {
        zscores,
        removed,
        curve,
    })
}

/// Analyses elections in parallel; the report follows input order.
pub fn run_ensemble(elections: &[Election], cfg: &TestConfig) -> Result<EnsembleReport, Error> {
    let curves = elections
        .par_iter()
        .map(|e| analyze_election(e, cfg).map(|a| a.curve))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(run_comparative_test(&curves, cfg.alpha)?)
}
