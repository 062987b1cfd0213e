//! Standardized election fingerprints: per-unit Z-scores of turnout and
//! winner share relative to the unit's neighborhood, the 2D histogram of those
//! scores, its box-filter smoothing, and elliptical outlier removal.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Election;
use crate::stats::chi_square_2dof_quantile;

#[derive(Debug, Error, PartialEq)]
pub enum SefError {
    #[error("confidence must lie in (0, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("need at least 3 points to fit a covariance ellipse, got {0}")]
    TooFewPoints(usize),
    #[error("sample covariance is singular (det = {det:e}); points are collinear")]
    SingularCovariance { det: f64 },
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("grid {rows}x{cols} is smaller than the 10x10 smoothing kernel")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("z-score file: {0}")]
    Malformed(String),
}

impl SefError {
    pub fn code(&self) -> &'static str {
        match self {
            SefError::InvalidConfidence(_) => "INVALID_CONFIDENCE",
            SefError::TooFewPoints(_) => "TOO_FEW_POINTS",
            SefError::SingularCovariance { .. } => "SINGULAR_COVARIANCE",
            SefError::InvalidBinning(_) => "INVALID_BINNING",
            SefError::GridTooSmall { .. } => "GRID_TOO_SMALL",
            SefError::Malformed(_) => "ZSCORES_MALFORMED",
        }
    }
}

/// Standardized turnout and winner share of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScorePair {
    pub unit_id: String,
    pub z_t: f64,
    pub z_vw: f64,
    pub electors: u64,
}

/// Inclusive mean and sample standard deviation of one neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub neighborhood_id: String,
    pub mu_t: f64,
    pub sigma_t: f64,
    pub mu_vw: f64,
    pub sigma_vw: f64,
    pub member_count: usize,
}

pub fn neighborhood_stats(e: &Election) -> Vec<NeighborhoodStats> {
    use crate::stats::{mean, sample_std};
    e.neighborhoods
        .iter()
        .map(|(id, members)| {
            let t: Vec<f64> = members.iter().map(|&i| e.units[i].turnout_pct).collect();
            let vw: Vec<f64> = members.iter().map(|&i| e.units[i].winner_pct).collect();
            NeighborhoodStats {
                neighborhood_id: id.clone(),
                mu_t: mean(&t).unwrap_or(f64::NAN),
                sigma_t: sample_std(&t).unwrap_or(0.0),
                mu_vw: mean(&vw).unwrap_or(f64::NAN),
                sigma_vw: sample_std(&vw).unwrap_or(0.0),
                member_count: members.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZScoreOptions {
    /// Exclude the unit itself from its neighborhood's mean and deviation.
    pub leave_one_out: bool,
}

impl Default for ZScoreOptions {
    fn default() -> Self {
        ZScoreOptions { leave_one_out: true }
    }
}

/// A unit whose stratum had zero spread in at least one coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateUnit {
    pub unit_id: String,
    pub neighborhood_id: String,
    pub turnout: bool,
    pub winner_share: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ZScores {
    pub pairs: Vec<ZScorePair>,
    pub skipped: Vec<DegenerateUnit>,
}

/// Stratified normalization of turnout and winner share.
///
/// Output follows the order of `e.units`. Units whose stratum has no spread
/// (or too few other members to estimate one) land in `skipped`.
pub fn compute_zscores(e: &Election, opts: ZScoreOptions) -> ZScores {
    let mut scores: Vec<Option<(Option<f64>, Option<f64>)>> = vec![None; e.units.len()];
    for members in e.neighborhoods.values() {
        let t: Vec<f64> = members.iter().map(|&i| e.units[i].turnout_pct).collect();
        let vw: Vec<f64> = members.iter().map(|&i| e.units[i].winner_pct).collect();
        let zt = stratum_scores(&t, opts.leave_one_out);
        let zvw = stratum_scores(&vw, opts.leave_one_out);
        for (k, &i) in members.iter().enumerate() {
            scores[i] = Some((zt[k], zvw[k]));
        }
    }

    let mut out = ZScores::default();
    for (unit, score) in e.units.iter().zip(scores) {
        match score {
            Some((Some(z_t), Some(z_vw))) => out.pairs.push(ZScorePair {
                unit_id: unit.unit_id.clone(),
                z_t,
                z_vw,
                electors: unit.electors,
            }),
            Some((zt, zvw)) => out.skipped.push(DegenerateUnit {
                unit_id: unit.unit_id.clone(),
                neighborhood_id: unit.neighborhood_id.clone(),
                turnout: zt.is_none(),
                winner_share: zvw.is_none(),
            }),
            None => unreachable!("every unit belongs to a neighborhood"),
        }
    }
    out
}

fn stratum_scores(xs: &[f64], leave_one_out: bool) -> Vec<Option<f64>> {
    let m = xs.len();
    let min_members = if leave_one_out { 3 } else { 2 };
    if m < min_members {
        return vec![None; m];
    }
    let mf = m as f64;
    let mean = xs.iter().sum::<f64>() / mf;
    let dev: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let scale = xs.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let tol = 1e-12 * scale;

    if !leave_one_out {
        let sd = (ss / (mf - 1.0)).sqrt();
        if sd <= tol {
            return vec![None; m];
        }
        return dev.iter().map(|d| Some(d / sd)).collect();
    }

    (0..m)
        .map(|i| {
            let d = dev[i];
            let mut ss_rest = ss - d * d * mf / (mf - 1.0);
            if ss_rest < 1e-6 * ss {
                // Cancellation: recompute the rest directly.
                let rest_mean = (xs.iter().sum::<f64>() - xs[i]) / (mf - 1.0);
                ss_rest = xs
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, x)| (x - rest_mean) * (x - rest_mean))
                    .sum();
            }
            let sd = (ss_rest.max(0.0) / (mf - 2.0)).sqrt();
            if sd <= tol {
                return None;
            }
            // x_i minus the mean of the others equals d * m / (m - 1)
            Some(d * mf / (mf - 1.0) / sd)
        })
        .collect()
}

/// Confidence ellipse of a bivariate Gaussian fitted by sample mean and
/// sample covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEllipse {
    pub center: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    /// Squared Mahalanobis radius: the chi-square (2 d.o.f.) quantile.
    pub threshold: f64,
}

impl ConfidenceEllipse {
    pub fn new(center: [f64; 2], covariance: [[f64; 2]; 2], confidence: f64) -> Result<Self, SefError> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(SefError::InvalidConfidence(confidence));
        }
        let [[a, b], [_, d]] = covariance;
        let det = a * d - b * b;
        if !(a > 0.0 && d > 0.0) || det <= 1e-12 * a * d {
            return Err(SefError::SingularCovariance { det });
        }
        Ok(ConfidenceEllipse {
            center,
            covariance,
            threshold: chi_square_2dof_quantile(confidence),
        })
    }

    pub fn fit(points: &[ZScorePair], confidence: f64) -> Result<Self, SefError> {
        if points.len() < 3 {
            return Err(SefError::TooFewPoints(points.len()));
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.z_t).sum::<f64>() / n;
        let my = points.iter().map(|p| p.z_vw).sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let dx = p.z_t - mx;
            let dy = p.z_vw - my;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let cov = [[sxx / (n - 1.0), sxy / (n - 1.0)], [sxy / (n - 1.0), syy / (n - 1.0)]];
        Self::new([mx, my], cov, confidence)
    }

    pub fn mahalanobis_sq(&self, x: f64, y: f64) -> f64 {
        let [[a, b], [_, d]] = self.covariance;
        let det = a * d - b * b;
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.mahalanobis_sq(x, y) <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseSplit {
    pub kept: Vec<ZScorePair>,
    pub removed: Vec<ZScorePair>,
    pub ellipse: ConfidenceEllipse,
}

/// Drops the points outside the `confidence` ellipse of the cloud. Order is
/// preserved within each partition.
pub fn remove_ellipse_outliers(z: &[ZScorePair], confidence: f64) -> Result<EllipseSplit, SefError> {
    let ellipse = ConfidenceEllipse::fit(z, confidence)?;
    let (kept, removed) = z.iter().cloned().partition(|p| ellipse.contains(p.z_t, p.z_vw));
    Ok(EllipseSplit { kept, removed, ellipse })
}

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_RANGE: (f64, f64) = (-5.0, 5.0);

/// Side length of the smoothing kernel.
pub const KERNEL_SIZE: usize = 10;
/// Every kernel entry.
pub const KERNEL_WEIGHT: f64 = 0.01;

/// 2D histogram of (z_t, z_vw). Rows follow z_vw, columns follow z_t, both
/// ascending; `counts` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SefHistogram {
    pub bins_x: usize,
    pub bins_y: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub counts: Vec<f64>,
    /// Pairs outside the range (or non-finite).
    pub overflow: usize,
    pub smoothing_passes: u32,
}

impl SefHistogram {
    pub fn zeros(bins: usize, range: (f64, f64)) -> Self {
        SefHistogram {
            bins_x: bins,
            bins_y: bins,
            x_range: range,
            y_range: range,
            counts: vec![0.0; bins * bins],
            overflow: 0,
            smoothing_passes: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.bins_x + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.counts[row * self.bins_x + col] = v;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.counts.iter().copied().fold(0.0, f64::max)
    }
}

fn bin_index(v: f64, (lo, hi): (f64, f64), bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let k = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    // The upper edge belongs to the last bin.
    Some(k.min(bins - 1))
}

/// Uniform binning of `[lo, hi]` on both axes.
pub fn sef_histogram(z: &[ZScorePair], bins: usize, range: (f64, f64)) -> Result<SefHistogram, SefError> {
    if bins < KERNEL_SIZE {
        return Err(SefError::InvalidBinning(format!(
            "need at least {KERNEL_SIZE} bins, got {bins}"
        )));
    }
    if !(range.0 < range.1) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(SefError::InvalidBinning(format!(
            "empty range [{}, {}]",
            range.0, range.1
        )));
    }
    let mut h = SefHistogram::zeros(bins, range);
    for p in z {
        match (bin_index(p.z_t, range, bins), bin_index(p.z_vw, range, bins)) {
            (Some(c), Some(r)) => h.counts[r * bins + c] += 1.0,
            _ => h.overflow += 1,
        }
    }
    Ok(h)
}

/// One zero-padded pass of the 10x10 box kernel. Output cell (r, c) sums the
/// input over rows `r-5..=r+4` and columns `c-5..=c+4`.
pub fn box_filter(h: &SefHistogram) -> Result<SefHistogram, SefError> {
    let (rows, cols) = (h.bins_y, h.bins_x);
    if rows < KERNEL_SIZE || cols < KERNEL_SIZE {
        return Err(SefError::GridTooSmall { rows, cols });
    }
    let lead = KERNEL_SIZE as isize / 2; // 5 cells before, 4 after
    let window = |center: usize, len: usize| {
        let start = (center as isize - lead).max(0) as usize;
        let end = ((center as isize - lead + KERNEL_SIZE as isize) as usize).min(len);
        start..end
    };

    let mut horizontal = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &h.counts[r * cols..(r + 1) * cols];
        for c in 0..cols {
            horizontal[r * cols + c] = row[window(c, cols)].iter().sum();
        }
    }
    let mut out = h.clone();
    for r in 0..rows {
        for c in 0..cols {
            let s: f64 = window(r, rows).map(|i| horizontal[i * cols + c]).sum();
            out.counts[r * cols + c] = KERNEL_WEIGHT * s;
        }
    }
    out.smoothing_passes += 1;
    Ok(out)
}

/// The two-pass box smoothing used for the contour view.
pub fn smooth_histogram(h: &SefHistogram) -> Result<SefHistogram, SefError> {
    box_filter(&box_filter(h)?)
}

/// Grid plus equally spaced density thresholds, ready for an external
/// contour renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub bins: [usize; 2],
    pub range: [[f64; 2]; 2],
    pub counts: Vec<f64>,
    pub overflow: usize,
    pub smoothing_passes: u32,
    pub levels: Vec<f64>,
    /// Set when the grid has no positive mass, so no contour exists.
    pub empty: bool,
}

/// `levels` thresholds at `max * k / (levels + 1)` for `k = 1..=levels`.
pub fn export_contour_grid(h: &SefHistogram, levels: usize) -> ContourGrid {
    let max = h.max();
    let thresholds = (1..=levels).map(|k| max * k as f64 / (levels + 1) as f64).collect();
    ContourGrid {
        bins: [h.bins_x, h.bins_y],
        range: [[h.x_range.0, h.x_range.1], [h.y_range.0, h.y_range.1]],
        counts: h.counts.clone(),
        overflow: h.overflow,
        smoothing_passes: h.smoothing_passes,
        levels: thresholds,
        empty: !(max > 0.0),
    }
}

/// Writes `unit_id,z_t,z_vw,electors`. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_zscores<W: Write>(writer: W, pairs: &[ZScorePair]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "z_t", "z_vw", "electors"])?;
    for p in pairs {
        w.write_record([
            p.unit_id.clone(),
            p.z_t.to_string(),
            p.z_vw.to_string(),
            p.electors.to_string(),
        ])?;
    }
    w.flush()
}

pub fn read_zscores<R: Read>(reader: R) -> Result<Vec<ZScorePair>, SefError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(|e: csv::Error| SefError::Malformed(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{InclusionCriteria, RawRecord};

    /// `(electors, ballots_cast, winner_votes)` per unit.
    type Counts = (u64, u64, u64);

    fn election(neighborhoods: &[(&str, &[Counts])]) -> Election {
        let mut recs = Vec::new();
        for (nb, units) in neighborhoods {
            for (k, &(n, cast, win)) in units.iter().enumerate() {
                recs.push(RawRecord {
                    unit_id: format!("{nb}-{k}"),
                    neighborhood_id: nb.to_string(),
                    electors: n,
                    ballots_cast: cast,
                    winner_votes: win,
                });
            }
        }
        Election::build("t", recs, &InclusionCriteria::permissive()).unwrap()
    }

    fn pair(x: f64, y: f64) -> ZScorePair {
        ZScorePair {
            unit_id: String::new(),
            z_t: x,
            z_vw: y,
            electors: 1,
        }
    }

    #[test]
    fn symmetric_neighbors_give_zero() {
        // turnouts 50, 40, 60; winner shares vary so vw is not degenerate
        let e = election(&[("a", &[(100, 50, 10), (100, 40, 30), (100, 60, 30)])]);
        let z = compute_zscores(&e, ZScoreOptions::default());
        assert_eq!(z.pairs[0].z_t, 0.0);
    }

    #[test]
    fn leave_one_out_hand_example() {
        let e = election(&[("a", &[(100, 66, 10), (100, 40, 30), (100, 50, 20)])]);
        let z = compute_zscores(&e, ZScoreOptions::default());
        // others {40, 50}: mean 45, sample std sqrt(50)
        assert!((z.pairs[0].z_t - 21.0 / 50f64.sqrt()).abs() < 1e-12);
        assert!((z.pairs[0].z_t - 2.9699).abs() < 1e-4);
    }

    #[test]
    fn identical_winner_share_is_degenerate() {
        let e = election(&[("a", &[(100, 50, 25), (100, 40, 20), (100, 60, 30), (100, 70, 35)])]);
        let z = compute_zscores(&e, ZScoreOptions { leave_one_out: false });
        assert!(z.pairs.is_empty());
        assert_eq!(z.skipped.len(), 4);
        assert!(z.skipped.iter().all(|d| d.winner_share && !d.turnout));
    }

    #[test]
    fn ellipse_removes_point_at_mahalanobis_three() {
        let ell = ConfidenceEllipse::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 0.95).unwrap();
        assert!((ell.threshold - 5.9915).abs() < 1e-4);
        assert_eq!(ell.mahalanobis_sq(3.0, 0.0), 9.0);
        assert!(!ell.contains(3.0, 0.0));
        assert!(ell.contains(0.0, 0.0));
    }

    #[test]
    fn fitted_cross_cloud_has_identity_covariance() {
        let a = 1.5f64.sqrt();
        let pts = [pair(a, 0.0), pair(-a, 0.0), pair(0.0, a), pair(0.0, -a)];
        let ell = ConfidenceEllipse::fit(&pts, 0.95).unwrap();
        assert!((ell.covariance[0][0] - 1.0).abs() < 1e-12);
        assert!((ell.covariance[1][1] - 1.0).abs() < 1e-12);
        assert_eq!(ell.covariance[0][1], 0.0);
    }

    #[test]
    fn collinear_cloud_is_singular() {
        let pts: Vec<_> = (0..10).map(|i| pair(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            remove_ellipse_outliers(&pts, 0.95),
            Err(SefError::SingularCovariance { .. })
        ));
        assert_eq!(remove_ellipse_outliers(&pts[..2], 0.95), Err(SefError::TooFewPoints(2)));
    }

    #[test]
    fn single_center_pair_lands_in_one_cell() {
        let h = sef_histogram(&[pair(0.0, 0.0)], 40, (-5.0, 5.0)).unwrap();
        assert_eq!(h.total(), 1.0);
        assert_eq!(h.get(20, 20), 1.0);
        let empty = sef_histogram(&[], 40, (-5.0, 5.0)).unwrap();
        assert_eq!(empty.total(), 0.0);
        assert_eq!(empty.overflow, 0);
    }

    #[test]
    fn out_of_range_goes_to_overflow() {
        let h = sef_histogram(&[pair(6.0, 0.0), pair(0.0, f64::NAN), pair(5.0, -5.0)], 10, (-5.0, 5.0)).unwrap();
        assert_eq!(h.overflow, 2);
        assert_eq!(h.get(0, 9), 1.0);
        assert!(sef_histogram(&[], 9, (-5.0, 5.0)).is_err());
        assert!(sef_histogram(&[], 10, (1.0, 1.0)).is_err());
    }

    #[test]
    fn one_pass_spreads_delta_over_anchored_block() {
        let mut h = SefHistogram::zeros(40, (-5.0, 5.0));
        h.set(20, 17, 1.0);
        let s = box_filter(&h).unwrap();
        for r in 0..40 {
            for c in 0..40 {
                let inside = (16..=25).contains(&r) && (13..=22).contains(&c);
                let expected = if inside { 0.01 } else { 0.0 };
                assert_eq!(s.get(r, c), expected, "cell ({r},{c})");
            }
        }
        let grid = export_contour_grid(&s, 4);
        assert_eq!(grid.levels, vec![0.002, 0.004, 0.006, 0.008]);
    }

    #[test]
    fn tiny_grid_rejected() {
        let mut h = SefHistogram::zeros(10, (-5.0, 5.0));
        h.bins_y = 9;
        h.counts.truncate(90);
        assert_eq!(box_filter(&h), Err(SefError::GridTooSmall { rows: 9, cols: 10 }));
    }

    #[test]
    fn contour_levels() {
        let zero = SefHistogram::zeros(10, (-5.0, 5.0));
        let g = export_contour_grid(&zero, 5);
        assert!(g.empty);
        assert_eq!(g.levels, vec![0.0; 5]);

        let mut h = SefHistogram::zeros(10, (-5.0, 5.0));
        h.set(3, 3, 1.0);
        let g = export_contour_grid(&h, 4);
        let expected = [0.2, 0.4, 0.6, 0.8];
        for (a, b) in g.levels.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!g.empty);
    }

    #[test]
    fn zscore_csv_round_trip() {
        let pairs = vec![
            ZScorePair {
                unit_id: "a".into(),
                z_t: 0.1 + 0.2,
                z_vw: -1.0 / 3.0,
                electors: 120,
            },
            ZScorePair {
                unit_id: "b".into(),
                z_t: 1e-300,
                z_vw: 7.0,
                electors: 5,
            },
        ];
        let mut buf = Vec::new();
        write_zscores(&mut buf, &pairs).unwrap();
        assert_eq!(read_zscores(buf.as_slice()).unwrap(), pairs);
    }
}
