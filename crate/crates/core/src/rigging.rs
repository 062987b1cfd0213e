//! Comparative test for voter rigging in small units.
//!
//! For every election and size threshold `p`, units are split into those with
//! fewer electors than the `p`-th percentile (small) and the rest (large). The
//! distance between the median Z-score centers of the two groups is compared
//! across elections with the modified Thompson Tau test; elections that are
//! rarely flagged form the reference set, and every election's distance is
//! standardized against it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sef::ZScorePair;
use crate::stats::{mean, median_in_place, sample_std, student_t_quantile};

/// Both groups of a split need at least this many units.
pub const MIN_GROUP_SIZE: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum RiggingError {
    #[error("empty input")]
    EmptyInput,
    #[error("percentile must lie in (0, 100), got {0}")]
    InvalidPercentile(f64),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("outlier test needs at least 3 observations, got {0}")]
    TooFewObservations(usize),
    #[error("the comparative test needs at least 3 elections, got {0}")]
    TooFewElections(usize),
    #[error("distance curves use different percentile grids")]
    GridMismatch,
    #[error("invalid percentile grid: {0}")]
    InvalidGrid(String),
    #[error("no election qualifies for the reference set; there is no trusted baseline")]
    EmptyReferenceSet,
    #[error("reference distances have zero spread")]
    ZeroReferenceSpread,
    #[error("standardization needs at least 2 reference values, got {0}")]
    ReferenceTooSmall(usize),
}

impl RiggingError {
    pub fn code(&self) -> &'static str {
        match self {
            RiggingError::EmptyInput => "EMPTY_INPUT",
            RiggingError::InvalidPercentile(_) => "INVALID_PERCENTILE",
            RiggingError::InvalidAlpha(_) => "INVALID_ALPHA",
            RiggingError::TooFewObservations(_) => "TOO_FEW_OBSERVATIONS",
            RiggingError::TooFewElections(_) => "TOO_FEW_ELECTIONS",
            RiggingError::GridMismatch => "GRID_MISMATCH",
            RiggingError::InvalidGrid(_) => "INVALID_P_GRID",
            RiggingError::EmptyReferenceSet => "EMPTY_REFERENCE_SET",
            RiggingError::ZeroReferenceSpread => "ZERO_REFERENCE_SPREAD",
            RiggingError::ReferenceTooSmall(_) => "REFERENCE_TOO_SMALL",
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), RiggingError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(RiggingError::InvalidAlpha(alpha))
    }
}

/// `0.5, 1.0, ..., 90.0`
pub fn default_p_grid() -> Vec<f64> {
    p_grid(0.5, 0.5, 90.0).expect("default grid is valid")
}

/// Inclusive arithmetic grid; every value must lie in (0, 100).
pub fn p_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>, RiggingError> {
    if !(step > 0.0) || !(start > 0.0) || !(end < 100.0) || start > end {
        return Err(RiggingError::InvalidGrid(format!("{start}:{step}:{end}")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Parses `start:step:end`.
pub fn parse_p_grid(spec: &str) -> Result<Vec<f64>, RiggingError> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| RiggingError::InvalidGrid(spec.to_string()))?;
    match parts.as_slice() {
        &[start, step, end] => p_grid(start, step, end),
        _ => Err(RiggingError::InvalidGrid(spec.to_string())),
    }
}

/// Nearest-rank percentile of ascending `sorted`: the element at 1-based rank
/// `ceil(p / 100 * len)`.
pub fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    let exact = p / 100.0 * sorted.len() as f64;
    let rounded = exact.round();
    let rank = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    let rank = (rank as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Units split at the elector-count threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeSplit<'a> {
    pub p: f64,
    pub threshold: u64,
    pub small: Vec<&'a ZScorePair>,
    pub large: Vec<&'a ZScorePair>,
}

impl SizeSplit<'_> {
    pub fn is_valid(&self) -> bool {
        self.small.len() >= MIN_GROUP_SIZE && self.large.len() >= MIN_GROUP_SIZE
    }
}

/// Small units have strictly fewer electors than the nearest-rank `p`-th
/// percentile; large units are the rest. Check [`SizeSplit::is_valid`] before
/// using the split.
pub fn split_by_percentile(z: &[ZScorePair], p: f64) -> Result<SizeSplit<'_>, RiggingError> {
    if z.is_empty() {
        return Err(RiggingError::EmptyInput);
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(RiggingError::InvalidPercentile(p));
    }
    let mut sizes: Vec<u64> = z.iter().map(|u| u.electors).collect();
    sizes.sort_unstable();
    let threshold = nearest_rank(&sizes, p);
    let (small, large) = z.iter().partition(|u| u.electors < threshold);
    Ok(SizeSplit {
        p,
        threshold,
        small,
        large,
    })
}

/// Component-wise median of `(z_t, z_vw)`.
pub fn median_center<'a>(z: impl IntoIterator<Item = &'a ZScorePair>) -> Result<(f64, f64), RiggingError> {
    let (mut t, mut vw): (Vec<f64>, Vec<f64>) = z.into_iter().map(|p| (p.z_t, p.z_vw)).unzip();
    match (median_in_place(&mut t), median_in_place(&mut vw)) {
        (Some(mt), Some(mvw)) => Ok((mt, mvw)),
        _ => Err(RiggingError::EmptyInput),
    }
}

/// Euclidean distance between two centers.
pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCenters {
    pub m_t_small: f64,
    pub m_vw_small: f64,
    pub m_t_large: f64,
    pub m_vw_large: f64,
    #[serde(rename = "D")]
    pub distance: f64,
}

impl SplitCenters {
    pub fn new(small: (f64, f64), large: (f64, f64)) -> Self {
        SplitCenters {
            m_t_small: small.0,
            m_vw_small: small.1,
            m_t_large: large.0,
            m_vw_large: large.1,
            distance: distance(small, large),
        }
    }

    /// `None` for an invalid split.
    pub fn from_split(split: &SizeSplit<'_>) -> Option<Self> {
        if !split.is_valid() {
            return None;
        }
        let s = median_center(split.small.iter().copied()).ok()?;
        let l = median_center(split.large.iter().copied()).ok()?;
        Some(Self::new(s, l))
    }

    /// Small-unit center lies strictly above and to the right of the
    /// large-unit center.
    pub fn upper_right(&self) -> bool {
        self.m_t_small > self.m_t_large && self.m_vw_small > self.m_vw_large
    }
}

/// `D(p)` of one election over a percentile grid; `None` where the split is
/// invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    pub election: String,
    pub p_grid: Vec<f64>,
    pub centers: Vec<Option<SplitCenters>>,
}

impl DistanceCurve {
    pub fn distance(&self, i: usize) -> Option<f64> {
        self.centers[i].map(|c| c.distance)
    }

    pub fn valid_count(&self) -> usize {
        self.centers.iter().filter(|c| c.is_some()).count()
    }
}

/// Sweeps the grid. Sorting once by electors turns every split into a prefix,
/// which keeps the sweep linear in the grid size; results are identical to
/// calling [`split_by_percentile`] and [`median_center`] per `p`.
pub fn distance_curve(election: &str, z: &[ZScorePair], grid: &[f64]) -> Result<DistanceCurve, RiggingError> {
    if let Some(&p) = grid.iter().find(|&&p| !(p > 0.0 && p < 100.0)) {
        return Err(RiggingError::InvalidPercentile(p));
    }
    let mut sorted: Vec<&ZScorePair> = z.iter().collect();
    sorted.sort_by_key(|u| u.electors);
    let sizes: Vec<u64> = sorted.iter().map(|u| u.electors).collect();

    let mut buf = Vec::with_capacity(z.len());
    let mut med = |group: &[&ZScorePair], pick: fn(&ZScorePair) -> f64| {
        buf.clear();
        buf.extend(group.iter().map(|u| pick(u)));
        median_in_place(&mut buf).expect("group is non-empty")
    };

    let centers = grid
        .iter()
        .map(|&p| {
            if sizes.is_empty() {
                return None;
            }
            let threshold = nearest_rank(&sizes, p);
            let k = sizes.partition_point(|&n| n < threshold);
            let (small, large) = sorted.split_at(k);
            if small.len() < MIN_GROUP_SIZE || large.len() < MIN_GROUP_SIZE {
                return None;
            }
            let s = (med(small, |u| u.z_t), med(small, |u| u.z_vw));
            let l = (med(large, |u| u.z_t), med(large, |u| u.z_vw));
            Some(SplitCenters::new(s, l))
        })
        .collect();

    Ok(DistanceCurve {
        election: election.to_string(),
        p_grid: grid.to_vec(),
        centers,
    })
}

/// One round of the modified Thompson Tau test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStep {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Rejection threshold for this round.
    pub r: f64,
    pub max_delta: f64,
    /// Original index of the observation rejected in this round.
    pub removed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    /// Original indices, in removal order.
    pub outlier_indices: Vec<usize>,
    /// `r` of every round, including the final one that rejected nothing.
    pub thresholds: Vec<f64>,
    pub alpha: f64,
    pub steps: Vec<TauStep>,
}

impl TauResult {
    pub fn is_outlier(&self, i: usize) -> bool {
        self.outlier_indices.contains(&i)
    }

    pub fn final_step(&self) -> Option<&TauStep> {
        self.steps.last()
    }
}

/// `r = t (n-1) / sqrt(n (n - 2 + t^2))` with `t` the upper `alpha/2` quantile
/// of Student's t with `n - 2` degrees of freedom.
pub fn tau_threshold(n: usize, alpha: f64) -> f64 {
    assert!(n >= 3);
    let nf = n as f64;
    let t = student_t_quantile(1.0 - alpha / 2.0, nf - 2.0);
    t * (nf - 1.0) / (nf * (nf - 2.0 + t * t)).sqrt()
}

/// Modified Thompson Tau test: repeatedly reject the single observation with
/// the largest `|x - mean| / std` while it exceeds `r`, recomputing on the
/// survivors. Stops below 3 survivors. Zero spread means no outliers.
pub fn thompson_tau(x: &[f64], alpha: f64) -> Result<TauResult, RiggingError> {
    check_alpha(alpha)?;
    if x.len() < 3 {
        return Err(RiggingError::TooFewObservations(x.len()));
    }
    let mut alive: Vec<usize> = (0..x.len()).collect();
    let mut result = TauResult {
        outlier_indices: Vec::new(),
        thresholds: Vec::new(),
        alpha,
        steps: Vec::new(),
    };
    let mut values = Vec::with_capacity(x.len());
    while alive.len() >= 3 {
        values.clear();
        values.extend(alive.iter().map(|&i| x[i]));
        let m = mean(&values).expect("non-empty");
        let s = sample_std(&values).expect("at least 3 values");
        let r = tau_threshold(alive.len(), alpha);
        result.thresholds.push(r);

        let (pos, max_delta) = if s > 0.0 {
            values
                .iter()
                .map(|v| (v - m).abs() / s)
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (k, d)| if d > best.1 { (k, d) } else { best },
                )
        } else {
            (0, 0.0)
        };

        let removed = (max_delta > r).then(|| alive[pos]);
        result.steps.push(TauStep {
            n: alive.len(),
            mean: m,
            std: s,
            r,
            max_delta,
            removed,
        });
        match removed {
            Some(idx) => {
                result.outlier_indices.push(idx);
                alive.remove(pos);
            }
            None => break,
        }
    }
    Ok(result)
}

/// `(d - mean(reference)) / std(reference)`.
pub fn delta(d: f64, reference: &[f64]) -> Result<f64, RiggingError> {
    if reference.len() < 2 {
        return Err(RiggingError::ReferenceTooSmall(reference.len()));
    }
    let m = mean(reference).expect("non-empty");
    let s = sample_std(reference).expect("at least 2 values");
    if !(s > 0.0) {
        return Err(RiggingError::ZeroReferenceSpread);
    }
    Ok((d - m) / s)
}

/// Tau run across elections at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossElectionTau {
    pub p: f64,
    /// Indices (into the curve list) of elections with a valid split here.
    pub participants: Vec<usize>,
    /// Indices of elections rejected as outliers.
    pub flagged: Vec<usize>,
    /// `None` when fewer than 3 elections participate.
    pub tau: Option<TauResult>,
}

impl CrossElectionTau {
    /// Largest distance the final Tau round would still accept.
    pub fn accepted_distance(&self) -> Option<f64> {
        let step = self.tau.as_ref()?.final_step()?;
        if step.removed.is_some() {
            return None;
        }
        Some(step.mean + step.r * step.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub alpha: f64,
    /// Indices into the curve list, ascending.
    pub members: Vec<usize>,
    pub names: Vec<String>,
    pub valid_counts: Vec<usize>,
    pub outlier_counts: Vec<usize>,
    pub per_p: Vec<CrossElectionTau>,
}

impl ReferenceSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.members.binary_search(&idx).is_ok()
    }
}

fn check_grids(curves: &[DistanceCurve]) -> Result<&[f64], RiggingError> {
    let grid = &curves.first().ok_or(RiggingError::TooFewElections(0))?.p_grid;
    if curves
        .iter()
        .any(|c| &c.p_grid != grid || c.centers.len() != grid.len())
    {
        return Err(RiggingError::GridMismatch);
    }
    Ok(grid)
}

/// Non-outlier at no less than `(1 - alpha)` of `valid` grid points.
pub fn qualifies_for_reference(valid: usize, flagged: usize, alpha: f64) -> bool {
    valid > 0 && flagged <= valid && (valid - flagged) as f64 >= (1.0 - alpha) * valid as f64 - 1e-9
}

/// An election joins the reference set when it is not flagged at no less than
/// `(1 - alpha)` of the grid points where its split is valid.
pub fn build_reference_set(curves: &[DistanceCurve], alpha: f64) -> Result<ReferenceSet, RiggingError> {
    check_alpha(alpha)?;
    if curves.len() < 3 {
        return Err(RiggingError::TooFewElections(curves.len()));
    }
    let grid = check_grids(curves)?;

    let mut per_p = Vec::with_capacity(grid.len());
    for (i, &p) in grid.iter().enumerate() {
        let participants: Vec<usize> = (0..curves.len()).filter(|&k| curves[k].centers[i].is_some()).collect();
        let (tau, flagged) = if participants.len() >= 3 {
            let ds: Vec<f64> = participants.iter().map(|&k| curves[k].distance(i).unwrap()).collect();
            let tau = thompson_tau(&ds, alpha)?;
            let mut flagged: Vec<usize> = tau.outlier_indices.iter().map(|&j| participants[j]).collect();
            flagged.sort_unstable();
            (Some(tau), flagged)
        } else {
            (None, Vec::new())
        };
        per_p.push(CrossElectionTau {
            p,
            participants,
            flagged,
            tau,
        });
    }

    let valid_counts: Vec<usize> = curves.iter().map(DistanceCurve::valid_count).collect();
    let mut outlier_counts = vec![0; curves.len()];
    for run in &per_p {
        for &k in &run.flagged {
            outlier_counts[k] += 1;
        }
    }
    let members: Vec<usize> = (0..curves.len())
        .filter(|&k| qualifies_for_reference(valid_counts[k], outlier_counts[k], alpha))
        .collect();
    if members.is_empty() {
        return Err(RiggingError::EmptyReferenceSet);
    }
    Ok(ReferenceSet {
        alpha,
        names: members.iter().map(|&k| curves[k].election.clone()).collect(),
        members,
        valid_counts,
        outlier_counts,
        per_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ConsistentWithRigging,
    NoAnomaly,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPResult {
    pub p: f64,
    #[serde(rename = "D")]
    pub distance: Option<f64>,
    pub delta: Option<f64>,
    /// Accepted-region boundary at this `p`, in delta units.
    pub tau_threshold: Option<f64>,
    pub is_outlier: bool,
    pub upper_right: Option<bool>,
    pub centers: Option<SplitCenters>,
    /// Set when the election is itself part of the reference statistics.
    pub self_referential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub election: String,
    pub in_reference_set: bool,
    pub verdict: Verdict,
    pub valid_p: usize,
    pub outlier_p: usize,
    pub rigging_p: usize,
    pub per_p: Vec<PerPResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub alpha: f64,
    pub p_grid: Vec<f64>,
    pub reference_set: Vec<String>,
    /// Tau acceptance boundary per `p`, in delta units.
    pub accepted_region_boundary: Vec<Option<f64>>,
    /// Fixed comparison line at three reference standard deviations.
    pub three_sigma_line: f64,
    pub reports: Vec<TestReport>,
}

impl EnsembleReport {
    pub fn report(&self, election: &str) -> Option<&TestReport> {
        self.reports.iter().find(|r| r.election == election)
    }

    pub fn rigging_verdicts(&self) -> impl Iterator<Item = &TestReport> {
        self.reports
            .iter()
            .filter(|r| r.verdict == Verdict::ConsistentWithRigging)
    }
}

/// Standardizes every curve against the reference set and assigns verdicts.
///
/// An election outside the reference set is consistent with rigging when, at a
/// strict majority of its valid grid points, it is a Tau outlier and its
/// small-unit center lies upper right of its large-unit center. An outlier
/// majority without that direction is indeterminate. Reference members are
/// never given a rigging verdict.
pub fn classify(curves: &[DistanceCurve], reference: &ReferenceSet) -> Result<EnsembleReport, RiggingError> {
    let grid = check_grids(curves)?;
    if reference.per_p.len() != grid.len() {
        return Err(RiggingError::GridMismatch);
    }

    // Reference mean/std at each p, where every member has a valid split.
    let ref_stats: Vec<Option<(f64, f64)>> = (0..grid.len())
        .map(|i| {
            let ds: Option<Vec<f64>> = reference.members.iter().map(|&k| curves[k].distance(i)).collect();
            let ds = ds?;
            let m = mean(&ds)?;
            let s = sample_std(&ds)?;
            (s > 0.0).then_some((m, s))
        })
        .collect();

    let boundary: Vec<Option<f64>> = reference
        .per_p
        .iter()
        .zip(&ref_stats)
        .map(|(run, stats)| {
            let (m, s) = (*stats)?;
            Some((run.accepted_distance()? - m) / s)
        })
        .collect();

    let mut reports = Vec::with_capacity(curves.len());
    for (k, curve) in curves.iter().enumerate() {
        let in_ref = reference.contains(k);
        let mut per_p = Vec::with_capacity(grid.len());
        let (mut valid, mut outlier, mut rigging) = (0, 0, 0);
        for (i, &p) in grid.iter().enumerate() {
            let centers = curve.centers[i];
            let is_outlier = reference.per_p[i].flagged.binary_search(&k).is_ok();
            let upper_right = centers.map(|c| c.upper_right());
            let delta = match (centers, ref_stats[i]) {
                (Some(c), Some((m, s))) => Some((c.distance - m) / s),
                _ => None,
            };
            if centers.is_some() {
                valid += 1;
                outlier += is_outlier as usize;
                rigging += (is_outlier && upper_right == Some(true)) as usize;
            }
            per_p.push(PerPResult {
                p,
                distance: centers.map(|c| c.distance),
                delta,
                tau_threshold: boundary[i],
                is_outlier,
                upper_right,
                centers,
                self_referential: in_ref,
            });
        }
        let verdict = if in_ref {
            Verdict::NoAnomaly
        } else if valid > 0 && 2 * rigging > valid {
            Verdict::ConsistentWithRigging
        } else if valid == 0 || 2 * outlier > valid {
            Verdict::Indeterminate
        } else {
            Verdict::NoAnomaly
        };
        reports.push(TestReport {
            election: curve.election.clone(),
            in_reference_set: in_ref,
            verdict,
            valid_p: valid,
            outlier_p: outlier,
            rigging_p: rigging,
            per_p,
        });
    }

    Ok(EnsembleReport {
        alpha: reference.alpha,
        p_grid: grid.to_vec(),
        reference_set: reference.names.clone(),
        accepted_region_boundary: boundary,
        three_sigma_line: 3.0,
        reports,
    })
}

/// Reference set, standardization and verdicts in one call.
pub fn run_comparative_test(curves: &[DistanceCurve], alpha: f64) -> Result<EnsembleReport, RiggingError> {
    let reference = build_reference_set(curves, alpha)?;
    classify(curves, &reference)
}
