//! Cumulative winner-share curve and the synthetic election generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Election, ElectoralUnit, InclusionCriteria, IngestError, RawRecord};
use crate::rigging::nearest_rank;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl DiagnosticsError {
    pub fn code(&self) -> &'static str {
        match self {
            DiagnosticsError::InvalidSpec(_) => "INVALID_SPEC",
            DiagnosticsError::Ingest(e) => e.code(),
        }
    }
}

/// Winner share accumulated over units ranked by electorate, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub ranks: Vec<usize>,
    pub electors: Vec<u64>,
    pub cum_vw: Vec<f64>,
}

impl CumulativeCurve {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "electors", "cum_vw"])?;
        for i in 0..self.len() {
            w.write_record([
                self.ranks[i].to_string(),
                self.electors[i].to_string(),
                self.cum_vw[i].to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Ties in electorate are broken by ascending unit id. The denominator is
/// ballots cast.
pub fn cumulative_winner_share(units: &[ElectoralUnit]) -> CumulativeCurve {
    let mut order: Vec<&ElectoralUnit> = units.iter().collect();
    order.sort_by(|a, b| b.electors.cmp(&a.electors).then_with(|| a.unit_id.cmp(&b.unit_id)));
    let (mut winners, mut cast) = (0u64, 0u64);
    let mut curve = CumulativeCurve {
        ranks: Vec::with_capacity(order.len()),
        electors: Vec::with_capacity(order.len()),
        cum_vw: Vec::with_capacity(order.len()),
    };
    for (i, u) in order.into_iter().enumerate() {
        winners += u.winner_votes;
        cast += u.ballots_cast;
        curve.ranks.push(i + 1);
        curve.electors.push(u.electors);
        curve.cum_vw.push(100.0 * winners as f64 / cast as f64);
    }
    curve
}

/// Log-normal electorate sizes, floored at `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// Mean of `ln(electors)`.
    pub log_mean: f64,
    /// Standard deviation of `ln(electors)`.
    pub log_sd: f64,
    pub min: u64,
}

/// Beta prior for a neighborhood's location, parametrized by mean and
/// concentration (`a = mean * c`, `b = (1 - mean) * c`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrior {
    pub mean: f64,
    pub concentration: f64,
}

/// Coerced turnout and winner vote in small units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiggingSpec {
    /// Units with fewer electors than this percentile are eligible.
    pub size_percentile_q: f64,
    /// Shift of the turnout propensity, in neighborhood standard deviations.
    pub shift_t: f64,
    /// Shift of the winner-share propensity, in neighborhood standard deviations.
    pub shift_vw: f64,
    /// Probability that an eligible unit is affected.
    pub fraction_affected: f64,
}

/// Hierarchical beta-binomial model of an election.
///
/// Each neighborhood draws a turnout and a winner-share location from its
/// prior. Each unit draws its own propensities from a beta distribution
/// centred on those locations with concentration `unit_concentration`, and
/// counts are binomial given the propensities.
///
/// Rigging shifts are measured in neighborhood standard deviations: the
/// model-implied standard deviation of the observed share across the
/// neighborhood's units, i.e. the spread that the Z-score normalization
/// divides by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub name: String,
    pub n_neighborhoods: usize,
    pub units_per_neighborhood: usize,
    pub electors: SizeDistribution,
    pub turnout: LocationPrior,
    pub winner_share: LocationPrior,
    pub unit_concentration: f64,
    pub rigging: Option<RiggingSpec>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synthetic".into(),
            n_neighborhoods: 120,
            units_per_neighborhood: 12,
            electors: SizeDistribution {
                log_mean: 500f64.ln(),
                log_sd: 0.5,
                min: 50,
            },
            turnout: LocationPrior {
                mean: 0.65,
                concentration: 40.0,
            },
            winner_share: LocationPrior {
                mean: 0.5,
                concentration: 30.0,
            },
            unit_concentration: 150.0,
            rigging: None,
            seed: 0,
        }
    }
}

impl RiggingSpec {
    /// Small units below the 10th percentile, both propensities shifted by
    /// 1.5 standard deviations, every eligible unit affected.
    pub fn standard() -> Self {
        RiggingSpec {
            size_percentile_q: 10.0,
            shift_t: 1.5,
            shift_vw: 1.5,
            fraction_affected: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        let bad = |msg: &str| Err(DiagnosticsError::InvalidSpec(msg.to_string()));
        if self.n_neighborhoods == 0 {
            return bad("n_neighborhoods must be positive");
        }
        if self.units_per_neighborhood < 10 {
            return bad("units_per_neighborhood must be at least 10");
        }
        if !self.electors.log_mean.is_finite() || !(self.electors.log_sd >= 0.0) || self.electors.min == 0 {
            return bad("electors: need finite log_mean, log_sd >= 0 and min >= 1");
        }
        for (label, prior) in [("turnout", &self.turnout), ("winner_share", &self.winner_share)] {
            if !(prior.mean > 0.0 && prior.mean < 1.0) || !(prior.concentration > 0.0) {
                return Err(DiagnosticsError::InvalidSpec(format!(
                    "{label}: mean must lie in (0, 1) and concentration must be positive"
                )));
            }
        }
        if !(self.unit_concentration > 0.0) || !self.unit_concentration.is_finite() {
            return bad("unit_concentration must be positive");
        }
        if let Some(r) = &self.rigging {
            if !(r.size_percentile_q > 0.0 && r.size_percentile_q < 100.0) {
                return bad("rigging.size_percentile_q must lie in (0, 100)");
            }
            if !(0.0..=1.0).contains(&r.fraction_affected) {
                return bad("rigging.fraction_affected must lie in [0, 1]");
            }
            if !r.shift_t.is_finite() || !r.shift_vw.is_finite() {
                return bad("rigging shifts must be finite");
            }
        }
        Ok(())
    }
}

// Independent generator streams per draw family, so that a unit's draws do
// not depend on how many values other units consumed.
const STREAM_NEIGHBORHOOD: u64 = 1 << 56;
const STREAM_SIZE: u64 = 2 << 56;
const STREAM_VOTES: u64 = 3 << 56;

fn stream(seed: u64, family: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family | index as u64);
    rng
}

const EDGE: f64 = 1e-6;

fn beta(mean: f64, concentration: f64) -> Beta<f64> {
    let m = mean.clamp(EDGE, 1.0 - EDGE);
    Beta::new(m * concentration, (1.0 - m) * concentration).expect("positive beta parameters")
}

/// Generates raw records without applying inclusion gates.
pub fn generate_records(spec: &SynthSpec) -> Result<Vec<RawRecord>, DiagnosticsError> {
    spec.validate()?;
    let per = spec.units_per_neighborhood;
    let total = spec.n_neighborhoods * per;

    let locations: Vec<(f64, f64)> = (0..spec.n_neighborhoods)
        .map(|h| {
            let mut rng = stream(spec.seed, STREAM_NEIGHBORHOOD, h);
            let t = beta(spec.turnout.mean, spec.turnout.concentration).sample(&mut rng);
            let w = beta(spec.winner_share.mean, spec.winner_share.concentration).sample(&mut rng);
            (t, w)
        })
        .collect();

    let sizes = LogNormal::new(spec.electors.log_mean, spec.electors.log_sd)
        .map_err(|e| DiagnosticsError::InvalidSpec(e.to_string()))?;
    let electors: Vec<u64> = (0..total)
        .map(|i| {
            let mut rng = stream(spec.seed, STREAM_SIZE, i);
            (sizes.sample(&mut rng).round() as u64).max(spec.electors.min)
        })
        .collect();

    let rig_threshold = spec.rigging.as_ref().map(|r| {
        let mut sorted = electors.clone();
        sorted.sort_unstable();
        nearest_rank(&sorted, r.size_percentile_q)
    });

    let k = spec.unit_concentration;
    // Beta-binomial variance of a share over n trials, averaged over the
    // neighborhood's units.
    let spread = |loc: f64, h: usize| {
        let sizes = &electors[h * per..(h + 1) * per];
        let var: f64 = sizes
            .iter()
            .map(|&n| {
                let n = n as f64;
                loc * (1.0 - loc) / n * (n + k) / (k + 1.0)
            })
            .sum::<f64>()
            / per as f64;
        var.sqrt()
    };
    let mut records = Vec::with_capacity(total);
    for (i, &n) in electors.iter().enumerate() {
        let h = i / per;
        let (loc_t, loc_w) = locations[h];
        let mut rng = stream(spec.seed, STREAM_VOTES, i);
        let draw: f64 = rng.random();
        let (mut mu_t, mut mu_w) = (loc_t, loc_w);
        if let (Some(r), Some(threshold)) = (&spec.rigging, rig_threshold) {
            if n < threshold && draw < r.fraction_affected {
                mu_t = (loc_t + r.shift_t * spread(loc_t, h)).clamp(0.0, 1.0);
                mu_w = (loc_w + r.shift_vw * spread(loc_w, h)).clamp(0.0, 1.0);
            }
        }
        let prop_t = beta(mu_t, k).sample(&mut rng);
        let prop_w = beta(mu_w, k).sample(&mut rng);
        let cast = Binomial::new(n, prop_t)
            .expect("probability in [0, 1]")
            .sample(&mut rng);
        let won = Binomial::new(cast, prop_w)
            .expect("probability in [0, 1]")
            .sample(&mut rng);
        records.push(RawRecord {
            unit_id: format!("n{h:04}-u{:03}", i % per),
            neighborhood_id: format!("n{h:04}"),
            electors: n,
            ballots_cast: cast,
            winner_votes: won,
        });
    }
    Ok(records)
}

/// Generates records and builds an election under the default inclusion
/// criteria.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Election, DiagnosticsError> {
    let records = generate_records(spec)?;
    Ok(Election::build(
        spec.name.clone(),
        records,
        &InclusionCriteria::default(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(id: &str, n: u64, cast: u64, win: u64) -> ElectoralUnit {
        ElectoralUnit::try_from(RawRecord {
            unit_id: id.into(),
            neighborhood_id: "x".into(),
            electors: n,
            ballots_cast: cast,
            winner_votes: win,
        })
        .unwrap()
    }

    #[test]
    fn three_unit_curve() {
        let units = [
            unit("c", 100, 100, 90),
            unit("a", 1000, 800, 400),
            unit("b", 500, 400, 300),
        ];
        let c = cumulative_winner_share(&units);
        assert_eq!(c.ranks, vec![1, 2, 3]);
        assert_eq!(c.electors, vec![1000, 500, 100]);
        // 400/800, 700/1200, 790/1300
        let expected = [50.0, 700.0 / 12.0, 790.0 / 13.0];
        for (a, b) in c.cum_vw.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c.cum_vw[1] - 58.33).abs() < 0.01);
        assert!((c.cum_vw[2] - 60.77).abs() < 0.01);
    }

    #[test]
    fn single_and_constant_curves() {
        let c = cumulative_winner_share(&[unit("a", 100, 50, 20)]);
        assert_eq!(c.cum_vw, vec![40.0]);
        let units: Vec<_> = (0..5)
            .map(|i| unit(&format!("u{i}"), 100 * (i + 1), 50 * (i + 1), 20 * (i + 1)))
            .collect();
        let c = cumulative_winner_share(&units);
        assert!(c.cum_vw.iter().all(|&v| (v - 40.0).abs() < 1e-12));
    }

    #[test]
    fn ties_break_by_unit_id() {
        let c = cumulative_winner_share(&[unit("b", 100, 10, 10), unit("a", 100, 10, 0)]);
        assert_eq!(c.cum_vw, vec![0.0, 50.0]);
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::default();
        assert!(s.validate().is_ok());
        s.units_per_neighborhood = 9;
        assert!(matches!(s.validate(), Err(DiagnosticsError::InvalidSpec(_))));
        let s = SynthSpec {
            rigging: Some(RiggingSpec {
                fraction_affected: 1.5,
                ..RiggingSpec::standard()
            }),
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn generated_counts_are_compatible_and_deterministic() {
        let spec = SynthSpec {
            seed: 42,
            rigging: Some(RiggingSpec::standard()),
            ..Default::default()
        };
        let a = generate_records(&spec).unwrap();
        let b = generate_records(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1440);
        assert!(a
            .iter()
            .all(|r| r.winner_votes <= r.ballots_cast && r.ballots_cast <= r.electors));
        let e = generate_synthetic(&spec).unwrap();
        assert!(e.units.len() > 1000 && e.neighborhoods.len() > 100);
    }

    #[test]
    fn rigging_leaves_large_units_untouched() {
        let clean = SynthSpec {
            seed: 7,
            ..Default::default()
        };
        let rigged = SynthSpec {
            rigging: Some(RiggingSpec::standard()),
            ..clean.clone()
        };
        let a = generate_records(&clean).unwrap();
        let b = generate_records(&rigged).unwrap();
        let mut sizes: Vec<u64> = a.iter().map(|r| r.electors).collect();
        sizes.sort_unstable();
        let threshold = nearest_rank(&sizes, 10.0);
        let mut changed = 0;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.electors, y.electors);
            if x.electors >= threshold {
                assert_eq!(x, y);
            } else if x != y {
                changed += 1;
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn zero_shift_rigging_is_a_no_op() {
        let clean = SynthSpec {
            seed: 3,
            ..Default::default()
        };
        let zero = SynthSpec {
            rigging: Some(RiggingSpec {
                shift_t: 0.0,
                shift_vw: 0.0,
                ..RiggingSpec::standard()
            }),
            ..clean.clone()
        };
        assert_eq!(generate_records(&clean).unwrap(), generate_records(&zero).unwrap());
    }
}
