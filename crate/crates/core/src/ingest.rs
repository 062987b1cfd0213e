//! Reading per-unit vote counts, applying the inclusion criteria, and
//! summarizing what survives.
//!
//! An [`Election`] is built once and never mutated afterwards. Every input
//! record ends up either as a retained [`ElectoralUnit`] or as an entry in the
//! exclusion log, never both.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column `{column}` in header")]
    SchemaMismatch { column: String },
    #[error("line {line}: {message}")]
    RecordMalformed { line: u64, message: String },
    #[error(
        "election `{name}` rejected: {units} units in {neighborhoods} neighborhoods after filtering \
         (need more than {min_units} units and more than {min_neighborhoods} neighborhoods)"
    )]
    ElectionRejected {
        name: String,
        units: usize,
        neighborhoods: usize,
        min_units: usize,
        min_neighborhoods: usize,
    },
    #[error("invalid election document: {0}")]
    Document(String),
}

impl IngestError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::FileUnreadable { .. } => "FILE_UNREADABLE",
            IngestError::SchemaMismatch { .. } => "SCHEMA_MISMATCH",
            IngestError::RecordMalformed { .. } => "RECORD_MALFORMED",
            IngestError::ElectionRejected { .. } => "ELECTION_REJECTED",
            IngestError::Document(_) => "DOCUMENT_INVALID",
        }
    }
}

/// One row of an input file, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub unit_id: String,
    pub neighborhood_id: String,
    pub electors: u64,
    pub ballots_cast: u64,
    pub winner_votes: u64,
}

/// Why a unit or a whole neighborhood was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    IncompatibleCounts,
    ZeroElectors,
    ZeroBallots,
    DuplicateUnitId,
    SmallNeighborhood,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::IncompatibleCounts => "incompatible-counts",
            ReasonCode::ZeroElectors => "zero-electors",
            ReasonCode::ZeroBallots => "zero-ballots",
            ReasonCode::DuplicateUnitId => "duplicate-unit-id",
            ReasonCode::SmallNeighborhood => "small-neighborhood",
        }
    }
}

/// Checks the record-level conditions: positive electors and ballots, and
/// `winner_votes <= ballots_cast <= electors`.
pub fn validate_record(rec: &RawRecord) -> Result<(), ReasonCode> {
    if rec.electors == 0 {
        return Err(ReasonCode::ZeroElectors);
    }
    if rec.ballots_cast == 0 {
        return Err(ReasonCode::ZeroBallots);
    }
    if rec.winner_votes > rec.ballots_cast || rec.ballots_cast > rec.electors {
        return Err(ReasonCode::IncompatibleCounts);
    }
    Ok(())
}

/// A polling station that passed validation.
///
/// Percentages are kept at full double precision; only output formatting rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct ElectoralUnit {
    pub unit_id: String,
    pub neighborhood_id: String,
    pub electors: u64,
    pub ballots_cast: u64,
    pub winner_votes: u64,
    /// `100 * ballots_cast / electors`
    pub turnout_pct: f64,
    /// `100 * winner_votes / ballots_cast`
    pub winner_pct: f64,
}

impl TryFrom<RawRecord> for ElectoralUnit {
    type Error = ReasonCode;

    fn try_from(rec: RawRecord) -> Result<Self, Self::Error> {
        validate_record(&rec)?;
        let turnout_pct = 100.0 * rec.ballots_cast as f64 / rec.electors as f64;
        let winner_pct = 100.0 * rec.winner_votes as f64 / rec.ballots_cast as f64;
        Ok(ElectoralUnit {
            unit_id: rec.unit_id,
            neighborhood_id: rec.neighborhood_id,
            electors: rec.electors,
            ballots_cast: rec.ballots_cast,
            winner_votes: rec.winner_votes,
            turnout_pct,
            winner_pct,
        })
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ElectoralUnit {
    pub fn to_record(&self) -> RawRecord {
        RawRecord {
            unit_id: self.unit_id.clone(),
            neighborhood_id: self.neighborhood_id.clone(),
            electors: self.electors,
            ballots_cast: self.ballots_cast,
            winner_votes: self.winner_votes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionScope {
    Unit,
    Neighborhood,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub scope: ExclusionScope,
    pub reason: ReasonCode,
}

/// Gates an election must pass before it is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionCriteria {
    /// Neighborhoods with fewer retained units are dropped wholesale.
    pub min_neighborhood_size: usize,
    /// The election needs strictly more retained units than this.
    pub units_must_exceed: usize,
    /// ... and strictly more retained neighborhoods than this.
    pub neighborhoods_must_exceed: usize,
}

impl Default for InclusionCriteria {
    fn default() -> Self {
        InclusionCriteria {
            min_neighborhood_size: 10,
            units_must_exceed: 1_000,
            neighborhoods_must_exceed: 100,
        }
    }
}

impl InclusionCriteria {
    /// No size gates at all; record-level validation still applies.
    pub fn permissive() -> Self {
        InclusionCriteria {
            min_neighborhood_size: 0,
            units_must_exceed: 0,
            neighborhoods_must_exceed: 0,
        }
    }
}

/// A validated election, partitioned into neighborhoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ElectionDoc", try_from = "ElectionDoc")]
pub struct Election {
    pub name: String,
    pub units: Vec<ElectoralUnit>,
    /// Neighborhood id to indices into `units`, in input order.
    pub neighborhoods: BTreeMap<String, Vec<usize>>,
    pub exclusion_log: Vec<Exclusion>,
}

#[derive(Serialize, Deserialize)]
struct ElectionDoc {
    name: String,
    units: Vec<ElectoralUnit>,
    exclusion_log: Vec<Exclusion>,
}

impl From<Election> for ElectionDoc {
    fn from(e: Election) -> Self {
        ElectionDoc {
            name: e.name,
            units: e.units,
            exclusion_log: e.exclusion_log,
        }
    }
}

impl TryFrom<ElectionDoc> for Election {
    type Error = IngestError;

    fn try_from(doc: ElectionDoc) -> Result<Self, Self::Error> {
        let mut seen = HashSet::new();
        for u in &doc.units {
            if !seen.insert(u.unit_id.as_str()) {
                return Err(IngestError::Document(format!("duplicate unit id `{}`", u.unit_id)));
            }
        }
        Ok(Election {
            neighborhoods: index_neighborhoods(&doc.units),
            name: doc.name,
            units: doc.units,
            exclusion_log: doc.exclusion_log,
        })
    }
}

fn index_neighborhoods(units: &[ElectoralUnit]) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        map.entry(u.neighborhood_id.clone()).or_default().push(i);
    }
    map
}

impl Election {
    /// Validates records, drops undersized neighborhoods, then applies the
    /// global size gates to what remains.
    pub fn build(
        name: impl Into<String>,
        records: impl IntoIterator<Item = RawRecord>,
        criteria: &InclusionCriteria,
    ) -> Result<Election, IngestError> {
        let name = name.into();
        let mut exclusion_log = Vec::new();
        let mut seen = HashSet::new();
        let mut candidates = Vec::new();

        for rec in records {
            if !seen.insert(rec.unit_id.clone()) {
                exclusion_log.push(Exclusion {
                    id: rec.unit_id,
                    scope: ExclusionScope::Unit,
                    reason: ReasonCode::DuplicateUnitId,
                });
                continue;
            }
            let id = rec.unit_id.clone();
            match ElectoralUnit::try_from(rec) {
                Ok(unit) => candidates.push(unit),
                Err(reason) => exclusion_log.push(Exclusion {
                    id,
                    scope: ExclusionScope::Unit,
                    reason,
                }),
            }
        }

        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &candidates {
            *sizes.entry(u.neighborhood_id.as_str()).or_default() += 1;
        }
        let small: HashSet<String> = sizes
            .iter()
            .filter(|(_, &n)| n < criteria.min_neighborhood_size)
            .map(|(id, _)| id.to_string())
            .collect();
        for (id, _) in sizes.iter().filter(|(id, _)| small.contains(**id)) {
            exclusion_log.push(Exclusion {
                id: id.to_string(),
                scope: ExclusionScope::Neighborhood,
                reason: ReasonCode::SmallNeighborhood,
            });
        }
        let mut units = Vec::with_capacity(candidates.len());
        for u in candidates {
            if small.contains(&u.neighborhood_id) {
                exclusion_log.push(Exclusion {
                    id: u.unit_id,
                    scope: ExclusionScope::Unit,
                    reason: ReasonCode::SmallNeighborhood,
                });
            } else {
                units.push(u);
            }
        }

        let neighborhoods = index_neighborhoods(&units);
        if units.len() <= criteria.units_must_exceed || neighborhoods.len() <= criteria.neighborhoods_must_exceed {
            return Err(IngestError::ElectionRejected {
                name,
                units: units.len(),
                neighborhoods: neighborhoods.len(),
                min_units: criteria.units_must_exceed + 1,
                min_neighborhoods: criteria.neighborhoods_must_exceed + 1,
            });
        }

        Ok(Election {
            name,
            units,
            neighborhoods,
            exclusion_log,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = RawRecord> + '_ {
        self.units.iter().map(ElectoralUnit::to_record)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("election serializes")
    }

    pub fn from_json(s: &str) -> Result<Election, IngestError> {
        serde_json::from_str(s).map_err(|e| IngestError::Document(e.to_string()))
    }
}

/// Header names of the five input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub unit_id: String,
    pub neighborhood_id: String,
    pub electors: String,
    pub ballots_cast: String,
    pub winner_votes: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            unit_id: "unit_id".into(),
            neighborhood_id: "neighborhood_id".into(),
            electors: "electors".into(),
            ballots_cast: "ballots_cast".into(),
            winner_votes: "winner_votes".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub columns: ColumnMap,
    pub criteria: InclusionCriteria,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            columns: ColumnMap::default(),
            criteria: InclusionCriteria::default(),
        }
    }
}

/// Reads a delimited file and builds an [`Election`] from it.
pub fn load_election(
    path: impl AsRef<Path>,
    name: impl Into<String>,
    opts: &LoadOptions,
) -> Result<Election, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let records = read_records(file, opts)?;
    Election::build(name, records, &opts.criteria)
}

/// Parses delimited text into raw records. Lines starting with `#` are
/// comments. Does not apply any validation beyond integer parsing.
pub fn read_records<R: Read>(reader: R, opts: &LoadOptions) -> Result<Vec<RawRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::SchemaMismatch {
                column: name.to_string(),
            })
    };
    let c = &opts.columns;
    let idx = [
        find(&c.unit_id)?,
        find(&c.neighborhood_id)?,
        find(&c.electors)?,
        find(&c.ballots_cast)?,
        find(&c.winner_votes)?,
    ];
    let count_names = [&c.electors, &c.ballots_cast, &c.winner_votes];

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let mut counts = [0u64; 3];
        for (k, slot) in counts.iter_mut().enumerate() {
            let raw = field(idx[k + 2]);
            *slot = raw.parse().map_err(|_| IngestError::RecordMalformed {
                line,
                message: format!("column `{}`: `{raw}` is not a non-negative integer", count_names[k]),
            })?;
        }
        out.push(RawRecord {
            unit_id: field(idx[0]).to_string(),
            neighborhood_id: field(idx[1]).to_string(),
            electors: counts[0],
            ballots_cast: counts[1],
            winner_votes: counts[2],
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::RecordMalformed {
        line,
        message: e.to_string(),
    }
}

/// Writes records in the default input layout, so they can be read back by
/// [`load_election`].
pub fn write_records<W: Write>(
    writer: W,
    records: impl IntoIterator<Item = RawRecord>,
    delimiter: u8,
) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let cols = ColumnMap::default();
    w.write_record([
        &cols.unit_id,
        &cols.neighborhood_id,
        &cols.electors,
        &cols.ballots_cast,
        &cols.winner_votes,
    ])?;
    for r in records {
        w.write_record([
            r.unit_id,
            r.neighborhood_id,
            r.electors.to_string(),
            r.ballots_cast.to_string(),
            r.winner_votes.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionSummary {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub mu_n: f64,
    pub sigma_n: f64,
}

/// Unit count, mean electors, and sample standard deviation (divisor `N - 1`)
/// of electors.
pub fn summarize(e: &Election) -> ElectionSummary {
    let electors: Vec<f64> = e.units.iter().map(|u| u.electors as f64).collect();
    ElectionSummary {
        name: e.name.clone(),
        n: electors.len(),
        mu_n: crate::stats::mean(&electors).unwrap_or(0.0),
        sigma_n: crate::stats::sample_std(&electors).unwrap_or(0.0),
    }
}
