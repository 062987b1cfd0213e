use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use sef_core::diagnostics::generate_records;
use sef_core::ingest::{read_records, write_records, Election, ElectionSummary, ExclusionScope, LoadOptions};
use sef_core::pipeline::{analyze_election, curve_from_pairs, DEFAULT_ELLIPSE_CONFIDENCE};
use sef_core::rigging::{parse_p_grid, run_comparative_test, RiggingError, Verdict};
use sef_core::sef::{
    export_contour_grid, read_zscores, remove_ellipse_outliers, sef_histogram, smooth_histogram, write_zscores,
    ConfidenceEllipse, ContourGrid, DegenerateUnit, SefHistogram, ZScoreOptions,
};
use sef_core::{
    compute_zscores, cumulative_winner_share, summarize as summarize_election, RiggingSpec, SynthSpec, TestConfig,
};

use crate::error::CliError;
use crate::provenance::{json_document, read_input, InputDigest, Provenance};
use crate::{CumulativeArgs, InputOpts, SefArgs, StrataOpts, SummarizeArgs, SynthArgs, TestArgs, ValidateArgs};

/// File name up to its first dot, unless overridden.
fn election_name(path: &Path, name: Option<&str>) -> String {
    if let Some(n) = name {
        return n.to_string();
    }
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    match file.split('.').next() {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => file,
    }
}

fn load_options(opts: &InputOpts) -> Result<LoadOptions, CliError> {
    if !opts.delimiter.is_ascii() {
        return Err(CliError::Usage(format!(
            "delimiter `{}` is not a single ASCII character",
            opts.delimiter
        )));
    }
    Ok(LoadOptions {
        delimiter: opts.delimiter as u8,
        ..Default::default()
    })
}

fn load(path: &Path, name: Option<&str>, opts: &InputOpts) -> Result<(Election, InputDigest), CliError> {
    let lo = load_options(opts)?;
    let input = read_input(path)?;
    let records = read_records(input.bytes.as_slice(), &lo)?;
    let election = Election::build(election_name(path, name), records, &lo.criteria)?;
    Ok((election, input.digest))
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn csv_file(provenance: &Provenance, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = provenance.csv_header().into_bytes();
    fill(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn strata_config(s: &StrataOpts) -> (ZScoreOptions, Option<f64>) {
    (
        ZScoreOptions {
            leave_one_out: !s.inclusive_strata,
        },
        (!s.no_ellipse).then_some(DEFAULT_ELLIPSE_CONFIDENCE),
    )
}

#[derive(Serialize)]
struct Validation {
    election: String,
    accepted: bool,
    #[serde(rename = "N")]
    units: usize,
    neighborhoods: usize,
    excluded_units: usize,
    excluded_neighborhoods: usize,
    exclusions_by_reason: BTreeMap<&'static str, usize>,
}

pub fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let (e, digest) = load(&a.input, a.name.as_deref(), &a.input_opts)?;
    let prov = Provenance::new(
        json!({ "command": "validate", "name": e.name, "delimiter": a.input_opts.delimiter.to_string() }),
        vec![digest],
    );
    let mut by_reason = BTreeMap::new();
    for x in e.exclusion_log.iter().filter(|x| x.scope == ExclusionScope::Unit) {
        *by_reason.entry(x.reason.as_str()).or_default() += 1;
    }
    let report = Validation {
        election: e.name.clone(),
        accepted: true,
        units: e.units.len(),
        neighborhoods: e.neighborhoods.len(),
        excluded_units: by_reason.values().sum(),
        excluded_neighborhoods: e
            .exclusion_log
            .iter()
            .filter(|x| x.scope == ExclusionScope::Neighborhood)
            .count(),
        exclusions_by_reason: by_reason,
    };
    let doc = json_document(&prov, &report);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(&dir.join(format!("{}.validation.json", e.name)), &doc)?;
        write(&dir.join(format!("{}.election.json", e.name)), json_document(&prov, &e))?;
    }
    emit(&doc)
}

#[derive(Serialize)]
struct Summaries {
    summaries: Vec<ElectionSummary>,
}

pub fn summarize(a: &SummarizeArgs) -> Result<(), CliError> {
    let mut summaries = Vec::new();
    let mut digests = Vec::new();
    for path in &a.inputs {
        let (e, d) = load(path, None, &a.input_opts)?;
        summaries.push(summarize_election(&e));
        digests.push(d);
    }
    let prov = Provenance::new(
        json!({ "command": "summarize", "delimiter": a.input_opts.delimiter.to_string() }),
        digests,
    );
    let doc = json_document(&prov, &Summaries { summaries });
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(&dir.join("summary.json"), &doc)?;
    }
    emit(&doc)
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("range `{s}` is not of the form lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

#[derive(Serialize)]
struct Fingerprint<'a> {
    election: &'a str,
    units: usize,
    skipped: &'a [DegenerateUnit],
    ellipse: Option<ConfidenceEllipse>,
    ellipse_outliers: usize,
    histogram: SefHistogram,
    contour: ContourGrid,
}

pub fn sef(a: &SefArgs) -> Result<(), CliError> {
    let range = parse_range(&a.range)?;
    let (e, digest) = load(&a.input, a.name.as_deref(), &a.input_opts)?;
    let (zopts, ellipse_conf) = strata_config(&a.strata);
    let prov = Provenance::new(
        json!({
            "command": "sef",
            "name": e.name,
            "delimiter": a.input_opts.delimiter.to_string(),
            "leave_one_out": zopts.leave_one_out,
            "ellipse_confidence": ellipse_conf,
            "bins": a.bins,
            "range": [range.0, range.1],
            "levels": a.levels,
        }),
        vec![digest],
    );

    let z = compute_zscores(&e, zopts);
    let (ellipse, removed) = match ellipse_conf {
        Some(c) => {
            let split = remove_ellipse_outliers(&z.pairs, c)?;
            (Some(split.ellipse), split.removed)
        }
        None => (None, Vec::new()),
    };
    let histogram = sef_histogram(&z.pairs, a.bins, range)?;
    let contour = export_contour_grid(&smooth_histogram(&histogram)?, a.levels);

    create_dir(&a.out)?;
    write(
        &a.out.join(format!("{}.zscores.csv", e.name)),
        csv_file(&prov, |w| write_zscores(w, &z.pairs)),
    )?;
    write(
        &a.out.join(format!("{}.outliers.csv", e.name)),
        csv_file(&prov, |w| write_zscores(w, &removed)),
    )?;
    let fp = Fingerprint {
        election: &e.name,
        units: z.pairs.len(),
        skipped: &z.skipped,
        ellipse,
        ellipse_outliers: removed.len(),
        histogram,
        contour,
    };
    write(&a.out.join(format!("{}.sef.json", e.name)), json_document(&prov, &fp))?;
    Ok(())
}

/// Z-score files start (after comments) with a header naming `z_t`.
fn is_zscore_file(bytes: &[u8]) -> bool {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|header| header.split(',').any(|c| c.trim() == "z_t"))
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    election: &'a str,
    in_reference_set: bool,
    verdict: Verdict,
}

#[derive(Serialize)]
struct TestSummary<'a> {
    reference_set: &'a [String],
    verdicts: Vec<VerdictLine<'a>>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn test(a: &TestArgs) -> Result<(), CliError> {
    if a.inputs.len() < 3 {
        return Err(RiggingError::TooFewElections(a.inputs.len()).into());
    }
    let (leave_one_out, ellipse_confidence) = {
        let (z, e) = strata_config(&a.strata);
        (z.leave_one_out, e)
    };
    let cfg = TestConfig {
        alpha: a.alpha,
        leave_one_out,
        ellipse_confidence,
        p_grid: parse_p_grid(&a.p_grid)?,
    };
    let lo = load_options(&a.input_opts)?;

    let mut names = HashSet::new();
    let mut curves = Vec::with_capacity(a.inputs.len());
    let mut digests = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let name = election_name(path, None);
        if !names.insert(name.clone()) {
            return Err(CliError::DuplicateElection(name));
        }
        let input = read_input(path)?;
        let curve = if is_zscore_file(&input.bytes) {
            curve_from_pairs(&name, &read_zscores(input.bytes.as_slice())?, &cfg)?.0
        } else {
            let records = read_records(input.bytes.as_slice(), &lo)?;
            analyze_election(&Election::build(name, records, &lo.criteria)?, &cfg)?.curve
        };
        curves.push(curve);
        digests.push(input.digest);
    }
    let report = run_comparative_test(&curves, cfg.alpha)?;

    let prov = Provenance::new(
        json!({
            "command": "test",
            "delimiter": a.input_opts.delimiter.to_string(),
            "alpha": cfg.alpha,
            "leave_one_out": cfg.leave_one_out,
            "ellipse_confidence": cfg.ellipse_confidence,
            "p_grid": a.p_grid,
        }),
        digests,
    );
    create_dir(&a.out)?;
    for r in &report.reports {
        write(
            &a.out.join(format!("{}.report.json", r.election)),
            json_document(&prov, r),
        )?;
    }
    write(&a.out.join("ensemble.json"), json_document(&prov, &report))?;

    let curves_csv = csv_file(&prov, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "election",
            "p",
            "D",
            "delta",
            "tau_threshold",
            "is_outlier",
            "upper_right",
        ])?;
        for r in &report.reports {
            for e in &r.per_p {
                w.write_record([
                    r.election.clone(),
                    e.p.to_string(),
                    opt(e.distance),
                    opt(e.delta),
                    opt(e.tau_threshold),
                    e.is_outlier.to_string(),
                    opt(e.upper_right),
                ])?;
            }
        }
        w.flush()
    });
    write(&a.out.join("delta_curves.csv"), curves_csv)?;

    let summary = TestSummary {
        reference_set: &report.reference_set,
        verdicts: report
            .reports
            .iter()
            .map(|r| VerdictLine {
                election: &r.election,
                in_reference_set: r.in_reference_set,
                verdict: r.verdict,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    emit(&text)
}

pub fn cumulative(a: &CumulativeArgs) -> Result<(), CliError> {
    let (e, digest) = load(&a.input, a.name.as_deref(), &a.input_opts)?;
    let prov = Provenance::new(
        json!({ "command": "cumulative", "name": e.name, "delimiter": a.input_opts.delimiter.to_string() }),
        vec![digest],
    );
    let curve = cumulative_winner_share(&e.units);
    create_dir(&a.out)?;
    write(
        &a.out.join(format!("{}.cumulative.csv", e.name)),
        csv_file(&prov, |w| curve.write_csv(w)),
    )
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let (mut spec, inputs) = match &a.config {
        Some(path) => {
            let input = read_input(path)?;
            let spec: SynthSpec = serde_json::from_slice(&input.bytes).map_err(|e| CliError::Config(e.to_string()))?;
            (spec, vec![input.digest])
        }
        None => (SynthSpec::default(), Vec::new()),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if a.rigged && spec.rigging.is_none() {
        spec.rigging = Some(RiggingSpec::standard());
    }
    let records = generate_records(&spec)?;

    let mut config = serde_json::to_value(&spec).expect("spec serializes");
    config["command"] = json!("synth");
    let prov = Provenance::new(config, inputs);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(&a.out, csv_file(&prov, |w| write_records(w, records, b',')))
}
