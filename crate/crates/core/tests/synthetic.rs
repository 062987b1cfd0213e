use std::collections::HashMap;

use sef_core::diagnostics::generate_records;
use sef_core::ingest::{
    read_records, write_records, Election, ExclusionScope, InclusionCriteria, LoadOptions, RawRecord,
};
use sef_core::pipeline::analyze_election;
use sef_core::rigging::{median_center, split_by_percentile};
use sef_core::sef::{compute_zscores, ZScoreOptions};
use sef_core::{generate_synthetic, RiggingSpec, SynthSpec, TestConfig};

fn spec(seed: u64, rigged: bool) -> SynthSpec {
    SynthSpec {
        seed,
        rigging: rigged.then(RiggingSpec::standard),
        ..Default::default()
    }
}

#[test]
fn clean_small_unit_medians_center_on_zero() {
    let medians: Vec<f64> = (0..100)
        .map(|seed| {
            let e = generate_synthetic(&spec(seed, false)).unwrap();
            let z = compute_zscores(&e, ZScoreOptions::default());
            let split = split_by_percentile(&z.pairs, 10.0).unwrap();
            median_center(split.small.iter().copied()).unwrap().0
        })
        .collect();
    let mean = medians.iter().sum::<f64>() / medians.len() as f64;
    assert!(mean.abs() < 0.05, "mean small-unit median z_t = {mean}");
}

#[test]
fn rigged_small_units_sit_upper_right() {
    let cfg = TestConfig::default();
    let i = cfg.p_grid.iter().position(|&p| p == 10.0).unwrap();
    let hits = (0..100)
        .filter(|&seed| {
            let e = generate_synthetic(&spec(seed, true)).unwrap();
            let a = analyze_election(&e, &cfg).unwrap();
            a.curve.centers[i].expect("valid split at p = 10").upper_right()
        })
        .count();
    assert!(hits >= 99, "upper right in {hits}/100");
}

#[test]
fn records_survive_csv_round_trip() {
    let records = generate_records(&spec(7, true)).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, records.clone(), b';').unwrap();
    let opts = LoadOptions {
        delimiter: b';',
        ..Default::default()
    };
    assert_eq!(read_records(buf.as_slice(), &opts).unwrap(), records);
}

#[test]
fn every_record_is_accounted_for_once() {
    let mut records = generate_records(&spec(3, false)).unwrap();
    let rec = |id: &str, nb: &str, n, cast, win| RawRecord {
        unit_id: id.into(),
        neighborhood_id: nb.into(),
        electors: n,
        ballots_cast: cast,
        winner_votes: win,
    };
    records.push(rec("bad-counts", "n0000", 100, 120, 10));
    records.push(rec("no-electors", "n0001", 0, 0, 0));
    records.push(rec("no-ballots", "n0002", 100, 0, 0));
    records.push(rec("lonely-a", "tiny", 100, 50, 20));
    records.push(rec("lonely-b", "tiny", 100, 50, 20));
    records.push(records[0].clone());
    let ids: Vec<String> = records.iter().map(|r| r.unit_id.clone()).collect();

    let e = Election::build("audit", records, &InclusionCriteria::default()).unwrap();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for id in e.units.iter().map(|u| u.unit_id.as_str()).chain(
        e.exclusion_log
            .iter()
            .filter(|x| x.scope == ExclusionScope::Unit)
            .map(|x| x.id.as_str()),
    ) {
        *seen.entry(id).or_default() += 1;
    }
    for id in &ids {
        let expected = if *id == ids[0] { 2 } else { 1 };
        assert_eq!(seen.get(id.as_str()), Some(&expected), "unit {id}");
    }
    assert_eq!(seen.values().sum::<usize>(), ids.len());
    assert!(e
        .exclusion_log
        .iter()
        .any(|x| x.scope == ExclusionScope::Neighborhood && x.id == "tiny"));
}
