use std::collections::BTreeMap;

use proptest::prelude::*;
use sef_core::ingest::{Election, ElectoralUnit};
use sef_core::rigging::{
    delta, distance, distance_curve, median_center, split_by_percentile, thompson_tau, SplitCenters,
};
use sef_core::sef::{
    compute_zscores, remove_ellipse_outliers, sef_histogram, smooth_histogram, SefHistogram, ZScoreOptions, ZScorePair,
};

fn pair(i: usize, z_t: f64, z_vw: f64, electors: u64) -> ZScorePair {
    ZScorePair {
        unit_id: format!("u{i:05}"),
        z_t,
        z_vw,
        electors,
    }
}

fn pairs_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<ZScorePair>> {
    prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64, 50u64..2000), min..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (t, vw, n))| pair(i, t, vw, n))
            .collect()
    })
}

/// An election built directly from percentages, bypassing count validation.
fn election(neighborhoods: &[Vec<(f64, f64)>]) -> Election {
    let mut units = Vec::new();
    let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (h, members) in neighborhoods.iter().enumerate() {
        for (j, &(t, vw)) in members.iter().enumerate() {
            let id = format!("n{h}");
            index.entry(id.clone()).or_default().push(units.len());
            units.push(ElectoralUnit {
                unit_id: format!("n{h}-u{j}"),
                neighborhood_id: id,
                electors: 100 + j as u64,
                ballots_cast: 1,
                winner_votes: 1,
                turnout_pct: t,
                winner_pct: vw,
            });
        }
    }
    Election {
        name: "prop".into(),
        units,
        neighborhoods: index,
        exclusion_log: Vec::new(),
    }
}

fn neighborhoods_strategy() -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
    prop::collection::vec(prop::collection::vec((20.0..90.0f64, 20.0..80.0f64), 10..16), 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zscores_are_location_scale_invariant(
        hoods in neighborhoods_strategy(),
        a in 0.1..10.0f64,
        b in -50.0..50.0f64,
        loo in any::<bool>(),
    ) {
        let opts = ZScoreOptions { leave_one_out: loo };
        let base = compute_zscores(&election(&hoods), opts);
        let moved: Vec<Vec<(f64, f64)>> = hoods
            .iter()
            .enumerate()
            .map(|(h, m)| if h == 0 { m.iter().map(|&(t, vw)| (a * t + b, a * vw + b)).collect() } else { m.clone() })
            .collect();
        let after = compute_zscores(&election(&moved), opts);
        prop_assert_eq!(base.pairs.len(), after.pairs.len());
        for (x, y) in base.pairs.iter().zip(&after.pairs) {
            prop_assert!((x.z_t - y.z_t).abs() < 1e-9);
            prop_assert!((x.z_vw - y.z_vw).abs() < 1e-9);
        }
    }

    #[test]
    fn ellipse_partitions_input(z in pairs_strategy(5, 300), conf in 0.5..0.999f64) {
        let split = remove_ellipse_outliers(&z, conf).unwrap();
        prop_assert_eq!(split.kept.len() + split.removed.len(), z.len());
        let mut ids: Vec<&str> = split.kept.iter().chain(&split.removed).map(|p| p.unit_id.as_str()).collect();
        ids.sort_unstable();
        let mut expected: Vec<&str> = z.iter().map(|p| p.unit_id.as_str()).collect();
        expected.sort_unstable();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn smoothing_is_linear(
        a in prop::collection::vec(0.0..10.0f64, 144),
        b in prop::collection::vec(0.0..10.0f64, 144),
    ) {
        let grid = |v: &[f64]| {
            let mut h = SefHistogram::zeros(12, (-5.0, 5.0));
            h.counts.copy_from_slice(v);
            h
        };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (sa, sb, ss) = (
            smooth_histogram(&grid(&a)).unwrap(),
            smooth_histogram(&grid(&b)).unwrap(),
            smooth_histogram(&grid(&sum)).unwrap(),
        );
        for i in 0..144 {
            prop_assert!((ss.counts[i] - sa.counts[i] - sb.counts[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn histogram_accounts_for_every_pair(
        z in prop::collection::vec((-8.0..8.0f64, -8.0..8.0f64), 0..500),
        bins in 10usize..60,
    ) {
        let z: Vec<ZScorePair> = z.into_iter().enumerate().map(|(i, (t, vw))| pair(i, t, vw, 100)).collect();
        let h = sef_histogram(&z, bins, (-5.0, 5.0)).unwrap();
        prop_assert_eq!(h.total() as usize + h.overflow, z.len());
    }

    #[test]
    fn size_split_partitions_by_threshold(z in pairs_strategy(1, 200), p in 0.5..99.5f64) {
        let s = split_by_percentile(&z, p).unwrap();
        prop_assert_eq!(s.small.len() + s.large.len(), z.len());
        prop_assert!(s.small.iter().all(|u| u.electors < s.threshold));
        prop_assert!(s.large.iter().all(|u| u.electors >= s.threshold));
    }

    #[test]
    fn distance_is_symmetric_and_translation_invariant(
        a in (-5.0..5.0f64, -5.0..5.0f64),
        b in (-5.0..5.0f64, -5.0..5.0f64),
        shift in (-5.0..5.0f64, -5.0..5.0f64),
    ) {
        prop_assert_eq!(distance(a, b), distance(b, a));
        let moved = distance((a.0 + shift.0, a.1 + shift.1), (b.0 + shift.0, b.1 + shift.1));
        prop_assert!((moved - distance(a, b)).abs() < 1e-12);
    }

    #[test]
    fn tau_selection_is_affine_invariant(
        x in prop::collection::vec(-10.0..10.0f64, 3..30),
        a in prop_oneof![0.1..10.0f64, -10.0..-0.1f64],
        b in -100.0..100.0f64,
    ) {
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let rx = thompson_tau(&x, 0.05).unwrap();
        let ry = thompson_tau(&y, 0.05).unwrap();
        // Only compare when no round sits on the rejection edge.
        let clear = rx.steps.iter().all(|s| s.std == 0.0 || (s.max_delta - s.r).abs() > 1e-6);
        if clear {
            prop_assert_eq!(rx.outlier_indices, ry.outlier_indices);
        }
    }

    #[test]
    fn delta_increases_with_distance(
        reference in prop::collection::vec(0.0..2.0f64, 3..25),
        d in 0.0..5.0f64,
        step in 1e-6..1.0f64,
    ) {
        if let (Ok(lo), Ok(hi)) = (delta(d, &reference), delta(d + step, &reference)) {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn fast_curve_matches_direct_splits(z in pairs_strategy(0, 150)) {
        let grid = [0.5, 5.0, 10.0, 12.5, 33.3, 50.0, 75.0, 90.0];
        let curve = distance_curve("prop", &z, &grid).unwrap();
        for (i, &p) in grid.iter().enumerate() {
            let direct = if z.is_empty() {
                None
            } else {
                SplitCenters::from_split(&split_by_percentile(&z, p).unwrap())
            };
            prop_assert_eq!(curve.centers[i], direct);
        }
    }
}

#[test]
fn median_center_averages_middle_pair() {
    let z: Vec<ZScorePair> = (0..4).map(|i| pair(i, i as f64, -(i as f64), 100)).collect();
    assert_eq!(median_center(&z).unwrap(), (1.5, -1.5));
}
