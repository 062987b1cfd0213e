//! Criterion benchmarks for the fingerprint and rigging-test pipeline; see `benches/`.
