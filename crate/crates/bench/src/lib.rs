//! Criterion benchmarks for hypmix; see `benches/`.
