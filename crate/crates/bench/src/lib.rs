//! Criterion benchmarks for `aoi-core`; see `benches/solvers.rs`.
