//! Criterion benchmarks for f1rapm; see `benches/pipeline.rs`.
