//! Criterion benchmarks for the core crate; see `benches/engine.rs`.
