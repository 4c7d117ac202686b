//! Criterion benchmarks for the core operators live in `benches/`.
