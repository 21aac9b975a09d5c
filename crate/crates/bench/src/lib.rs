//! Criterion benchmarks for the stepcheck core; see `benches/`.
