//! Criterion benchmarks for `pictext-core`; see `benches/`.
