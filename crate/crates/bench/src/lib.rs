//! Benchmarks for orthomode kernels live in `benches/`.
