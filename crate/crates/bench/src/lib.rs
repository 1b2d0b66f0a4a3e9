//! Benchmark support crate; the benchmarks live under `benches/`.
