//! Criterion benchmarks for tadlab; run with `cargo bench -p tadlab-bench`.
