//! Benchmark-only crate; the targets live in `benches/pipeline.rs`.
//! Run with `cargo bench -p spry-bench`.
