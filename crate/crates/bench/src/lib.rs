//! Benchmark-only crate; see `benches/suppression.rs`.
