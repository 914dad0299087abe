//! Benchmarks for the contraction and sampling kernels; see `benches/`.
