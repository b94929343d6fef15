//! Benchmarks, the reconciler fuzz harness, and reproducible scenarios
//! built on `worldmem-core`.

pub mod e2e;
pub mod fuzz;
pub mod load;
pub mod scenario;
pub mod stats;
pub mod summary;
