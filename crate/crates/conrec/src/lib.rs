//! ConRec lab: joint contrastive + masked-reconstruction pretraining with
//! attention-weighted pooling, two synthetic shape benchmarks, and a
//! frozen-encoder linear-evaluation protocol.
//!
//! Everything runs on the CPU and is reproducible from (config, seed).

pub mod augment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Tensor;

/// Keep large allocations on the heap instead of per-allocation mmap/munmap;
/// the training loop allocates and frees step-sized tensors continuously and
/// page-fault churn otherwise dominates on glibc.
pub fn tune_allocator() {
    #[cfg(target_os = "linux")]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
