//! Search engine for normalization-activation layers.
//!
//! Layers are tensor-to-tensor computation graphs over a small set of
//! element-wise and statistical-moment primitives. The crate provides the
//! dense-tensor autodiff core, the graph genotype with generation and
//! mutation, quality/stability rejection filters, Pareto-tournament
//! evolution, and a deterministic desk-scale proxy benchmark with three
//! anchor CNNs.

pub mod codec;
pub mod error;
pub mod evolution;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod parallel;
pub mod presets;
pub mod ops;
pub mod proxy;
pub mod rejection;
pub mod render;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};

// Tape episodes allocate and free many multi-megabyte tensors; mimalloc
// recycles those blocks instead of returning them to the kernel, which
// the default allocator does above its mmap threshold.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
