//! Dense arrays, differentiable operations and reverse-mode gradients.
//!
//! Training runs in `f32`; gradient checking instantiates the same code with
//! `f64`. Everything stochastic takes an explicit [`Rng64`].

mod graph;
mod tensor;

use std::fmt::{Debug, Display};

use rand::SeedableRng;
use thiserror::Error;

pub use graph::{GradTable, Graph, NodeId};
pub use tensor::{sigmoid, Tensor};

/// The project-wide seedable generator (xoshiro256++ seeded through splitmix64).
pub type Rng64 = rand_xoshiro::Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// Mixes `parts` into `base` (splitmix64 finalizer per part) to give
/// independent, reproducible sub-seeds such as one per (epoch, batch, example).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xd6e8_feb8_6659_fd93));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Floating-point element type usable in tensors and graphs.
pub trait Scalar:
    num_traits::Float + Default + Debug + Display + Send + Sync + 'static
{
    fn cast_from(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast_from(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
}
