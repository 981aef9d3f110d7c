//! Rectangular Monarch matrices as parameter-efficient adapters.
//!
//! A Monarch adapter computes `M x = P1 · L · P2 · R · x` where `R` and `L`
//! are block-diagonal with `N` rectangular blocks and `P1`, `P2` are fixed
//! stride permutations. This crate provides the matrix class itself, its
//! gradients, Frobenius-optimal projection of dense matrices onto the class,
//! numerical checks of the accompanying approximation bounds, and a small
//! training harness comparing Monarch adapters against LoRA.

pub mod error;
pub mod gradients;
pub mod harness;
pub mod lora;
pub mod monarch;
pub mod numerics;
pub mod par;
pub mod projection;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use monarch::{AdapterLayer, Checkpoint, InitMode, MonarchAdapter, MonarchConfig};
pub use numerics::{DenseMatrix, SvdResult, Vector};
pub use par::Exec;

/// Seed used by every tool unless overridden.
pub const DEFAULT_SEED: u64 = 42;

/// Default block count for all tooling.
pub const DEFAULT_BLOCKS: usize = 4;
