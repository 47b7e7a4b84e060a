//! Measure-preserving neural networks built from additive coupling layers,
//! divergence-free dynamics, and a compiler that turns divergence-free flows
//! into stacks of exactly volume-preserving shear layers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compiler;
pub mod coupling;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod feng_shang;
pub mod io;
pub mod mlp;
pub mod numfmt;
pub mod rng;
pub mod trainer;

pub use coupling::{Layer, LayerKind, MPNet, ShiftFn, ShiftRegistry};
pub use domain::BoxDomain;
pub use error::{Error, Result};
pub use mlp::{Activation, AdamConfig, AdamState, Mlp};

/// Registry with the built-in shifts plus the compiled-flow shears.
pub fn default_registry() -> ShiftRegistry {
    let mut reg = ShiftRegistry::with_builtins();
    compiler::register_shifts(&mut reg);
    reg
}
