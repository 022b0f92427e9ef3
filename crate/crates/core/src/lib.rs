//! Multiple-resolution tokenization transformer for multivariate
//! time-series forecasting with auxiliary variables.
//!
//! The crate is `no_std` with `alloc`; file formats, the CLI and threaded
//! ablation runs live in the `mrt` companion crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

mod error;
mod real;

pub mod data;
pub mod encoder;
pub mod ablation;
pub mod aux;
pub mod gradcheck;
pub mod head;
pub mod layout;
pub mod mixer;
pub mod model;
pub mod mrp;
pub mod nn;
pub mod optim;
pub mod params;
pub mod patch;
pub mod pipeline;
pub mod schema;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{derive_seed, seeded, ParamId, ParamStore, Rng};
pub use real::Real;
pub use schema::{Group, RawSeries, Schema, Scope, Timestamp, Value, VarKind, VariableSchema};
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;
