//! Optimal market making when order-flow intensities are modulated by a
//! hidden Markov regime.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`] holds the parameter set shared by every other module and its
//!   validation rules; [`config`] reads it from a flat `key = value` file.
//! - [`intensity`] provides the intensity curves, the CARA utility and the
//!   per-regime Hamiltonians with their optimal spreads.
//! - [`filter`] is the exact regime filter driven by observed fills.
//! - [`hjb_full`] solves the full-information ODE system, [`hjb_partial`]
//!   the two-regime partial-information PIDE on a `(t, π)` grid.
//! - [`simulator`] generates fills by thinning and aggregates penalized P&L
//!   by Monte Carlo.
//! - [`persist`] reads and writes surfaces and paths as CSV.

pub mod config;
pub mod filter;
pub mod hjb_full;
pub mod hjb_partial;
pub mod intensity;
pub mod model;
pub mod persist;
pub mod policy;
pub mod simulator;

pub use filter::FilterState;
pub use intensity::IntensityFamily;
pub use model::{Generator, InventoryCap, ModelSpec, RegimeSpec, Side, SpreadBounds, Violation};
pub use policy::{Quote, QuotePair};
