//! Fluid and stochastic models of the two-class, two-pool X model under
//! threshold-based overload control (FQR-T and FQR-ART).
//!
//! * [`model`]: scenarios, states and validation.
//! * [`sim`]: exact event-driven simulation and ensembles.
//! * [`ftsp`]: the birth-death process that drives the averaging principle.
//! * [`fluid`]: the fluid ODE, its Euler solver and closed forms.
//! * [`analysis`]: fixed points, threshold sizing and comparison reports.

pub mod analysis;
pub mod csvfmt;
pub mod error;
pub mod fluid;
pub mod ftsp;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    d12, d21, total_service_rate, validate_scenario, ControlMode, ControlParams, FluidState, Piece,
    RateFunction, Scenario, ServiceRates, SimState, Violation, ViolationKind,
};
