//! Classical and quantum dynamics of a periodically driven two-mode
//! Bose-Einstein condensate.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, the driven Hamiltonian and its equations of motion
//! * [`integrate`]: adaptive Runge–Kutta propagation and variational equations
//! * [`poincare`]: stroboscopic maps and Poincaré sections
//! * [`orbits`]: fixed points, period-n orbits, stability and Lyapunov maps
//! * [`ensemble`]: coherent-spin-state Monte-Carlo ensembles and their statistics
//! * [`quantum`]: exact propagation in the symmetric Dicke subspace
//! * [`scenarios`]: preset pipelines writing CSV/SVG artifacts with a manifest

pub mod ensemble;
pub mod error;
pub mod export;
pub mod integrate;
pub mod model;
pub mod orbits;
pub mod poincare;
pub mod quantum;
pub mod scenarios;

pub use error::{Error, Result};
pub use integrate::{propagate, propagate_with_tangent, IntegratorConfig, Trajectory};
pub use model::{
    critical_lambda, drive_value, eom_canonical, eom_cartesian, hamiltonian, jacobian_canonical,
    DrivenFlow, PhaseState, SystemParams, TangentFrame,
};
