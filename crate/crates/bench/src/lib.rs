//! Shared fixtures for the criterion benches.

use pbchaos::{PhaseState, SystemParams};

/// Mixed-phase-space parameters: Λ=0.7, ε=−0.11, A=0.2, ω=1.5.
pub fn driven() -> SystemParams {
    SystemParams::new(0.7, -0.11, 0.2, 1.5)
}

pub fn start() -> PhaseState {
    PhaseState::new(0.3, 2.0).expect("valid start")
}
