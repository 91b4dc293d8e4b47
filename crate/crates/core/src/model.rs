//! Mean-field model of the driven two-mode condensate.
//!
//! The classical Hamiltonian in units of the bare Rabi frequency Ω0 is
//!
//! ```text
//! H(z, φ, τ) = (Λ/2) z² − d(τ) √(1 − z²) cos φ + ε z,   d(τ) = 1 + A sin(ω (τ + t0))
//! ```
//!
//! with τ = Ω0 t. Hamilton's equations use ż = −∂H/∂φ and φ̇ = +∂H/∂z. The
//! canonical pair (z, φ) is a chart on the Bloch sphere; integration happens
//! in Cartesian coordinates (x, y, z), which are free of the pole singularity.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};

use crate::error::{Error, Result};

/// Default distance from |z| = 1 inside which the canonical chart refuses to evaluate.
pub const DEFAULT_POLE_GUARD: f64 = 1e-9;

/// Nonlinearity Nχ/2π in Hz used when nothing else is configured.
pub const DEFAULT_N_CHI_HZ: f64 = 32.0;

/// Dimensionless model parameters plus the anchors needed to convert to lab time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Λ = Nχ/Ω0.
    pub lambda: f64,
    /// ε = δ/Ω0.
    pub epsilon: f64,
    /// Modulation depth A of the coupling.
    pub drive_amp: f64,
    /// ω in units of Ω0.
    pub drive_freq: f64,
    /// Driving offset t0 as a fraction of the period T = 2π/ω.
    pub t0_frac: f64,
    pub n_atoms: u32,
    /// Nχ/2π in Hz. Only used for converting between τ and milliseconds.
    pub n_chi_hz: Option<f64>,
    pub pole_guard: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            epsilon: -0.11,
            drive_amp: 0.0,
            drive_freq: 1.5,
            t0_frac: 0.0,
            n_atoms: 700,
            n_chi_hz: Some(DEFAULT_N_CHI_HZ),
            pole_guard: DEFAULT_POLE_GUARD,
        }
    }
}

impl SystemParams {
    pub fn new(lambda: f64, epsilon: f64, drive_amp: f64, drive_freq: f64) -> Self {
        Self {
            lambda,
            epsilon,
            drive_amp,
            drive_freq,
            ..Self::default()
        }
    }

    pub fn with_t0_frac(mut self, t0_frac: f64) -> Self {
        self.t0_frac = t0_frac;
        self
    }

    pub fn with_drive_amp(mut self, drive_amp: f64) -> Self {
        self.drive_amp = drive_amp;
        self
    }

    pub fn with_n_atoms(mut self, n_atoms: u32) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn undriven(&self) -> Self {
        self.with_drive_amp(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda,
            self.epsilon,
            self.drive_amp,
            self.drive_freq,
            self.t0_frac,
            self.pole_guard,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.drive_freq <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "drive_freq must be > 0, got {}",
                self.drive_freq
            )));
        }
        if self.drive_amp < 0.0 {
            return Err(Error::InvalidParams(format!(
                "drive_amp must be >= 0, got {}",
                self.drive_amp
            )));
        }
        if !(0.0..1.0).contains(&self.t0_frac) {
            return Err(Error::InvalidParams(format!(
                "t0_frac must lie in [0, 1), got {}",
                self.t0_frac
            )));
        }
        if self.n_atoms < 2 {
            return Err(Error::InvalidParams(format!(
                "n_atoms must be >= 2, got {}",
                self.n_atoms
            )));
        }
        if !(self.pole_guard > 0.0 && self.pole_guard < 1.0) {
            return Err(Error::InvalidParams("pole_guard must lie in (0, 1)".into()));
        }
        if let Some(nchi) = self.n_chi_hz {
            if !(nchi > 0.0 && nchi.is_finite()) {
                return Err(Error::InvalidParams("n_chi_hz must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Driving period T = 2π/ω in units of 1/Ω0.
    pub fn period(&self) -> f64 {
        TAU / self.drive_freq
    }

    /// Driving offset t0 in units of 1/Ω0.
    pub fn t0(&self) -> f64 {
        self.t0_frac * self.period()
    }

    /// ħ_eff = 2/N.
    pub fn hbar_eff(&self) -> f64 {
        2.0 / self.n_atoms as f64
    }

    /// Ω0 in rad/s, derived from Ω0 = Nχ/Λ.
    pub fn omega0_rad_per_s(&self) -> Option<f64> {
        let nchi = self.n_chi_hz?;
        if self.lambda == 0.0 {
            return None;
        }
        Some(TAU * nchi / self.lambda.abs())
    }

    pub fn tau_from_ms(&self, ms: f64) -> Option<f64> {
        self.omega0_rad_per_s().map(|w| w * ms * 1e-3)
    }

    pub fn ms_from_tau(&self, tau: f64) -> Option<f64> {
        self.omega0_rad_per_s().map(|w| tau / w * 1e3)
    }
}

/// Ω(τ)/Ω0 = 1 + A sin(ω (τ + t0)).
pub fn drive_value(params: &SystemParams, tau: f64) -> f64 {
    1.0 + params.drive_amp * (params.drive_freq * (tau + params.t0())).sin()
}

/// Bifurcation threshold Λ_cr = (1 + |ε|^{2/3})^{3/2} of the undriven system.
pub fn critical_lambda(epsilon: f64) -> f64 {
    (1.0 + epsilon.abs().powf(2.0 / 3.0)).powf(1.5)
}

/// Wraps an angle difference into (−π, π].
pub fn wrap_angle_diff(d: f64) -> f64 {
    let r = d.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A point (z, φ) on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub z: f64,
    pub phi: f64,
}

impl PhaseState {
    /// Builds a state, reducing φ into [0, 2π). |z| > 1 is rejected.
    pub fn new(z: f64, phi: f64) -> Result<Self> {
        if !(z.is_finite() && phi.is_finite()) || z.abs() > 1.0 {
            return Err(Error::InvalidParams(format!(
                "phase state out of range: z = {z}, phi = {phi}"
            )));
        }
        Ok(Self {
            z,
            phi: reduce_phase(phi),
        })
    }

    pub fn from_cartesian(s: &Vector3<f64>) -> Self {
        let n = s.norm();
        let z = (s.z / n).clamp(-1.0, 1.0);
        let phi = if s.x == 0.0 && s.y == 0.0 {
            0.0
        } else {
            s.y.atan2(s.x)
        };
        Self {
            z,
            phi: reduce_phase(phi),
        }
    }

    pub fn cartesian(&self) -> Vector3<f64> {
        let r = (1.0 - self.z * self.z).max(0.0).sqrt();
        Vector3::new(r * self.phi.cos(), r * self.phi.sin(), self.z)
    }

    /// Euclidean distance in the (z, φ) chart with φ taken modulo 2π.
    pub fn chart_distance(&self, other: &PhaseState) -> f64 {
        let dz = self.z - other.z;
        let dphi = wrap_angle_diff(self.phi - other.phi);
        (dz * dz + dphi * dphi).sqrt()
    }

    /// Chart displacement `other - self` with the φ component wrapped.
    pub fn chart_delta(&self, other: &PhaseState) -> Vector2<f64> {
        Vector2::new(other.z - self.z, wrap_angle_diff(other.phi - self.phi))
    }

    /// Straight-line distance between the Cartesian images.
    pub fn sphere_distance(&self, other: &PhaseState) -> f64 {
        (self.cartesian() - other.cartesian()).norm()
    }
}

fn reduce_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Accumulated derivative of the flow in (z, φ) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame(pub Matrix2<f64>);

impl TangentFrame {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

impl Default for TangentFrame {
    fn default() -> Self {
        Self::identity()
    }
}

/// Mean-field energy per atom in units of Ω0.
pub fn hamiltonian(params: &SystemParams, state: &PhaseState, tau: f64) -> f64 {
    let r = (1.0 - state.z * state.z).max(0.0).sqrt();
    0.5 * params.lambda * state.z * state.z - drive_value(params, tau) * r * state.phi.cos()
        + params.epsilon * state.z
}

/// Same energy evaluated from a Cartesian point.
pub fn hamiltonian_cartesian(params: &SystemParams, s: &Vector3<f64>, tau: f64) -> f64 {
    0.5 * params.lambda * s.z * s.z - drive_value(params, tau) * s.x + params.epsilon * s.z
}

fn chart_radius(params: &SystemParams, z: f64) -> Result<f64> {
    if z.abs() >= 1.0 - params.pole_guard {
        return Err(Error::PoleSingularity { z });
    }
    Ok((1.0 - z * z).sqrt())
}

/// (dz/dτ, dφ/dτ) from Hamilton's equations in the canonical chart.
pub fn eom_canonical(params: &SystemParams, state: &PhaseState, tau: f64) -> Result<Vector2<f64>> {
    let r = chart_radius(params, state.z)?;
    let d = drive_value(params, tau);
    let (s, c) = state.phi.sin_cos();
    Ok(Vector2::new(
        -d * r * s,
        params.lambda * state.z + d * state.z * c / r + params.epsilon,
    ))
}

/// Pole-free equations of motion for the unit Bloch vector.
pub fn eom_cartesian(params: &SystemParams, s: &Vector3<f64>, tau: f64) -> Vector3<f64> {
    DrivenFlow::new(*params).velocity(tau, s)
}

/// ∂(ż, φ̇)/∂(z, φ). Traceless for every input.
pub fn jacobian_canonical(
    params: &SystemParams,
    state: &PhaseState,
    tau: f64,
) -> Result<Matrix2<f64>> {
    let r = chart_radius(params, state.z)?;
    let d = drive_value(params, tau);
    let z = state.z;
    let (s, c) = state.phi.sin_cos();
    let dzdot_dz = d * z * s / r;
    let dzdot_dphi = -d * r * c;
    let dphidot_dz = params.lambda + d * c / (r * r * r);
    let dphidot_dphi = -d * z * s / r;
    Ok(Matrix2::new(dzdot_dz, dzdot_dphi, dphidot_dz, dphidot_dphi))
}

/// Columns are the Cartesian images of the chart basis vectors ∂/∂z and ∂/∂φ at `s`.
pub fn chart_embedding_jacobian(s: &Vector3<f64>) -> Matrix3x2<f64> {
    let r2 = s.x * s.x + s.y * s.y;
    let r = r2.sqrt();
    let (cz_x, cz_y) = if r > 0.0 {
        (-s.z * s.x / r2, -s.z * s.y / r2)
    } else {
        (0.0, 0.0)
    };
    Matrix3x2::new(cz_x, -s.y, cz_y, s.x, 1.0, 0.0)
}

/// Derivative of (x, y, z) ↦ (z, atan2(y, x)).
pub fn chart_projection_jacobian(s: &Vector3<f64>) -> Matrix2x3<f64> {
    let r2 = s.x * s.x + s.y * s.y;
    Matrix2x3::new(0.0, 0.0, 1.0, -s.y / r2, s.x / r2, 0.0)
}

/// The Cartesian vector field with optional per-realisation modifications:
/// a static detuning offset and an exponential decay of Λ from atom loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivenFlow {
    pub params: SystemParams,
    pub detuning_offset: f64,
    /// 1/e time of the atom number in units of 1/Ω0; Λ(τ) = Λ e^{−τ/τ_loss}.
    pub lambda_loss_tau: Option<f64>,
}

impl DrivenFlow {
    pub fn new(params: SystemParams) -> Self {
        Self {
            params,
            detuning_offset: 0.0,
            lambda_loss_tau: None,
        }
    }

    pub fn with_detuning_offset(mut self, offset: f64) -> Self {
        self.detuning_offset = offset;
        self
    }

    pub fn with_lambda_loss(mut self, tau_loss: Option<f64>) -> Self {
        self.lambda_loss_tau = tau_loss;
        self
    }

    #[inline]
    pub fn lambda_at(&self, tau: f64) -> f64 {
        match self.lambda_loss_tau {
            Some(tl) => self.params.lambda * (-tau / tl).exp(),
            None => self.params.lambda,
        }
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.params.epsilon + self.detuning_offset
    }

    #[inline]
    pub fn velocity(&self, tau: f64, s: &Vector3<f64>) -> Vector3<f64> {
        let d = drive_value(&self.params, tau);
        let w = self.lambda_at(tau) * s.z + self.epsilon();
        Vector3::new(-w * s.y, w * s.x + d * s.z, -d * s.y)
    }

    /// ∂ṡ/∂s for the Cartesian field.
    #[inline]
    pub fn cartesian_jacobian(&self, tau: f64, s: &Vector3<f64>) -> Matrix3<f64> {
        let d = drive_value(&self.params, tau);
        let lam = self.lambda_at(tau);
        let w = lam * s.z + self.epsilon();
        Matrix3::new(0.0, -w, -lam * s.y, w, 0.0, lam * s.x + d, 0.0, -d, 0.0)
    }
}
