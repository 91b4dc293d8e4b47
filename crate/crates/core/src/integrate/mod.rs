//! Time stepping for the driven flow and its variational equations.
//!
//! The default engine is the Dormand–Prince 8(5,3) pair; the 5(4) pair with
//! its fourth-order continuous extension is available as an alternative, and a
//! classic fixed-step RK4 is kept for cross-checks. Requested sample times are
//! hit exactly by clamping the step, so sampled states carry full step
//! accuracy rather than interpolation error.

use std::ops::ControlFlow;

use nalgebra::{Matrix3x2, SVector, Vector3};

use crate::error::{Error, Result};
use crate::model::{
    chart_embedding_jacobian, chart_projection_jacobian, DrivenFlow, PhaseState, SystemParams,
    TangentFrame,
};

mod dop853;

const MIN_STEP: f64 = 1e-14;
const SAFETY: f64 = 0.9;
const MAX_STEPS: usize = 50_000_000;

// Dormand–Prince 5(4)
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// A first-order system y' = f(τ, y) of fixed dimension.
pub trait OdeSystem<const D: usize> {
    fn rhs(&self, tau: f64, y: &SVector<f64, D>) -> SVector<f64, D>;

    /// Pulls an accepted state back onto an invariant manifold. Returns true if
    /// `y` was modified.
    fn project(&self, _y: &mut SVector<f64, D>) -> bool {
        false
    }
}

/// Embedded Runge–Kutta pair used by the adaptive stepper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Dormand–Prince 8(5,3), 12 stages.
    #[default]
    Dop853,
    /// Dormand–Prince 5(4), 7 stages with FSAL and a 4th-order dense extension.
    Dopri5,
}

impl Method {
    fn error_exponent(self) -> f64 {
        match self {
            Method::Dop853 => -1.0 / 8.0,
            Method::Dopri5 => -1.0 / 5.0,
        }
    }

    fn factor_bounds(self) -> (f64, f64) {
        match self {
            Method::Dop853 => (1.0 / 3.0, 6.0),
            Method::Dopri5 => (0.2, 5.0),
        }
    }
}

/// Tolerances and step bounds for the adaptive integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest allowed step; `None` means T/20 of the system being integrated.
    pub max_step: Option<f64>,
    /// Times at which states are emitted. When absent every accepted step is emitted.
    pub dense_times: Option<Vec<f64>>,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_step: None,
            dense_times: None,
            method: Method::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self.abs_tol = tol;
        self
    }

    pub fn with_dense_times(mut self, times: Vec<f64>) -> Self {
        self.dense_times = Some(times);
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be > 0".into()));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::InvalidParams("max_step must be > 0".into()));
            }
        }
        if let Some(times) = &self.dense_times {
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidParams(
                    "dense_times must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn stepper(&self, params: &SystemParams) -> AdaptiveStepper {
        AdaptiveStepper {
            method: self.method,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step.unwrap_or(params.period() / 20.0),
        }
    }
}

enum Interp<const D: usize> {
    Dopri([SVector<f64, D>; 5]),
    Hermite {
        f0: SVector<f64, D>,
        f1: SVector<f64, D>,
    },
}

/// One accepted step together with what is needed to interpolate inside it.
pub struct DenseStep<const D: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: SVector<f64, D>,
    pub y1: SVector<f64, D>,
    interp: Interp<D>,
}

impl<const D: usize> DenseStep<D> {
    /// Continuous extension at τ ∈ [t0, t1]: fourth order for DOPRI5, cubic
    /// Hermite otherwise.
    pub fn interpolate(&self, tau: f64) -> SVector<f64, D> {
        let h = self.t1 - self.t0;
        let theta = if h == 0.0 { 0.0 } else { (tau - self.t0) / h };
        let theta1 = 1.0 - theta;
        match &self.interp {
            Interp::Dopri([r1, r2, r3, r4, r5]) => {
                r1 + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta
            }
            Interp::Hermite { f0, f1 } => {
                let dy = self.y1 - self.y0;
                self.y0 * theta1
                    + self.y1 * theta
                    + (dy * (1.0 - 2.0 * theta) - f0 * (h * theta1) + f1 * (h * theta))
                        * (theta * (theta - 1.0))
            }
        }
    }
}

struct Attempt<const D: usize> {
    y_new: SVector<f64, D>,
    f_new: SVector<f64, D>,
    err: f64,
    interp: Interp<D>,
}

/// Adaptive embedded Runge–Kutta stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveStepper {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl AdaptiveStepper {
    fn scale<const D: usize>(&self, y0: &SVector<f64, D>, y1: &SVector<f64, D>) -> SVector<f64, D> {
        SVector::<f64, D>::from_fn(|i, _| {
            self.abs_tol + self.rel_tol * y0[i].abs().max(y1[i].abs())
        })
    }

    fn rms<const D: usize>(v: &SVector<f64, D>, scale: &SVector<f64, D>) -> f64 {
        (v.component_div(scale).norm_squared() / D as f64).sqrt()
    }

    fn initial_step<S: OdeSystem<D>, const D: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: &SVector<f64, D>,
        f0: &SVector<f64, D>,
        dir: f64,
    ) -> f64 {
        let sc = self.scale(y0, y0);
        let d0 = Self::rms(y0, &sc);
        let d1 = Self::rms(f0, &sc);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(self.max_step);
        let y1 = y0 + f0 * (dir * h0);
        let f1 = sys.rhs(t0 + dir * h0, &y1);
        let d2 = Self::rms(&(f1 - f0), &sc) / h0;
        let order = match self.method {
            Method::Dop853 => 8.0,
            Method::Dopri5 => 5.0,
        };
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / order)
        };
        (100.0 * h0).min(h1).min(self.max_step)
    }

    fn attempt_dopri5<S: OdeSystem<D>, const D: usize>(
        &self,
        sys: &S,
        t: f64,
        y: &SVector<f64, D>,
        k1: &SVector<f64, D>,
        hs: f64,
        t_new: f64,
    ) -> Attempt<D> {
        let k2 = sys.rhs(t + C2 * hs, &(y + k1 * (hs * A21)));
        let k3 = sys.rhs(t + C3 * hs, &(y + (k1 * A31 + k2 * A32) * hs));
        let k4 = sys.rhs(t + C4 * hs, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * hs));
        let k5 = sys.rhs(
            t + C5 * hs,
            &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * hs),
        );
        let k6 = sys.rhs(
            t + hs,
            &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * hs),
        );
        let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * hs;
        let k7 = sys.rhs(t_new, &y_new);
        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * hs;
        let err = Self::rms(&err_vec, &self.scale(y, &y_new));
        let dy = y_new - y;
        let bspl = k1 * hs - dy;
        let rcont = [
            *y,
            dy,
            bspl,
            dy - k7 * hs - bspl,
            (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * hs,
        ];
        Attempt {
            y_new,
            f_new: k7,
            err,
            interp: Interp::Dopri(rcont),
        }
    }

    fn attempt_dop853<S: OdeSystem<D>, const D: usize>(
        &self,
        sys: &S,
        t: f64,
        y: &SVector<f64, D>,
        k1: &SVector<f64, D>,
        hs: f64,
        t_new: f64,
    ) -> Attempt<D> {
        use dop853::{A, B, C, E3 as F3, E5 as F5, STAGES};
        let mut k = [SVector::<f64, D>::zeros(); STAGES];
        k[0] = *k1;
        for i in 1..STAGES {
            let mut acc = SVector::<f64, D>::zeros();
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    acc += kj * a;
                }
            }
            k[i] = sys.rhs(t + C[i] * hs, &(y + acc * hs));
        }
        let mut incr = SVector::<f64, D>::zeros();
        for (ki, b) in k.iter().zip(B.iter()) {
            if *b != 0.0 {
                incr += ki * *b;
            }
        }
        let y_new = y + incr * hs;
        let f_new = sys.rhs(t_new, &y_new);

        let mut e5 = f_new * F5[STAGES];
        let mut e3 = f_new * F3[STAGES];
        for (i, ki) in k.iter().enumerate() {
            e5 += ki * F5[i];
            e3 += ki * F3[i];
        }
        let sc = self.scale(y, &y_new);
        let n5 = e5.component_div(&sc).norm_squared();
        let n3 = e3.component_div(&sc).norm_squared();
        let err = if n5 == 0.0 && n3 == 0.0 {
            0.0
        } else {
            hs.abs() * n5 / ((n5 + 0.01 * n3) * D as f64).sqrt()
        };
        Attempt {
            y_new,
            f_new,
            err,
            interp: Interp::Hermite { f0: *k1, f1: f_new },
        }
    }

    /// Integrates from `t_a` to `t_b` (either direction). `stops` are times that
    /// are landed on exactly, ordered along the direction of integration and
    /// lying strictly between `t_a` and `t_b` or equal to `t_b`; `on_stop` is
    /// called with their index. `on_step` sees every accepted step and may
    /// break early, in which case the state at the end of that step is returned.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate<S, const D: usize>(
        &self,
        sys: &S,
        t_a: f64,
        y_a: SVector<f64, D>,
        t_b: f64,
        stops: &[f64],
        mut on_stop: impl FnMut(usize, f64, &SVector<f64, D>),
        mut on_step: impl FnMut(&DenseStep<D>) -> ControlFlow<()>,
    ) -> Result<(f64, SVector<f64, D>)>
    where
        S: OdeSystem<D>,
    {
        if t_a == t_b {
            return Ok((t_a, y_a));
        }
        let dir = (t_b - t_a).signum();
        let expo = self.method.error_exponent();
        let (fac_min, fac_max) = self.method.factor_bounds();
        let mut t = t_a;
        let mut y = y_a;
        let mut k1 = sys.rhs(t, &y);
        let mut h = self.initial_step(sys, t, &y, &k1, dir);
        let mut next_stop = 0usize;
        let mut last_rejected = false;

        for _ in 0..MAX_STEPS {
            let target = stops.get(next_stop).copied().unwrap_or(t_b);
            let remaining = (target - t) * dir;
            let mut landing = false;
            let mut step = h.min(self.max_step);
            if step >= remaining * (1.0 - 1e-12) {
                step = remaining;
                landing = true;
            }
            let min_step = MIN_STEP.max(4.0 * f64::EPSILON * t.abs());
            if step < min_step && !landing {
                return Err(Error::StepUnderflow {
                    last_good_tau: t,
                    min_step,
                });
            }
            let hs = dir * step;
            let t_new = if landing { target } else { t + hs };
            let attempt = match self.method {
                Method::Dop853 => self.attempt_dop853(sys, t, &y, &k1, hs, t_new),
                Method::Dopri5 => self.attempt_dopri5(sys, t, &y, &k1, hs, t_new),
            };
            let err = attempt.err;

            if !err.is_finite() {
                h = step * fac_min;
                last_rejected = true;
                continue;
            }

            if err <= 1.0 {
                let fac = if err == 0.0 {
                    fac_max
                } else {
                    (SAFETY * err.powf(expo)).clamp(fac_min, fac_max)
                };
                let fac = if last_rejected { fac.min(1.0) } else { fac };
                let proposed = step * fac;
                // a clamped landing step should not shrink the running estimate
                h = if landing { proposed.max(h) } else { proposed };
                last_rejected = false;

                let mut y_acc = attempt.y_new;
                let projected = sys.project(&mut y_acc);
                let dense = DenseStep {
                    t0: t,
                    t1: t_new,
                    y0: y,
                    y1: y_acc,
                    interp: attempt.interp,
                };
                t = t_new;
                y = y_acc;
                k1 = if projected {
                    sys.rhs(t, &y)
                } else {
                    attempt.f_new
                };

                if landing && next_stop < stops.len() {
                    on_stop(next_stop, t, &y);
                    next_stop += 1;
                }
                if on_step(&dense).is_break() {
                    return Ok((t, y));
                }
                if landing && t == t_b && next_stop >= stops.len() {
                    return Ok((t, y));
                }
            } else {
                let fac = (SAFETY * err.powf(expo)).clamp(fac_min, 1.0);
                h = step * fac;
                last_rejected = true;
            }
        }
        Err(Error::StepUnderflow {
            last_good_tau: t,
            min_step: MIN_STEP,
        })
    }

    /// Endpoint-only convenience wrapper.
    pub fn solve<S: OdeSystem<D>, const D: usize>(
        &self,
        sys: &S,
        t_a: f64,
        y_a: SVector<f64, D>,
        t_b: f64,
    ) -> Result<SVector<f64, D>> {
        self.integrate(
            sys,
            t_a,
            y_a,
            t_b,
            &[],
            |_, _, _| {},
            |_| ControlFlow::Continue(()),
        )
        .map(|(_, y)| y)
    }
}

/// Classic fourth-order Runge–Kutta with `n_steps` equal steps.
pub fn rk4_fixed<S: OdeSystem<D>, const D: usize>(
    sys: &S,
    t_a: f64,
    y_a: SVector<f64, D>,
    t_b: f64,
    n_steps: usize,
) -> SVector<f64, D> {
    let n = n_steps.max(1);
    let h = (t_b - t_a) / n as f64;
    let mut y = y_a;
    for i in 0..n {
        let t = t_a + i as f64 * h;
        let k1 = sys.rhs(t, &y);
        let k2 = sys.rhs(t + 0.5 * h, &(y + k1 * (0.5 * h)));
        let k3 = sys.rhs(t + 0.5 * h, &(y + k2 * (0.5 * h)));
        let k4 = sys.rhs(t + h, &(y + k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        sys.project(&mut y);
    }
    y
}

fn normalize_head<const D: usize>(y: &mut SVector<f64, D>) -> bool {
    let n = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    if n > 0.0 && n != 1.0 {
        y[0] /= n;
        y[1] /= n;
        y[2] /= n;
        true
    } else {
        false
    }
}

/// Bloch-vector flow, D = 3.
pub struct BlochSystem<'a>(pub &'a DrivenFlow);

impl OdeSystem<3> for BlochSystem<'_> {
    fn rhs(&self, tau: f64, y: &SVector<f64, 3>) -> SVector<f64, 3> {
        self.0.velocity(tau, y)
    }

    fn project(&self, y: &mut SVector<f64, 3>) -> bool {
        normalize_head(y)
    }
}

/// Bloch vector plus `K` tangent vectors carried by the linearised flow.
/// Layout: [s, v_1, …, v_K], so D = 3 + 3K.
pub struct VariationalSystem<'a, const K: usize>(pub &'a DrivenFlow);

impl<const K: usize, const D: usize> OdeSystem<D> for VariationalSystem<'_, K> {
    fn rhs(&self, tau: f64, y: &SVector<f64, D>) -> SVector<f64, D> {
        debug_assert_eq!(D, 3 + 3 * K);
        let s = Vector3::new(y[0], y[1], y[2]);
        let v = self.0.velocity(tau, &s);
        let j = self.0.cartesian_jacobian(tau, &s);
        let mut out = SVector::<f64, D>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&v);
        for k in 0..K {
            let off = 3 + 3 * k;
            let tv = Vector3::new(y[off], y[off + 1], y[off + 2]);
            out.fixed_rows_mut::<3>(off).copy_from(&(j * tv));
        }
        out
    }

    fn project(&self, y: &mut SVector<f64, D>) -> bool {
        normalize_head(y)
    }
}

/// Sampled solution of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub frames: Option<Vec<TangentFrame>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&PhaseState> {
        self.states.last()
    }
}

fn check_span(tau_span: (f64, f64)) -> Result<()> {
    let (a, b) = tau_span;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::InvalidParams(format!(
            "tau span must satisfy b > a, got ({a}, {b})"
        )));
    }
    Ok(())
}

/// Integrates the driven flow over `tau_span` and samples it.
pub fn propagate(
    params: &SystemParams,
    state: &PhaseState,
    tau_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    propagate_flow(&DrivenFlow::new(*params), state, tau_span, config)
}

/// As [`propagate`] for a flow with per-realisation modifications.
pub fn propagate_flow(
    flow: &DrivenFlow,
    state: &PhaseState,
    tau_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    check_span(tau_span)?;
    config.validate()?;
    let (ta, tb) = tau_span;
    let stepper = config.stepper(&flow.params);
    let sys = BlochSystem(flow);
    let s0 = state.cartesian();

    let mut times = Vec::new();
    let mut states = Vec::new();
    match &config.dense_times {
        Some(dense) => {
            if dense.iter().any(|&t| t < ta || t > tb) {
                return Err(Error::InvalidParams(
                    "dense_times must lie inside the integration span".into(),
                ));
            }
            let mut stops: Vec<f64> = dense.iter().copied().filter(|&t| t > ta).collect();
            if dense.first() == Some(&ta) {
                times.push(ta);
                states.push(*state);
            }
            let emit_end = stops.last() == Some(&tb);
            if !emit_end {
                stops.push(tb);
            }
            let n_emit = if emit_end {
                stops.len()
            } else {
                stops.len() - 1
            };
            stepper.integrate(
                &sys,
                ta,
                s0,
                tb,
                &stops,
                |i, t, y| {
                    if i < n_emit {
                        times.push(t);
                        states.push(PhaseState::from_cartesian(y));
                    }
                },
                |_| ControlFlow::Continue(()),
            )?;
        }
        None => {
            times.push(ta);
            states.push(*state);
            stepper.integrate(
                &sys,
                ta,
                s0,
                tb,
                &[],
                |_, _, _| {},
                |step| {
                    times.push(step.t1);
                    states.push(PhaseState::from_cartesian(&step.y1));
                    ControlFlow::Continue(())
                },
            )?;
        }
    }
    Ok(Trajectory {
        times,
        states,
        frames: None,
    })
}

/// Bloch vector at `t_b` starting from `s` at `t_a`; either direction.
pub fn flow_endpoint(
    flow: &DrivenFlow,
    s: &Vector3<f64>,
    t_a: f64,
    t_b: f64,
    config: &IntegratorConfig,
) -> Result<Vector3<f64>> {
    let stepper = config.stepper(&flow.params);
    stepper.solve(&BlochSystem(flow), t_a, *s, t_b)
}

/// Co-integrates the Bloch vector and two Cartesian tangent vectors.
pub fn flow_tangent_cartesian(
    flow: &DrivenFlow,
    s: &Vector3<f64>,
    tangent: &Matrix3x2<f64>,
    t_a: f64,
    t_b: f64,
    config: &IntegratorConfig,
) -> Result<(Vector3<f64>, Matrix3x2<f64>)> {
    let mut y = SVector::<f64, 9>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(s);
    y.fixed_rows_mut::<3>(3).copy_from(&tangent.column(0));
    y.fixed_rows_mut::<3>(6).copy_from(&tangent.column(1));
    let stepper = config.stepper(&flow.params);
    let out = stepper.solve(&VariationalSystem::<2>(flow), t_a, y, t_b)?;
    let s1 = Vector3::new(out[0], out[1], out[2]);
    let m = Matrix3x2::new(out[3], out[6], out[4], out[7], out[5], out[8]);
    Ok((s1, m))
}

/// Propagates a state and its (z, φ) tangent frame over `tau_span`.
///
/// The variational equations are integrated for Cartesian tangent vectors and
/// converted to the canonical chart only at the endpoints, so trajectories may
/// pass arbitrarily close to the poles in between.
pub fn propagate_with_tangent(
    params: &SystemParams,
    state: &PhaseState,
    frame: &TangentFrame,
    tau_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<(PhaseState, TangentFrame)> {
    propagate_with_tangent_flow(&DrivenFlow::new(*params), state, frame, tau_span, config)
}

pub fn propagate_with_tangent_flow(
    flow: &DrivenFlow,
    state: &PhaseState,
    frame: &TangentFrame,
    tau_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<(PhaseState, TangentFrame)> {
    let (ta, tb) = tau_span;
    if ta == tb {
        return Ok((*state, *frame));
    }
    if !(ta.is_finite() && tb.is_finite()) {
        return Err(Error::InvalidParams("non-finite tau span".into()));
    }
    config.validate()?;
    let guard = flow.params.pole_guard;
    if state.z.abs() >= 1.0 - guard {
        return Err(Error::PoleSingularity { z: state.z });
    }
    let s0 = state.cartesian();
    let v0 = chart_embedding_jacobian(&s0) * frame.0;
    let (s1, v1) = flow_tangent_cartesian(flow, &s0, &v0, ta, tb, config)?;
    let end = PhaseState::from_cartesian(&s1);
    if end.z.abs() >= 1.0 - guard {
        return Err(Error::PoleSingularity { z: end.z });
    }
    let m = chart_projection_jacobian(&s1) * v1;
    Ok((end, TangentFrame(m)))
}
