//! Fixed points, periodic orbits of the stroboscopic map, and chaos indicators.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::ControlFlow;

use nalgebra::{Matrix2, SVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::export::{num, CsvTable};
use crate::integrate::{
    flow_endpoint, propagate_with_tangent, BlochSystem, IntegratorConfig, VariationalSystem,
};
use crate::model::{jacobian_canonical, DrivenFlow, PhaseState, SystemParams, TangentFrame};
use crate::poincare::{contour_seeds, stroboscopic_map_with};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_PARABOLIC_BAND: f64 = 1e-3;
pub const DEFAULT_DEDUP_RADIUS: f64 = 1e-4;
pub const DEFAULT_RING_SIZE: usize = 16;
pub const DEFAULT_THRESHOLD_SCALE: f64 = 3.0;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stability {
    Elliptic,
    Hyperbolic,
    InverseHyperbolic,
    Parabolic,
}

impl Stability {
    pub fn from_trace(trace: f64, parabolic_band: f64) -> Self {
        if (trace.abs() - 2.0).abs() < parabolic_band {
            Stability::Parabolic
        } else if trace.abs() < 2.0 {
            Stability::Elliptic
        } else if trace > 2.0 {
            Stability::Hyperbolic
        } else {
            Stability::InverseHyperbolic
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Elliptic => "elliptic",
            Stability::Hyperbolic => "hyperbolic",
            Stability::InverseHyperbolic => "inverse_hyperbolic",
            Stability::Parabolic => "parabolic",
        }
    }

    pub fn is_unstable(&self) -> bool {
        matches!(self, Stability::Hyperbolic | Stability::InverseHyperbolic)
    }
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    pub anchor: PhaseState,
    pub n: usize,
    pub tau_offset: f64,
    pub monodromy: Matrix2<f64>,
    pub trace: f64,
    pub stability: Stability,
    pub residue: f64,
    /// Chart distance |Pⁿ(anchor) − anchor| at acceptance.
    pub residual: f64,
}

impl PeriodicOrbit {
    pub fn det(&self) -> f64 {
        self.monodromy.determinant()
    }
}

/// Knobs for Newton searches.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Largest chart step per iteration.
    pub max_step: f64,
    pub parabolic_band: f64,
    pub integrator: IntegratorConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            max_step: 0.2,
            parabolic_band: DEFAULT_PARABOLIC_BAND,
            integrator: IntegratorConfig::default().with_tolerance(1e-12),
        }
    }
}

impl NewtonConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.newton_tol = tol;
        self
    }
}

/// Roots of the undriven flow on the φ = π and φ = 0 meridians, φ = π first,
/// each ordered by z.
pub fn find_fixed_points_undriven(params: &SystemParams) -> Vec<(PhaseState, Stability)> {
    let p = params.undriven();
    let mut out = Vec::new();
    for (phi, sign) in [(PI, -1.0), (0.0, 1.0)] {
        let f = |z: f64| {
            let r = (1.0 - z * z).sqrt();
            p.lambda * z + sign * z / r + p.epsilon
        };
        let df = |z: f64| {
            let r = (1.0 - z * z).sqrt();
            p.lambda + sign / (r * r * r)
        };
        for z in bracket_roots(f, df) {
            let state = PhaseState { z, phi };
            let det = jacobian_canonical(&p, &state, 0.0)
                .map(|j| j.determinant())
                .unwrap_or(0.0);
            let stab = if det.abs() < SINGULAR_DET {
                Stability::Parabolic
            } else if det > 0.0 {
                Stability::Elliptic
            } else {
                Stability::Hyperbolic
            };
            out.push((state, stab));
        }
    }
    out
}

// Sign-change scan in z = sin u, which resolves roots crowding the poles,
// then bisection and a final Newton polish.
fn bracket_roots(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Vec<f64> {
    const N: usize = 4000;
    let lim = PI / 2.0 - 1e-7;
    let zs: Vec<f64> = (0..=N)
        .map(|i| (-lim + 2.0 * lim * i as f64 / N as f64).sin())
        .collect();
    let fs: Vec<f64> = zs.iter().map(|&z| f(z)).collect();
    let mut roots = Vec::new();
    for i in 0..N {
        let (a, b, fa, fb) = (zs[i], zs[i + 1], fs[i], fs[i + 1]);
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa * fb >= 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut flo) = (a, b, fa);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = f(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm * flo < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        let mut z = 0.5 * (lo + hi);
        let d = df(z);
        if d != 0.0 {
            let polished = z - f(z) / d;
            if polished >= a && polished <= b {
                z = polished;
            }
        }
        roots.push(z);
    }
    if fs[N] == 0.0 {
        roots.push(zs[N]);
    }
    roots
}

/// Newton search for a period-`n` orbit of the map started at `tau_offset`.
pub fn find_periodic_orbit(
    params: &SystemParams,
    guess: &PhaseState,
    n: usize,
    tau_offset: f64,
    newton_tol: f64,
) -> Result<PeriodicOrbit> {
    find_periodic_orbit_with(
        params,
        guess,
        n,
        tau_offset,
        &NewtonConfig::default().with_tol(newton_tol),
    )
}

pub fn find_periodic_orbit_with(
    params: &SystemParams,
    guess: &PhaseState,
    n: usize,
    tau_offset: f64,
    cfg: &NewtonConfig,
) -> Result<PeriodicOrbit> {
    if n == 0 {
        return Err(Error::InvalidParams("orbit period n must be >= 1".into()));
    }
    let guard = params.pole_guard;
    if guess.z.abs() >= 1.0 - guard {
        return Err(Error::PoleSingularity { z: guess.z });
    }
    let span = (tau_offset, tau_offset + n as f64 * params.period());
    let mut x = *guess;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (img, frame) =
            propagate_with_tangent(params, &x, &TangentFrame::identity(), span, &cfg.integrator)?;
        let f = x.chart_delta(&img);
        residual = f.norm();
        let m = frame.0;
        if residual < cfg.newton_tol {
            let trace = m.trace();
            return Ok(PeriodicOrbit {
                anchor: x,
                n,
                tau_offset,
                monodromy: m,
                trace,
                stability: Stability::from_trace(trace, cfg.parabolic_band),
                residue: (2.0 - trace) / 4.0,
                residual,
            });
        }
        let a = m - Matrix2::identity();
        let det = a.determinant();
        if det.abs() < SINGULAR_DET {
            return Err(Error::SingularJacobian { det });
        }
        let mut dx = -(a.try_inverse().ok_or(Error::SingularJacobian { det })? * f);
        let len = dx.norm();
        if len > cfg.max_step {
            dx *= cfg.max_step / len;
        }
        let z = (x.z + dx[0]).clamp(-1.0 + 2.0 * guard, 1.0 - 2.0 * guard);
        x = PhaseState::new(z, x.phi + dx[1])?;
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Image of the anchor after one driving period.
pub fn orbit_rotation_check(params: &SystemParams, orbit: &PeriodicOrbit) -> Result<PhaseState> {
    stroboscopic_map_with(
        params,
        &orbit.anchor,
        1,
        orbit.tau_offset,
        &NewtonConfig::default().integrator,
    )
}

/// Same-class partner anchor of `orbit` among `others`, the one closest to P_T(anchor).
pub fn rotation_partner<'a>(
    params: &SystemParams,
    orbit: &PeriodicOrbit,
    others: &'a [PeriodicOrbit],
) -> Result<Option<(&'a PeriodicOrbit, f64)>> {
    let img = orbit_rotation_check(params, orbit)?;
    Ok(others
        .iter()
        .filter(|o| o.stability == orbit.stability)
        .map(|o| (o, o.anchor.chart_distance(&img)))
        .min_by(|a, b| a.1.total_cmp(&b.1)))
}

fn meridian_crossing(s: &Vector3<f64>, phi_c: f64) -> (f64, bool) {
    let (sn, cs) = phi_c.sin_cos();
    (s.y * cs - s.x * sn, s.x * cs + s.y * sn > 0.0)
}

/// Period of the undriven orbit through `state`: the first return to `state`
/// through its own half-meridian in the same direction. `None` if there is no
/// return within `max_time` or the state is stationary.
pub fn undriven_period(
    params: &SystemParams,
    state: &PhaseState,
    max_time: f64,
    config: &IntegratorConfig,
) -> Result<Option<f64>> {
    let p = params.undriven();
    let flow = DrivenFlow::new(p);
    let phi_c = state.phi;
    let s0 = state.cartesian();
    let grad = Vector3::new(-phi_c.sin(), phi_c.cos(), 0.0);
    let dir0 = grad.dot(&flow.velocity(0.0, &s0));
    if dir0.abs() < 1e-12 {
        return Ok(None);
    }
    let stepper = config.stepper(&p);
    let sys = BlochSystem(&flow);
    let mut found: Option<f64> = None;
    let mut err: Option<Error> = None;
    stepper.integrate(
        &sys,
        0.0,
        s0,
        max_time,
        &[],
        |_, _, _| {},
        |step| {
            let (g0, _) = meridian_crossing(&step.y0, phi_c);
            let (g1, side) = meridian_crossing(&step.y1, phi_c);
            let crosses = if dir0 > 0.0 {
                g0 < 0.0 && g1 >= 0.0
            } else {
                g0 > 0.0 && g1 <= 0.0
            };
            if !crosses || !side {
                return ControlFlow::Continue(());
            }
            let mut t = step.t0 + (step.t1 - step.t0) * g0 / (g0 - g1);
            for _ in 0..30 {
                let s = match flow_endpoint(&flow, &step.y0, step.t0, t, config) {
                    Ok(s) => s,
                    Err(e) => {
                        err = Some(e);
                        return ControlFlow::Break(());
                    }
                };
                let dg = grad.dot(&flow.velocity(t, &s));
                let g = meridian_crossing(&s, phi_c).0;
                let dt = g / dg;
                t -= dt;
                if dt.abs() < 1e-13 * t.abs().max(1.0) {
                    break;
                }
            }
            match flow_endpoint(&flow, &step.y0, step.t0, t, config) {
                Ok(s) if (s - s0).norm() < 1e-6 => {
                    found = Some(t);
                    ControlFlow::Break(())
                }
                Ok(_) => ControlFlow::Continue(()),
                Err(e) => {
                    err = Some(e);
                    ControlFlow::Break(())
                }
            }
        },
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(found)
}

/// Points on the meridian through `center` whose undriven period equals
/// `n` driving periods, located by scan and bisection on z.
pub fn resonance_points(
    params: &SystemParams,
    center: &PhaseState,
    n: usize,
    config: &IntegratorConfig,
) -> Result<Vec<PhaseState>> {
    const SCAN: usize = 48;
    let target = n as f64 * params.period();
    let max_time = 4.0 * target;
    let period_minus = |z: f64| -> Result<Option<f64>> {
        let st = PhaseState { z, phi: center.phi };
        Ok(undriven_period(params, &st, max_time, config)?.map(|p| p - target))
    };
    let mut out = Vec::new();
    for end in [1.0 - 1e-3, -1.0 + 1e-3] {
        let mut prev: Option<(f64, f64)> = None;
        for k in 1..=SCAN {
            let z = center.z + (end - center.z) * k as f64 / SCAN as f64;
            let cur = period_minus(z)?.map(|v| (z, v));
            if let (Some((za, va)), Some((zb, vb))) = (prev, cur) {
                if va * vb <= 0.0 {
                    let (mut lo, mut hi, mut vlo) = (za, zb, va);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        match period_minus(mid)? {
                            Some(vm) if vm * vlo > 0.0 => {
                                lo = mid;
                                vlo = vm;
                            }
                            Some(_) => hi = mid,
                            None => break,
                        }
                        if (hi - lo).abs() < 1e-12 {
                            break;
                        }
                    }
                    out.push(PhaseState {
                        z: 0.5 * (lo + hi),
                        phi: center.phi,
                    });
                }
            }
            prev = cur;
        }
    }
    Ok(out)
}

/// Result of a resonance-chain search.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceChain {
    pub n: usize,
    pub tau_offset: f64,
    /// Undriven resonant points the guesses were seeded from.
    pub resonant_points: Vec<PhaseState>,
    pub guesses: usize,
    /// Newton failures, by guess index.
    pub failures: Vec<(usize, Error)>,
    /// Distinct primitive orbits in guess order.
    pub orbits: Vec<PeriodicOrbit>,
}

impl ResonanceChain {
    pub fn count(&self, stab: Stability) -> usize {
        self.orbits.iter().filter(|o| o.stability == stab).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub newton: NewtonConfig,
    pub ring_size: usize,
    pub dedup_radius: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            newton: NewtonConfig::default(),
            ring_size: DEFAULT_RING_SIZE,
            dedup_radius: DEFAULT_DEDUP_RADIUS,
        }
    }
}

/// Period-`n` orbits seeded from rings on the undriven n:1 resonant tori
/// around every elliptic undriven fixed point.
pub fn find_resonance_chain(
    params: &SystemParams,
    n: usize,
    tau_offset: f64,
) -> Result<ResonanceChain> {
    find_resonance_chain_with(params, n, tau_offset, &ChainConfig::default())
}

pub fn find_resonance_chain_with(
    params: &SystemParams,
    n: usize,
    tau_offset: f64,
    cfg: &ChainConfig,
) -> Result<ResonanceChain> {
    params.validate()?;
    let icfg = &cfg.newton.integrator;
    let mut resonant_points = Vec::new();
    let mut guesses = Vec::new();
    for (center, stab) in find_fixed_points_undriven(params) {
        if stab != Stability::Elliptic {
            continue;
        }
        for p in resonance_points(params, &center, n, icfg)? {
            let period = undriven_period(params, &p, 8.0 * n as f64 * params.period(), icfg)?
                .unwrap_or(n as f64 * params.period());
            guesses.extend(contour_seeds(params, &p, cfg.ring_size, period)?);
            resonant_points.push(p);
        }
    }
    chain_from_guesses(params, n, tau_offset, &guesses, resonant_points, cfg)
}

/// Newton from every guess, then deduplication and removal of orbits whose
/// true period is a proper divisor of `n`.
pub fn chain_from_guesses(
    params: &SystemParams,
    n: usize,
    tau_offset: f64,
    guesses: &[PhaseState],
    resonant_points: Vec<PhaseState>,
    cfg: &ChainConfig,
) -> Result<ResonanceChain> {
    let results: Vec<Result<PeriodicOrbit>> = guesses
        .par_iter()
        .map(|g| find_periodic_orbit_with(params, g, n, tau_offset, &cfg.newton))
        .collect();
    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => {
                if orbits
                    .iter()
                    .all(|q| q.anchor.chart_distance(&o.anchor) >= cfg.dedup_radius)
                    && is_primitive(params, &o, cfg)?
                {
                    orbits.push(o);
                }
            }
            Err(e) => failures.push((i, e)),
        }
    }
    Ok(ResonanceChain {
        n,
        tau_offset,
        resonant_points,
        guesses: guesses.len(),
        failures,
        orbits,
    })
}

fn is_primitive(params: &SystemParams, orbit: &PeriodicOrbit, cfg: &ChainConfig) -> Result<bool> {
    for d in (1..orbit.n).filter(|d| orbit.n % d == 0) {
        let img = stroboscopic_map_with(
            params,
            &orbit.anchor,
            d,
            orbit.tau_offset,
            &cfg.newton.integrator,
        )?;
        if img.chart_distance(&orbit.anchor) < cfg.dedup_radius {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn orbits_to_csv(orbits: &[PeriodicOrbit]) -> CsvTable {
    let mut t = CsvTable::new(&["n", "z", "phi", "trace", "class"]);
    for o in orbits {
        t.push(vec![
            o.n.to_string(),
            num(o.anchor.z),
            num(o.anchor.phi),
            num(o.trace),
            o.stability.to_string(),
        ]);
    }
    t
}

fn initial_tangent(s: &PhaseState) -> Vector3<f64> {
    let cos_t = s.z;
    let sin_t = (1.0 - s.z * s.z).max(0.0).sqrt();
    let (sp, cp) = s.phi.sin_cos();
    let e_theta = Vector3::new(cos_t * cp, cos_t * sp, -sin_t);
    let e_phi = Vector3::new(-sp, cp, 0.0);
    (e_theta + e_phi) / 2f64.sqrt()
}

/// Finite-time maximal Lyapunov exponent (Benettin), in units of 1/τ.
pub fn lyapunov_exponent(
    params: &SystemParams,
    state: &PhaseState,
    n_periods: usize,
    renorm_every: usize,
) -> Result<f64> {
    lyapunov_exponent_with(
        params,
        state,
        n_periods,
        renorm_every,
        &IntegratorConfig::default(),
    )
}

pub fn lyapunov_exponent_with(
    params: &SystemParams,
    state: &PhaseState,
    n_periods: usize,
    renorm_every: usize,
    config: &IntegratorConfig,
) -> Result<f64> {
    if n_periods < 10 {
        return Err(Error::InvalidParams("n_periods must be >= 10".into()));
    }
    if renorm_every == 0 {
        return Err(Error::InvalidParams("renorm_every must be >= 1".into()));
    }
    let flow = DrivenFlow::new(*params);
    let sys = VariationalSystem::<1>(&flow);
    let stepper = config.stepper(params);
    let period = params.period();
    let mut y = SVector::<f64, 6>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&state.cartesian());
    y.fixed_rows_mut::<3>(3).copy_from(&initial_tangent(state));
    let mut sum = 0.0;
    let mut k = 0;
    while k < n_periods {
        let chunk = renorm_every.min(n_periods - k);
        let ta = k as f64 * period;
        let tb = (k + chunk) as f64 * period;
        y = stepper.solve(&sys, ta, y, tb)?;
        let mut v = y.fixed_rows_mut::<3>(3);
        let g = v.norm();
        sum += g.ln();
        v /= g;
        k += chunk;
    }
    Ok(sum / (n_periods as f64 * period))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub n_z: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn new(n_z: usize, n_phi: usize) -> Self {
        Self { n_z, n_phi }
    }

    /// Cell centers, z-major.
    pub fn centers(&self) -> Vec<PhaseState> {
        crate::poincare::grid_seeds(self.n_z, self.n_phi)
    }

    pub fn cell_area(&self) -> f64 {
        (2.0 / self.n_z as f64) * (TAU / self.n_phi as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosCell {
    pub center: PhaseState,
    /// NaN when the cell failed.
    pub lambda: f64,
    pub chaotic: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosMap {
    pub grid: GridSpec,
    pub n_periods: usize,
    pub threshold: f64,
    pub cells: Vec<ChaosCell>,
}

impl ChaosMap {
    pub fn chaotic_fraction(&self) -> f64 {
        let ok: Vec<_> = self.cells.iter().filter(|c| !c.failed).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|c| c.chaotic).count() as f64 / ok.len() as f64
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["z", "phi", "lambda", "chaotic"]);
        for c in &self.cells {
            t.push(vec![
                num(c.center.z),
                num(c.center.phi),
                num(c.lambda),
                u8::from(c.chaotic).to_string(),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosMapConfig {
    pub renorm_every: usize,
    /// The chaotic threshold is `(threshold_scale + ln n_periods) / (n_periods · T)`:
    /// regular orbits still grow tangent vectors linearly through shear.
    pub threshold_scale: f64,
    pub integrator: IntegratorConfig,
}

impl Default for ChaosMapConfig {
    fn default() -> Self {
        Self {
            renorm_every: 1,
            threshold_scale: DEFAULT_THRESHOLD_SCALE,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Exponent above which a finite-time estimate over `n_periods` counts as chaotic.
pub fn chaos_threshold(params: &SystemParams, n_periods: usize, scale: f64) -> f64 {
    let n = n_periods as f64;
    (scale + n.ln()) / (n * params.period())
}

pub fn chaos_map(params: &SystemParams, grid: &GridSpec, n_periods: usize) -> Result<ChaosMap> {
    chaos_map_with(params, grid, n_periods, &ChaosMapConfig::default())
}

pub fn chaos_map_with(
    params: &SystemParams,
    grid: &GridSpec,
    n_periods: usize,
    cfg: &ChaosMapConfig,
) -> Result<ChaosMap> {
    params.validate()?;
    if grid.n_z == 0 || grid.n_phi == 0 {
        return Err(Error::InvalidParams("grid must be nonempty".into()));
    }
    if n_periods < 10 {
        return Err(Error::InvalidParams("n_periods must be >= 10".into()));
    }
    let threshold = chaos_threshold(params, n_periods, cfg.threshold_scale);
    let cells = grid
        .centers()
        .par_iter()
        .map(|c| {
            match lyapunov_exponent_with(params, c, n_periods, cfg.renorm_every, &cfg.integrator)
            {
                Ok(l) => ChaosCell {
                    center: *c,
                    lambda: l,
                    chaotic: l > threshold,
                    failed: false,
                },
                Err(_) => ChaosCell {
                    center: *c,
                    lambda: f64::NAN,
                    chaotic: false,
                    failed: true,
                },
            }
        })
        .collect();
    Ok(ChaosMap {
        grid: *grid,
        n_periods,
        threshold,
        cells,
    })
}
