//! Exact propagation of the collective-spin Hamiltonian
//! H = χJz² − Ω(t)Jx + δJz in the symmetric (Dicke) subspace.
//!
//! Time is measured in units of 1/Ω0, so the dimensionless generator is
//! (Λ/N) Jz² − d(τ) Jx + ε Jz with d(τ) the drive envelope of [`SystemParams`].
//! Steps use the fourth-order commutator-free Magnus scheme with two Gauss
//! nodes; each exponential is applied by a substepped Taylor series.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::export::{num, CsvTable};
use crate::model::{drive_value, SystemParams};

const TAYLOR_TOL: f64 = 1e-17;
const HALVING_TOL: f64 = 1e-6;

/// Jz, Jz² and Jx for spin J = N/2 stored as diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveOps {
    pub n_atoms: usize,
    /// Eigenvalues m = −J..J of Jz, ascending.
    pub m: Vec<f64>,
    /// `off[k]` = ⟨m_k + 1|Jx|m_k⟩ = ½√(J(J+1) − m_k(m_k + 1)).
    pub off: Vec<f64>,
}

pub fn build_collective_operators(n_atoms: usize) -> Result<CollectiveOps> {
    if n_atoms < 2 {
        return Err(Error::InvalidParams("need at least 2 atoms".into()));
    }
    let j = n_atoms as f64 / 2.0;
    let m: Vec<f64> = (0..=n_atoms).map(|k| k as f64 - j).collect();
    let off = m[..n_atoms]
        .iter()
        .map(|&mk| 0.5 * (j * (j + 1.0) - mk * (mk + 1.0)).max(0.0).sqrt())
        .collect();
    Ok(CollectiveOps { n_atoms, m, off })
}

impl CollectiveOps {
    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn j(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn jz2_diag(&self) -> Vec<f64> {
        self.m.iter().map(|m| m * m).collect()
    }

    pub fn apply_jz(&self, psi: &[Complex64]) -> Vec<Complex64> {
        psi.iter().zip(&self.m).map(|(c, m)| c * m).collect()
    }

    pub fn apply_jz2(&self, psi: &[Complex64]) -> Vec<Complex64> {
        psi.iter().zip(&self.m).map(|(c, m)| c * (m * m)).collect()
    }

    pub fn apply_jx(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (k, &o) in self.off.iter().enumerate() {
            out[k + 1] += psi[k] * o;
            out[k] += psi[k + 1] * o;
        }
        out
    }

    pub fn apply_jy(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let i = Complex64::i();
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (k, &o) in self.off.iter().enumerate() {
            out[k + 1] += -i * psi[k] * o;
            out[k] += i * psi[k + 1] * o;
        }
        out
    }

    // out = (diag ∘ psi) + b Jx psi, with diag_k = a m² + c m − shift.
    fn apply_h(&self, g: &Generator, psi: &[Complex64], out: &mut [Complex64]) {
        let n = psi.len();
        for k in 0..n {
            let m = self.m[k];
            out[k] = psi[k] * (g.a * m * m + g.c * m - g.shift);
        }
        for (k, &o) in self.off.iter().enumerate() {
            let w = g.b * o;
            out[k + 1] += psi[k] * w;
            out[k] += psi[k + 1] * w;
        }
    }
}

/// a Jz² + b Jx + c Jz, applied as exp(−i h (· − shift)) · e^{−i h shift}.
#[derive(Debug, Clone, Copy)]
struct Generator {
    a: f64,
    b: f64,
    c: f64,
    shift: f64,
}

impl Generator {
    fn new(ops: &CollectiveOps, a: f64, b: f64, c: f64) -> Self {
        let (lo, hi) = ops.m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            let d = a * m * m + c * m;
            (lo.min(d), hi.max(d))
        });
        Self {
            a,
            b,
            c,
            shift: 0.5 * (lo + hi),
        }
    }

    fn norm_bound(&self, ops: &CollectiveOps) -> f64 {
        let diag = ops
            .m
            .iter()
            .map(|&m| (self.a * m * m + self.c * m - self.shift).abs())
            .fold(0.0, f64::max);
        diag + self.b.abs() * ops.j()
    }
}

/// ψ ← exp(−i h G) ψ.
fn expm_apply(ops: &CollectiveOps, g: &Generator, h: f64, psi: &mut [Complex64]) {
    let bound = g.norm_bound(ops) * h.abs();
    let sub = bound.ceil().max(1.0) as usize;
    let hs = h / sub as f64;
    let factor = Complex64::new(0.0, -hs);
    let n = psi.len();
    let mut term = vec![Complex64::new(0.0, 0.0); n];
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..sub {
        term.copy_from_slice(psi);
        for k in 1..60 {
            ops.apply_h(g, &term, &mut next);
            let scale = factor / k as f64;
            let mut tn = 0.0f64;
            for (t, nx) in term.iter_mut().zip(&next) {
                *t = nx * scale;
                tn = tn.max(t.norm_sqr());
            }
            for (p, t) in psi.iter_mut().zip(&term) {
                *p += t;
            }
            if tn.sqrt() < TAYLOR_TOL {
                break;
            }
        }
    }
    let phase = Complex64::from_polar(1.0, -h * g.shift);
    for p in psi.iter_mut() {
        *p *= phase;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub amplitudes: Vec<Complex64>,
    pub n_atoms: usize,
}

impl QuantumState {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Dicke state with Jz eigenvalue m_index − N/2.
    pub fn dicke(n_atoms: usize, m_index: usize) -> Result<Self> {
        if m_index > n_atoms {
            return Err(Error::InvalidParams("Dicke index out of range".into()));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); n_atoms + 1];
        amplitudes[m_index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            n_atoms,
        })
    }

    /// |⟨self|other⟩|.
    pub fn overlap_abs(&self, other: &QuantumState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            .norm()
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// Spin coherent state pointing at (z0, φ0), with ⟨J₊⟩ ∝ e^{iφ0}.
pub fn css_state(n_atoms: usize, z0: f64, phi0: f64) -> Result<QuantumState> {
    if n_atoms < 1 {
        return Err(Error::InvalidParams("need at least 1 atom".into()));
    }
    if !(z0.abs() <= 1.0 && phi0.is_finite()) {
        return Err(Error::InvalidParams(format!("invalid CSS center z0 = {z0}")));
    }
    let theta = z0.acos();
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let lf = ln_factorials(n_atoms);
    let amplitudes = (0..=n_atoms)
        .map(|k| {
            // k = J + m atoms in the upper mode
            let up = k as f64;
            let down = (n_atoms - k) as f64;
            let mag = if (c == 0.0 && k > 0) || (s == 0.0 && k < n_atoms) {
                0.0
            } else {
                let ln_binom = lf[n_atoms] - lf[k] - lf[n_atoms - k];
                let lc = if k > 0 { up * c.ln() } else { 0.0 };
                let ls = if k < n_atoms { down * s.ln() } else { 0.0 };
                (0.5 * ln_binom + lc + ls).exp()
            };
            Complex64::from_polar(mag, down * phi0)
        })
        .collect();
    Ok(QuantumState {
        amplitudes,
        n_atoms,
    })
}

fn expect_real(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// (⟨z⟩, Var z) with z = 2Jz/N.
pub fn expect_observables(ops: &CollectiveOps, state: &QuantumState) -> (f64, f64) {
    let psi = &state.amplitudes;
    let (mut jz, mut jz2) = (0.0, 0.0);
    for (c, m) in psi.iter().zip(&ops.m) {
        let p = c.norm_sqr();
        jz += p * m;
        jz2 += p * m * m;
    }
    let n = ops.n_atoms as f64;
    (2.0 * jz / n, 4.0 / (n * n) * (jz2 - jz * jz))
}

/// (⟨y⟩, Var y) with y = 2Jy/N.
pub fn expect_y(ops: &CollectiveOps, state: &QuantumState) -> (f64, f64) {
    let psi = &state.amplitudes;
    let jy_psi = ops.apply_jy(psi);
    let jy = expect_real(psi, &jy_psi);
    let jy2 = jy_psi.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let n = ops.n_atoms as f64;
    (2.0 * jy / n, 4.0 / (n * n) * (jy2 - jy * jy))
}

/// ⟨x⟩ with x = 2Jx/N.
pub fn expect_x(ops: &CollectiveOps, state: &QuantumState) -> f64 {
    let psi = &state.amplitudes;
    2.0 * expect_real(psi, &ops.apply_jx(psi)) / ops.n_atoms as f64
}

/// Var(z) · N / (1 − ⟨z⟩²).
pub fn normalized_variance(ops: &CollectiveOps, state: &QuantumState) -> f64 {
    let (m, v) = expect_observables(ops, state);
    crate::ensemble::normalized_variance(v, m, ops.n_atoms as f64)
}

/// exp(−i angle Jx) ψ.
pub fn rotate_x(ops: &CollectiveOps, state: &QuantumState, angle: f64) -> QuantumState {
    let g = Generator {
        a: 0.0,
        b: 1.0,
        c: 0.0,
        shift: 0.0,
    };
    let mut psi = state.amplitudes.clone();
    expm_apply(ops, &g, angle, &mut psi);
    QuantumState {
        amplitudes: psi,
        n_atoms: state.n_atoms,
    }
}

/// Readout pulse exp(−i(π/2)Jx); afterwards ⟨Jz⟩ equals the prior ⟨Jy⟩.
pub fn rotate_pi2_x(ops: &CollectiveOps, state: &QuantumState) -> QuantumState {
    rotate_x(ops, state, FRAC_PI_2)
}

/// Laboratory parameters of the collective-spin Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub n_atoms: u32,
    /// Per-atom nonlinearity χ in rad/s.
    pub chi: f64,
    /// Rabi frequency Ω0 in rad/s.
    pub omega0: f64,
    /// Detuning δ in rad/s.
    pub delta: f64,
    pub drive_amp: f64,
    /// ω in units of Ω0.
    pub drive_freq: f64,
    pub t0_frac: f64,
}

impl PhysParams {
    /// Uses Ω0 from `n_chi_hz` when present, otherwise Ω0 = 1 rad/s.
    pub fn from_system(p: &SystemParams) -> Self {
        let omega0 = p.omega0_rad_per_s().unwrap_or(1.0);
        Self {
            n_atoms: p.n_atoms,
            chi: p.lambda * omega0 / p.n_atoms as f64,
            omega0,
            delta: p.epsilon * omega0,
            drive_amp: p.drive_amp,
            drive_freq: p.drive_freq,
            t0_frac: p.t0_frac,
        }
    }

    pub fn to_system(&self) -> SystemParams {
        let n = self.n_atoms as f64;
        SystemParams {
            lambda: n * self.chi / self.omega0,
            epsilon: self.delta / self.omega0,
            drive_amp: self.drive_amp,
            drive_freq: self.drive_freq,
            t0_frac: self.t0_frac,
            n_atoms: self.n_atoms,
            n_chi_hz: (self.chi > 0.0).then(|| n * self.chi / TAU),
            ..SystemParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumConfig {
    /// Largest step in units of 1/Ω0; `None` means T/2000.
    pub dt_max: Option<f64>,
    /// Rerun at dt_max/2 and require the final ⟨z⟩ and normalised variance to agree.
    pub check_halving: bool,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            dt_max: None,
            check_halving: true,
        }
    }
}

fn cf4_run(
    ops: &CollectiveOps,
    p: &SystemParams,
    psi0: &[Complex64],
    sample_times: &[f64],
    dt_max: f64,
) -> Vec<QuantumState> {
    let sq3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - sq3 / 6.0, 0.5 + sq3 / 6.0);
    let (a1, a2) = ((3.0 - 2.0 * sq3) / 12.0, (3.0 + 2.0 * sq3) / 12.0);
    let a = p.lambda / ops.n_atoms as f64;
    let c = p.epsilon;
    let mut psi = psi0.to_vec();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(sample_times.len());
    for &ts in sample_times {
        let span = ts - t;
        if span > 0.0 {
            let steps = (span / dt_max).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                let t_s = t + s as f64 * h;
                let b1 = -drive_value(p, t_s + c1 * h);
                let b2 = -drive_value(p, t_s + c2 * h);
                // both exponentials carry half of the static part
                let first = Generator::new(ops, 0.5 * a, a2 * b1 + a1 * b2, 0.5 * c);
                let second = Generator::new(ops, 0.5 * a, a1 * b1 + a2 * b2, 0.5 * c);
                expm_apply(ops, &first, h, &mut psi);
                expm_apply(ops, &second, h, &mut psi);
            }
            t = ts;
        }
        out.push(QuantumState {
            amplitudes: psi.clone(),
            n_atoms: ops.n_atoms,
        });
    }
    out
}

/// Propagates `state` from τ = 0 and returns it at each of `sample_times`.
pub fn evolve_quantum(
    state: &QuantumState,
    phys: &PhysParams,
    sample_times: &[f64],
    config: &QuantumConfig,
) -> Result<Vec<QuantumState>> {
    let p = phys.to_system();
    p.validate()?;
    if state.n_atoms != phys.n_atoms as usize {
        return Err(Error::InvalidParams("state and parameters disagree on N".into()));
    }
    if sample_times.iter().any(|t| !(t.is_finite() && *t >= 0.0))
        || sample_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidParams(
            "sample_times must be ascending and >= 0".into(),
        ));
    }
    let dt = config.dt_max.unwrap_or(p.period() / 2000.0);
    if !(dt > 0.0) {
        return Err(Error::InvalidParams("dt_max must be > 0".into()));
    }
    let ops = build_collective_operators(state.n_atoms)?;
    if !config.check_halving {
        return Ok(cf4_run(&ops, &p, &state.amplitudes, sample_times, dt));
    }
    let coarse = cf4_run(&ops, &p, &state.amplitudes, sample_times, dt);
    let fine = cf4_run(&ops, &p, &state.amplitudes, sample_times, 0.5 * dt);
    if let (Some(c), Some(f)) = (coarse.last(), fine.last()) {
        let (mc, _) = expect_observables(&ops, c);
        let (mf, _) = expect_observables(&ops, f);
        if (mc - mf).abs() > HALVING_TOL {
            return Err(Error::ConvergenceFailure {
                observable: "mean_z",
                change: (mc - mf).abs(),
            });
        }
        let dv = (normalized_variance(&ops, c) - normalized_variance(&ops, f)).abs();
        if dv > HALVING_TOL {
            return Err(Error::ConvergenceFailure {
                observable: "normvar_z",
                change: dv,
            });
        }
    }
    Ok(fine)
}

/// Observable time series of a quantum run.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumSeries {
    pub times: Vec<f64>,
    pub times_ms: Option<Vec<f64>>,
    pub mean_z: Vec<f64>,
    pub var_z: Vec<f64>,
    pub normalized_var_z: Vec<f64>,
    /// y = 2Jy/N, i.e. ⟨Jz⟩ after the readout pulse.
    pub mean_y: Vec<f64>,
    pub var_y: Vec<f64>,
    pub n_atoms: usize,
}

impl QuantumSeries {
    pub fn from_states(
        ops: &CollectiveOps,
        params: &SystemParams,
        times: &[f64],
        states: &[QuantumState],
    ) -> Self {
        let mut s = Self {
            times: times.to_vec(),
            times_ms: times
                .iter()
                .map(|&t| params.ms_from_tau(t))
                .collect::<Option<Vec<f64>>>(),
            mean_z: Vec::new(),
            var_z: Vec::new(),
            normalized_var_z: Vec::new(),
            mean_y: Vec::new(),
            var_y: Vec::new(),
            n_atoms: ops.n_atoms,
        };
        for st in states {
            let (m, v) = expect_observables(ops, st);
            let (my, vy) = expect_y(ops, st);
            s.mean_z.push(m);
            s.var_z.push(v);
            s.normalized_var_z
                .push(crate::ensemble::normalized_variance(v, m, ops.n_atoms as f64));
            s.mean_y.push(my);
            s.var_y.push(vy);
        }
        s
    }

    /// Ensemble CSV columns; `survivors` is empty and a trailing `model` column reads `quantum`.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "t_dimensionless",
            "t_ms",
            "mean_z",
            "var_z",
            "normvar_z",
            "mean_y",
            "var_y",
            "n_atoms",
            "survivors",
            "model",
        ]);
        for i in 0..self.times.len() {
            t.push(vec![
                num(self.times[i]),
                self.times_ms
                    .as_ref()
                    .map(|v| num(v[i]))
                    .unwrap_or_default(),
                num(self.mean_z[i]),
                num(self.var_z[i]),
                num(self.normalized_var_z[i]),
                num(self.mean_y[i]),
                num(self.var_y[i]),
                self.n_atoms.to_string(),
                String::new(),
                "quantum".into(),
            ]);
        }
        t
    }
}
