//! Classical Monte-Carlo ensembles sampled from coherent spin states.
//!
//! Every sample owns an RNG stream keyed by `(seed, sample_index)`, so the
//! drawn offsets do not depend on how samples are scheduled across threads.
//! Statistics are reduced sequentially in sample order.

mod stats;

pub use stats::{
    jackknife_variance_ci, leave_one_out_variances, mean, median, reject_outliers_modified_z,
    variance, JackknifeEstimate, OutlierReport, DEFAULT_Z_THRESHOLD,
};

use nalgebra::Vector3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::export::{num, opt_num, CsvTable};
use crate::integrate::{propagate_flow, IntegratorConfig};
use crate::model::{DrivenFlow, PhaseState, SystemParams};

/// Experimental 1/e atom-loss time in milliseconds used by the presets.
pub const DEFAULT_LOSS_MS: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CssSpec {
    pub center: PhaseState,
    pub n_atoms: u32,
    pub n_samples: usize,
    pub seed: u64,
}

impl CssSpec {
    pub fn new(center: PhaseState, n_atoms: u32, n_samples: usize, seed: u64) -> Self {
        Self {
            center,
            n_atoms,
            n_samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidParams("n_samples must be >= 2".into()));
        }
        if self.n_atoms < 1 {
            return Err(Error::InvalidParams("n_atoms must be >= 1".into()));
        }
        Ok(())
    }

    /// (1 − z0²)/N.
    pub fn target_var_z(&self) -> f64 {
        (1.0 - self.center.z * self.center.z) / self.n_atoms as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    /// RMS static detuning offset per realisation, in units of Ω0.
    pub sigma_delta: f64,
    /// 1/e atom-loss time in units of 1/Ω0; `None` disables loss.
    pub loss_tau: Option<f64>,
    /// Let Λ follow N(τ).
    pub lambda_decay: bool,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_delta >= 0.0 && self.sigma_delta.is_finite()) {
            return Err(Error::InvalidParams("sigma_delta must be >= 0".into()));
        }
        if let Some(t) = self.loss_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParams("loss_tau must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Loss time given in milliseconds; needs the lab-time anchor in `params`.
    pub fn with_loss_ms(mut self, params: &SystemParams, ms: f64) -> Result<Self> {
        self.loss_tau = Some(params.tau_from_ms(ms).ok_or_else(|| {
            Error::InvalidParams("loss time in ms requires n_chi_hz".into())
        })?);
        Ok(self)
    }

    /// Detuning noise given in Hz (σ_δ/2π); converted with Ω0.
    pub fn with_sigma_delta_hz(mut self, params: &SystemParams, hz: f64) -> Result<Self> {
        let w0 = params.omega0_rad_per_s().ok_or_else(|| {
            Error::InvalidParams("detuning noise in Hz requires n_chi_hz".into())
        })?;
        self.sigma_delta = std::f64::consts::TAU * hz / w0;
        Ok(self)
    }

    pub fn atom_fraction(&self, tau: f64) -> f64 {
        self.loss_tau.map_or(1.0, |tl| (-tau / tl).exp())
    }
}

// Gaussian tangent offsets (a, b) and a unit normal for the detuning, in that order.
fn draws(seed: u64, index: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let d: f64 = rng.sample(StandardNormal);
    (a, b, d)
}

fn displace(center: &PhaseState, n_atoms: u32, a: f64, b: f64) -> PhaseState {
    if center.z.abs() >= 1.0 {
        return *center;
    }
    let sd = 1.0 / (n_atoms as f64).sqrt();
    let s0 = center.cartesian();
    let cos_t = center.z;
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let (sp, cp) = center.phi.sin_cos();
    let e_theta = Vector3::new(cos_t * cp, cos_t * sp, -sin_t);
    let e_phi = Vector3::new(-sp, cp, 0.0);
    let rho = sd * a.hypot(b);
    if rho == 0.0 {
        return *center;
    }
    let u = (e_theta * a + e_phi * b) * (sd / rho);
    PhaseState::from_cartesian(&(s0 * rho.cos() + u * rho.sin()))
}

/// Draws `n_samples` points from the Gaussian approximation of a coherent
/// spin state: isotropic tangent offsets of standard deviation 1/√N, carried
/// onto the sphere along great circles.
pub fn sample_css(spec: &CssSpec) -> Vec<PhaseState> {
    (0..spec.n_samples)
        .map(|i| {
            let (a, b, _) = draws(spec.seed, i);
            displace(&spec.center, spec.n_atoms, a, b)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub times_ms: Option<Vec<f64>>,
    pub mean_z: Vec<f64>,
    pub var_z: Vec<f64>,
    pub normalized_var_z: Vec<f64>,
    /// Statistics of y = sin φ.
    pub mean_y: Vec<f64>,
    pub var_y: Vec<f64>,
    pub n_atoms_t: Vec<f64>,
    pub survivors: usize,
    pub n_samples: usize,
}

impl EnsembleSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Var(N↑ − N↓) = N(t)² Var(z).
    pub fn var_number_difference(&self) -> Vec<f64> {
        self.var_z
            .iter()
            .zip(&self.n_atoms_t)
            .map(|(v, n)| v * n * n)
            .collect()
    }

    /// (1 − ⟨z⟩²) N(t), the coherent-state reference in number-difference units.
    pub fn var_css_number_difference(&self) -> Vec<f64> {
        self.mean_z
            .iter()
            .zip(&self.n_atoms_t)
            .map(|(m, n)| (1.0 - m * m) * n)
            .collect()
    }

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
        ]);
        for i in 0..self.len() {
            t.push(vec![
                num(self.times[i]),
                opt_num(self.times_ms.as_ref().map(|v| v[i])),
                num(self.mean_z[i]),
                num(self.var_z[i]),
                num(self.normalized_var_z[i]),
                num(self.mean_y[i]),
                num(self.var_y[i]),
                num(self.n_atoms_t[i]),
                self.survivors.to_string(),
            ]);
        }
        t
    }
}

/// Full per-sample output of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub series: EnsembleSeries,
    /// `samples[k][j]`: surviving sample j at time index k.
    pub samples: Vec<Vec<PhaseState>>,
    /// Indices of samples dropped after a propagation failure.
    pub failed: Vec<usize>,
}

impl EnsembleRun {
    pub fn z_values(&self, k: usize) -> Vec<f64> {
        self.samples[k].iter().map(|s| s.z).collect()
    }
}

pub fn evolve_ensemble(
    params: &SystemParams,
    spec: &CssSpec,
    noise: &NoiseModel,
    sample_times: &[f64],
) -> Result<EnsembleSeries> {
    evolve_ensemble_with(params, spec, noise, sample_times, &IntegratorConfig::default())
        .map(|r| r.series)
}

pub fn evolve_ensemble_with(
    params: &SystemParams,
    spec: &CssSpec,
    noise: &NoiseModel,
    sample_times: &[f64],
    config: &IntegratorConfig,
) -> Result<EnsembleRun> {
    params.validate()?;
    spec.validate()?;
    noise.validate()?;
    if sample_times.first() != Some(&0.0) {
        return Err(Error::InvalidParams(
            "sample_times must start at 0".into(),
        ));
    }
    if sample_times.windows(2).any(|w| w[1] <= w[0]) || sample_times.iter().any(|t| !t.is_finite())
    {
        return Err(Error::InvalidParams(
            "sample_times must be strictly ascending".into(),
        ));
    }
    let t_end = *sample_times.last().unwrap();
    let cfg = IntegratorConfig {
        dense_times: Some(sample_times.to_vec()),
        ..config.clone()
    };
    let loss = if noise.lambda_decay { noise.loss_tau } else { None };

    let results: Vec<Result<Vec<PhaseState>>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let (a, b, d) = draws(spec.seed, i);
            let start = displace(&spec.center, spec.n_atoms, a, b);
            if sample_times.len() == 1 {
                return Ok(vec![start]);
            }
            let flow = DrivenFlow::new(*params)
                .with_detuning_offset(noise.sigma_delta * d)
                .with_lambda_loss(loss);
            Ok(propagate_flow(&flow, &start, (0.0, t_end), &cfg)?.states)
        })
        .collect();

    let mut samples: Vec<Vec<PhaseState>> = vec![Vec::with_capacity(spec.n_samples); sample_times.len()];
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(states) if states.len() == sample_times.len() => {
                for (k, s) in states.into_iter().enumerate() {
                    samples[k].push(s);
                }
            }
            Ok(_) => failed.push(i),
            Err(e) => {
                log::debug!("ensemble sample {i} dropped: {e}");
                failed.push(i);
            }
        }
    }
    if failed.len() * 100 > spec.n_samples {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: spec.n_samples,
        });
    }
    let survivors = spec.n_samples - failed.len();
    if survivors < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: survivors,
        });
    }

    let n0 = params.n_atoms as f64;
    let mut series = EnsembleSeries {
        times: sample_times.to_vec(),
        times_ms: sample_times
            .iter()
            .map(|&t| params.ms_from_tau(t))
            .collect::<Option<Vec<f64>>>(),
        mean_z: Vec::new(),
        var_z: Vec::new(),
        normalized_var_z: Vec::new(),
        mean_y: Vec::new(),
        var_y: Vec::new(),
        n_atoms_t: Vec::new(),
        survivors,
        n_samples: spec.n_samples,
    };
    for (k, &t) in sample_times.iter().enumerate() {
        let z: Vec<f64> = samples[k].iter().map(|s| s.z).collect();
        let y: Vec<f64> = samples[k].iter().map(|s| s.phi.sin()).collect();
        let (mz, vz) = (mean(&z), variance(&z));
        let nt = n0 * noise.atom_fraction(t);
        series.mean_z.push(mz);
        series.var_z.push(vz);
        series.normalized_var_z.push(normalized_variance(vz, mz, nt));
        series.mean_y.push(mean(&y));
        series.var_y.push(variance(&y));
        series.n_atoms_t.push(nt);
    }
    Ok(EnsembleRun {
        series,
        samples,
        failed,
    })
}

/// Var(z) · N / (1 − ⟨z⟩²); NaN when ⟨z⟩² = 1.
pub fn normalized_variance(var_z: f64, mean_z: f64, n_atoms: f64) -> f64 {
    let denom = 1.0 - mean_z * mean_z;
    if denom <= 0.0 {
        f64::NAN
    } else {
        var_z * n_atoms / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotStats {
    pub mean: f64,
    /// Standard error of the mean.
    pub mean_se: f64,
    pub variance: JackknifeEstimate,
}

/// Emulates finite experimental statistics: for every time point draws
/// `shots` distinct ensemble members and reports mean and Jackknife variance.
/// Subsamples are taken in ascending index order, so `shots == len` reproduces
/// the full-ensemble values exactly.
pub fn measurement_resample(
    values_per_time: &[Vec<f64>],
    shots: usize,
    seed: u64,
) -> Result<Vec<ShotStats>> {
    if shots < 2 {
        return Err(Error::InvalidParams("shots_per_point must be >= 2".into()));
    }
    values_per_time
        .iter()
        .enumerate()
        .map(|(k, vals)| {
            if vals.len() < shots {
                return Err(Error::InsufficientSamples {
                    needed: shots,
                    got: vals.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut idx = index::sample(&mut rng, vals.len(), shots).into_vec();
            idx.sort_unstable();
            let sub: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
            let variance = jackknife_variance_ci(&sub)?;
            Ok(ShotStats {
                mean: mean(&sub),
                mean_se: (variance.variance / shots as f64).sqrt(),
                variance,
            })
        })
        .collect()
}
