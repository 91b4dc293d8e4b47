//! Stroboscopic map and Poincaré sections sampled at τ = τ_offset + kT.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::export::{num, CsvTable, Plot, Series};
use crate::integrate::{propagate, IntegratorConfig};
use crate::model::{PhaseState, SystemParams};

/// Image of `state` under `n` driving periods starting at `tau_offset`.
pub fn stroboscopic_map(
    params: &SystemParams,
    state: &PhaseState,
    n: usize,
    tau_offset: f64,
) -> Result<PhaseState> {
    stroboscopic_map_with(params, state, n, tau_offset, &IntegratorConfig::default())
}

pub fn stroboscopic_map_with(
    params: &SystemParams,
    state: &PhaseState,
    n: usize,
    tau_offset: f64,
    config: &IntegratorConfig,
) -> Result<PhaseState> {
    if n == 0 {
        return Err(Error::InvalidParams("iterate count must be >= 1".into()));
    }
    let end = tau_offset + n as f64 * params.period();
    let cfg = IntegratorConfig {
        dense_times: Some(vec![end]),
        ..config.clone()
    };
    let traj = propagate(params, state, (tau_offset, end), &cfg)?;
    Ok(traj.states[0])
}

/// All stroboscopic iterates `P^k(state)`, k = 0..=n_periods, from a single integration.
pub fn stroboscopic_orbit(
    params: &SystemParams,
    state: &PhaseState,
    n_periods: usize,
    tau_offset: f64,
    config: &IntegratorConfig,
) -> Result<Vec<PhaseState>> {
    let period = params.period();
    let times: Vec<f64> = (0..=n_periods)
        .map(|k| tau_offset + k as f64 * period)
        .collect();
    let end = *times.last().unwrap();
    if n_periods == 0 {
        return Ok(vec![*state]);
    }
    let cfg = IntegratorConfig {
        dense_times: Some(times),
        ..config.clone()
    };
    Ok(propagate(params, state, (tau_offset, end), &cfg)?.states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOrbit {
    pub seed_index: usize,
    pub points: Vec<PhaseState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareSection {
    pub seeds: Vec<PhaseState>,
    pub tau_offset: f64,
    pub n_periods: usize,
    /// Surviving seeds, in seed order.
    pub orbits: Vec<SeedOrbit>,
    /// Seeds whose propagation failed, with the reason.
    pub failures: Vec<(usize, Error)>,
}

impl PoincareSection {
    pub fn points(&self) -> impl Iterator<Item = &PhaseState> {
        self.orbits.iter().flat_map(|o| o.points.iter())
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["seed_index", "k", "z", "phi"]);
        for o in &self.orbits {
            for (k, p) in o.points.iter().enumerate() {
                t.push(vec![
                    o.seed_index.to_string(),
                    k.to_string(),
                    num(p.z),
                    num(p.phi),
                ]);
            }
        }
        t
    }

    pub fn to_plot(&self, title: &str) -> Plot {
        let pts = self.points().map(|p| (p.phi, p.z)).collect();
        let mut plot = Plot::new(title, "phi", "z").ranges((0.0, TAU), (-1.0, 1.0));
        plot.push(Series::scatter("section", pts, "#333333"));
        plot
    }
}

/// Iterates the stroboscopic map for every seed. Seeds run in parallel and are
/// merged in seed order; failures are recorded per seed.
pub fn build_section(
    params: &SystemParams,
    seeds: &[PhaseState],
    n_periods: usize,
    tau_offset: f64,
) -> Result<PoincareSection> {
    build_section_with(params, seeds, n_periods, tau_offset, &IntegratorConfig::default())
}

pub fn build_section_with(
    params: &SystemParams,
    seeds: &[PhaseState],
    n_periods: usize,
    tau_offset: f64,
    config: &IntegratorConfig,
) -> Result<PoincareSection> {
    params.validate()?;
    if n_periods == 0 {
        return Err(Error::InvalidParams("n_periods must be >= 1".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidParams("seed list is empty".into()));
    }
    let results: Vec<Result<Vec<PhaseState>>> = seeds
        .par_iter()
        .map(|s| stroboscopic_orbit(params, s, n_periods, tau_offset, config))
        .collect();
    let mut orbits = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(points) => orbits.push(SeedOrbit {
                seed_index: i,
                points,
            }),
            Err(e) => failures.push((i, e)),
        }
    }
    Ok(PoincareSection {
        seeds: seeds.to_vec(),
        tau_offset,
        n_periods,
        orbits,
        failures,
    })
}

/// Cell-centred grid over z ∈ (−1, 1) × φ ∈ [0, 2π).
pub fn grid_seeds(n_z: usize, n_phi: usize) -> Vec<PhaseState> {
    let mut out = Vec::with_capacity(n_z * n_phi);
    for i in 0..n_z {
        let z = -1.0 + (i as f64 + 0.5) * 2.0 / n_z as f64;
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * TAU / n_phi as f64;
            out.push(PhaseState { z, phi });
        }
    }
    out
}

/// Fibonacci lattice: near-uniform points on the sphere.
pub fn sphere_seeds(n: usize) -> Vec<PhaseState> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            PhaseState {
                z,
                phi: (i as f64 * golden).rem_euclid(TAU),
            }
        })
        .collect()
}

/// `n` points on the undriven energy contour through `through`, spaced
/// uniformly in time over `duration`.
pub fn contour_seeds(
    params: &SystemParams,
    through: &PhaseState,
    n: usize,
    duration: f64,
) -> Result<Vec<PhaseState>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![*through]);
    }
    let times: Vec<f64> = (0..n)
        .map(|i| i as f64 * duration / n as f64)
        .collect();
    let end = duration;
    let cfg = IntegratorConfig::default().with_dense_times(times);
    Ok(propagate(&params.undriven(), through, (0.0, end), &cfg)?.states)
}
