//! Named experiments: a flat, key-addressable configuration, a preset
//! registry and the pipelines that turn a configuration into CSV/SVG files
//! plus a manifest.

mod run;
mod scan;

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::ensemble::{CssSpec, NoiseModel, DEFAULT_LOSS_MS};
use crate::error::{Error, Result};
use crate::model::{PhaseState, SystemParams};
use crate::orbits::GridSpec;

pub use run::{run_scenario, ScenarioOutput};
pub use scan::{
    scan_t0, section_image, transition_widths, ScanRow, T0Scan, TransitionWidth,
};

/// Seed used whenever none is configured.
pub const DEFAULT_SEED: u64 = 20_181_004;
pub const DEFAULT_SCAN_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Z,
    /// y = sin φ, read out after a π/2 pulse.
    Y,
}

impl Readout {
    pub fn as_str(&self) -> &'static str {
        match self {
            Readout::Z => "z",
            Readout::Y => "y",
        }
    }
}

impl FromStr for Readout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "z" | "Z" => Ok(Readout::Z),
            "y" | "Y" => Ok(Readout::Y),
            other => Err(Error::InvalidParams(format!("readout must be z or y, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Duration {
    Ms(f64),
    /// Dimensionless τ = Ω0 t.
    Tau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Section,
    Orbits,
    LyapunovMap,
    Ensemble,
    Quantum,
    Scan,
}

impl Pipeline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pipeline::Section => "section",
            Pipeline::Orbits => "orbits",
            Pipeline::LyapunovMap => "lyapunov-map",
            Pipeline::Ensemble => "ensemble",
            Pipeline::Quantum => "quantum",
            Pipeline::Scan => "scan-t0",
        }
    }
}

impl FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "section" => Pipeline::Section,
            "orbits" => Pipeline::Orbits,
            "lyapunov-map" => Pipeline::LyapunovMap,
            "ensemble" => Pipeline::Ensemble,
            "quantum" => Pipeline::Quantum,
            "scan-t0" => Pipeline::Scan,
            other => return Err(Error::InvalidParams(format!("unknown pipeline {other:?}"))),
        })
    }
}

/// One run inside an ensemble or quantum scenario. `t0_frac = None` runs undriven.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub t0_frac: Option<f64>,
}

impl Variant {
    pub fn driven(label: &str, t0_frac: f64) -> Self {
        Self {
            label: label.into(),
            t0_frac: Some(t0_frac),
        }
    }

    pub fn undriven(label: &str) -> Self {
        Self {
            label: label.into(),
            t0_frac: None,
        }
    }
}

fn format_variants(v: &[Variant]) -> String {
    v.iter()
        .map(|v| match v.t0_frac {
            Some(t) => format!("{}:{}", v.label, t),
            None => format!("{}:off", v.label),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (label, t) = p.split_once(':').ok_or_else(|| {
                Error::InvalidParams(format!("variant {p:?} is not label:t0_frac"))
            })?;
            let label = label.trim();
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::InvalidParams(format!("bad variant label {label:?}")));
            }
            match t.trim() {
                "off" | "none" => Ok(Variant::undriven(label)),
                v => Ok(Variant::driven(label, parse_f64("variants", v)?)),
            }
        })
        .collect()
}

/// Everything a pipeline needs, with no hidden defaults: every field is
/// reachable through [`ScenarioConfig::set`] and listed by [`ScenarioConfig::entries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    pub description: String,
    pub pipeline: Pipeline,
    pub params: SystemParams,
    pub css: CssSpec,
    /// 1/e atom-loss time; `None` disables loss.
    pub loss_ms: Option<f64>,
    pub sigma_delta_hz: f64,
    pub lambda_decay: bool,
    pub readout: Readout,
    pub duration: Duration,
    pub n_times: usize,
    pub snapshots: usize,
    pub variants: Vec<Variant>,
    pub scan_grid: Vec<f64>,
    pub section_grid: GridSpec,
    pub periods: usize,
    pub orbit_period: usize,
    pub lyap_grid: GridSpec,
    pub lyap_periods: usize,
    pub with_quantum: bool,
    pub out_dir: PathBuf,
}

/// Every key accepted by [`ScenarioConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "id",
    "pipeline",
    "lambda",
    "epsilon",
    "drive_amp",
    "drive_freq",
    "t0_frac",
    "n_atoms",
    "n_chi_hz",
    "z0",
    "phi0",
    "n_samples",
    "seed",
    "loss_ms",
    "sigma_delta_hz",
    "lambda_decay",
    "readout",
    "duration_ms",
    "duration_tau",
    "n_times",
    "snapshots",
    "variants",
    "scan_points",
    "section_nz",
    "section_nphi",
    "periods",
    "orbit_period",
    "lyap_nz",
    "lyap_nphi",
    "lyap_periods",
    "quantum",
    "out",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::InvalidParams(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::InvalidParams(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidParams(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / n as f64).collect()
}

impl ScenarioConfig {
    fn base(id: &str, description: &str, pipeline: Pipeline, params: SystemParams, start: PhaseState) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            pipeline,
            params,
            css: CssSpec::new(start, params.n_atoms, 10_000, DEFAULT_SEED),
            loss_ms: Some(DEFAULT_LOSS_MS),
            sigma_delta_hz: 0.0,
            lambda_decay: false,
            readout: Readout::Z,
            duration: Duration::Ms(48.0),
            n_times: 201,
            snapshots: 5,
            variants: vec![Variant::driven("driven", params.t0_frac)],
            scan_grid: uniform_grid(DEFAULT_SCAN_POINTS),
            section_grid: GridSpec::new(10, 10),
            periods: 200,
            orbit_period: 2,
            lyap_grid: GridSpec::new(24, 48),
            lyap_periods: 200,
            with_quantum: false,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(Error::InvalidParams(format!("id: invalid value {v:?}")));
                }
                self.id = v.into();
            }
            "pipeline" => self.pipeline = v.parse()?,
            "lambda" => self.params.lambda = parse_f64(key, v)?,
            "epsilon" => self.params.epsilon = parse_f64(key, v)?,
            "drive_amp" => self.params.drive_amp = parse_f64(key, v)?,
            "drive_freq" => self.params.drive_freq = parse_f64(key, v)?,
            "t0_frac" => {
                let t = parse_f64(key, v)?;
                self.params.t0_frac = t;
                for var in self.variants.iter_mut().filter(|x| x.t0_frac.is_some()) {
                    var.t0_frac = Some(t);
                }
            }
            "n_atoms" => {
                let n = parse_usize(key, v)?;
                let n = u32::try_from(n).map_err(|_| Error::InvalidParams("n_atoms too large".into()))?;
                self.params.n_atoms = n;
                self.css.n_atoms = n;
            }
            "n_chi_hz" => {
                self.params.n_chi_hz = match v {
                    "none" | "off" => None,
                    _ => Some(parse_f64(key, v)?),
                }
            }
            "z0" => self.css.center = PhaseState::new(parse_f64(key, v)?, self.css.center.phi)?,
            "phi0" => self.css.center = PhaseState::new(self.css.center.z, parse_f64(key, v)?)?,
            "n_samples" => self.css.n_samples = parse_usize(key, v)?,
            "seed" => {
                self.css.seed = v
                    .parse()
                    .map_err(|_| Error::InvalidParams(format!("seed: expected an integer, got {v:?}")))?
            }
            "loss_ms" => {
                self.loss_ms = match v {
                    "none" | "off" => None,
                    _ => Some(parse_f64(key, v)?),
                }
            }
            "sigma_delta_hz" => self.sigma_delta_hz = parse_f64(key, v)?,
            "lambda_decay" => self.lambda_decay = parse_bool(key, v)?,
            "readout" => self.readout = v.parse()?,
            // `none` leaves the duration to the other unit's key.
            "duration_ms" | "duration_tau" if v == "none" => {}
            "duration_ms" => self.duration = Duration::Ms(parse_f64(key, v)?),
            "duration_tau" => self.duration = Duration::Tau(parse_f64(key, v)?),
            "n_times" => self.n_times = parse_usize(key, v)?,
            "snapshots" => self.snapshots = parse_usize(key, v)?,
            "variants" => self.variants = parse_variants(v)?,
            "scan_points" => self.scan_grid = uniform_grid(parse_usize(key, v)?),
            "section_nz" => self.section_grid.n_z = parse_usize(key, v)?,
            "section_nphi" => self.section_grid.n_phi = parse_usize(key, v)?,
            "periods" => self.periods = parse_usize(key, v)?,
            "orbit_period" => self.orbit_period = parse_usize(key, v)?,
            "lyap_nz" => self.lyap_grid.n_z = parse_usize(key, v)?,
            "lyap_nphi" => self.lyap_grid.n_phi = parse_usize(key, v)?,
            "lyap_periods" => self.lyap_periods = parse_usize(key, v)?,
            "quantum" => self.with_quantum = parse_bool(key, v)?,
            "out" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::InvalidParams(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// The fully resolved configuration as `(key, value)` pairs in [`CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (dms, dtau) = match self.duration {
            Duration::Ms(m) => (m.to_string(), "none".to_string()),
            Duration::Tau(t) => ("none".to_string(), t.to_string()),
        };
        let opt = |o: Option<f64>| o.map_or("none".to_string(), |x| x.to_string());
        let scan = if self.scan_grid == uniform_grid(self.scan_grid.len()) {
            self.scan_grid.len().to_string()
        } else {
            format!("custom({})", self.scan_grid.len())
        };
        let p = &self.params;
        let vals: Vec<String> = vec![
            self.id.clone(),
            self.pipeline.as_str().into(),
            p.lambda.to_string(),
            p.epsilon.to_string(),
            p.drive_amp.to_string(),
            p.drive_freq.to_string(),
            p.t0_frac.to_string(),
            p.n_atoms.to_string(),
            opt(p.n_chi_hz),
            self.css.center.z.to_string(),
            self.css.center.phi.to_string(),
            self.css.n_samples.to_string(),
            self.css.seed.to_string(),
            opt(self.loss_ms),
            self.sigma_delta_hz.to_string(),
            self.lambda_decay.to_string(),
            self.readout.as_str().into(),
            dms,
            dtau,
            self.n_times.to_string(),
            self.snapshots.to_string(),
            format_variants(&self.variants),
            scan,
            self.section_grid.n_z.to_string(),
            self.section_grid.n_phi.to_string(),
            self.periods.to_string(),
            self.orbit_period.to_string(),
            self.lyap_grid.n_z.to_string(),
            self.lyap_grid.n_phi.to_string(),
            self.lyap_periods.to_string(),
            self.with_quantum.to_string(),
            self.out_dir.display().to_string(),
        ];
        CONFIG_KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    /// Parameters of one variant: its offset, or the undriven system.
    pub fn params_for(&self, v: &Variant) -> SystemParams {
        match v.t0_frac {
            Some(t) => self.params.with_t0_frac(t),
            None => self.params.undriven(),
        }
    }

    pub fn duration_tau(&self) -> Result<f64> {
        match self.duration {
            Duration::Tau(t) => Ok(t),
            Duration::Ms(ms) => self.params.tau_from_ms(ms).ok_or_else(|| {
                Error::InvalidParams("duration in ms requires n_chi_hz".into())
            }),
        }
    }

    /// `n_times` points from 0 to the configured duration inclusive.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        let end = self.duration_tau()?;
        let n = self.n_times;
        Ok((0..n).map(|k| end * k as f64 / (n - 1) as f64).collect())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let mut noise = NoiseModel {
            lambda_decay: self.lambda_decay,
            ..NoiseModel::default()
        };
        if let Some(ms) = self.loss_ms {
            noise = noise.with_loss_ms(&self.params, ms)?;
        }
        if self.sigma_delta_hz != 0.0 {
            noise = noise.with_sigma_delta_hz(&self.params, self.sigma_delta_hz)?;
        }
        noise.validate()?;
        Ok(noise)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        self.params.validate()?;
        self.css.validate()?;
        if self.css.n_atoms != self.params.n_atoms {
            return bad("css and system disagree on n_atoms");
        }
        for v in &self.variants {
            self.params_for(v).validate()?;
        }
        if self.variants.is_empty() && matches!(self.pipeline, Pipeline::Ensemble | Pipeline::Quantum) {
            return bad("at least one variant is required");
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant labels must be distinct");
        }
        if self.scan_grid.is_empty() || self.scan_grid.iter().any(|t| !(0.0..1.0).contains(t)) {
            return bad("scan grid must be nonempty and lie in [0, 1)");
        }
        if !(self.duration_tau()? > 0.0) {
            return bad("duration must be > 0");
        }
        if self.n_times < 2 {
            return bad("n_times must be >= 2");
        }
        if self.periods == 0 || self.orbit_period == 0 {
            return bad("periods and orbit_period must be >= 1");
        }
        if self.lyap_periods < 10 {
            return bad("lyap_periods must be >= 10");
        }
        if self.section_grid.n_z * self.section_grid.n_phi == 0
            || self.lyap_grid.n_z * self.lyap_grid.n_phi == 0
        {
            return bad("grids must be nonempty");
        }
        if let Some(ms) = self.loss_ms {
            if !(ms > 0.0) {
                return bad("loss_ms must be > 0");
            }
        }
        self.noise_model()?;
        Ok(())
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub provenance: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "fig1d-a0", provenance: "section gallery, undriven: Λ=0.7, ε=−0.11, ω=1.5" },
    Preset { name: "fig1d-a003", provenance: "section gallery, A=0.03: 2:1 island chain" },
    Preset { name: "fig1d-a02", provenance: "section gallery, A=0.2: chain inside a chaotic layer" },
    Preset { name: "fig1d-a035", provenance: "section gallery, A=0.35: strongly mixed (illustrative)" },
    Preset { name: "fig2", provenance: "orbit tracking at Λ=0.7, A=0.2 from (0.55, π): t0=0.2T, 0.6T, undriven; 48 ms" },
    Preset { name: "fig2-hyperbolic", provenance: "orbit tracking, t0=0.2T start on the hyperbolic orbit" },
    Preset { name: "fig2-elliptic", provenance: "orbit tracking, t0=0.6T start on the elliptic orbit" },
    Preset { name: "fig2-undriven", provenance: "orbit tracking, undriven reference" },
    Preset { name: "fig3", provenance: "mixed phase space, Λ=1.5, ε=−0.07, A=0.07, ω=1.6 from simulation start (−0.3, 2.68): t0=0.9T, 0.4T, undriven; 61 ms" },
    Preset { name: "fig3-nominal", provenance: "mixed phase space from the nominal preparation point (0, 2.51)" },
    Preset { name: "fig4a", provenance: "t0 scan of the final variance at 48 ms, Λ=0.7 preset" },
    Preset { name: "fig4b", provenance: "t0 scan of the final variance at 61 ms, Λ=1.5 preset from (0, 2.51)" },
    Preset { name: "fig4b-sim", provenance: "t0 scan at 61 ms, Λ=1.5 preset from simulation start (−0.3, 2.68)" },
];

fn fig2_params() -> SystemParams {
    SystemParams::new(0.7, -0.11, 0.2, 1.5)
}

fn fig3_params() -> SystemParams {
    SystemParams::new(1.5, -0.07, 0.07, 1.6)
}

fn fig2_start() -> PhaseState {
    PhaseState { z: 0.55, phi: PI }
}

fn fig3_sim_start() -> PhaseState {
    PhaseState { z: -0.3, phi: 2.68 }
}

fn fig3_nominal_start() -> PhaseState {
    PhaseState { z: 0.0, phi: 2.51 }
}

fn section_preset(id: &str, amp: f64) -> ScenarioConfig {
    let p = fig2_params().with_drive_amp(amp);
    let mut c = ScenarioConfig::base(id, "", Pipeline::Section, p, fig2_start());
    c.variants = vec![Variant::driven("section", 0.0)];
    c
}

fn fig2_preset(id: &str, variants: Vec<Variant>) -> ScenarioConfig {
    let mut c = ScenarioConfig::base(id, "", Pipeline::Ensemble, fig2_params(), fig2_start());
    c.variants = variants;
    c
}

fn fig3_preset(id: &str, start: PhaseState) -> ScenarioConfig {
    let mut c = ScenarioConfig::base(id, "", Pipeline::Ensemble, fig3_params(), start);
    c.duration = Duration::Ms(61.0);
    c.readout = Readout::Y;
    c.variants = vec![
        Variant::driven("chaotic", 0.9),
        Variant::driven("island", 0.4),
        Variant::undriven("undriven"),
    ];
    c
}

fn scan_preset(id: &str, params: SystemParams, start: PhaseState, ms: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::base(id, "", Pipeline::Scan, params, start);
    c.duration = Duration::Ms(ms);
    c.css.n_samples = 4000;
    c.variants = vec![Variant::undriven("undriven")];
    c
}

/// Resolves a preset by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let mut c = match name {
        "fig1d-a0" => section_preset(name, 0.0),
        "fig1d-a003" => section_preset(name, 0.03),
        "fig1d-a02" => section_preset(name, 0.2),
        "fig1d-a035" => section_preset(name, 0.35),
        "fig2" => fig2_preset(
            name,
            vec![
                Variant::driven("hyperbolic", 0.2),
                Variant::driven("elliptic", 0.6),
                Variant::undriven("undriven"),
            ],
        ),
        "fig2-hyperbolic" => fig2_preset(name, vec![Variant::driven("hyperbolic", 0.2)]),
        "fig2-elliptic" => fig2_preset(name, vec![Variant::driven("elliptic", 0.6)]),
        "fig2-undriven" => fig2_preset(name, vec![Variant::undriven("undriven")]),
        "fig3" => fig3_preset(name, fig3_sim_start()),
        "fig3-nominal" => fig3_preset(name, fig3_nominal_start()),
        "fig4a" => scan_preset(name, fig2_params(), fig2_start(), 48.0),
        "fig4b" => scan_preset(name, fig3_params(), fig3_nominal_start(), 61.0),
        "fig4b-sim" => scan_preset(name, fig3_params(), fig3_sim_start(), 61.0),
        other => {
            return Err(Error::InvalidParams(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    c.description = PRESETS
        .iter()
        .find(|p| p.name == name)
        .map(|p| p.provenance.to_string())
        .unwrap_or_default();
    Ok(c)
}

/// A neutral configuration for ad-hoc runs with no preset.
pub fn default_config() -> ScenarioConfig {
    let mut c = preset("fig2-elliptic").expect("built-in preset");
    c.id = "custom".into();
    c.description = String::new();
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for p in PRESETS {
            let c = preset(p.name).unwrap();
            assert_eq!(c.id, p.name);
            c.validate().unwrap();
            assert!(!c.description.is_empty());
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn set_round_trips_through_entries() {
        let c = preset("fig3").unwrap();
        let mut d = default_config();
        for (k, v) in c.entries() {
            if k == "scan_points" && v.starts_with("custom") {
                continue;
            }
            d.set(&k, &v).unwrap();
        }
        d.description = c.description.clone();
        assert_eq!(c, d);
    }

    #[test]
    fn entries_cover_every_key() {
        let e = default_config().entries();
        assert_eq!(e.len(), CONFIG_KEYS.len());
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = default_config();
        assert!(c.set("lambda", "abc").is_err());
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("readout", "x").is_err());
        assert!(c.set("variants", "a").is_err());
        c.set("t0_frac", "1.2").unwrap();
        assert!(c.validate().is_err());
        let mut c = default_config();
        c.scan_grid = vec![0.5, 1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn time_conversion_is_computed() {
        let c = preset("fig2").unwrap();
        let t = c.params.period();
        let dur = c.duration_tau().unwrap();
        assert!((c.params.ms_from_tau(t).unwrap() - 14.58).abs() < 0.01);
        assert!((dur / t - 3.29).abs() < 0.01);
        let c = preset("fig3").unwrap();
        let t = c.params.period();
        assert!((c.params.ms_from_tau(t).unwrap() - 29.3).abs() < 0.05);
        assert!((c.duration_tau().unwrap() / t - 2.08).abs() < 0.01);
    }

    #[test]
    fn variants_parse() {
        let v = parse_variants("a:0.2, b:off").unwrap();
        assert_eq!(v, vec![Variant::driven("a", 0.2), Variant::undriven("b")]);
        assert_eq!(format_variants(&v), "a:0.2,b:off");
    }
}
