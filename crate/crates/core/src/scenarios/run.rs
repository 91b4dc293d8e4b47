use std::path::{Path, PathBuf};

use crate::ensemble::evolve_ensemble_with;
use crate::error::Result;
use crate::export::{num, write_artifact, CsvTable, Manifest, Marker, Plot, Series};
use crate::integrate::IntegratorConfig;
use crate::model::PhaseState;
use crate::orbits::{
    chaos_map, find_fixed_points_undriven, find_resonance_chain, orbits_to_csv, Stability,
};
use crate::poincare::{build_section, grid_seeds};
use crate::quantum::{
    build_collective_operators, css_state, evolve_quantum, PhysParams, QuantumConfig,
    QuantumSeries,
};

use super::scan::{scan_t0, transition_widths};
use super::{Pipeline, Readout, ScenarioConfig};

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const HIST_BINS: usize = 40;

/// Files written by a scenario and the manifest describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

impl ScenarioOutput {
    pub fn value(&self, key: &str) -> Option<&str> {
        self.manifest
            .entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

trait Staged<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T> Staged<T> for Result<T> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(name))
    }
}

struct Sink<'a> {
    dir: &'a Path,
    manifest: &'a mut Manifest,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let a = write_artifact(&self.dir.join(name), content).stage("write")?;
        self.manifest.artifacts.push(a);
        Ok(())
    }

    fn csv(&mut self, name: &str, t: &CsvTable) -> Result<()> {
        self.write(name, &t.render())
    }

    fn set(&mut self, key: impl Into<String>, v: impl ToString) {
        self.manifest.set(key, v);
    }
}

/// Runs the pipeline named in `config`, writing into `out_dir/id/`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate().stage("config")?;
    let dir = config.out_dir.join(&config.id);
    let mut manifest = Manifest::default();
    manifest.set("scenario", &config.id);
    manifest.set("description", &config.description);
    for (k, v) in config.entries() {
        manifest.set(format!("config.{k}"), v);
    }
    let p = &config.params;
    let dur = config.duration_tau().stage("config")?;
    manifest.set("derived.period_tau", num(p.period()));
    manifest.set("derived.period_ms", p.ms_from_tau(p.period()).map_or("none".into(), num));
    manifest.set("derived.duration_tau", num(dur));
    manifest.set("derived.duration_periods", num(dur / p.period()));
    manifest.set("derived.css_width", num(1.0 / (p.n_atoms as f64).sqrt()));
    let mut sink = Sink {
        dir: &dir,
        manifest: &mut manifest,
    };
    match config.pipeline {
        Pipeline::Section => section(config, &mut sink)?,
        Pipeline::Orbits => orbits(config, &mut sink)?,
        Pipeline::LyapunovMap => lyapunov(config, &mut sink)?,
        Pipeline::Ensemble => ensemble(config, &mut sink)?,
        Pipeline::Quantum => quantum(config, &mut sink)?,
        Pipeline::Scan => scan(config, &mut sink)?,
    }
    let manifest_path = dir.join("manifest.txt");
    write_artifact(&manifest_path, &manifest.render(&dir)).stage("write")?;
    Ok(ScenarioOutput {
        dir,
        manifest_path,
        manifest,
    })
}

fn orbit_series(orbits: &[crate::orbits::PeriodicOrbit]) -> Vec<Series> {
    let pick = |s: Stability| -> Vec<(f64, f64)> {
        orbits
            .iter()
            .filter(|o| o.stability == s)
            .map(|o| (o.anchor.phi, o.anchor.z))
            .collect()
    };
    vec![
        Series::scatter("elliptic", pick(Stability::Elliptic), "#d62728").with_marker(Marker::Star, 6.0),
        Series::scatter("hyperbolic", pick(Stability::Hyperbolic), "#1f77b4")
            .with_marker(Marker::Triangle, 5.0),
    ]
}

fn section(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let seeds = grid_seeds(c.section_grid.n_z, c.section_grid.n_phi);
    let sec = build_section(&c.params, &seeds, c.periods, 0.0).stage("section")?;
    sink.set("result.section_failures", sec.failures.len());
    sink.csv("section.csv", &sec.to_csv())?;
    let mut plot = sec.to_plot(&format!("{} stroboscopic section", c.id));
    if c.params.drive_amp > 0.0 {
        let chain = find_resonance_chain(&c.params, c.orbit_period, 0.0).stage("orbits")?;
        sink.set("result.elliptic_orbits", chain.count(Stability::Elliptic));
        sink.set("result.hyperbolic_orbits", chain.count(Stability::Hyperbolic));
        sink.csv("orbits.csv", &orbits_to_csv(&chain.orbits))?;
        for s in orbit_series(&chain.orbits) {
            plot.push(s);
        }
    }
    sink.write("section.svg", &plot.render())
}

fn orbits(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let fps = find_fixed_points_undriven(&c.params);
    let mut t = CsvTable::new(&["z", "phi", "class"]);
    for (s, st) in &fps {
        t.push(vec![num(s.z), num(s.phi), st.as_str().into()]);
    }
    sink.set("result.undriven_fixed_points", fps.len());
    sink.csv("fixed_points.csv", &t)?;
    if c.params.drive_amp > 0.0 {
        let chain = find_resonance_chain(&c.params, c.orbit_period, 0.0).stage("orbits")?;
        sink.set("result.elliptic_orbits", chain.count(Stability::Elliptic));
        sink.set("result.hyperbolic_orbits", chain.count(Stability::Hyperbolic));
        sink.set("result.newton_failures", chain.failures.len());
        sink.csv("orbits.csv", &orbits_to_csv(&chain.orbits))?;
        let mut plot = Plot::new(&format!("{} period-{} orbits", c.id, c.orbit_period), "phi", "z")
            .ranges((0.0, std::f64::consts::TAU), (-1.0, 1.0));
        for s in orbit_series(&chain.orbits) {
            plot.push(s);
        }
        sink.write("orbits.svg", &plot.render())?;
    }
    Ok(())
}

fn lyapunov(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let map = chaos_map(&c.params, &c.lyap_grid, c.lyap_periods).stage("lyapunov-map")?;
    sink.set("result.threshold", num(map.threshold));
    sink.set("result.chaotic_fraction", num(map.chaotic_fraction()));
    sink.csv("lyapunov.csv", &map.to_csv())?;
    let pts = |chaotic: bool| -> Vec<(f64, f64)> {
        map.cells
            .iter()
            .filter(|x| !x.failed && x.chaotic == chaotic)
            .map(|x| (x.center.phi, x.center.z))
            .collect()
    };
    let mut plot = Plot::new(&format!("{} finite-time Lyapunov map", c.id), "phi", "z")
        .ranges((0.0, std::f64::consts::TAU), (-1.0, 1.0));
    plot.push(Series::scatter("chaotic", pts(true), "#d62728").with_marker(Marker::Square, 3.0));
    plot.push(Series::scatter("regular", pts(false), "#bbbbbb").with_marker(Marker::Square, 3.0));
    sink.write("lyapunov.svg", &plot.render())
}

fn readout_value(r: Readout, s: &PhaseState) -> f64 {
    match r {
        Readout::Z => s.z,
        Readout::Y => s.phi.sin(),
    }
}

fn snapshot_indices(n_times: usize, snapshots: usize) -> Vec<usize> {
    let mut v: Vec<usize> = match snapshots {
        0 => Vec::new(),
        1 => vec![n_times - 1],
        s => (0..s)
            .map(|k| ((k * (n_times - 1)) as f64 / (s - 1) as f64).round() as usize)
            .collect(),
    };
    v.dedup();
    v
}

fn histogram(c: &ScenarioConfig, times: &[f64], samples: &[Vec<PhaseState>]) -> CsvTable {
    let mut t = CsvTable::new(&["t_dimensionless", "t_ms", "axis", "bin_center", "count"]);
    let width = 2.0 / HIST_BINS as f64;
    for k in snapshot_indices(times.len(), c.snapshots) {
        let mut counts = [0usize; HIST_BINS];
        for s in &samples[k] {
            let v = readout_value(c.readout, s);
            let b = (((v + 1.0) / width) as usize).min(HIST_BINS - 1);
            counts[b] += 1;
        }
        let ms = c.params.ms_from_tau(times[k]).map_or(String::new(), num);
        for (b, n) in counts.iter().enumerate() {
            t.push(vec![
                num(times[k]),
                ms.clone(),
                c.readout.as_str().into(),
                num(-1.0 + (b as f64 + 0.5) * width),
                n.to_string(),
            ]);
        }
    }
    t
}

fn time_axis(c: &ScenarioConfig, times: &[f64]) -> (Vec<f64>, &'static str) {
    match times.iter().map(|&t| c.params.ms_from_tau(t)).collect::<Option<Vec<_>>>() {
        Some(ms) => (ms, "t (ms)"),
        None => (times.to_vec(), "t (1/Omega0)"),
    }
}

fn ensemble(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let times = c.sample_times().stage("config")?;
    let noise = c.noise_model().stage("config")?;
    let (axis, xlabel) = time_axis(c, &times);
    let mut nv = Plot::new(&format!("{} normalized variance", c.id), xlabel, "Var(z)/Var_CSS");
    let ylabel = format!("<{}>", c.readout.as_str());
    let mut mean = Plot::new(&format!("{} mean readout", c.id), xlabel, &ylabel);
    for (i, v) in c.variants.iter().enumerate() {
        let p = c.params_for(v);
        let run = evolve_ensemble_with(&p, &c.css, &noise, &times, &IntegratorConfig::default())
            .stage(&format!("ensemble:{}", v.label))?;
        let s = &run.series;
        let last = s.len() - 1;
        let key = |q: &str| format!("result.{}.{q}", v.label);
        sink.set(key("survivors"), s.survivors);
        sink.set(key("final_mean_z"), num(s.mean_z[last]));
        sink.set(key("final_var_z"), num(s.var_z[last]));
        sink.set(key("final_normvar_z"), num(s.normalized_var_z[last]));
        sink.set(key("final_var_y"), num(s.var_y[last]));
        sink.csv(&format!("ensemble_{}.csv", v.label), &s.to_csv())?;
        sink.csv(&format!("dist_{}.csv", v.label), &histogram(c, &times, &run.samples))?;
        let color = PALETTE[i % PALETTE.len()];
        let m = match c.readout {
            Readout::Z => &s.mean_z,
            Readout::Y => &s.mean_y,
        };
        nv.push(Series::line(&v.label, zip(&axis, &s.normalized_var_z), color));
        mean.push(Series::line(&v.label, zip(&axis, m), color));
        if c.with_quantum {
            let q = quantum_series(c, &p, &times).stage(&format!("quantum:{}", v.label))?;
            sink.csv(&format!("quantum_{}.csv", v.label), &q.to_csv())?;
            nv.push(Series::line(format!("{} quantum", v.label), zip(&axis, &q.normalized_var_z), "#555555"));
        }
    }
    sink.write("normvar.svg", &nv.autoscale().render())?;
    sink.write("mean.svg", &mean.autoscale().render())
}

fn quantum_series(
    c: &ScenarioConfig,
    p: &crate::model::SystemParams,
    times: &[f64],
) -> Result<QuantumSeries> {
    let n = p.n_atoms as usize;
    let ops = build_collective_operators(n)?;
    let psi = css_state(n, c.css.center.z, c.css.center.phi)?;
    let states = evolve_quantum(&psi, &PhysParams::from_system(p), times, &QuantumConfig::default())?;
    Ok(QuantumSeries::from_states(&ops, p, times, &states))
}

fn quantum(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let times = c.sample_times().stage("config")?;
    let (axis, xlabel) = time_axis(c, &times);
    let mut nv = Plot::new(&format!("{} quantum normalized variance", c.id), xlabel, "Var(z)/Var_CSS");
    for (i, v) in c.variants.iter().enumerate() {
        let p = c.params_for(v);
        let q = quantum_series(c, &p, &times).stage(&format!("quantum:{}", v.label))?;
        let last = q.times.len() - 1;
        sink.set(format!("result.{}.final_mean_z", v.label), num(q.mean_z[last]));
        sink.set(format!("result.{}.final_normvar_z", v.label), num(q.normalized_var_z[last]));
        sink.csv(&format!("quantum_{}.csv", v.label), &q.to_csv())?;
        nv.push(Series::line(&v.label, zip(&axis, &q.normalized_var_z), PALETTE[i % PALETTE.len()]));
    }
    sink.write("normvar.svg", &nv.autoscale().render())
}

fn scan(c: &ScenarioConfig, sink: &mut Sink) -> Result<()> {
    let noise = c.noise_model().stage("config")?;
    let dur = c.duration_tau().stage("config")?;
    let s = scan_t0(&c.params, &c.css, &noise, dur, &c.scan_grid, c.orbit_period).stage("scan-t0")?;
    sink.set("result.baseline_var_z", num(s.baseline_var_z));
    sink.set("result.baseline_normvar_z", num(s.baseline_normalized_var_z));
    sink.set("result.max_t0", num(s.rows[s.argmax()].t0_frac));
    sink.set("result.min_t0", num(s.rows[s.argmin()].t0_frac));
    let windows: Vec<String> = s
        .low_windows()
        .iter()
        .map(|&(i, n)| format!("{}+{}", s.rows[i].t0_frac, n))
        .collect();
    sink.set("result.low_windows", windows.join(" "));
    for st in [Stability::Elliptic, Stability::Hyperbolic] {
        let v = s.phase_of(st).map_or("none".into(), |i| num(s.rows[i].t0_frac));
        sink.set(format!("result.{}_phase_t0", st.as_str()), v);
    }
    if c.scan_grid == super::uniform_grid(c.scan_grid.len()) && c.params.drive_amp > 0.0 {
        let w = transition_widths(&s, &c.params, &c.css.center).stage("scan-t0")?;
        sink.set("result.rising_edge_css_widths", num(w[0].css_widths));
        sink.set("result.falling_edge_css_widths", num(w[1].css_widths));
    }
    sink.csv("scan.csv", &s.to_csv())?;
    let pts: Vec<(f64, f64)> = s.rows.iter().map(|r| (r.t0_frac, r.var_z)).collect();
    let mut plot = Plot::new(&format!("{} final variance vs drive offset", c.id), "t0/T", "Var(z)");
    plot.push(Series::line("driven", pts.clone(), "#d62728"));
    plot.push(Series::scatter("driven", pts, "#d62728").with_marker(Marker::Dot, 2.5));
    plot.push(Series::line("undriven", vec![(0.0, s.baseline_var_z), (1.0, s.baseline_var_z)], "#555555"));
    sink.write("scan.svg", &plot.autoscale().render())
}

fn zip(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::preset;

    #[test]
    fn snapshots_span_the_run() {
        assert_eq!(snapshot_indices(201, 5), vec![0, 50, 100, 150, 200]);
        assert_eq!(snapshot_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(snapshot_indices(10, 1), vec![9]);
        assert!(snapshot_indices(10, 0).is_empty());
    }

    #[test]
    fn small_ensemble_scenario_writes_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = preset("fig3").unwrap();
        c.set("n_samples", "50").unwrap();
        c.set("n_times", "5").unwrap();
        c.set("out", tmp.path().to_str().unwrap()).unwrap();
        let out = run_scenario(&c).unwrap();
        let text = std::fs::read_to_string(&out.manifest_path).unwrap();
        assert!(text.contains("config.lambda: 1.5"));
        assert!(text.contains("artifact: ensemble_island.csv"));
        assert!(text.contains("sha256.dist_chaotic.csv: "));
        assert!(out.value("result.undriven.final_var_z").is_some());
        let dist = std::fs::read_to_string(out.dir.join("dist_island.csv")).unwrap();
        assert_eq!(dist.lines().count(), 1 + 5 * HIST_BINS);
        assert!(dist.lines().nth(1).unwrap().contains(",y,"));
    }

    #[test]
    fn invalid_config_names_stage() {
        let mut c = preset("fig2").unwrap();
        c.n_times = 1;
        let e = run_scenario(&c).unwrap_err();
        assert!(e.to_string().contains("stage `config`"));
    }
}
