//! `pbchaos`: command-line front end for the driven two-mode condensate toolkit.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ini::Ini;
use pbchaos::scenarios::{default_config, preset, run_scenario, Pipeline, ScenarioConfig, PRESETS};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

macro_rules! overrides {
    ($($field:ident: $key:literal, $env:literal, $help:literal;)*) => {
        /// Per-key overrides. Each also reads `PBCHAOS_<KEY>` from the environment.
        #[derive(Args, Debug, Default, Clone)]
        struct Overrides {
            $(
                #[arg(long, global = true, env = $env, value_name = "VALUE", help = $help, allow_hyphen_values = true)]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push(($key, x.as_str()));
                    }
                )*
                v
            }
        }
    };
}

overrides! {
    id: "id", "PBCHAOS_ID", "Scenario id, also the output subdirectory";
    lambda: "lambda", "PBCHAOS_LAMBDA", "Interaction Λ = Nχ/Ω0";
    epsilon: "epsilon", "PBCHAOS_EPSILON", "Detuning ε = δ/Ω0";
    drive_amp: "drive_amp", "PBCHAOS_DRIVE_AMP", "Modulation depth A";
    drive_freq: "drive_freq", "PBCHAOS_DRIVE_FREQ", "Drive frequency ω in units of Ω0";
    t0_frac: "t0_frac", "PBCHAOS_T0_FRAC", "Drive offset t0/T in [0, 1)";
    n_atoms: "n_atoms", "PBCHAOS_N_ATOMS", "Atom number N";
    n_chi_hz: "n_chi_hz", "PBCHAOS_N_CHI_HZ", "Nχ/2π in Hz, or none";
    z0: "z0", "PBCHAOS_Z0", "Initial population imbalance";
    phi0: "phi0", "PBCHAOS_PHI0", "Initial relative phase";
    n_samples: "n_samples", "PBCHAOS_N_SAMPLES", "Ensemble size";
    loss_ms: "loss_ms", "PBCHAOS_LOSS_MS", "1/e atom-loss time in ms, or none";
    sigma_delta_hz: "sigma_delta_hz", "PBCHAOS_SIGMA_DELTA_HZ", "RMS detuning noise in Hz";
    lambda_decay: "lambda_decay", "PBCHAOS_LAMBDA_DECAY", "Let Λ follow the atom number";
    readout: "readout", "PBCHAOS_READOUT", "Histogram axis: z or y";
    duration_ms: "duration_ms", "PBCHAOS_DURATION_MS", "Evolution time in ms";
    duration_tau: "duration_tau", "PBCHAOS_DURATION_TAU", "Evolution time in units of 1/Ω0";
    n_times: "n_times", "PBCHAOS_N_TIMES", "Number of sample times";
    snapshots: "snapshots", "PBCHAOS_SNAPSHOTS", "Histogram snapshots per run";
    variants: "variants", "PBCHAOS_VARIANTS", "Runs as label:t0_frac or label:off, comma separated";
    scan_points: "scan_points", "PBCHAOS_SCAN_POINTS", "Points of the t0 scan grid";
    section_nz: "section_nz", "PBCHAOS_SECTION_NZ", "Section seed grid rows";
    section_nphi: "section_nphi", "PBCHAOS_SECTION_NPHI", "Section seed grid columns";
    periods: "periods", "PBCHAOS_PERIODS", "Stroboscopic iterates per seed";
    orbit_period: "orbit_period", "PBCHAOS_ORBIT_PERIOD", "Period n of the orbit search";
    lyap_nz: "lyap_nz", "PBCHAOS_LYAP_NZ", "Lyapunov map rows";
    lyap_nphi: "lyap_nphi", "PBCHAOS_LYAP_NPHI", "Lyapunov map columns";
    lyap_periods: "lyap_periods", "PBCHAOS_LYAP_PERIODS", "Periods per Lyapunov estimate";
    quantum: "quantum", "PBCHAOS_QUANTUM", "Also run the exact quantum model";
}

#[derive(Parser, Debug)]
#[command(name = "pbchaos", version, about = "Stroboscopic maps, periodic orbits and ensembles of a driven two-mode condensate")]
struct Cli {
    /// Configuration file: `key = value` lines under `[section]` headers.
    #[arg(long, global = true, env = "PBCHAOS_CONFIG")]
    config: Option<PathBuf>,
    /// Preset to start from; see `pbchaos presets`.
    #[arg(long, global = true, env = "PBCHAOS_PRESET")]
    preset: Option<String>,
    #[arg(long, global = true, env = "PBCHAOS_SEED")]
    seed: Option<String>,
    /// Output root; files go to `<out>/<id>/`.
    #[arg(long, global = true, env = "PBCHAOS_OUT")]
    out: Option<String>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "PBCHAOS_JOBS")]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stroboscopic section from a seed grid, with the period-n orbit chain.
    Section,
    /// Undriven fixed points and the period-n orbit chain.
    Orbits,
    /// Finite-time Lyapunov exponents on a phase-space grid.
    LyapunovMap,
    /// Coherent-spin-state ensemble statistics over time.
    Ensemble,
    /// Exact collective-spin propagation.
    Quantum,
    /// Final variance against the drive offset t0.
    ScanT0,
    /// Run a preset with its own pipeline.
    Scenario,
    /// List the shipped presets.
    Presets,
}

enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("config error: {e}"))
}

fn load_file(path: &PathBuf) -> Result<(Option<String>, Vec<(String, String)>), Failure> {
    let ini = Ini::load_from_file(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut preset = None;
    let mut pairs = Vec::new();
    for (_, props) in ini.iter() {
        for (k, v) in props.iter() {
            if k == "preset" {
                preset = Some(v.to_string());
            } else {
                pairs.push((k.to_string(), v.to_string()));
            }
        }
    }
    Ok((preset, pairs))
}

fn resolve(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let (file_preset, file_pairs) = match &cli.config {
        Some(p) => load_file(p)?,
        None => (None, Vec::new()),
    };
    let name = cli.preset.clone().or(file_preset);
    let mut cfg = match (&name, &cli.command) {
        (Some(n), _) => preset(n).map_err(config_err)?,
        (None, Command::Scenario) => {
            return Err(Failure::Usage(
                "the scenario subcommand needs --preset or a `preset` key in --config".into(),
            ))
        }
        (None, _) => default_config(),
    };
    let mut apply = |k: &str, v: &str| cfg.set(k, v).map_err(config_err);
    for (k, v) in &file_pairs {
        apply(k, v)?;
    }
    for (k, v) in cli.overrides.pairs() {
        apply(k, v)?;
    }
    if let Some(s) = &cli.seed {
        apply("seed", s)?;
    }
    if let Some(o) = &cli.out {
        apply("out", o)?;
    }
    let pipeline = match cli.command {
        Command::Section => Some(Pipeline::Section),
        Command::Orbits => Some(Pipeline::Orbits),
        Command::LyapunovMap => Some(Pipeline::LyapunovMap),
        Command::Ensemble => Some(Pipeline::Ensemble),
        Command::Quantum => Some(Pipeline::Quantum),
        Command::ScanT0 => Some(Pipeline::Scan),
        Command::Scenario | Command::Presets => None,
    };
    if let Some(p) = pipeline {
        cfg.pipeline = p;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Presets = cli.command {
        let mut out = std::io::stdout().lock();
        for p in PRESETS {
            if writeln!(out, "{:<16} {}", p.name, p.provenance).is_err() {
                break;
            }
        }
        return Ok(());
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let cfg = resolve(&cli)?;
    println!("# resolved configuration");
    print!("{cfg}");
    println!("jobs = {}", rayon::current_num_threads());
    log::info!("running {} pipeline for {}", cfg.pipeline.as_str(), cfg.id);
    let out = run_scenario(&cfg).map_err(|e| Failure::Runtime(format!("runtime error: {e}")))?;
    println!("# results");
    for (k, v) in out.manifest.entries.iter().filter(|(k, _)| k.starts_with("result.")) {
        println!("{k} = {v}");
    }
    println!(
        "wrote {} files and {}",
        out.manifest.artifacts.len(),
        out.manifest_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
