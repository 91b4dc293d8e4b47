use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pbchaos(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pbchaos"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("PBCHAOS_") {
            cmd.env_remove(k);
        }
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn lists_presets() {
    let o = pbchaos(&["presets"], &[]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["fig2", "fig3", "fig4a", "fig4b", "fig1d-a02"] {
        assert!(s.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pbchaos(&["--no-such-flag", "section"], &[]).status.code(), Some(2));
    assert_eq!(pbchaos(&[], &[]).status.code(), Some(2));
    assert_eq!(pbchaos(&["scenario"], &[]).status.code(), Some(2));
    assert_eq!(pbchaos(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(pbchaos(&["section", "--lambda", "abc", "--out", out], &[]).status.code(), Some(3));
    assert_eq!(pbchaos(&["section", "--drive-amp", "-1", "--out", out], &[]).status.code(), Some(3));
    assert_eq!(pbchaos(&["section", "--preset", "nope", "--out", out], &[]).status.code(), Some(3));
    let missing = tmp.path().join("missing.ini");
    let o = pbchaos(&["section", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    let bad = tmp.path().join("bad.ini");
    fs::write(&bad, "[model]\nno_such_key = 1\n").unwrap();
    assert_eq!(pbchaos(&["section", "--config", bad.to_str().unwrap()], &[]).status.code(), Some(3));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = pbchaos(
        &["section", "--preset", "fig1d-a0", "--periods", "2", "--section-nz", "1", "--section-nphi", "1"],
        &[("PBCHAOS_OUT", file.to_str().unwrap())],
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn undriven_section_conserves_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pbchaos(
        &[
            "section", "--preset", "fig1d-a0", "--periods", "20", "--section-nz", "3",
            "--section-nphi", "3", "--out", tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("lambda = 0.7"));
    let csv = fs::read_to_string(tmp.path().join("fig1d-a0/section.csv")).unwrap();
    let (lambda, eps) = (0.7, -0.11);
    let energy = |z: f64, phi: f64| 0.5 * lambda * z * z - (1.0 - z * z).sqrt() * phi.cos() + eps * z;
    let mut per_seed: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (z, phi): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        per_seed.entry(f[0].parse().unwrap()).or_default().push(energy(z, phi));
    }
    assert_eq!(per_seed.len(), 9);
    for (seed, hs) in per_seed {
        assert_eq!(hs.len(), 21);
        let spread = hs.iter().cloned().fold(f64::MIN, f64::max) - hs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-7, "seed {seed}: energy drift {spread}");
    }
}

#[test]
fn output_independent_of_jobs() {
    let run = |jobs: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let o = pbchaos(
            &[
                "ensemble", "--preset", "fig2", "--n-samples", "300", "--duration-tau", "6",
                "--n-times", "7", "--jobs", jobs, "--out", tmp.path().to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let dir = tmp.path().join("fig2");
        let mut files: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        assert!(!files.is_empty());
        files.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn precedence_file_env_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let ini = tmp.path().join("run.ini");
    fs::write(
        &ini,
        "preset = fig1d-a003\n[model]\nlambda = 0.9\nepsilon = -0.2\n[section]\nsection_nz = 1\nsection_nphi = 1\nperiods = 2\n",
    )
    .unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = pbchaos(
        &["section", "--config", ini.to_str().unwrap(), "--epsilon", "-0.05", "--out", out],
        &[("PBCHAOS_DRIVE_AMP", "0.04")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&tmp.path().join("fig1d-a003"));
    assert_eq!(m["config.lambda"], "0.9");
    assert_eq!(m["config.epsilon"], "-0.05");
    assert_eq!(m["config.drive_amp"], "0.04");
    assert_eq!(m["config.periods"], "2");
    assert_eq!(m["config.pipeline"], "section");
}
