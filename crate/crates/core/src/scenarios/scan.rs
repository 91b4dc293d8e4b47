use rayon::prelude::*;

use crate::ensemble::{evolve_ensemble, CssSpec, NoiseModel};
use crate::error::{Error, Result};
use crate::export::{num, CsvTable};
use crate::integrate::{propagate, IntegratorConfig};
use crate::model::{PhaseState, SystemParams};
use crate::orbits::{find_periodic_orbit, Stability, DEFAULT_NEWTON_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub t0_frac: f64,
    pub mean_z: f64,
    pub var_z: f64,
    pub normalized_var_z: f64,
    pub var_y: f64,
    /// Period-n orbit Newton converges to from the start point, with its
    /// distance from the start. `None` when Newton fails.
    pub orbit: Option<(Stability, f64)>,
}

/// Final-time ensemble statistics against the drive offset.
#[derive(Debug, Clone, PartialEq)]
pub struct T0Scan {
    pub rows: Vec<ScanRow>,
    pub baseline_var_z: f64,
    pub baseline_normalized_var_z: f64,
    pub orbit_period: usize,
}

impl T0Scan {
    /// Maximal circular runs `(first_index, length)` with var_z below the undriven baseline.
    pub fn low_windows(&self) -> Vec<(usize, usize)> {
        let low: Vec<bool> = self.rows.iter().map(|r| r.var_z < self.baseline_var_z).collect();
        circular_runs(&low)
    }

    /// Row whose start point lies closest to an orbit of class `stab`.
    pub fn phase_of(&self, stab: Stability) -> Option<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.orbit.filter(|o| o.0 == stab).map(|o| (i, o.1)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn argmax(&self) -> usize {
        argby(&self.rows, |a, b| a.total_cmp(b))
    }

    pub fn argmin(&self) -> usize {
        argby(&self.rows, |a, b| b.total_cmp(a))
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "t0_frac",
            "mean_z",
            "var_z",
            "normvar_z",
            "var_y",
            "baseline_var_z",
            "orbit_class",
            "orbit_distance",
        ]);
        for r in &self.rows {
            let (class, dist) = match r.orbit {
                Some((s, d)) => (s.as_str().to_string(), num(d)),
                None => (String::new(), String::new()),
            };
            t.push(vec![
                num(r.t0_frac),
                num(r.mean_z),
                num(r.var_z),
                num(r.normalized_var_z),
                num(r.var_y),
                num(self.baseline_var_z),
                class,
                dist,
            ]);
        }
        t
    }
}

fn argby(rows: &[ScanRow], cmp: impl Fn(&f64, &f64) -> std::cmp::Ordering) -> usize {
    rows.iter()
        .enumerate()
        .max_by(|a, b| cmp(&a.1.var_z, &b.1.var_z))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn circular_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let n = flags.len();
    if n == 0 {
        return Vec::new();
    }
    if flags.iter().all(|&f| f) {
        return vec![(0, n)];
    }
    // Start just after a `false` so no run straddles the origin.
    let off = flags.iter().position(|&f| !f).unwrap() + 1;
    let mut runs = Vec::new();
    let mut k = 0;
    while k < n {
        let i = (off + k) % n;
        if flags[i] {
            let mut len = 0;
            while k < n && flags[(off + k) % n] {
                len += 1;
                k += 1;
            }
            runs.push((i, len));
        } else {
            k += 1;
        }
    }
    runs.sort_unstable();
    runs
}

/// Runs the ensemble once per drive offset in `grid` and once undriven.
pub fn scan_t0(
    params: &SystemParams,
    css: &CssSpec,
    noise: &NoiseModel,
    duration: f64,
    grid: &[f64],
    orbit_period: usize,
) -> Result<T0Scan> {
    if grid.is_empty() || grid.iter().any(|t| !(0.0..1.0).contains(t)) {
        return Err(Error::InvalidParams("scan grid must be nonempty and lie in [0, 1)".into()));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidParams("duration must be > 0".into()));
    }
    let times = [0.0, duration];
    let base = evolve_ensemble(&params.undriven(), css, noise, &times)?;
    let rows = grid
        .par_iter()
        .map(|&t0| {
            let p = params.with_t0_frac(t0);
            let s = evolve_ensemble(&p, css, noise, &times)?;
            let orbit = if p.drive_amp > 0.0 {
                find_periodic_orbit(&p, &css.center, orbit_period, 0.0, DEFAULT_NEWTON_TOL)
                    .ok()
                    .filter(|o| o.n == orbit_period)
                    .map(|o| (o.stability, o.anchor.sphere_distance(&css.center)))
            } else {
                None
            };
            Ok(ScanRow {
                t0_frac: t0,
                mean_z: s.mean_z[1],
                var_z: s.var_z[1],
                normalized_var_z: s.normalized_var_z[1],
                var_y: s.var_y[1],
                orbit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(T0Scan {
        rows,
        baseline_var_z: base.var_z[1],
        baseline_normalized_var_z: base.normalized_var_z[1],
        orbit_period,
    })
}

/// Where a start prepared at offset `t0_frac` sits in the common section at
/// drive phase zero: the start carried forward to the end of its first period.
pub fn section_image(params: &SystemParams, start: &PhaseState, t0_frac: f64) -> Result<PhaseState> {
    let p = params.with_t0_frac(t0_frac.rem_euclid(1.0));
    let end = (1.0 - p.t0_frac) * p.period();
    let cfg = IntegratorConfig::default().with_dense_times(vec![end]);
    Ok(propagate(&p, start, (0.0, end), &cfg)?.states[0])
}

/// 10%–90% extent of one edge of the variance curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionWidth {
    /// Offset where var_z crosses 10% of the edge's rise.
    pub t0_low: f64,
    /// Offset where it crosses 90%. May exceed 1 or be negative on a wrapped edge.
    pub t0_high: f64,
    /// Arc length swept by the start's section image between the two offsets.
    pub distance: f64,
    /// `distance` in units of the coherent-state width 1/√N.
    pub css_widths: f64,
}

const EDGE_LO: f64 = 0.1;
const EDGE_HI: f64 = 0.9;
const ARC_STEPS: usize = 48;

/// Width of both edges of the variance curve around its minimum. Each edge
/// runs from the minimum to the first local maximum in its direction; the
/// width spans the 10% and 90% crossings of that rise.
pub fn transition_widths(
    scan: &T0Scan,
    params: &SystemParams,
    start: &PhaseState,
) -> Result<[TransitionWidth; 2]> {
    let n = scan.rows.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let imin = scan.argmin();
    let vmin = scan.rows[imin].var_z;
    let step = 1.0 / n as f64;
    let t_at = |k: isize| scan.rows[imin].t0_frac + k as f64 * step;
    let v_at = |k: isize| scan.rows[(imin as isize + k).rem_euclid(n as isize) as usize].var_z;
    let width = |dir: isize| -> Result<TransitionWidth> {
        let mut top = 0isize;
        while top.unsigned_abs() < n - 1 && v_at(top + dir) >= v_at(top) {
            top += dir;
        }
        let rise = v_at(top) - vmin;
        let crossing = |f: f64| -> f64 {
            let lev = vmin + f * rise;
            let mut k = 0isize;
            while k != top {
                let (a, b) = (v_at(k), v_at(k + dir));
                if a < lev && b >= lev {
                    return t_at(k) + dir as f64 * (lev - a) / (b - a) * step;
                }
                k += dir;
            }
            t_at(top)
        };
        let (lo, hi) = (crossing(EDGE_LO), crossing(EDGE_HI));
        let mut prev = section_image(params, start, lo)?;
        let mut arc = 0.0;
        for j in 1..=ARC_STEPS {
            let q = section_image(params, start, lo + (hi - lo) * j as f64 / ARC_STEPS as f64)?;
            arc += prev.sphere_distance(&q);
            prev = q;
        }
        Ok(TransitionWidth {
            t0_low: lo,
            t0_high: hi,
            distance: arc,
            css_widths: arc * (params.n_atoms as f64).sqrt(),
        })
    };
    Ok([width(1)?, width(-1)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[f64]) -> T0Scan {
        T0Scan {
            rows: v
                .iter()
                .enumerate()
                .map(|(i, &x)| ScanRow {
                    t0_frac: i as f64 / v.len() as f64,
                    mean_z: 0.0,
                    var_z: x,
                    normalized_var_z: x,
                    var_y: 0.0,
                    orbit: None,
                })
                .collect(),
            baseline_var_z: 1.0,
            baseline_normalized_var_z: 1.0,
            orbit_period: 2,
        }
    }

    #[test]
    fn windows_wrap_around() {
        let s = rows(&[0.5, 2.0, 2.0, 0.5, 0.5, 2.0, 0.1]);
        assert_eq!(s.low_windows(), vec![(3, 2), (6, 2)]);
        assert_eq!(rows(&[0.5, 0.5]).low_windows(), vec![(0, 2)]);
        assert!(rows(&[2.0, 3.0]).low_windows().is_empty());
    }

    #[test]
    fn extrema() {
        let s = rows(&[0.5, 2.0, 3.0, 0.1]);
        assert_eq!(s.argmax(), 2);
        assert_eq!(s.argmin(), 3);
    }

    #[test]
    fn edges_stop_at_first_local_maximum() {
        let p = SystemParams::new(0.7, -0.11, 0.2, 1.5);
        let st = PhaseState::new(0.3, 2.0).unwrap();
        let s = rows(&[0.1, 0.1, 1.0, 0.8, 5.0, 5.0, 5.0, 0.5]);
        let [up, down] = transition_widths(&s, &p, &st).unwrap();
        // Rising edge 0.1 -> 1.0 lies between cells 1 and 2.
        assert!(up.t0_low > 1.0 / 8.0 && up.t0_high < 2.0 / 8.0);
        // Falling edge wraps to the plateau at cells 4..=6.
        assert!(down.t0_low < 0.0 && down.t0_high < down.t0_low);
        assert!(up.css_widths > 0.0 && down.css_widths > 0.0);
    }

    #[test]
    fn section_image_at_zero_is_one_period() {
        let p = SystemParams::new(0.7, -0.11, 0.2, 1.5);
        let st = PhaseState::new(0.3, 2.0).unwrap();
        let a = section_image(&p, &st, 0.0).unwrap();
        let b = crate::poincare::stroboscopic_map(&p, &st, 1, 0.0).unwrap();
        assert!(a.sphere_distance(&b) < 1e-9);
    }

    #[test]
    fn rejects_bad_grid() {
        let p = SystemParams::default();
        let css = CssSpec::new(PhaseState::new(0.0, 0.0).unwrap(), 700, 10, 1);
        let n = NoiseModel::default();
        assert!(scan_t0(&p, &css, &n, 1.0, &[], 2).is_err());
        assert!(scan_t0(&p, &css, &n, 1.0, &[1.0], 2).is_err());
    }
}
