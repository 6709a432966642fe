//! Scenario runs: the time loop, error norms, steady-state detection, probes and files.

pub mod config;
pub mod output;
pub mod scenario;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::amr::Hierarchy;
use crate::dg::{Trace, NU};
use crate::error::{Error, Result};
use crate::fv::Gradients;
use crate::timeint::{clip_dt, compute_dt, select_rk, step, StageAudit};

pub use config::{Config, ScenarioKind};
pub use output::{AuditRow, ConvergenceRow};
pub use scenario::{Probe, Scenario, TubeSolution};

/// Relative density errors against a reference solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub l2: f64,
    /// Maximum over all volume quadrature nodes.
    pub linf: f64,
}

/// True iff both norms changed by a relative amount strictly below `tol`.
pub fn steady_state_check(prev: &ErrorReport, cur: &ErrorReport, tol: f64) -> bool {
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (b - a).abs() / a.abs()
        }
    };
    rel(prev.l2, cur.l2) < tol && rel(prev.linf, cur.linf) < tol
}

/// Slopes of every finite-volume level of the current state.
pub fn level_gradients(h: &Hierarchy) -> Result<Vec<Option<Gradients>>> {
    (0..h.levels.len()).map(|l| h.fv_gradients(l, &h.levels[l].state)).collect()
}

fn trace<'a>(h: &'a Hierarchy, grads: &'a [Option<Gradients>], l: usize) -> Trace<'a> {
    let level = &h.levels[l];
    match &grads[l] {
        Some(g) => Trace::Fv {
            mesh: &level.mesh,
            state: &level.state,
            grads: g,
        },
        None => Trace::Dg {
            space: &level.space,
            state: &level.state,
        },
    }
}

/// Density errors of the composite solution over the fluid domain.
pub fn error_norms(h: &Hierarchy, exact: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Result<ErrorReport> {
    let grads = level_gradients(h)?;
    let mut acc = [0.0f64; 4];
    for l in 0..h.levels.len() {
        let level = &h.levels[l];
        let tr = trace(h, &grads, l);
        let part = (0..level.mesh.elements.len())
            .into_par_iter()
            .filter(|&e| !level.covered[e])
            .map(|e| {
                let rule = level.mesh.volume_rule(e);
                let mut a = [0.0f64; 4];
                for (x, &w) in rule.points.iter().zip(&rule.weights) {
                    let rho = tr.eval(e, *x)[0];
                    let r = exact(*x);
                    let d = rho - r;
                    a[0] += w * d * d;
                    a[1] += w * r * r;
                    a[2] = a[2].max(d.abs());
                    a[3] = a[3].max(r.abs());
                }
                a
            })
            .reduce(|| [0.0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2].max(b[2]), a[3].max(b[3])]);
        acc = [acc[0] + part[0], acc[1] + part[1], acc[2].max(part[2]), acc[3].max(part[3])];
    }
    if !(acc[1] > 0.0 && acc[3] > 0.0) {
        return Err(Error::Parameter("reference solution vanishes on the domain".into()));
    }
    Ok(ErrorReport {
        l2: (acc[0] / acc[1]).sqrt(),
        linf: acc[2] / acc[3],
    })
}

/// Composite solution at `x`: the finest uncovered element containing it.
pub fn sample(h: &Hierarchy, grads: &[Option<Gradients>], x: [f64; 2]) -> Option<(usize, usize, [f64; NU])> {
    for l in (0..h.levels.len()).rev() {
        let level = &h.levels[l];
        if let Some(e) = level.mesh.locate(x) {
            if !level.covered[e] {
                return Some((l, e, trace(h, grads, l).eval(e, x)));
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub xi: f64,
    /// `(rho, p)`; `None` outside the fluid domain.
    pub value: Option<(f64, f64)>,
}

pub fn line_probe(h: &Hierarchy, probe: &Probe) -> Result<Vec<ProbeRow>> {
    let grads = level_gradients(h)?;
    Ok(probe
        .stations
        .iter()
        .map(|&xi| ProbeRow {
            xi,
            value: sample(h, &grads, probe.point(xi)).map(|(_, _, u)| (u[0], h.gas.pressure(&u))),
        })
        .collect())
}

/// Mean absolute density difference over the valid stations of a probe.
pub fn probe_l1(rows: &[ProbeRow], exact: impl Fn(f64) -> f64) -> f64 {
    let (sum, n) = rows
        .iter()
        .filter_map(|r| r.value.map(|(rho, _)| (rho - exact(r.xi)).abs()))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output directory; nothing is written when absent.
    pub out: Option<PathBuf>,
    pub max_steps: Option<usize>,
    /// Overrides the scenario's snapshot interval.
    pub snapshot_every: Option<f64>,
}

/// Points where a run hands the hierarchy to an observer.
#[derive(Clone, Debug)]
pub enum Event<'a> {
    Start,
    Step { step: usize, t: f64, audit: &'a StageAudit },
    Regrid { step: usize, t: f64 },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub t: f64,
    pub reached_final_time: bool,
    pub steady_at: Option<f64>,
    pub initial_errors: Option<ErrorReport>,
    pub errors: Option<ErrorReport>,
    /// How the maximum norm is sampled.
    pub linf_sampling: String,
    pub regrids: usize,
    /// Steps repeated after a positivity failure and an extra regrid.
    pub retries: usize,
    pub max_bound_violation: f64,
    pub final_elements: Vec<usize>,
    #[serde(skip)]
    pub conservation: Vec<AuditRow>,
    #[serde(skip)]
    pub probes: Vec<(String, Vec<ProbeRow>)>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn snapshot(h: &Hierarchy, t: f64, dir: &Path, index: usize, files: &mut Vec<PathBuf>) -> Result<()> {
    let grads = level_gradients(h)?;
    let mut w = create(dir, &format!("snapshot_{index:04}.vtk"), files)?;
    output::write_vtk(h, &grads, t, &mut w)
}

pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<(Hierarchy, RunSummary)> {
    run_observed(sc, opts, &mut |_, _| {})
}

/// Runs `sc` to its final time (or steady state), calling `observer` after setup, after
/// every step and after every regrid.
pub fn run_observed(
    sc: &Scenario,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&Event, &Hierarchy),
) -> Result<(Hierarchy, RunSummary)> {
    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut h = Hierarchy::new(sc.hierarchy.clone(), sc.grid.clone(), sc.phi.clone(), sc.gas, &*sc.initial)?;
    let rk = select_rk(&h);
    let exact_rho = |t: f64| {
        sc.exact.as_ref().map(|f| {
            let f = f.clone();
            move |x: [f64; 2]| f(x, t).rho
        })
    };
    let mut s = RunSummary {
        scenario: sc.kind.name().to_string(),
        linf_sampling: "max over volume quadrature nodes".into(),
        ..Default::default()
    };
    let mut t = 0.0;
    s.conservation.push(AuditRow {
        step: 0,
        t,
        totals: h.totals(),
    });
    if let Some(f) = exact_rho(t) {
        s.initial_errors = Some(error_norms(&h, &f)?);
    }
    let mut prev = s.initial_errors;
    let every = opts.snapshot_every.or(sc.snapshot_every);
    let write_snapshots = sc.snapshots && opts.out.is_some();
    let mut next_snap = every.map_or(f64::INFINITY, |e| e);
    let mut nsnap = 0;
    let mut last_snap = f64::NAN;
    if write_snapshots {
        snapshot(&h, t, opts.out.as_deref().unwrap(), nsnap, &mut s.files)?;
        nsnap += 1;
        last_snap = t;
    }
    observer(&Event::Start, &h);
    let mut steps = 0;
    while t < sc.final_time && opts.max_steps.is_none_or(|m| steps < m) {
        let stop = sc.final_time.min(next_snap);
        let mut audit = StageAudit::default();
        let mut tau = clip_dt(t, compute_dt(&h, sc.cfl_safety)?, stop);
        match step(&mut h, &sc.boundary, t, tau, rk, Some(&mut audit)) {
            Ok(()) => {}
            Err(Error::Positivity { .. }) if h.levels.len() > 1 => {
                h.regrid()?;
                s.regrids += 1;
                s.retries += 1;
                audit = StageAudit::default();
                tau = clip_dt(t, compute_dt(&h, sc.cfl_safety)?, stop);
                step(&mut h, &sc.boundary, t, tau, rk, Some(&mut audit))?;
            }
            Err(e) => return Err(e),
        }
        t = if tau == stop - t { stop } else { t + tau };
        steps += 1;
        s.max_bound_violation = s.max_bound_violation.max(audit.max_bound_violation);
        observer(&Event::Step { step: steps, t, audit: &audit }, &h);
        s.conservation.push(AuditRow {
            step: steps,
            t,
            totals: h.totals(),
        });
        if h.config.levels.len() > 1 && steps % sc.regrid_every == 0 {
            h.regrid()?;
            s.regrids += 1;
            observer(&Event::Regrid { step: steps, t }, &h);
        }
        if let (Some(tol), Some(f)) = (sc.steady_tol, exact_rho(t)) {
            let cur = error_norms(&h, &f)?;
            let steady = prev.is_some_and(|p| steady_state_check(&p, &cur, tol));
            prev = Some(cur);
            if steady {
                s.steady_at = Some(t);
                break;
            }
        }
        if t >= next_snap {
            if write_snapshots {
                snapshot(&h, t, opts.out.as_deref().unwrap(), nsnap, &mut s.files)?;
                nsnap += 1;
                last_snap = t;
            }
            next_snap += every.unwrap_or(f64::INFINITY);
        }
    }
    s.steps = steps;
    s.t = t;
    s.reached_final_time = t >= sc.final_time;
    if let Some(f) = exact_rho(t) {
        s.errors = Some(error_norms(&h, &f)?);
    }
    for p in &sc.probes {
        s.probes.push((p.name.clone(), line_probe(&h, p)?));
    }
    s.final_elements = h.levels.iter().map(|l| l.mesh.elements.len()).collect();
    if let Some(dir) = opts.out.as_deref() {
        if write_snapshots && last_snap != t {
            snapshot(&h, t, dir, nsnap, &mut s.files)?;
        }
        output::write_conservation_csv(&s.conservation, &mut create(dir, "conservation.csv", &mut s.files)?)?;
        for (name, rows) in &s.probes {
            output::write_probe_csv(rows, &mut create(dir, &format!("probe_{name}.csv"), &mut s.files)?)?;
        }
        let text = toml::to_string_pretty(&s).map_err(|e| Error::Io(e.to_string()))?;
        let mut w = create(dir, "summary.toml", &mut s.files)?;
        std::io::Write::write_all(&mut w, text.as_bytes())?;
    }
    Ok((h, s))
}
