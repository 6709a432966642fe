//! Scenario setup: geometry, initial and boundary data of the four test problems.

use std::sync::Arc;

use crate::amr::HierarchyConfig;
use crate::dg::{Boundary, StateFn};
use crate::error::{Error, Result};
use crate::euler::{vortex_exact, ExactRiemann, VortexParams};
use crate::mesh::BackgroundGrid;
use crate::{Gas, LevelSet, Primitive};

use super::config::{Config, ScenarioKind};

pub type Field = Arc<dyn Fn([f64; 2]) -> Primitive + Send + Sync>;

/// Straight sampling line `origin + xi * direction` at the listed `xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub name: String,
    pub origin: [f64; 2],
    pub direction: [f64; 2],
    pub stations: Vec<f64>,
}

impl Probe {
    pub fn point(&self, xi: f64) -> [f64; 2] {
        [self.origin[0] + xi * self.direction[0], self.origin[1] + xi * self.direction[1]]
    }
}

/// Exact solution of the tilted shock tube.
#[derive(Clone, Copy, Debug)]
pub struct TubeSolution {
    pub riemann: ExactRiemann<f64>,
    pub center: [f64; 2],
    /// Unit vector along the channel axis.
    pub axis: [f64; 2],
}

impl TubeSolution {
    pub fn xi(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.center[0]) * self.axis[0] + (x[1] - self.center[1]) * self.axis[1]
    }

    pub fn state(&self, x: [f64; 2], t: f64) -> Primitive {
        let xi = self.xi(x);
        let [rho, u, p] = if t > 0.0 {
            self.riemann.sample(xi / t)
        } else if xi <= 0.0 {
            self.riemann.sample(f64::NEG_INFINITY)
        } else {
            self.riemann.sample(f64::INFINITY)
        };
        Primitive::new(rho, [u * self.axis[0], u * self.axis[1]], p)
    }

    /// Axial position of the right-running shock at time `t`.
    pub fn shock_position(&self, t: f64) -> Option<f64> {
        self.riemann.shock_speed(true).map(|s| s * t)
    }
}

pub struct Scenario {
    pub kind: ScenarioKind,
    pub grid: BackgroundGrid,
    pub phi: LevelSet,
    pub gas: Gas,
    pub hierarchy: HierarchyConfig,
    pub boundary: Boundary,
    pub initial: Field,
    /// Reference solution for error norms.
    pub exact: Option<StateFn>,
    pub tube: Option<TubeSolution>,
    pub final_time: f64,
    pub regrid_every: usize,
    pub cfl_safety: f64,
    /// Stop once both error norms change by less than this between consecutive steps.
    pub steady_tol: Option<f64>,
    pub probes: Vec<Probe>,
    pub snapshot_every: Option<f64>,
    pub snapshots: bool,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("kind", &self.kind)
            .field("grid", &self.grid)
            .field("hierarchy", &self.hierarchy)
            .field("boundary", &self.boundary)
            .field("final_time", &self.final_time)
            .finish()
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Shock running in `+x1` into `(1, 0, p = 1)` from `shock_x`.
fn shock_ic(gas: Gas, mach: f64, shock_x: f64) -> Result<(Field, Primitive)> {
    let ahead = Primitive::new(1.0, [0.0, 0.0], 1.0);
    let behind = gas.post_shock_state(mach, &ahead).map_err(config_err)?;
    let ic: Field = Arc::new(move |x: [f64; 2]| if x[0] <= shock_x { behind } else { ahead });
    Ok((ic, behind))
}

impl Scenario {
    pub fn from_config(c: &Config) -> Result<Scenario> {
        let gas = Gas::new(c.gamma.unwrap_or(1.4)).map_err(config_err)?;
        let hierarchy = c.hierarchy()?;
        let cells = c.resolved_cells();
        check(cells[0] > 0 && cells[1] > 0, "cells must be positive")?;
        let sides = c.resolved_boundary().sides();
        let cfl_safety = c.cfl_safety.unwrap_or(0.9);
        check(cfl_safety > 0.0 && cfl_safety <= 1.0, "cfl_safety must lie in (0, 1]")?;
        let regrid_every = c.regrid_every.unwrap_or(5);
        check(regrid_every > 0, "regrid_every must be positive")?;
        if let Some(s) = c.output.snapshot_every {
            check(s > 0.0, "snapshot_every must be positive")?;
        }
        let mut probes = Vec::new();
        let mut tube = None;
        let mut steady_tol = None;
        let (lo, hi, phi, initial, exact, default_t): (_, _, LevelSet, Field, Option<StateFn>, f64) = match c.scenario {
            ScenarioKind::Vortex => {
                let v = &c.vortex;
                check(v.r_inner > 0.0 && v.r_outer > v.r_inner, "vortex needs 0 < r_inner < r_outer")?;
                check(v.extent > v.r_outer, "vortex extent must exceed r_outer")?;
                check(v.rho_inner > 0.0 && v.a_inner > 0.0 && v.mach_inner >= 0.0, "vortex inner state")?;
                check(v.steady_tol > 0.0, "steady_tol must be positive")?;
                steady_tol = Some(v.steady_tol);
                let params = VortexParams {
                    rho_i: v.rho_inner,
                    a_i: v.a_inner,
                    mach_i: v.mach_inner,
                    r_i: v.r_inner,
                };
                let phi = LevelSet::annulus(v.r_inner, v.r_outer).map_err(config_err)?;
                let ic: Field = Arc::new(move |x| vortex_exact(x, &params, &gas));
                let exact: StateFn = Arc::new(move |x, _| vortex_exact(x, &params, &gas));
                ([0.0, 0.0], [v.extent, v.extent], phi, ic, Some(exact), 20.0)
            }
            ScenarioKind::Sod2d => {
                let s = &c.sod2d;
                check(s.half_width > 0.0, "sod2d half_width must be positive")?;
                let theta = s.theta_deg.to_radians();
                let axis = [theta.cos(), theta.sin()];
                let riemann = ExactRiemann::new(s.left, s.right, gas).map_err(config_err)?;
                let sol = TubeSolution {
                    riemann,
                    center: s.center,
                    axis,
                };
                tube = Some(sol);
                let phi = LevelSet::tilted_strip(s.center, s.half_width, theta).map_err(config_err)?;
                let n = c.output.probe_samples;
                check(n >= 2, "probe_samples must be at least 2")?;
                let ext = c.output.probe_extent;
                let stations: Vec<f64> = (0..n).map(|i| -ext + 2.0 * ext * i as f64 / (n - 1) as f64).collect();
                let normal = [-axis[1], axis[0]];
                // The wall line sits a relative 1e-6 inside the channel so that it samples fluid.
                let eta = s.half_width * (1.0 - 1e-6);
                probes.push(Probe {
                    name: "centerline".into(),
                    origin: s.center,
                    direction: axis,
                    stations: stations.clone(),
                });
                probes.push(Probe {
                    name: "wall".into(),
                    origin: [s.center[0] + eta * normal[0], s.center[1] + eta * normal[1]],
                    direction: axis,
                    stations,
                });
                let ic: Field = Arc::new(move |x| sol.state(x, 0.0));
                let exact: StateFn = Arc::new(move |x, t| sol.state(x, t));
                ([0.0, 0.0], [1.0, 1.0], phi, ic, Some(exact), 0.2)
            }
            ScenarioKind::ShockCylinder => {
                let s = &c.shock_cylinder;
                let phi = LevelSet::circle(s.center, s.radius).map_err(config_err)?;
                let (ic, _) = shock_ic(gas, s.mach, s.shock_x)?;
                ([0.0, 0.0], [1.0, 1.0], phi, ic, None, 0.2)
            }
            ScenarioKind::ShockConcave => {
                let s = &c.shock_concave;
                let theta = s.theta_deg.to_radians();
                let phi = LevelSet::convex_concave(s.radius, theta).map_err(config_err)?;
                let (ic, _) = shock_ic(gas, s.mach, s.shock_x)?;
                // Stop at 90% of the time the incident shock needs to reach the flat wall.
                let flat = s.radius * theta.sin() + s.radius;
                let speed = s.mach * gas.sound_speed(&Primitive::new(1.0, [0.0; 2], 1.0));
                (s.lo, s.hi, phi, ic, None, 0.9 * (flat - s.shock_x) / speed)
            }
        };
        check(hi[0] > lo[0] && hi[1] > lo[1], "background rectangle is empty")?;
        let final_time = c.final_time.unwrap_or(default_t);
        check(final_time > 0.0, "final_time must be positive")?;
        let boundary_state: StateFn = match &exact {
            Some(e) => e.clone(),
            None => {
                let f = initial.clone();
                Arc::new(move |x, _| f(x))
            }
        };
        let boundary = Boundary {
            sides,
            state: Some(boundary_state),
        };
        boundary.validate()?;
        let grid = BackgroundGrid::new(lo, hi, cells)
            .map_err(config_err)?
            .with_periodic(boundary.periodic_axes());
        Ok(Scenario {
            kind: c.scenario,
            grid,
            phi,
            gas,
            hierarchy,
            boundary,
            initial,
            exact,
            tube,
            final_time,
            regrid_every,
            cfl_safety,
            steady_tol,
            probes,
            snapshot_every: c.output.snapshot_every,
            snapshots: c.output.snapshots,
        })
    }
}
