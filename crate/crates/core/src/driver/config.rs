//! Run configuration (TOML). Every field is optional; omitted fields take the
//! defaults of the selected scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amr::{HierarchyConfig, LevelConfig};
use crate::dg::{Scheme, SideBc};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Vortex,
    Sod2d,
    ShockCylinder,
    ShockConcave,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Vortex => "vortex",
            ScenarioKind::Sod2d => "sod2d",
            ScenarioKind::ShockCylinder => "shock-cylinder",
            ScenarioKind::ShockConcave => "shock-concave",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub scheme: Scheme,
    /// Refinement ratio to the level below; ignored on level 0.
    #[serde(default = "default_ratio")]
    pub ratio: usize,
    #[serde(default = "default_nu_bar")]
    pub nu_bar: f64,
    /// Density-gradient threshold used to tag this level for refinement.
    #[serde(default)]
    pub kappa_rho: f64,
}

fn default_ratio() -> usize {
    4
}

fn default_nu_bar() -> f64 {
    0.3
}

impl LevelSpec {
    pub fn new(scheme: Scheme, kappa_rho: f64) -> LevelSpec {
        LevelSpec {
            scheme,
            ratio: default_ratio(),
            nu_bar: default_nu_bar(),
            kappa_rho,
        }
    }
}

/// Closures of the four sides of the background rectangle. All four are required.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub x_lo: SideBc,
    pub x_hi: SideBc,
    pub y_lo: SideBc,
    pub y_hi: SideBc,
}

impl BoundarySpec {
    pub fn sides(&self) -> [SideBc; 4] {
        [self.x_lo, self.x_hi, self.y_lo, self.y_hi]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VortexSpec {
    pub r_inner: f64,
    pub r_outer: f64,
    pub rho_inner: f64,
    pub a_inner: f64,
    pub mach_inner: f64,
    /// Side of the square background rectangle `[0, extent]^2`.
    pub extent: f64,
    /// Relative change of both error norms below which the run is steady.
    pub steady_tol: f64,
}

impl Default for VortexSpec {
    fn default() -> Self {
        VortexSpec {
            r_inner: 1.0,
            r_outer: 1.384,
            rho_inner: 1.0,
            a_inner: 1.0,
            mach_inner: 2.25,
            extent: 1.43,
            steady_tol: 1e-5,
        }
    }
}

/// Shock tube inside a tilted channel of the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SodSpec {
    pub theta_deg: f64,
    pub half_width: f64,
    pub center: [f64; 2],
    /// `(rho, u, p)` on either side of the diaphragm, `u` along the channel axis.
    pub left: [f64; 3],
    pub right: [f64; 3],
}

impl Default for SodSpec {
    fn default() -> Self {
        SodSpec {
            theta_deg: 30.0,
            half_width: 0.1,
            center: [0.5, 0.5],
            left: [1.0, 0.0, 1.0],
            right: [0.125, 0.0, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderSpec {
    pub mach: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub shock_x: f64,
}

impl Default for CylinderSpec {
    fn default() -> Self {
        CylinderSpec {
            mach: 2.81,
            center: [0.5, 0.5],
            radius: 0.1,
            shock_x: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcaveSpec {
    pub mach: f64,
    pub radius: f64,
    pub theta_deg: f64,
    pub shock_x: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for ConcaveSpec {
    fn default() -> Self {
        ConcaveSpec {
            mach: 1.19,
            radius: 60.6,
            theta_deg: 65.0,
            shock_x: 0.0,
            lo: [-80.0, 0.0],
            hi: [122.5, 120.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Simulated time between VTK snapshots; none means initial and final only.
    pub snapshot_every: Option<f64>,
    /// Write a VTK snapshot at all.
    pub snapshots: bool,
    /// Stations of the line probes (sod2d only).
    pub probe_samples: usize,
    /// Probes cover `xi` in `[-probe_extent, probe_extent]` along the channel axis.
    pub probe_extent: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            snapshot_every: None,
            snapshots: true,
            probe_samples: 201,
            probe_extent: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioKind,
    pub final_time: Option<f64>,
    /// Level-0 cells per direction.
    pub cells: Option<[usize; 2]>,
    pub levels: Option<Vec<LevelSpec>>,
    pub kappa_s: Option<f64>,
    pub buffer: Option<usize>,
    pub regrid_every: Option<usize>,
    pub cfl_safety: Option<f64>,
    pub gamma: Option<f64>,
    /// Characteristic and Barth-Jespersen limiting on the FV level.
    pub limit_fv: Option<bool>,
    pub boundary: Option<BoundarySpec>,
    #[serde(default)]
    pub vortex: VortexSpec,
    #[serde(default)]
    pub sod2d: SodSpec,
    #[serde(default)]
    pub shock_cylinder: CylinderSpec,
    #[serde(default)]
    pub shock_concave: ConcaveSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl Config {
    pub fn new(scenario: ScenarioKind) -> Config {
        Config {
            scenario,
            final_time: None,
            cells: None,
            levels: None,
            kappa_s: None,
            buffer: None,
            regrid_every: None,
            cfl_safety: None,
            gamma: None,
            limit_fv: None,
            boundary: None,
            vortex: VortexSpec::default(),
            sod2d: SodSpec::default(),
            shock_cylinder: CylinderSpec::default(),
            shock_concave: ConcaveSpec::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Level-0 cells per direction.
    pub fn resolved_cells(&self) -> [usize; 2] {
        self.cells.unwrap_or(match self.scenario {
            ScenarioKind::Vortex => [16, 16],
            ScenarioKind::Sod2d => [64, 64],
            ScenarioKind::ShockCylinder => [64, 64],
            // h = 3.75 on [-80, 122.5] x [0, 120]
            ScenarioKind::ShockConcave => [54, 32],
        })
    }

    pub fn resolved_levels(&self) -> Vec<LevelSpec> {
        if let Some(l) = &self.levels {
            return l.clone();
        }
        match self.scenario {
            ScenarioKind::Vortex => vec![LevelSpec::new(Scheme::Dg(3), 0.0)],
            ScenarioKind::Sod2d => vec![LevelSpec::new(Scheme::Dg(2), 0.0), LevelSpec::new(Scheme::Fv, 0.0)],
            ScenarioKind::ShockCylinder => vec![
                LevelSpec::new(Scheme::Dg(1), 0.5),
                LevelSpec::new(Scheme::Dg(3), 2.0),
                LevelSpec::new(Scheme::Dg(3), 0.0),
                LevelSpec::new(Scheme::Fv, 0.0),
            ],
            ScenarioKind::ShockConcave => vec![
                LevelSpec::new(Scheme::Dg(1), 0.005),
                LevelSpec::new(Scheme::Dg(3), 0.02),
                LevelSpec::new(Scheme::Dg(3), 0.0),
                LevelSpec::new(Scheme::Fv, 0.0),
            ],
        }
    }

    pub fn resolved_kappa_s(&self) -> f64 {
        self.kappa_s.unwrap_or(match self.scenario {
            ScenarioKind::Vortex | ScenarioKind::Sod2d => -2.0,
            ScenarioKind::ShockCylinder => -3.25,
            ScenarioKind::ShockConcave => -4.0,
        })
    }

    pub fn resolved_boundary(&self) -> BoundarySpec {
        use SideBc::*;
        self.boundary.unwrap_or(match self.scenario {
            ScenarioKind::Vortex | ScenarioKind::Sod2d => BoundarySpec {
                x_lo: Dirichlet,
                x_hi: Dirichlet,
                y_lo: Dirichlet,
                y_hi: Dirichlet,
            },
            ScenarioKind::ShockCylinder => BoundarySpec {
                x_lo: Dirichlet,
                x_hi: Outflow,
                y_lo: Wall,
                y_hi: Wall,
            },
            ScenarioKind::ShockConcave => BoundarySpec {
                x_lo: Dirichlet,
                x_hi: Wall,
                y_lo: Wall,
                y_hi: Wall,
            },
        })
    }

    pub fn hierarchy(&self) -> Result<HierarchyConfig> {
        let levels = self.resolved_levels();
        if levels.is_empty() {
            return Err(Error::Config("at least one level is required".into()));
        }
        let config = HierarchyConfig {
            levels: levels
                .iter()
                .enumerate()
                .map(|(l, s)| LevelConfig {
                    scheme: s.scheme,
                    ratio: if l == 0 { 1 } else { s.ratio },
                    nu_bar: s.nu_bar,
                    kappa_rho: s.kappa_rho,
                })
                .collect(),
            kappa_s: self.resolved_kappa_s(),
            buffer: self.buffer.unwrap_or(1),
            limit_fv: self.limit_fv.unwrap_or(true),
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}
