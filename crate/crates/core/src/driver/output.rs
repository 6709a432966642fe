//! Legacy VTK snapshots and CSV tables. Floats are written with 17 significant digits.

use std::io::Write;

use crate::amr::Hierarchy;
use crate::dg::{Trace, NU};
use crate::error::Result;
use crate::fv::Gradients;

use super::{ErrorReport, ProbeRow};

/// One row of the conservation audit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditRow {
    pub step: usize,
    pub t: f64,
    pub totals: [f64; NU],
}

/// One row of a mesh-convergence table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorReport,
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_conservation_csv(rows: &[AuditRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,t,mass,momentum_x,momentum_y,energy")?;
    for r in rows {
        write!(out, "{},{}", r.step, fmt17(r.t))?;
        for v in r.totals {
            write!(out, ",{}", fmt17(v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_probe_csv(rows: &[ProbeRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "xi,rho,p,valid")?;
    for r in rows {
        match r.value {
            Some((rho, p)) => writeln!(out, "{},{},{},1", fmt17(r.xi), fmt17(rho), fmt17(p))?,
            None => writeln!(out, "{},nan,nan,0", fmt17(r.xi))?,
        }
    }
    Ok(())
}

pub fn write_convergence_csv(rows: &[ConvergenceRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "n,h,eL2,eLinf")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n, fmt17(r.h), fmt17(r.errors.l2), fmt17(r.errors.linf))?;
    }
    Ok(())
}

/// Sub-cells per direction of every background cell in a snapshot.
const LATTICE: usize = 3;

struct Quad {
    corners: [[f64; 2]; 4],
    rho: f64,
    p: f64,
    grad_rho: f64,
    level: usize,
    scheme: i32,
    nu: f64,
}

/// Unstructured legacy VTK file with one quad per sub-cell of every uncovered element;
/// sub-cells lying entirely in the solid are dropped.
pub fn write_vtk(h: &Hierarchy, grads: &[Option<Gradients>], t: f64, out: &mut impl Write) -> Result<()> {
    let mut quads = Vec::new();
    for (l, level) in h.levels.iter().enumerate() {
        let mesh = &level.mesh;
        let nb = level.space.block();
        let trace = match &grads[l] {
            Some(g) => Trace::Fv {
                mesh,
                state: &level.state,
                grads: g,
            },
            None => Trace::Dg {
                space: &level.space,
                state: &level.state,
            },
        };
        for (e, el) in mesh.elements.iter().enumerate() {
            if level.covered[e] {
                continue;
            }
            for &c in &el.cells {
                let b = mesh.grid.cell_box(c);
                let nu = mesh.cell_info(c).map_or(1.0, |i| i.nu);
                let d = [(b.hi[0] - b.lo[0]) / LATTICE as f64, (b.hi[1] - b.lo[1]) / LATTICE as f64];
                for j in 0..LATTICE {
                    for i in 0..LATTICE {
                        let lo = [b.lo[0] + i as f64 * d[0], b.lo[1] + j as f64 * d[1]];
                        let corners = [lo, [lo[0] + d[0], lo[1]], [lo[0] + d[0], lo[1] + d[1]], [lo[0], lo[1] + d[1]]];
                        let x = [lo[0] + 0.5 * d[0], lo[1] + 0.5 * d[1]];
                        if nu < 1.0 && corners.iter().chain([&x]).all(|&q| h.phi.value(q) >= 0.0) {
                            continue;
                        }
                        let u = trace.eval(e, x);
                        let g = match &grads[l] {
                            Some(g) => g.slopes[e][0],
                            None => level.space.bases[e].evaluate_grad::<NU>(&level.state[e * nb..(e + 1) * nb], x)[0],
                        };
                        quads.push(Quad {
                            corners,
                            rho: u[0],
                            p: h.gas.pressure(&u),
                            grad_rho: g[0].hypot(g[1]),
                            level: l,
                            scheme: level.scheme.id(),
                            nu,
                        });
                    }
                }
            }
        }
    }
    let n = quads.len();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "cut-cell hp-AMR solution t={}", fmt17(t))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", 4 * n)?;
    for q in &quads {
        for c in q.corners {
            writeln!(out, "{} {} 0", fmt17(c[0]), fmt17(c[1]))?;
        }
    }
    writeln!(out, "CELLS {} {}", n, 5 * n)?;
    for k in 0..n {
        writeln!(out, "4 {} {} {} {}", 4 * k, 4 * k + 1, 4 * k + 2, 4 * k + 3)?;
    }
    writeln!(out, "CELL_TYPES {n}")?;
    for _ in 0..n {
        writeln!(out, "9")?;
    }
    writeln!(out, "CELL_DATA {n}")?;
    let scalar = |out: &mut dyn Write, name: &str, ty: &str, f: &dyn Fn(&Quad) -> String| -> std::io::Result<()> {
        writeln!(out, "SCALARS {name} {ty} 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for q in &quads {
            writeln!(out, "{}", f(q))?;
        }
        Ok(())
    };
    scalar(out, "density", "double", &|q| fmt17(q.rho))?;
    scalar(out, "pressure", "double", &|q| fmt17(q.p))?;
    scalar(out, "grad_rho", "double", &|q| fmt17(q.grad_rho))?;
    scalar(out, "level", "int", &|q| q.level.to_string())?;
    scalar(out, "scheme", "int", &|q| q.scheme.to_string())?;
    scalar(out, "nu", "double", &|q| fmt17(q.nu))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt17(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        let x = 1.0 / 3.0;
        assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn invalid_probe_rows_are_flagged() {
        let rows = [
            ProbeRow { xi: 0.0, value: Some((1.0, 2.0)) },
            ProbeRow { xi: 0.5, value: None },
        ];
        let mut buf = Vec::new();
        write_probe_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "xi,rho,p,valid");
        assert!(lines[1].ends_with(",1"));
        assert_eq!(lines[2], "5.0000000000000000e-1,nan,nan,0");
    }
}
